import numpy as np
import pytest

from voxgen import tensor as T
from voxgen.errors import InvalidCamera, ShapeMismatch
from voxgen.nn import init_params
from voxgen.projection import CameraNet, multiview_logits, proj_camera, proj_identity, proj_multiview
from voxgen.tensor import GradTensor


def test_identity_projection_is_sigmoid(rng):
    h = rng.standard_normal((2, 1, 3, 3, 3))
    out = proj_identity(GradTensor(h)).data
    assert out.shape == (2, 3, 3, 3) and np.allclose(out, 1 / (1 + np.exp(-h[:, 0])))
    multi = proj_identity(GradTensor(rng.standard_normal((2, 3, 3, 3)))).data
    assert multi.shape == (3, 3, 3)
    with pytest.raises(ShapeMismatch):
        proj_identity(GradTensor(np.zeros((3, 3))))


def make_camera(seed=0):
    net = CameraNet(6, 1, (4, 4, 4), (4, 4), n_cameras=3, conv3d_channels=(2,), conv2d_channels=(3,))
    init_params(net, seed)
    return net


def test_camera_shapes_ids_and_shared_weights(rng):
    net = make_camera()
    h = GradTensor(rng.standard_normal((2, 1, 4, 4, 4)).astype(np.float32))
    s = (GradTensor(rng.standard_normal((2, 6)).astype(np.float32)), None)
    img = proj_camera(h, s, 1, net)
    assert img.shape == (2, 4, 4) and np.all((img.data > 0) & (img.data < 1))
    views = proj_multiview(h, s, [0, 2], net)
    assert len(views) == 2
    # pose offsets start at zero, so every camera initially renders the same image
    assert np.allclose(views[0].data, views[1].data)
    assert np.allclose(proj_camera(h, s, 2, net).data, views[1].data)
    with pytest.raises(InvalidCamera):
        proj_camera(h, s, 3, net)
    with pytest.raises(InvalidCamera):
        proj_multiview(h, s, [], net)


def test_camera_gradients(f64, rng):
    net = make_camera(1).astype(np.float64)
    for p in net.parameters():
        p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    h = GradTensor(rng.standard_normal((2, 1, 4, 4, 4)))
    s = (GradTensor(rng.standard_normal((2, 6))), None)
    r = rng.standard_normal((2, 2, 4, 4))
    f = lambda: T.reduce("sum", multiview_logits(h, s, [0, 1], net) * GradTensor(r))  # noqa: E731
    assert T.grad_check_params(f, net.parameters(), max_coords=5) < 1e-5
    assert T.grad_check(lambda u: T.reduce("sum", multiview_logits(u, s, [0, 1], net) * GradTensor(r)), h,
                        max_coords=20) < 1e-5
