import numpy as np
import pytest

from voxgen import tensor as T
from voxgen import vst
from voxgen.errors import ShapeMismatch
from voxgen.tensor import GradTensor


def proj(y, seed=1):
    r = np.random.default_rng(seed).standard_normal(y.shape)
    return T.reduce("sum", y * GradTensor(r))


def shift_oracle(x, shifts):
    """out[i] = x[i + s] with zeros outside, per spatial axis."""
    out = np.zeros_like(x)
    src, dst = [slice(None)] * x.ndim, [slice(None)] * x.ndim
    for ax, s in enumerate(shifts, start=x.ndim - len(shifts)):
        n = x.shape[ax]
        src[ax] = slice(max(s, 0), n + min(s, 0))
        dst[ax] = slice(max(-s, 0), n - max(s, 0))
    out[tuple(dst)] = x[tuple(src)]
    return out


def test_identity_reproduces_input_exactly(rng):
    x = rng.standard_normal((2, 3, 5, 6, 7)).astype(np.float32)
    y = vst.vst_sample(GradTensor(x), GradTensor(vst.identity_affine3()), (5, 6, 7))
    assert np.array_equal(y.data, x)
    im = rng.standard_normal((4, 1, 6, 9))
    y2 = vst.st_sample_2d(GradTensor(im), GradTensor(vst.identity_affine2(np.float64)), (6, 9))
    assert np.array_equal(y2.data, im)


@pytest.mark.parametrize("shifts", [(1, 0, 0), (0, -2, 1), (2, 1, -3)])
def test_integer_translation_matches_index_shift(shifts, rng):
    ext = (5, 6, 7)
    x = rng.standard_normal((1, 1) + ext)
    t = [2.0 * s / (n - 1) for s, n in zip(shifts, ext)]
    p = vst.make_affine(np.eye(3), t)
    y = vst.vst_sample(GradTensor(x), GradTensor(p), ext).data
    assert np.array_equal(y, shift_oracle(x, shifts))


def test_linear_in_input(rng):
    p = GradTensor(vst.make_affine(vst.rotation_matrix((0.3, -0.2, 0.5)) * 0.8, [0.1, -0.05, 0.2]))
    a, b = rng.standard_normal((2, 1, 6, 6, 6)), rng.standard_normal((2, 1, 6, 6, 6))
    f = lambda v: vst.vst_sample(GradTensor(v), p, (4, 5, 6)).data  # noqa: E731
    assert np.abs(f(2.0 * a - 3.0 * b) - (2.0 * f(a) - 3.0 * f(b))).max() < 1e-6


def test_quarter_turn_is_a_lattice_rotation(rng):
    x = rng.standard_normal((1, 1, 5, 5, 5))
    R = vst.rotation_matrix((np.pi / 2, 0.0, 0.0))
    y = vst.vst_sample(GradTensor(x), GradTensor(vst.make_affine(R, np.zeros(3))), (5, 5, 5)).data
    assert any(np.allclose(y[0, 0], np.rot90(x[0, 0], k, axes=(1, 2)), atol=1e-12) for k in (1, 3))


def test_gradients_wrt_input_and_parameters(f64, rng):
    x = GradTensor(rng.standard_normal((2, 1, 4, 5, 3)))
    p = GradTensor(rng.standard_normal((2, 12)) * 0.3 + np.tile(vst.identity_affine3(np.float64), (2, 1)))
    assert T.grad_check(lambda u: proj(vst.vst_sample(u, p, (3, 4, 3))), x) < 1e-6
    assert T.grad_check(lambda q: proj(vst.vst_sample(x, q, (3, 4, 3))), p) < 1e-5
    im = GradTensor(rng.standard_normal((2, 2, 5, 6)))
    p2 = GradTensor(rng.standard_normal((2, 6)) * 0.3 + np.tile(vst.identity_affine2(np.float64), (2, 1)))
    assert T.grad_check(lambda u: proj(vst.st_sample_2d(u, p2, (4, 4))), im) < 1e-6
    assert T.grad_check(lambda q: proj(vst.st_sample_2d(im, q, (4, 4))), p2) < 1e-5


def test_write_is_additive(rng):
    canvas = GradTensor(rng.standard_normal((1, 1, 4, 4, 4)))
    content = GradTensor(rng.standard_normal((1, 1, 2, 2, 2)))
    p = GradTensor(vst.identity_affine3(np.float64))
    out = vst.vst_write(canvas, content, p)
    assert np.allclose(out.data - canvas.data, vst.vst_sample(content, p, (4, 4, 4)).data)


def test_parameter_extent_checked():
    with pytest.raises(ShapeMismatch):
        vst.vst_sample(GradTensor(np.ones((1, 1, 2, 2, 2))), GradTensor(np.ones(6)), (2, 2, 2))


def test_rotation_matrix_orthonormal(rng):
    R = vst.rotation_matrix(rng.uniform(-3, 3, 3))
    assert np.allclose(R @ R.T, np.eye(3)) and np.isclose(np.linalg.det(R), 1.0)
