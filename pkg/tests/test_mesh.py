import math

import numpy as np
import pytest

from voxgen import mesh as M
from voxgen.errors import DegenerateCamera, NonPositiveDisplacement, ShapeMismatch


def test_icosphere_counts_and_euler():
    d, f = M.base_directions()
    edges = {tuple(sorted((a, b))) for tri in f for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))}
    assert (len(d), len(f), len(edges)) == (162, 320, 480)
    assert len(d) - len(edges) + len(f) == 2
    assert np.abs(np.linalg.norm(d, axis=1) - 1).max() < 1e-12


def test_icosphere_antipodal_and_outward():
    d, f = M.base_directions()
    dist = np.linalg.norm(d[:, None, :] + d[None, :, :], axis=-1)
    assert dist.min(axis=1).max() < 1e-9
    n = np.cross(d[f[:, 1]] - d[f[:, 0]], d[f[:, 2]] - d[f[:, 0]])
    assert np.all(np.einsum("ij,ij->i", n, d[f].mean(1)) > 0)


def test_mesh_from_param(rng):
    unit = M.mesh_from_param(M.MeshParam(np.ones(162), np.zeros(3), np.zeros(3)))
    assert np.allclose(np.linalg.norm(unit.vertices, axis=1), 1.0)
    scaled = M.mesh_from_param(M.MeshParam(np.full(162, 2.5), np.zeros(3), np.zeros(3)))
    assert np.allclose(np.linalg.norm(scaled.vertices, axis=1), 2.5)
    disp = rng.uniform(0.5, 1.5, 162)
    t = rng.standard_normal(3)
    m = M.mesh_from_param(M.MeshParam(disp, rng.uniform(-3, 3, 3), t))
    assert np.abs(np.linalg.norm(m.vertices - t, axis=1) - disp).max() < 1e-9
    with pytest.raises(NonPositiveDisplacement):
        M.mesh_from_param(M.MeshParam(np.r_[np.ones(161), 0.0]))
    with pytest.raises(ShapeMismatch):
        M.mesh_from_param(M.MeshParam(np.ones(10)))


def test_empty_mesh_renders_background():
    cfg = M.RenderConfig(extent=(5, 7), background=0.25)
    img = M.rasterize(M.Mesh.empty(), cfg)
    assert img.shape == (5, 7, 3) and np.all(img == 0.25)


@pytest.mark.parametrize("center", [(0.0, 0.0, 2.0), (0.3, -0.2, 2.5)])
def test_cube_silhouette_matches_projected_area(center):
    cfg = M.RenderConfig(extent=(256, 256))
    img = M.rasterize(M.cube_mesh(1.0, center), cfg)
    count = int((img.sum(-1) > 0).sum())
    area = M.projected_square_area(1.0, center[2] - 0.5, cfg)
    assert abs(count - area) / area < 0.02


def test_zbuffer_nearer_triangle_wins():
    cfg = M.RenderConfig(extent=(32, 32), light_intensities=(1.0, 0.0, 0.0))
    tri = np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]])
    verts = np.vstack([tri + [0, 0, 3.0], tri + [0.2, 0, 2.0]])
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    red, blue = [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]
    img = M.rasterize(M.Mesh(verts, faces, np.array([red, blue])), cfg)
    near_only = M.rasterize(M.Mesh(verts[3:], faces[:1], np.array([blue])), cfg)
    covered = near_only.sum(-1) > 0
    assert covered.any() and np.array_equal(img[covered], near_only[covered])
    # swapping the draw order does not change the outcome
    img2 = M.rasterize(M.Mesh(verts[[3, 4, 5, 0, 1, 2]], faces, np.array([blue, red])), cfg)
    assert np.array_equal(img, img2)


def test_rasterize_deterministic_and_degenerate_camera():
    cfg = M.RenderConfig(extent=(24, 24))
    m = M.mesh_from_param(M.MeshParam(np.ones(162)))
    assert M.rasterize(m, cfg).tobytes() == M.rasterize(m, cfg).tobytes()
    behind = M.mesh_from_param(M.MeshParam(np.ones(162), translation=np.array([0.0, 0.0, 0.5])))
    with pytest.raises(DegenerateCamera):
        M.rasterize(behind, cfg)
    with pytest.raises(DegenerateCamera):
        M.rasterize(m, M.RenderConfig(extent=(4, 4), focal=0.0))


def test_mesh_loss_minimum_and_symmetry(rng):
    cfg = M.RenderConfig(extent=(12, 12))
    p = M.MeshParam(np.ones(162), np.array([0.2, 0.4, 0.0]))
    img = M.rasterize(M.mesh_from_param(p), cfg)
    s = M.DEFAULT_PIXEL_SIGMA
    assert M.mesh_loss(img, p, cfg) == pytest.approx(0.5 * img.size * math.log(2 * math.pi * s * s))
    delta = 0.1 * rng.standard_normal(img.shape)
    assert M.mesh_loss(img + delta, p, cfg) == pytest.approx(M.mesh_loss(img - delta, p, cfg), rel=1e-12)
    with pytest.raises(ShapeMismatch):
        M.mesh_loss(img[:5], p, cfg)


def test_mesh_loss_decreases_towards_truth():
    cfg = M.RenderConfig(extent=(16, 16))
    truth = M.MeshParam(np.full(162, 1.0), np.array([0.3, 0.5, 0.0]))
    x = M.rasterize(M.mesh_from_param(truth), cfg)
    losses = [M.mesh_loss(x, M.MeshParam(np.full(162, r), truth.angles, truth.translation), cfg)
              for r in (0.4, 0.6, 0.8, 1.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_reinforce_constant_loss_is_zero():
    for seed in range(20):
        for K in (2, 5, 8):
            g = M.reinforce_grad(lambda p: 3.0, np.ones(6), K=K, seed=seed)
            assert np.all(g == 0.0)
    with pytest.raises(ValueError):
        M.reinforce_grad(lambda p: 0.0, np.ones(3), K=1)
    with pytest.raises(ValueError):
        M.reinforce_grad(lambda p: 0.0, np.ones(3), noise_scale=0.0)


def test_reinforce_unbiased_on_quadratic_small_sample():
    target = np.array([0.5, -1.0, 2.0])
    p = np.zeros(3)
    loss = lambda q: float(np.sum((q - target) ** 2))  # noqa: E731
    est = np.mean([M.reinforce_grad(loss, p, K=8, noise_scale=0.1, seed=s) for s in range(4000)], axis=0)
    assert np.allclose(est, 2 * (p - target), rtol=0.1)


def test_exports_round_trip(tmp_path):
    m = M.mesh_from_param(M.MeshParam(np.linspace(0.5, 1.5, 162), np.array([0.1, 0.2, 0.3])))
    M.write_obj(tmp_path / "a.obj", m)
    back = M.read_obj(tmp_path / "a.obj")
    assert np.array_equal(back.vertices, m.vertices) and np.array_equal(back.faces, m.faces)
    M.write_obj(tmp_path / "b.obj", back)
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()
    text = (tmp_path / "a.obj").read_text().splitlines()
    assert text[0].startswith("v ") and text[-1].startswith("f ") and min(
        int(t) for line in text if line.startswith("f") for t in line.split()[1:]) == 1
    img = M.rasterize(m, M.RenderConfig(extent=(9, 11)))
    M.write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(M.read_ppm(tmp_path / "a.ppm"), M.to_uint8(img))
    M.write_png(tmp_path / "a.png", img)
    from PIL import Image
    assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")), M.to_uint8(img))
