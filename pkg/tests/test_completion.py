import numpy as np
import pytest

from voxgen.completion import ObservationMask, complete, complete_step, noise_init
from voxgen.errors import ConfigError, ShapeMismatch
from voxgen.genmodel import GenerativeConfig
from voxgen.inference import VoxelModel

from toy import conditional_table, sample_px


@pytest.fixture(scope="module")
def small():
    cfg = GenerativeConfig(steps=2, latent_dim=3, hidden_size=16, extent=(4, 4, 4), patch=(2, 2, 2),
                           read_patch=(2, 2, 2), read_dim=8, context_dim=1)
    return VoxelModel(cfg, seed=3)


@pytest.fixture
def partial(rng):
    return (rng.random((4, 4, 4)) < 0.4).astype(np.float32)


def test_left_half_mask():
    m = ObservationMask.left_half((4, 4, 6))
    assert m.observed[:, :, 3:].all() and not m.observed[:, :, :3].any()


def test_observed_voxels_never_change(small, partial):
    mask = ObservationMask.left_half((4, 4, 4))
    for _, v in complete(partial, mask, small, iters=10, seed=1):
        assert np.array_equal(v[mask.observed], partial[mask.observed])
        assert set(np.unique(v)) <= {0.0, 1.0}


def test_all_observed_mask_is_identity(small, partial):
    mask = np.ones((4, 4, 4), bool)
    assert np.array_equal(complete_step(partial, mask, small, seed=0), partial)
    assert all(np.array_equal(v, partial) for _, v in complete(partial, mask, small, iters=3))


def test_single_iteration_matches_one_kernel_step(small, partial):
    mask = ObservationMask.left_half((4, 4, 4))
    (it, v), = complete(partial, mask, small, iters=1, seed=5, snapshots=(1,))
    expect = complete_step(noise_init(partial, mask, [5, 0]), mask, small, [5, 1])
    assert it == 1 and np.array_equal(v, expect)


def test_replay_is_deterministic(small, partial):
    mask = ObservationMask.left_half((4, 4, 4))
    a = complete(partial, mask, small, iters=8, seed=2)
    b = complete(partial, mask, small, iters=8, seed=2)
    assert [i for i, _ in a] == list(range(1, 9))
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a, b))
    c = complete(partial, mask, small, iters=8, seed=3)
    assert any(not np.array_equal(x, y) for (_, x), (_, y) in zip(a, c))


def test_batched_step_and_errors(small, partial):
    mask = ObservationMask.left_half((4, 4, 4))
    batch = np.stack([partial, 1 - partial])
    out = complete_step(batch, mask, small, seed=0)
    assert out.shape == batch.shape
    with pytest.raises(ShapeMismatch):
        complete_step(partial, np.ones((3, 4, 4), bool), small)
    with pytest.raises(ValueError):
        complete(partial, mask, small, iters=0)
    mesh_cfg = GenerativeConfig(representation="mesh", projection="mesh", likelihood="diagonal_gaussian", steps=1,
                                image_extent=(8, 8), n_views=0)
    with pytest.raises(ConfigError):
        complete_step(partial, mask, VoxelModel(mesh_cfg, seed=0))


def test_chain_targets_exact_conditional(fitted_toy):
    model = fitted_toy
    x = sample_px(model, 1, seed=5)[0]
    mask = np.zeros((2, 2, 2), bool)
    mask[:, :, 1] = True
    table = conditional_table(model, x, mask)
    chains, burn, its = 200, 20, 120
    xs = noise_init(np.repeat(x[None], chains, 0), mask, 0)
    counts = np.zeros(16)
    for i in range(its):
        xs = complete_step(xs, mask, model, [7, i])
        if i >= burn:
            u = xs.reshape(chains, -1)[:, ~mask.ravel()]
            counts += np.bincount((u @ 2 ** np.arange(3, -1, -1)).astype(int), minlength=16)
    tv = 0.5 * np.abs(counts / counts.sum() - table).sum()
    assert tv < 0.05
