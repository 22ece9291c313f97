"""Volume completion by alternating inference and generation.

Each kernel application draws latents from the recognition model given the
current volume, samples a fresh volume from the generative model, and copies
the observed voxels back in.  Chains start from Bernoulli(0.5) noise on the
unobserved voxels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeMismatch
from .genmodel import Context
from .inference import VoxelModel, _noise, _run
from .projection import identity_logits

DEFAULT_SNAPSHOTS = (1, 2, 3, 4, 5, 6, 7, 8, 100)


@dataclass
class ObservationMask:
    """Boolean volume; True marks observed voxels."""

    observed: np.ndarray

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=bool)

    @classmethod
    def left_half(cls, extent, axis: int = 2) -> "ObservationMask":
        """Observe the right half along ``axis``; the left half is hidden."""
        m = np.zeros(tuple(extent), dtype=bool)
        idx = [slice(None)] * 3
        idx[axis] = slice(extent[axis] // 2, None)
        m[tuple(idx)] = True
        return cls(m)

    def check(self, x: np.ndarray) -> None:
        if x.shape[-3:] != self.observed.shape:
            raise ShapeMismatch(f"volume {x.shape[-3:]} and mask {self.observed.shape} differ")


def _as_mask(mask) -> ObservationMask:
    return mask if isinstance(mask, ObservationMask) else ObservationMask(mask)


def _voxel_probs(x: np.ndarray, c: Context | None, model: VoxelModel, rng: np.random.Generator) -> np.ndarray:
    cfg = model.cfg
    dtype = model.gen.lstm.weight.dtype
    eps = _noise(rng, cfg, len(x), dtype)
    with T.no_grad():
        *_, canvas = _run(x.astype(dtype), c, model, eps)
        logits = identity_logits(canvas).data.astype(np.float64)
    return 1.0 / (1.0 + np.exp(-logits))


def complete_step(x_current: np.ndarray, mask, model: VoxelModel, seed=0, c: Context | None = None) -> np.ndarray:
    """One kernel step: z ~ q(z | x), x' ~ p(x | z) on hidden voxels, observed copied."""
    if model.cfg.projection != "identity" or model.cfg.likelihood != "bernoulli":
        raise ConfigError("completion needs a Bernoulli volume model")
    mask = _as_mask(mask)
    x = np.asarray(x_current)
    mask.check(x)
    if x.shape[-3:] != model.cfg.extent:
        raise ShapeMismatch(f"volume {x.shape[-3:]} != model extent {model.cfg.extent}")
    if mask.observed.all():
        return x.copy()
    batched = x.ndim == 4
    xb = x if batched else x[None]
    rng = np.random.default_rng(seed)
    probs = _voxel_probs(xb, c, model, rng)
    draw = (rng.random(probs.shape) < probs).astype(x.dtype)
    out = np.where(mask.observed, xb, draw)
    return out if batched else out[0]


def noise_init(x_partial: np.ndarray, mask, seed=0) -> np.ndarray:
    """Observed voxels kept, hidden voxels replaced by Bernoulli(0.5) draws."""
    mask = _as_mask(mask)
    x = np.asarray(x_partial)
    mask.check(x)
    rng = np.random.default_rng(seed)
    coin = (rng.random(x.shape) < 0.5).astype(x.dtype)
    return np.where(mask.observed, x, coin)


def complete(x_partial: np.ndarray, mask, model: VoxelModel, iters: int, seed: int = 0,
             snapshots=DEFAULT_SNAPSHOTS, c: Context | None = None) -> list[tuple[int, np.ndarray]]:
    """Run the chain for ``iters`` steps; returns (iteration, volume) snapshots.

    Step ``i`` (1-based) uses the seed ``[seed, i]`` and the initial noise uses
    ``[seed, 0]``, so chains replay exactly.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    keep = set(snapshots) if snapshots is not None else set(range(1, iters + 1))
    x = noise_init(x_partial, mask, [seed, 0])
    out = []
    for i in range(1, iters + 1):
        x = complete_step(x, mask, model, [seed, i], c)
        if i in keep:
            out.append((i, x.copy()))
    return out
