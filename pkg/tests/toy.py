"""Enumerable 2x2x2 model with two latent dimensions, plus quadrature oracles.

The marginal p(x) = E_{z ~ N(0, I)} p(x | z) is a smooth two-dimensional
Gaussian expectation, so a tensor-product Gauss-Hermite rule gives it to
near machine precision.  These oracles never touch the recognition model.
"""
from __future__ import annotations

import itertools

import numpy as np

from voxgen import tensor as T
from voxgen.genmodel import GenerativeConfig, unroll
from voxgen.inference import VoxelModel, elbo
from voxgen.nn import AdamState, adam_step
from voxgen.projection import identity_logits

TOY_CFG = dict(steps=1, latent_dim=2, hidden_size=8, extent=(2, 2, 2), patch=(2, 2, 2), read_patch=(2, 2, 2),
               read_dim=16, context_dim=1)


def toy_model(seed: int = 0, gain: float = 2.0) -> VoxelModel:
    """f64 toy model; ``gain`` sharpens the generator so x depends clearly on z."""
    model = VoxelModel(GenerativeConfig(**TOY_CFG), seed=seed).astype(np.float64)
    model.gen.lstm.weight.data *= gain
    for p in model.gen.write_content.parameters():
        p.data *= gain
    return model


def gh_nodes(n: int = 60):
    """Tensor-product nodes and weights for E over a standard 2-D normal."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / np.sqrt(2 * np.pi)
    zz = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
    ww = np.outer(w, w).ravel()
    return zz, ww


def voxel_probs_given_z(model: VoxelModel, z: np.ndarray) -> np.ndarray:
    """Bernoulli means [N, 8] of the generator at latents ``z`` [N, 2]."""
    with T.no_grad():
        canvas, _ = unroll([T.GradTensor(z)], None, model.gen)
        logits = identity_logits(canvas).data.reshape(len(z), -1)
    return 1.0 / (1.0 + np.exp(-logits))


def log_px(model: VoxelModel, x: np.ndarray, n: int = 60) -> float:
    zz, ww = gh_nodes(n)
    p = voxel_probs_given_z(model, zz)
    xf = np.asarray(x, dtype=np.float64).ravel()
    lik = np.exp(np.sum(xf * np.log(p) + (1 - xf) * np.log1p(-p), axis=1))
    return float(np.log(np.sum(ww * lik)))


def all_states(n_bits: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=n_bits)))


def conditional_table(model: VoxelModel, x: np.ndarray, mask: np.ndarray, n: int = 60) -> np.ndarray:
    """p(x_u | x_o) for every hidden configuration, in :func:`all_states` order."""
    zz, ww = gh_nodes(n)
    p = voxel_probs_given_z(model, zz)
    m = np.asarray(mask, dtype=bool).ravel()
    xf = np.asarray(x, dtype=np.float64).ravel()
    lo = xf[m] * np.log(p[:, m]) + (1 - xf[m]) * np.log1p(-p[:, m])
    base = np.exp(lo.sum(axis=1)) * ww
    states = all_states(int((~m).sum()))
    pu = p[:, ~m]
    joint = np.array([np.sum(base * np.exp(np.sum(s * np.log(pu) + (1 - s) * np.log1p(-pu), axis=1)))
                      for s in states])
    return joint / joint.sum()


def sample_px(model: VoxelModel, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    p = voxel_probs_given_z(model, rng.standard_normal((n, 2)))
    return (rng.random(p.shape) < p).astype(np.float64).reshape(n, 2, 2, 2)


def fit_recognizer(model: VoxelModel, steps: int = 1500, batch: int = 128, lr: float = 1e-2, seed: int = 0):
    """Maximise the bound over the recognition parameters only, on data drawn from the model."""
    opt = AdamState(lr=lr)
    rec = model.rec.parameters()
    for step in range(steps):
        x = sample_px(model, batch, seed=10_000 + step)
        bound, _ = elbo(x, None, model, seed=step)
        T.backward(-T.reduce("mean", bound))
        model.gen.zero_grad()
        adam_step(opt, rec)
    return model
