"""Recognition model, variational bound and importance-weighted evaluation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeMismatch
from .genmodel import (
    Context,
    GenerativeConfig,
    Generator,
    generate_step,
    log_likelihood,
    read_context,
    zero_canvas,
    zero_state,
)
from .nn import Linear, Mlp, Module, init_params
from .projection import identity_logits, multiview_logits
from .tensor import GradTensor
from .vst import identity_affine2, identity_affine3, st_sample_2d, vst_sample

SIGMA_FLOOR = 1e-4
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class Recognizer(Module):
    """q(z_t | z_<t, x, c): attentive read of the data plus Gaussian heads."""

    def __init__(self, cfg: GenerativeConfig):
        super().__init__()
        self.cfg = cfg
        kind = cfg.data_kind
        H = cfg.hidden_size
        if kind == "volume":
            self.where = Linear(H, 12, init="zeros")
            n_in = int(np.prod(cfg.read_patch))
        elif kind == "views":
            self.where = Linear(H, 6 * cfg.target_views, init="zeros")
            n_in = cfg.target_views * int(np.prod(cfg.image_extent))
        else:
            n_in = int(np.prod(cfg.image_extent)) * 3
        self.read = Mlp([n_in, cfg.read_dim], ["tanh"])
        n_head = cfg.read_dim + H + cfg.context_dim
        self.mu = Linear(n_head, cfg.latent_dim)
        self.sigma = Linear(n_head, cfg.latent_dim)


@dataclass
class PosteriorStep:
    mu: GradTensor
    sigma: GradTensor
    z: GradTensor


def read_data(x: GradTensor, s_prev, rec: Recognizer) -> GradTensor:
    """r_t = f_r(x, s_{t-1}): transformer glimpse of the data, flattened through an MLP."""
    cfg = rec.cfg
    h = s_prev[0]
    B = h.shape[0]
    if x.shape[0] != B:
        raise ShapeMismatch(f"data batch {x.shape[0]} != state batch {B}")
    kind = cfg.data_kind
    if kind == "volume":
        if x.shape[1:] != cfg.extent:
            raise ShapeMismatch(f"volume {x.shape[1:]} != configured extent {cfg.extent}")
        where = rec.where(h) + GradTensor(identity_affine3(h.dtype))
        glimpse = vst_sample(T.reshape(x, (B, 1) + cfg.extent), where, cfg.read_patch)
    elif kind == "views":
        V = cfg.target_views
        if x.shape[1:] != (V,) + cfg.image_extent:
            raise ShapeMismatch(f"views {x.shape[1:]} != {(V,) + cfg.image_extent}")
        where = rec.where(h) + GradTensor(np.tile(identity_affine2(h.dtype), V))
        glimpse = st_sample_2d(T.reshape(x, (B * V, 1) + cfg.image_extent), T.reshape(where, (B * V, 6)),
                               cfg.image_extent)
    else:
        if x.shape[1:] != cfg.image_extent + (3,):
            raise ShapeMismatch(f"image {x.shape[1:]} != {cfg.image_extent + (3,)}")
        glimpse = x
    return rec.read(T.reshape(glimpse, (B, -1)))


def posterior_step(r_t: GradTensor, s_prev, e_t: GradTensor, rec: Recognizer, eps) -> PosteriorStep:
    """Reparameterised draw z = mu + sigma * eps, sigma = softplus(raw) + 1e-4."""
    feats = T.concat([r_t, s_prev[0], e_t], axis=-1)
    mu = rec.mu(feats)
    sigma = T.softplus(rec.sigma(feats)) + SIGMA_FLOOR
    eps = T._lift(eps) if isinstance(eps, GradTensor) else GradTensor(np.asarray(eps, dtype=mu.dtype))
    if eps.shape[-1] != mu.shape[-1]:
        raise ShapeMismatch(f"noise extent {eps.shape[-1]} != latent extent {mu.shape[-1]}")
    return PosteriorStep(mu, sigma, mu + sigma * eps)


def kl_gaussian(mu, sigma) -> GradTensor:
    """KL[N(mu, diag sigma^2) || N(0, I)] summed over the last axis."""
    mu, sigma = T._lift(mu), T._lift(sigma)
    if np.any(sigma.data <= 0):
        raise DomainError("sigma must be strictly positive")
    terms = 0.5 * (mu * mu + sigma * sigma - 1.0) - T.log(sigma)
    return T.reduce("sum", terms, -1)


def _log_normal_std(z: GradTensor) -> GradTensor:
    return T.reduce("sum", -0.5 * z * z - _HALF_LOG_2PI, -1)


class VoxelModel(Module):
    """Generative model (theta) and recognition model (phi) with shared state transition."""

    def __init__(self, cfg: GenerativeConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.gen = Generator(cfg)
        self.rec = Recognizer(cfg)
        init_params(self, seed)


def observe(canvas: GradTensor, s_T, gen: Generator, target_cams=None) -> GradTensor:
    """Projection to the data domain: logits for Bernoulli, means for Gaussian data."""
    cfg = gen.cfg
    if cfg.projection == "identity":
        logits = identity_logits(canvas)
    elif cfg.projection == "camera":
        cams = np.arange(cfg.target_views) if target_cams is None else np.asarray(target_cams)
        logits = multiview_logits(canvas, s_T, cams, gen.camera)
    else:
        from .mesh import render_canvas

        return GradTensor(render_canvas(canvas.data, cfg))
    return logits if cfg.likelihood == "bernoulli" else T.sigmoid(logits)


def _obs_log_sigma(gen: Generator):
    cfg = gen.cfg
    if cfg.likelihood != "diagonal_gaussian":
        return None
    if cfg.projection == "camera":
        return gen.camera.log_sigma
    if cfg.projection == "mesh":
        from .mesh import DEFAULT_PIXEL_SIGMA

        return GradTensor(np.asarray(math.log(DEFAULT_PIXEL_SIGMA), dtype=gen.lstm.weight.dtype))
    return gen.log_sigma


def _run(x, c: Context | None, model: VoxelModel, eps: np.ndarray, target_cams=None):
    cfg = model.cfg
    gen, rec = model.gen, model.rec
    dtype = gen.lstm.weight.dtype
    xt = x if isinstance(x, GradTensor) else GradTensor(np.asarray(x, dtype=dtype))
    B = xt.shape[0]
    s = zero_state(cfg, B, dtype)
    canvas = zero_canvas(cfg, B, dtype)
    kls, log_ratio, steps = [], None, []
    for t in range(cfg.steps):
        e = read_context(c, s, gen.read)
        r = read_data(xt, s, rec)
        post = posterior_step(r, s, e, rec, eps[t])
        kls.append(kl_gaussian(post.mu, post.sigma))
        logq = T.reduce("sum", -0.5 * GradTensor(eps[t]) ** 2 - T.log(post.sigma) - _HALF_LOG_2PI, -1)
        lr = _log_normal_std(post.z) - logq
        log_ratio = lr if log_ratio is None else log_ratio + lr
        steps.append(post)
        s, canvas = generate_step(s, post.z, e, canvas, gen)
    obs = observe(canvas, s, gen, target_cams)
    rec_ll = log_likelihood(xt, obs, cfg.likelihood, _obs_log_sigma(gen))
    return rec_ll, kls, log_ratio, steps, canvas


def _noise(rng: np.random.Generator, cfg: GenerativeConfig, rows: int, dtype) -> np.ndarray:
    # drawn row-major so consecutive chunks consume the stream exactly like one big draw
    eps = rng.standard_normal((rows, cfg.steps, cfg.latent_dim)).astype(dtype)
    return np.ascontiguousarray(eps.transpose(1, 0, 2))


def elbo(x, c: Context | None, model: VoxelModel, seed: int = 0, noise: np.ndarray | None = None,
         target_cams=None):
    """Single-sample variational bound per datum (nats) and a diagnostics record.

    The returned bound uses the closed-form KL; ``diagnostics["log_weight"]``
    is the sampled log importance weight with the same noise.
    """
    cfg = model.cfg
    dtype = model.gen.lstm.weight.dtype
    B = len(x)
    eps = noise if noise is not None else _noise(np.random.default_rng(seed), cfg, B, dtype)
    rec_ll, kls, log_ratio, steps, canvas = _run(x, c, model, eps, target_cams)
    kl_total = kls[0]
    for k in kls[1:]:
        kl_total = kl_total + k
    bound = rec_ll - kl_total
    if cfg.projection == "mesh" and T._grad_enabled():
        bound = bound + _mesh_surrogate(x, canvas, cfg, seed)
    diagnostics = {
        "seed": seed,
        "step_kl": [k.data.astype(np.float64) for k in kls],
        "reconstruction": rec_ll.data.astype(np.float64),
        "bound": bound.data.astype(np.float64),
        "log_weight": (rec_ll.data + log_ratio.data).astype(np.float64),
        "mu": [p.mu.data for p in steps],
        "sigma": [p.sigma.data for p in steps],
        "canvas": canvas.data,
    }
    return bound, diagnostics


def _mesh_surrogate(x, canvas: GradTensor, cfg: GenerativeConfig, seed: int) -> GradTensor:
    """Zero-valued term whose canvas gradient is the REINFORCE estimate of d log p / d canvas."""
    from .mesh import canvas_reinforce

    x = np.asarray(x.data if isinstance(x, GradTensor) else x)
    g = canvas_reinforce(x, canvas.data.astype(np.float64), cfg, np.random.default_rng([seed, 1]))
    g = GradTensor(-g.astype(canvas.dtype))
    lin = T.reduce("sum", canvas * g, -1)
    return lin - GradTensor(lin.data.copy())


def diagnostics_jsonl(diag: dict) -> str:
    """One JSON line per datum: step KLs, reconstruction term, bound, seed."""
    lines = []
    for i in range(len(diag["bound"])):
        lines.append(json.dumps({
            "seed": int(diag["seed"]),
            "step_kl": [float(k[i]) for k in diag["step_kl"]],
            "reconstruction": float(diag["reconstruction"][i]),
            "bound": float(diag["bound"][i]),
        }))
    return "\n".join(lines)


def iwae_eval(x, c: Context | None, model: VoxelModel, n_importance: int, seed: int = 0,
              max_rows: int = 4096, target_cams=None) -> np.ndarray:
    """Importance-weighted bound per datum: log-mean-exp of ``n_importance`` weights."""
    if n_importance < 1:
        raise ValueError("n_importance must be >= 1")
    cfg = model.cfg
    dtype = model.gen.lstm.weight.dtype
    x = np.asarray(x, dtype=dtype)
    B = len(x)
    rng = np.random.default_rng(seed)
    total = B * n_importance
    weights = np.empty(total, dtype=np.float64)
    with T.no_grad():
        for start in range(0, total, max_rows):
            rows = np.arange(start, min(total, start + max_rows))
            datum = rows // n_importance
            cc = None if c is None else c.take(datum)
            eps = _noise(rng, cfg, len(rows), dtype)
            rec_ll, _, log_ratio, _, _ = _run(x[datum], cc, model, eps, target_cams)
            weights[rows] = rec_ll.data.astype(np.float64) + log_ratio.data
    w = weights.reshape(B, n_importance)
    m = w.max(axis=1, keepdims=True)
    return (m[:, 0] + np.log(np.mean(np.exp(w - m), axis=1)))


def sample(model: VoxelModel, c: Context | None, n: int, seed: int = 0, target_cams=None):
    """Prior-driven generation; returns (canvas, observation means) as numpy arrays."""
    from .genmodel import prior_sample, unroll

    cfg = model.cfg
    dtype = model.gen.lstm.weight.dtype
    rng = np.random.default_rng(seed)
    with T.no_grad():
        latents = [GradTensor(z) for z in prior_sample(rng, cfg, batch=n, dtype=dtype)]
        canvas, s = unroll(latents, c, model.gen)
        obs = observe(canvas, s, model.gen, target_cams)
    means = obs.data
    if cfg.likelihood == "bernoulli" and cfg.projection != "mesh":
        means = 1.0 / (1.0 + np.exp(-means.astype(np.float64)))
    return canvas.data, means
