"""Sequential generative model of 3-D structure.

At every step a Gaussian latent and an encoding of the context drive an
LSTM; the new hidden state writes into the canvas.  Volumetric canvases
receive an additive transformer write of a small content patch placed by
an affine map; mesh canvases receive an additive MLP update of the raw
mesh parameters.  After the last step the canvas goes through a
projection operator and an observation likelihood.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContextMismatch, DomainError, ShapeMismatch
from .nn import Conv, Linear, LstmCell, Mlp, Module, lstm_step
from .projection import CameraNet
from .tensor import GradTensor
from .vst import identity_affine2, identity_affine3, st_sample_2d, vst_write

N_MESH_VERTICES = 162
MESH_PARAM_SIZE = N_MESH_VERTICES + 6
LIKELIHOODS = ("bernoulli", "diagonal_gaussian")
CONTEXTS = ("none", "class", "views")
PROJECTIONS = ("identity", "camera", "mesh")


@dataclass
class GenerativeConfig:
    steps: int = 4
    latent_dim: int = 10
    hidden_size: int = 64
    channels: int = 1
    extent: tuple = (8, 8, 8)
    patch: tuple = (8, 8, 8)
    likelihood: str = "bernoulli"
    context: str = "none"
    n_classes: int = 0
    n_views: int = 0
    view_extent: tuple = (8, 8)
    context_dim: int = 16
    read_patch: tuple = (8, 8, 8)
    read_dim: int = 64
    representation: str = "volume"
    projection: str = "identity"
    n_cameras: int = 10
    target_views: int = 1
    image_extent: tuple = (8, 8)
    image_channels: int = 1
    mesh_hidden: int = 128
    reinforce_samples: int = 8
    reinforce_noise: float = 0.02

    def __post_init__(self):
        for name in ("extent", "patch", "view_extent", "read_patch", "image_extent"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"likelihood must be one of {LIKELIHOODS}")
        if self.context not in CONTEXTS:
            raise ConfigError(f"context must be one of {CONTEXTS}")
        if self.projection not in PROJECTIONS:
            raise ConfigError(f"projection must be one of {PROJECTIONS}")
        if self.representation not in ("volume", "mesh"):
            raise ConfigError("representation must be 'volume' or 'mesh'")
        if (self.representation == "mesh") != (self.projection == "mesh"):
            raise ConfigError("mesh representation pairs with the mesh projection")
        if self.context == "class" and self.n_classes < 1:
            raise ConfigError("class context needs n_classes >= 1")
        if self.context == "views" and self.n_views < 1:
            raise ConfigError("views context needs n_views >= 1")
        if self.channels < 1:
            raise ConfigError("canvas channels must be >= 1")
        if self.reinforce_samples < 2 or self.reinforce_noise <= 0:
            raise ConfigError("REINFORCE needs at least 2 samples and positive noise")

    @classmethod
    def from_dict(cls, d: dict) -> "GenerativeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("representation") == "mesh":
            d.setdefault("steps", 1)
            d.setdefault("projection", "mesh")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def data_kind(self) -> str:
        return {"identity": "volume", "camera": "views", "mesh": "image"}[self.projection]


@dataclass
class Context:
    """Always-observed side information: nothing, one-hot classes or 2-D views."""

    kind: str = "none"
    onehot: np.ndarray | None = None
    views: np.ndarray | None = None
    cam_ids: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in CONTEXTS:
            raise ContextMismatch(f"unknown context kind {self.kind!r}")
        if self.kind == "class":
            if self.onehot is None:
                raise ContextMismatch("class context needs a one-hot array")
            oh = np.asarray(self.onehot)
            if not np.allclose(oh.sum(axis=-1), 1.0):
                raise ContextMismatch("one-hot rows must sum to 1")
        if self.kind == "views" and self.views is None:
            raise ContextMismatch("views context needs images")

    @classmethod
    def classes(cls, labels, n_classes: int) -> "Context":
        labels = np.asarray(labels, dtype=np.int64)
        return cls("class", onehot=np.eye(n_classes)[labels])

    def take(self, idx) -> "Context":
        pick = lambda a: None if a is None else np.asarray(a)[idx]  # noqa: E731
        return Context(self.kind, pick(self.onehot), pick(self.views), self.cam_ids)

    def repeat(self, n: int) -> "Context":
        """Repeat every datum ``n`` times (datum-major)."""
        rep = lambda a: None if a is None else np.repeat(np.asarray(a), n, axis=0)  # noqa: E731
        return Context(self.kind, rep(self.onehot), rep(self.views), self.cam_ids)


class ContextReader(Module):
    """f_read: encodes the context, attending to views from the previous state."""

    def __init__(self, cfg: GenerativeConfig):
        super().__init__()
        self.kind = cfg.context
        self.dim = cfg.context_dim
        if cfg.context == "class":
            self.embed = Linear(cfg.n_classes, cfg.context_dim, bias=False)
        elif cfg.context == "views":
            self.n_views = cfg.n_views
            self.view_extent = cfg.view_extent
            self.where = Linear(cfg.hidden_size, 6 * cfg.n_views, init="zeros")
            self.conv = Conv(1, 4, 3, 2)
            self.proj = Linear(cfg.n_views * 4 * int(np.prod(cfg.view_extent)), cfg.context_dim)


def read_context(c: Context | None, s_prev, reader: ContextReader) -> GradTensor:
    """Encoding e_t of the context given the previous state."""
    h = s_prev[0]
    B = h.shape[0]
    kind = "none" if c is None else c.kind
    if kind != reader.kind:
        raise ContextMismatch(f"context kind {kind!r} but reader expects {reader.kind!r}")
    if kind == "none":
        return T.zeros((B, reader.dim), dtype=h.dtype)
    if kind == "class":
        oh = GradTensor(np.asarray(c.onehot, dtype=h.dtype))
        if oh.shape[-1] != reader.embed.n_in:
            raise ContextMismatch("one-hot width differs from the configured class count")
        return reader.embed(oh)
    views = np.asarray(c.views, dtype=h.dtype)
    V = reader.n_views
    if views.shape[1:] != (V,) + reader.view_extent:
        raise ContextMismatch(f"views of shape {views.shape[1:]} but reader expects {(V,) + reader.view_extent}")
    where = reader.where(h) + GradTensor(np.tile(identity_affine2(h.dtype), V))
    where = T.reshape(where, (B * V, 6))
    glimpses = st_sample_2d(GradTensor(views.reshape((B * V, 1) + reader.view_extent)), where, reader.view_extent)
    feats = T.relu(reader.conv(glimpses))
    return reader.proj(T.reshape(feats, (B, -1)))


class Generator(Module):
    """Generative parameters: read head, state transition, write head, projection."""

    def __init__(self, cfg: GenerativeConfig):
        super().__init__()
        self.cfg = cfg
        self.read = ContextReader(cfg)
        self.lstm = LstmCell(cfg.latent_dim + cfg.context_dim, cfg.hidden_size)
        if cfg.representation == "volume":
            self.write_content = Mlp([cfg.hidden_size, cfg.channels * int(np.prod(cfg.patch))], ["identity"])
            # zero-initialised: the first writes cover the canvas with the identity map
            self.write_where = Linear(cfg.hidden_size, 12, init="zeros")
        else:
            self.write_mesh = Mlp([cfg.hidden_size, cfg.mesh_hidden, MESH_PARAM_SIZE], ["tanh", "identity"])
        if cfg.projection == "camera":
            self.camera = CameraNet(cfg.hidden_size, cfg.channels, cfg.extent, cfg.image_extent, cfg.n_cameras)
        elif cfg.projection == "identity" and cfg.likelihood == "diagonal_gaussian":
            self.param("log_sigma", (), init="zeros")


def zero_state(cfg: GenerativeConfig, batch: int, dtype) -> tuple[GradTensor, GradTensor]:
    z = np.zeros((batch, cfg.hidden_size), dtype=dtype)
    return GradTensor(z), GradTensor(z.copy())


def zero_canvas(cfg: GenerativeConfig, batch: int, dtype) -> GradTensor:
    if cfg.representation == "mesh":
        return T.zeros((batch, MESH_PARAM_SIZE), dtype=dtype)
    return T.zeros((batch, cfg.channels) + cfg.extent, dtype=dtype)


def prior_sample(rng: np.random.Generator, cfg: GenerativeConfig, batch: int | None = None, dtype=None) -> list[np.ndarray]:
    """T independent standard-normal latent vectors ([K] or [batch, K] each)."""
    shape = (cfg.latent_dim,) if batch is None else (batch, cfg.latent_dim)
    dtype = dtype or T.default_dtype()
    return [rng.standard_normal(shape).astype(dtype) for _ in range(cfg.steps)]


def generate_step(s_prev, z_t, e_t, canvas_prev, gen: Generator):
    """One application of f_state then f_write; returns (s_t, canvas_t)."""
    cfg = gen.cfg
    z_t = T._lift(z_t)
    if z_t.shape[-1] != cfg.latent_dim or e_t.shape[-1] != cfg.context_dim:
        raise ShapeMismatch("latent or context extent does not match the configuration")
    s_t = lstm_step(gen.lstm, T.concat([z_t, e_t], axis=-1), s_prev)
    h = s_t[0]
    B = h.shape[0]
    if cfg.representation == "mesh":
        return s_t, canvas_prev + gen.write_mesh(h)
    content = T.reshape(gen.write_content(h), (B, cfg.channels) + cfg.patch)
    where = gen.write_where(h) + GradTensor(identity_affine3(h.dtype))
    return s_t, vst_write(canvas_prev, content, where)


def unroll(latents: Sequence, c: Context | None, gen: Generator, cfg: GenerativeConfig | None = None):
    """Fold :func:`generate_step` from a zero canvas and zero state."""
    cfg = cfg or gen.cfg
    if len(latents) != cfg.steps:
        raise ShapeMismatch(f"expected {cfg.steps} latents, got {len(latents)}")
    z0 = T._lift(latents[0])
    squeeze = z0.ndim == 1
    if squeeze:
        latents = [T.reshape(T._lift(z), (1, -1)) for z in latents]
    B = T._lift(latents[0]).shape[0]
    dtype = gen.lstm.weight.dtype
    s = zero_state(cfg, B, dtype)
    canvas = zero_canvas(cfg, B, dtype)
    for z in latents:
        e = read_context(c, s, gen.read)
        s, canvas = generate_step(s, z, e, canvas, gen)
    if squeeze:
        canvas = T.reshape(canvas, canvas.shape[1:])
        s = (T.reshape(s[0], (-1,)), T.reshape(s[1], (-1,)))
    return canvas, s


def likelihood(x, x_hat, kind: str = "bernoulli", sigma: float = 1.0) -> float:
    """Total log-density of ``x`` under means ``x_hat`` (summed over every element)."""
    x = np.asarray(x.data if isinstance(x, GradTensor) else x, dtype=np.float64)
    m = np.asarray(x_hat.data if isinstance(x_hat, GradTensor) else x_hat, dtype=np.float64)
    if x.shape != m.shape:
        raise ShapeMismatch(f"data {x.shape} and means {m.shape} differ")
    if kind == "bernoulli":
        if np.any(m <= 0) or np.any(m >= 1):
            raise DomainError("Bernoulli means must lie strictly inside (0, 1)")
        return float(np.sum(x * np.log(m) + (1 - x) * np.log1p(-m)))
    if kind == "diagonal_gaussian":
        r = (x - m) / sigma
        return float(np.sum(-0.5 * r * r - math.log(sigma) - 0.5 * math.log(2 * math.pi)))
    raise ValueError(f"unknown likelihood {kind!r}")


def log_likelihood(x, params: GradTensor, kind: str, log_sigma=None) -> GradTensor:
    """Per-datum log-density (sum over all but the leading axis).

    Bernoulli takes logits; the Gaussian takes means and an optional
    (learnable) log standard deviation.
    """
    x = T._lift(x) if isinstance(x, GradTensor) else GradTensor(np.asarray(x, dtype=params.dtype))
    if x.shape != params.shape:
        raise ShapeMismatch(f"data {x.shape} and prediction {params.shape} differ")
    axes = tuple(range(1, x.ndim))
    if kind == "bernoulli":
        ll = x * T.log_sigmoid(params) + (1.0 - x) * T.log_sigmoid(-params)
        return T.reduce("sum", ll, axes)
    if kind == "diagonal_gaussian":
        ls = T._lift(log_sigma) if log_sigma is not None else GradTensor(np.zeros((), dtype=params.dtype))
        r = (x - params) * T.exp(-ls)
        ll = -0.5 * r * r - ls - 0.5 * math.log(2 * math.pi)
        return T.reduce("sum", ll, axes)
    raise ValueError(f"unknown likelihood {kind!r}")
