"""Network building blocks: parameter containers, LSTM cell, MLP, Adam."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import CheckpointCorrupt, MissingGradient, ShapeMismatch
from .tensor import GradTensor


class Module:
    """Parameter container.

    Parameters are registered with :meth:`param` together with their
    initialisation rule; sub-modules are discovered from attributes in
    definition order, which fixes the parameter naming and ordering.
    """

    def __init__(self):
        self._params: dict[str, GradTensor] = {}
        self._inits: dict[str, str] = {}

    def param(self, name: str, shape, init: str = "glorot", dtype=None) -> GradTensor:
        p = GradTensor(np.zeros(shape, dtype=dtype or T.default_dtype()), requires_grad=True)
        self._params[name] = p
        self._inits[name] = init
        setattr(self, name, p)
        return p

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, GradTensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for key, child in self._children():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> list[GradTensor]:
        return [p for _, p in self.named_parameters()]

    def named_inits(self, prefix: str = "") -> Iterator[tuple[str, str]]:
        for name, kind in self._inits.items():
            yield prefix + name, kind
        for key, child in self._children():
            yield from child.named_inits(f"{prefix}{key}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise CheckpointCorrupt(f"parameter names differ: {missing[:5]}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise CheckpointCorrupt(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def _fans(shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:
        return shape[0], shape[1]
    receptive = int(np.prod(shape[2:]))
    return shape[1] * receptive, shape[0] * receptive


def init_params(module: Module, seed: int) -> Module:
    """Glorot-uniform weights, zero biases; a pure function of (architecture, seed)."""
    rng = np.random.default_rng(seed)
    inits = dict(module.named_inits())
    for name, p in module.named_parameters():
        kind = inits[name]
        if kind == "zeros" or p.ndim < 2:
            p.data = np.zeros(p.shape, dtype=p.dtype)
        elif kind == "glorot":
            fan_in, fan_out = _fans(p.shape)
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            p.data = rng.uniform(-limit, limit, size=p.shape).astype(p.dtype)
        else:
            raise ValueError(f"unknown init {kind!r} for {name}")
        p.grad = None
    return module


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, bias: bool = True, init: str = "glorot"):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.param("weight", (n_in, n_out), init=init)
        self.has_bias = bias
        if bias:
            self.param("bias", (n_out,), init="zeros")

    def __call__(self, x: GradTensor) -> GradTensor:
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"expected last extent {self.n_in}, got {x.shape}")
        y = T.matmul(x, self.weight)
        return y + self.bias if self.has_bias else y


_ACTIVATIONS = {
    "tanh": T.tanh,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "identity": lambda x: x,
}


class Mlp(Module):
    """Stack of affine layers, each followed by its own activation."""

    def __init__(self, sizes: Sequence[int], activations: Sequence[str] | str = "tanh"):
        super().__init__()
        if len(sizes) < 2:
            raise ShapeMismatch("an MLP needs at least input and output extents")
        n_layers = len(sizes) - 1
        if isinstance(activations, str):
            activations = [activations] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ShapeMismatch("one activation per layer")
        for a in activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = list(sizes)
        self.activations = list(activations)
        self.layers = [Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x: GradTensor) -> GradTensor:
        return mlp_apply(self, x)


def mlp_apply(m: Mlp, x: GradTensor) -> GradTensor:
    if x.shape[-1] != m.sizes[0]:
        raise ShapeMismatch(f"MLP expects last extent {m.sizes[0]}, got {x.shape}")
    for layer, act in zip(m.layers, m.activations):
        x = _ACTIVATIONS[act](layer(x))
    return x


class LstmCell(Module):
    """Fully connected LSTM; weights of the four gates (i, f, g, o) are stacked
    column-wise in a single [input + hidden, 4 * hidden] matrix."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.param("weight", (input_size + hidden_size, 4 * hidden_size))
        self.param("bias", (4 * hidden_size,), init="zeros")

    def gate_blocks(self) -> list[np.ndarray]:
        h = self.hidden_size
        return [self.weight.data[:, i * h:(i + 1) * h] for i in range(4)]

    def __call__(self, x, state):
        return lstm_step(self, x, state)


def lstm_step(cell: LstmCell, x: GradTensor, state: tuple[GradTensor, GradTensor]):
    h, c = state
    n = cell.hidden_size
    if x.shape[-1] != cell.input_size:
        raise ShapeMismatch(f"LSTM input extent {x.shape[-1]} != {cell.input_size}")
    if h.shape[-1] != n or c.shape[-1] != n:
        raise ShapeMismatch("LSTM state extent does not match hidden size")
    pre = T.matmul(T.concat([x, h], axis=-1), cell.weight) + cell.bias
    i = T.sigmoid(pre[..., :n])
    f = T.sigmoid(pre[..., n:2 * n])
    g = T.tanh(pre[..., 2 * n:3 * n])
    o = T.sigmoid(pre[..., 3 * n:])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


class Conv(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, dims: int, pad: int | None = None, stride: int = 1):
        super().__init__()
        self.dims = dims
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad
        self.param("weight", (c_out, c_in) + (kernel,) * dims)
        self.param("bias", (c_out,), init="zeros")

    def __call__(self, x: GradTensor) -> GradTensor:
        y = T.conv(x, self.weight, self.dims, self.stride, self.pad)
        return y + self.bias.reshape((1, -1) + (1,) * self.dims)


# -- optimisation --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(s: AdamState, params: Sequence[GradTensor]) -> None:
    """One bias-corrected Adam update; clears the gradients afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradient(f"parameter {i} has no gradient")
    if not s.m:
        s.m = [np.zeros_like(p.data) for p in params]
        s.v = [np.zeros_like(p.data) for p in params]
    s.step += 1
    bc1 = 1.0 - s.beta1 ** s.step
    bc2 = 1.0 - s.beta2 ** s.step
    for p, m, v in zip(params, s.m, s.v):
        g = p.grad
        m *= s.beta1
        m += (1.0 - s.beta1) * g
        v *= s.beta2
        v += (1.0 - s.beta2) * g * g
        if s.lr:
            update = s.lr * (m / bc1) / (np.sqrt(v / bc2) + s.epsilon)
            p.data = (p.data - update).astype(p.dtype, copy=False)
        p.grad = None


def clip_grad_norm(params: Sequence[GradTensor], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None)))
    if np.isfinite(total) and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(directory, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """Directory of VGT1 files plus ``manifest.json`` mapping names to files."""
    os.makedirs(directory, exist_ok=True)
    files = {}
    for i, (name, arr) in enumerate(arrays.items()):
        fname = f"t{i:04d}.vgt"
        T.save_tensor(os.path.join(directory, fname), arr)
        files[name] = fname
    manifest = {"format": "voxgen-checkpoint", "tensors": files}
    if extra:
        manifest["extra"] = extra
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        files = manifest["tensors"]
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointCorrupt(f"unreadable manifest in {directory}: {exc}") from exc
    arrays = {}
    for name, fname in files.items():
        try:
            arrays[name] = T.load_tensor(os.path.join(directory, fname))
        except OSError as exc:
            raise CheckpointCorrupt(f"missing tensor file {fname}") from exc
    return arrays, manifest.get("extra", {})
