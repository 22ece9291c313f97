"""Planar and volumetric spatial transformers.

An affine map takes normalised output coordinates (each axis in [-1, 1],
the end points landing on the first and last voxel centres) to normalised
input coordinates.  The input is then resampled at those locations with a
separable hat kernel: the weight of input voxel (a, b, c) for one output
site is ``k(u_d - a) * k(u_h - b) * k(u_w - c)`` with ``k(s) = max(0, 1 - |s|)``,
which is trilinear (bilinear in 2-D) interpolation.  Samples falling
outside the input read as zero.

Affine parameters are flat vectors: 12 entries in 3-D (row-major 3x3
matrix then translation, axis order depth, height, width) and 6 in 2-D.
"""
from __future__ import annotations

import itertools

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .tensor import GradTensor


def identity_affine3(dtype=None) -> np.ndarray:
    return np.concatenate([np.eye(3).ravel(), np.zeros(3)]).astype(dtype or T.default_dtype())


def identity_affine2(dtype=None) -> np.ndarray:
    return np.concatenate([np.eye(2).ravel(), np.zeros(2)]).astype(dtype or T.default_dtype())


def make_affine(A, t) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    return np.concatenate([A.ravel(), np.asarray(t, dtype=np.float64).ravel()])


def rotation_matrix(angles) -> np.ndarray:
    """Rotation from Euler angles (about depth, height, width axes), applied in that order."""
    a, b, c = angles

    def rot(i, j, th):
        R = np.eye(3)
        R[i, i] = R[j, j] = np.cos(th)
        R[i, j] = -np.sin(th)
        R[j, i] = np.sin(th)
        return R

    # rotation "about" an axis mixes the other two
    return rot(0, 1, c) @ rot(0, 2, b) @ rot(1, 2, a)


def base_grid(extents) -> np.ndarray:
    """Uniform coordinates in [-1, 1] per axis, shape [prod(extents), nd]."""
    axes = [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in extents]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _affine_grid(p: GradTensor, out_extents, nd: int) -> GradTensor:
    p = T._lift(p)
    if p.shape[-1] != nd * nd + nd:
        raise ShapeMismatch(f"expected {nd * nd + nd} affine parameters, got {p.shape}")
    batched = p.ndim == 2
    pb = p if batched else T.reshape(p, (1, -1))
    B = pb.shape[0]
    A = T.reshape(pb[:, : nd * nd], (B, nd, nd))
    t = T.reshape(pb[:, nd * nd:], (B, 1, nd))
    base = GradTensor(base_grid(out_extents).astype(p.dtype))
    grid = T.matmul(base, T.transpose(A, (0, 2, 1))) + t
    grid = T.reshape(grid, (B,) + tuple(out_extents) + (nd,))
    return grid if batched else T.reshape(grid, tuple(out_extents) + (nd,))


def affine_grid_3d(p, out_extents) -> GradTensor:
    """Source coordinates ``A @ (z, y, x) + t`` for every output voxel, shape [(B,) D, H, W, 3]."""
    return _affine_grid(p, tuple(out_extents), 3)


def affine_grid_2d(p, out_extents) -> GradTensor:
    return _affine_grid(p, tuple(out_extents), 2)


def _axis_terms(u: np.ndarray, n: int, snap: float):
    """Per-axis corner indices, weights and validity for hat-kernel sampling."""
    r = np.rint(u)
    u = np.where(np.abs(u - r) < snap, r, u)
    i0 = np.floor(u)
    w1 = u - i0
    i0 = i0.astype(np.int64)
    i1 = i0 + 1
    idx = (i0, i1)
    w = (1.0 - w1, w1)
    valid = ((i0 >= 0) & (i0 < n), (i1 >= 0) & (i1 < n))
    dw = (-1.0, 1.0)
    return idx, w, valid, dw


def grid_sample(x: GradTensor, grid: GradTensor) -> GradTensor:
    """Resample ``x`` [B, C, *S] at normalised ``grid`` [B, *S', nd]."""
    x, grid = T._lift(x), T._lift(grid)
    nd = grid.shape[-1]
    if x.ndim != nd + 2 or grid.ndim != nd + 2 or x.shape[0] != grid.shape[0]:
        raise ShapeMismatch(f"grid_sample: input {x.shape} incompatible with grid {grid.shape}")
    B, C = x.shape[:2]
    in_sp = x.shape[2:]
    out_sp = grid.shape[1:-1]
    N = int(np.prod(out_sp))
    g = grid.data.reshape(B, N, nd)
    scale = np.array([(n - 1) / 2.0 for n in in_sp], dtype=g.dtype)
    u = (g + 1.0) * scale
    snap = 64 * np.finfo(x.dtype).eps * max(in_sp)
    terms = [_axis_terms(u[..., a], in_sp[a], snap) for a in range(nd)]
    strides = np.array([int(np.prod(in_sp[a + 1:])) for a in range(nd)])
    xf = x.data.reshape(B, C, -1)

    corners = []
    out = np.zeros((B, C, N), dtype=x.dtype)
    for combo in itertools.product((0, 1), repeat=nd):
        lin = np.zeros((B, N), dtype=np.int64)
        wt = np.ones((B, N), dtype=x.dtype)
        valid = np.ones((B, N), dtype=bool)
        for a, c in enumerate(combo):
            idx, w, v, _ = terms[a]
            lin += np.clip(idx[c], 0, in_sp[a] - 1) * strides[a]
            wt = wt * w[c]
            valid &= v[c]
        wt = wt * valid
        vals = np.take_along_axis(xf, lin[:, None, :], axis=2)
        out += vals * wt[:, None, :]
        corners.append((combo, lin, wt, valid, vals))
    result = out.reshape((B, C) + tuple(out_sp))

    def bw(gout):
        gflat = gout.reshape(B, C, N)
        gx = np.zeros(B * C * xf.shape[2], dtype=np.float64)
        offs = (np.arange(B * C) * xf.shape[2]).reshape(B, C, 1)
        ggrid = np.zeros((B, N, nd), dtype=x.dtype)
        for combo, lin, wt, valid, vals in corners:
            contrib = gflat * wt[:, None, :]
            gx += np.bincount((lin[:, None, :] + offs).ravel(), weights=contrib.ravel(), minlength=gx.size)
            gv = np.sum(gflat * vals, axis=1) * valid
            for a in range(nd):
                d = np.full((B, N), terms[a][3][combo[a]], dtype=x.dtype)
                for b, cb in enumerate(combo):
                    if b != a:
                        d = d * terms[b][1][cb]
                ggrid[..., a] += gv * d
        ggrid *= scale
        return gx.reshape(x.shape).astype(x.dtype), ggrid.reshape(grid.shape)

    return GradTensor._make(result, (x, grid), bw, "grid_sample")


def _sample(x, p, out_extents, nd: int) -> GradTensor:
    x, p = T._lift(x), T._lift(p)
    batched = x.ndim == nd + 2
    if not batched and x.ndim != nd + 1:
        raise ShapeMismatch(f"expected [(B,) C, {nd} spatial] input, got {x.shape}")
    xb = x if batched else T.reshape(x, (1,) + x.shape)
    pb = p if p.ndim == 2 else T.reshape(p, (1, -1))
    if pb.shape[0] != xb.shape[0]:
        if pb.shape[0] == 1:
            pb = T.broadcast_to(pb, (xb.shape[0], pb.shape[1]))
        else:
            raise ShapeMismatch("batch of parameters and inputs differ")
    grid = _affine_grid(pb, tuple(out_extents), nd)
    out = grid_sample(xb, grid)
    return out if batched else T.reshape(out, out.shape[1:])


def vst_sample(x, p, out_extents) -> GradTensor:
    """Volumetric transformer: resample [(B,) C, D, H, W] at the affine grid."""
    return _sample(x, p, out_extents, 3)


def st_sample_2d(x, p, out_extents) -> GradTensor:
    """Planar transformer: resample [(B,) C, H, W] at the affine grid."""
    return _sample(x, p, out_extents, 2)


def vst_write(canvas, content, p) -> GradTensor:
    """Additive write: ``canvas + vst_sample(content, p, canvas extents)``."""
    canvas, content = T._lift(canvas), T._lift(content)
    if canvas.ndim != content.ndim or canvas.shape[:-3] != content.shape[:-3]:
        raise ShapeMismatch(f"canvas {canvas.shape} and content {content.shape} disagree")
    return canvas + vst_sample(content, p, canvas.shape[-3:])
