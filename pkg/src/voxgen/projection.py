"""Projection operators from a volumetric canvas to the observed domain.

``proj_identity`` turns canvas logits into Bernoulli voxel means.  The
learned camera re-poses the canvas with a volumetric transformer, runs 3-D
convolutions, folds depth into channels and finishes with 2-D convolutions.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import InvalidCamera, ShapeMismatch
from .nn import Conv, Linear, Module
from .tensor import GradTensor
from .vst import identity_affine3, vst_sample


def proj_identity(h_T: GradTensor) -> GradTensor:
    """Sigmoid of the channel-summed canvas; [(B,) F, D, H, W] -> [(B,) D, H, W]."""
    h_T = T._lift(h_T)
    if h_T.ndim not in (4, 5):
        raise ShapeMismatch(f"volumetric canvas expected, got {h_T.shape}")
    return T.sigmoid(identity_logits(h_T))


def identity_logits(h_T: GradTensor) -> GradTensor:
    axis = h_T.ndim - 4
    return T.reduce("sum", h_T, axis) if h_T.shape[axis] > 1 else T.reshape(h_T, h_T.shape[:axis] + h_T.shape[axis + 1:])


class CameraNet(Module):
    """Learned volume-to-image camera (parameters shared across views)."""

    def __init__(self, hidden_size: int, channels: int, extent, image_extent, n_cameras: int,
                 conv3d_channels: Sequence[int] = (8, 8), conv2d_channels: Sequence[int] = (8,),
                 kernel3: int = 3, kernel2: int = 3, depth: int | None = None, out_channels: int = 1):
        super().__init__()
        self.hidden_size = hidden_size
        self.channels = channels
        self.extent = tuple(extent)
        self.image_extent = tuple(image_extent)
        self.n_cameras = n_cameras
        self.depth = depth or self.extent[0]
        # zero-initialised so every camera starts at the identity pose
        self.pose = Linear(hidden_size, 12, init="zeros")
        self.param("pose_offsets", (n_cameras, 12), init="zeros")
        self.param("log_sigma", (), init="zeros")
        chans = [channels] + list(conv3d_channels)
        self.conv3d = [Conv(a, b, kernel3, 3) for a, b in zip(chans[:-1], chans[1:])]
        chans2 = [chans[-1] * self.depth] + list(conv2d_channels) + [out_channels]
        self.conv2d = [Conv(a, b, kernel2, 2) for a, b in zip(chans2[:-1], chans2[1:])]

    def pose_params(self, h: GradTensor, cam_ids: np.ndarray) -> GradTensor:
        ident = GradTensor(identity_affine3(h.dtype))
        offsets = T.getitem(self.pose_offsets, np.asarray(cam_ids, dtype=np.int64))
        return self.pose(h) + offsets + ident

    def logits(self, h_T: GradTensor, h_state: GradTensor, cam_ids: np.ndarray) -> GradTensor:
        """Pre-sigmoid images [B, out_channels, h, w]; one camera id per batch row."""
        pose = self.pose_params(h_state, cam_ids)
        v = vst_sample(h_T, pose, (self.depth,) + self.image_extent)
        for conv in self.conv3d:
            v = T.relu(conv(v))
        B, C, D, H, W = v.shape
        img = T.reshape(v, (B, C * D, H, W))
        for i, conv in enumerate(self.conv2d):
            img = conv(img)
            if i < len(self.conv2d) - 1:
                img = T.relu(img)
        return img


def _check_ids(cam_ids, net: CameraNet) -> np.ndarray:
    ids = np.atleast_1d(np.asarray(cam_ids, dtype=np.int64))
    if ids.size == 0:
        raise InvalidCamera("at least one camera id is required")
    if np.any(ids < 0) or np.any(ids >= net.n_cameras):
        raise InvalidCamera(f"camera ids {ids.tolist()} outside [0, {net.n_cameras})")
    return ids


def proj_camera(h_T: GradTensor, s_T, cam_id: int, net: CameraNet) -> GradTensor:
    """Render the canvas from one camera; returns [B, h, w] values in (0, 1)."""
    ids = _check_ids(cam_id, net)
    h_state = s_T[0]
    B = h_T.shape[0]
    return T.sigmoid(net.logits(h_T, h_state, np.full(B, ids[0])))[:, 0]


def multiview_logits(h_T: GradTensor, s_T, cam_ids, net: CameraNet) -> GradTensor:
    """Logits for every (datum, camera) pair, [B, V, h, w]."""
    ids = _check_ids(cam_ids, net)
    B, V = h_T.shape[0], ids.size
    canvas = T.reshape(T.broadcast_to(T.reshape(h_T, (1,) + h_T.shape), (V,) + h_T.shape), (V * B,) + h_T.shape[1:])
    hs = s_T[0]
    hs = T.reshape(T.broadcast_to(T.reshape(hs, (1,) + hs.shape), (V,) + hs.shape), (V * B, hs.shape[-1]))
    logits = net.logits(canvas, hs, np.repeat(ids, B))[:, 0]
    logits = T.reshape(logits, (V, B) + logits.shape[1:])
    return T.transpose(logits, (1, 0, 2, 3))


def proj_multiview(h_T: GradTensor, s_T, cam_ids, net: CameraNet) -> list[GradTensor]:
    """Clone the camera once per id (shared weights); one [B, h, w] image per id."""
    imgs = T.sigmoid(multiview_logits(h_T, s_T, cam_ids, net))
    return [imgs[:, v] for v in range(imgs.shape[1])]
