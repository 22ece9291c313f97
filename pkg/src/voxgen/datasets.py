"""Procedural volumetric datasets, IDX/VOX1 file formats and augmentation.

Volumes are float32 arrays indexed [depth, height, width] with values in
[0, 1].  Geometry is expressed in voxel units around the volume centre
``(n - 1) / 2`` so canonical shapes sit symmetrically on the lattice.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import BadMagic, DataError, LabelCountMismatch, TruncatedFile
from .vst import rotation_matrix, vst_sample

PRIMITIVE_KINDS = ("cube", "sphere", "pyramid", "cylinder", "capsule", "ellipsoid")
FULL_EXTENT = 30


@dataclass
class AugmentSpec:
    """Uniform per-axis translation in [-translation, translation] voxels and
    Euler angles in [-rotation, rotation] radians."""

    translation: float = 10.0
    rotation: float = float(np.pi)
    seed: int = 0

    def __post_init__(self):
        if self.translation < 0 or self.rotation < 0:
            raise ValueError("augmentation ranges must be nonnegative")

    @classmethod
    def none(cls, seed: int = 0) -> "AugmentSpec":
        return cls(0.0, 0.0, seed)

    @classmethod
    def scaled(cls, extent: int, seed: int = 0) -> "AugmentSpec":
        """Default ranges shrunk proportionally for a volume of the given extent."""
        return cls(10.0 * extent / FULL_EXTENT, float(np.pi), seed)


# -- geometry helpers ----------------------------------------------------------

def _centred_coords(extent) -> np.ndarray:
    ext = (extent,) * 3 if np.isscalar(extent) else tuple(extent)
    axes = [np.arange(n) - (n - 1) / 2.0 for n in ext]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation from a random unit quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def transform_volume(v: np.ndarray, R: np.ndarray, shift, binarize: bool = True) -> np.ndarray:
    """Rotate ``v`` by ``R`` about its centre then translate by ``shift`` voxels."""
    v = np.asarray(v, dtype=np.float64)
    half = np.array([(n - 1) / 2.0 if n > 1 else 1.0 for n in v.shape])
    Rt = np.asarray(R, dtype=np.float64).T
    # normalised output coordinate u maps to input (half^-1 R^T half) u - half^-1 R^T shift
    A = (Rt * half[None, :]) / half[:, None]
    t = -(Rt @ np.asarray(shift, dtype=np.float64)) / half
    p = np.concatenate([A.ravel(), t])
    with T.no_grad():
        out = vst_sample(T.GradTensor(v[None]), T.GradTensor(p), v.shape).data[0]
    if binarize:
        out = (out >= 0.5).astype(np.float32)
    return out.astype(np.float32)


def augment(v: np.ndarray, aug: AugmentSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Random rotation then translation (transformer resampling), binarised at 0.5."""
    rng = rng if rng is not None else np.random.default_rng(aug.seed)
    angles = rng.uniform(-aug.rotation, aug.rotation, size=3) if aug.rotation > 0 else np.zeros(3)
    shift = rng.uniform(-aug.translation, aug.translation, size=3) if aug.translation > 0 else np.zeros(3)
    if not np.any(angles) and not np.any(shift):
        return (np.asarray(v) >= 0.5).astype(np.float32)
    return transform_volume(v, rotation_matrix(angles), shift)


# -- Necker cubes --------------------------------------------------------------

def _draw_line(vol: np.ndarray, a: np.ndarray, b: np.ndarray) -> None:
    n = int(np.ceil(np.max(np.abs(b - a)))) + 1
    pts = a[None, :] + np.linspace(0.0, 1.0, n)[:, None] * (b - a)[None, :]
    idx = np.floor(pts + 0.5).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < np.array(vol.shape)), axis=1)
    idx = idx[ok]
    vol[idx[:, 0], idx[:, 1], idx[:, 2]] = 1.0


def cube_edges(side: float):
    h = (side - 1) / 2.0
    corners = np.array([[sz, sy, sx] for sz in (-h, h) for sy in (-h, h) for sx in (-h, h)])
    edges = [(i, j) for i in range(8) for j in range(i + 1, 8)
             if np.count_nonzero(corners[i] != corners[j]) == 1]
    return corners, edges


def gen_necker(seed: int, extent: int = 40, side: int = 10, rotate: bool = True) -> np.ndarray:
    """Wire-frame cube of ``side`` voxels at a uniformly random orientation, centred."""
    rng = np.random.default_rng(seed)
    R = random_rotation(rng) if rotate else np.eye(3)
    corners, edges = cube_edges(side)
    centre = np.full(3, (extent - 1) / 2.0)
    pts = corners @ R.T + centre
    vol = np.zeros((extent,) * 3, dtype=np.float32)
    for i, j in edges:
        _draw_line(vol, pts[i], pts[j])
    return vol


# -- Primitives ----------------------------------------------------------------

def primitive_sizes(extent: int) -> dict:
    s = extent / FULL_EXTENT
    return {
        "cube": {"side": 12 * s},
        "sphere": {"radius": 8 * s},
        "pyramid": {"base": 12 * s, "height": 12 * s},
        "cylinder": {"radius": 6 * s, "height": 12 * s},
        "capsule": {"radius": 4 * s, "length": 14 * s},
        "ellipsoid": {"axes": (9 * s, 6 * s, 4 * s)},
    }


def voxelize_primitive(kind: str, extent: int = FULL_EXTENT, sizes: dict | None = None) -> np.ndarray:
    """Inside test at voxel centres for a canonical primitive (axis 0 is 'up')."""
    if kind not in PRIMITIVE_KINDS:
        raise ValueError(f"unknown primitive {kind!r}; expected one of {PRIMITIVE_KINDS}")
    p = (sizes or primitive_sizes(extent))[kind]
    c = _centred_coords(extent)
    z, y, x = c[..., 0], c[..., 1], c[..., 2]
    eps = 1e-9
    if kind == "cube":
        h = p["side"] / 2
        inside = (np.abs(z) <= h + eps) & (np.abs(y) <= h + eps) & (np.abs(x) <= h + eps)
    elif kind == "sphere":
        inside = z * z + y * y + x * x <= p["radius"] ** 2 + eps
    elif kind == "pyramid":
        hh, b = p["height"] / 2, p["base"] / 2
        frac = (hh - z) / (2 * hh)
        inside = (np.abs(z) <= hh) & (np.abs(y) <= b * frac) & (np.abs(x) <= b * frac)
    elif kind == "cylinder":
        inside = (np.abs(z) <= p["height"] / 2) & (y * y + x * x <= p["radius"] ** 2)
    elif kind == "capsule":
        r, seg = p["radius"], p["length"] / 2 - p["radius"]
        zc = np.clip(z, -seg, seg)
        inside = (z - zc) ** 2 + y * y + x * x <= r * r
    else:
        a = p["axes"]
        inside = (z / a[0]) ** 2 + (y / a[1]) ** 2 + (x / a[2]) ** 2 <= 1.0
    return inside.astype(np.float32)


def gen_primitive(kind: str, aug: AugmentSpec, extent: int = FULL_EXTENT) -> np.ndarray:
    return augment(voxelize_primitive(kind, extent), aug)


# -- IDX -----------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", 0x00000800 | arr.ndim))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_idx(path, expect_magic: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise TruncatedFile(f"{path}: missing IDX header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic >> 8 != 0x08 or (expect_magic is not None and magic != expect_magic):
        raise BadMagic(f"{path}: magic 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise TruncatedFile(f"{path}: header shorter than {ndim} extents")
    shape = struct.unpack(f">{ndim}I", buf[4:head])
    n = int(np.prod(shape))
    if len(buf) - head < n:
        raise TruncatedFile(f"{path}: payload has {len(buf) - head} of {n} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=head).reshape(shape).copy()


def _resize_binary(img: np.ndarray, size: int) -> np.ndarray:
    """Area-average a binary image to ``size`` x ``size`` and re-binarise."""
    n = img.shape[0]
    if size == n:
        return img
    edges = np.linspace(0, n, size + 1)
    out = np.zeros((size, size))
    fine = np.repeat(np.repeat(img.astype(np.float64), size, axis=0), size, axis=1)
    for i in range(size):
        for j in range(size):
            out[i, j] = fine[i * n:(i + 1) * n, j * n:(j + 1) * n].mean()
    del edges
    return (out >= 0.5).astype(np.float32)


def extrude_image(img: np.ndarray, extent: int = FULL_EXTENT, thickness: int = 8) -> np.ndarray:
    """Binarise a 28x28 image at 0.5, centre it and extrude along depth."""
    binary = (np.asarray(img, dtype=np.float64) / 255.0 >= 0.5).astype(np.float32)
    if extent != FULL_EXTENT:
        binary = _resize_binary(binary, max(1, int(round(binary.shape[0] * extent / FULL_EXTENT))))
    n = binary.shape[0]
    if n > extent or thickness > extent:
        raise DataError(f"image {n} or thickness {thickness} does not fit extent {extent}")
    vol = np.zeros((extent,) * 3, dtype=np.float32)
    o = (extent - n) // 2
    d0 = (extent - thickness) // 2
    vol[d0:d0 + thickness, o:o + n, o:o + n] = binary[None]
    return vol


def extrude_digits(idx_images_path, idx_labels_path, aug: AugmentSpec | None, extent: int = FULL_EXTENT,
                   thickness: int | None = None) -> Iterator[tuple[np.ndarray, int]]:
    """Stream of (volume, label) pairs from IDX image/label files."""
    images = read_idx(idx_images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(idx_labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise LabelCountMismatch(f"{len(images)} images but {len(labels)} labels")
    if thickness is None:
        thickness = max(1, int(round(8 * extent / FULL_EXTENT)))
    rng = np.random.default_rng(aug.seed if aug else 0)
    for img, lab in zip(images, labels):
        vol = extrude_image(img, extent, thickness)
        if aug is not None:
            vol = augment(vol, aug, rng)
        yield vol, int(lab)


# 5x7 bitmap glyphs, rows top to bottom
_GLYPHS = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    3: ["11110", "00001", "00001", "01110", "00001", "00001", "11110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}


def synthetic_digit_images(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """MNIST-like 28x28 uint8 digit images drawn from a bitmap font with jitter."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n).astype(np.uint8)
    images = np.zeros((n, 28, 28), dtype=np.uint8)
    for k, lab in enumerate(labels):
        glyph = np.array([[c == "1" for c in row] for row in _GLYPHS[int(lab)]], dtype=np.float64)
        sy, sx = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        big = np.kron(glyph, np.ones((sy + 1, sx + 1)))
        h, w = big.shape
        oy = int(rng.integers(0, 28 - h + 1))
        ox = int(rng.integers(0, 28 - w + 1))
        images[k, oy:oy + h, ox:ox + w] = (big * 255).astype(np.uint8)
    return images, labels


# -- VOX1 volumes --------------------------------------------------------------

VOX_MAGIC = b"VOX1"


def vox_to_bytes(v: np.ndarray) -> bytes:
    v = np.asarray(v, dtype="<f4")
    if v.ndim != 3:
        raise DataError("VOX1 stores 3-D volumes")
    return VOX_MAGIC + struct.pack("<3I", *v.shape) + v.tobytes()


def vox_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != VOX_MAGIC:
        raise BadMagic("not a VOX1 file")
    if len(buf) < 16:
        raise TruncatedFile("VOX1 header truncated")
    shape = struct.unpack("<3I", buf[4:16])
    n = int(np.prod(shape)) * 4
    if len(buf) - 16 != n:
        raise TruncatedFile(f"VOX1 payload has {len(buf) - 16} of {n} bytes")
    return np.frombuffer(buf[16:], dtype="<f4").astype(np.float32).reshape(shape)


def write_vox(path, v: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(vox_to_bytes(v))


def read_vox(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return vox_from_bytes(fh.read())


# -- views ---------------------------------------------------------------------

def depth_image(v: np.ndarray, axis: int = 0) -> np.ndarray:
    """Orthographic depth map looking along ``axis`` from index 0.

    Pixels hold ``1 - first_hit / n`` (nearer is brighter); empty rays read 0.
    """
    occ = np.moveaxis(np.asarray(v) >= 0.5, axis, 0)
    n = occ.shape[0]
    hit = occ.any(axis=0)
    first = np.argmax(occ, axis=0)
    return np.where(hit, 1.0 - first / n, 0.0).astype(np.float32)


def context_views(v: np.ndarray, n_views: int) -> np.ndarray:
    """Up to three axis-aligned depth views, [n_views, H, W]."""
    if not 0 <= n_views <= 3:
        raise ValueError("context views are taken along at most the three volume axes")
    return np.stack([depth_image(v, a) for a in range(n_views)]) if n_views else np.zeros((0,) + v.shape[1:], np.float32)


def camera_rotation(cam_id: int, n_cameras: int, elevation: float = 0.35) -> np.ndarray:
    """Fixed camera ring: azimuth steps about the height axis plus a small elevation tilt."""
    azim = 2 * np.pi * cam_id / n_cameras
    return rotation_matrix((0.0, azim, elevation))


def camera_view(v: np.ndarray, cam_id: int, n_cameras: int) -> np.ndarray:
    rotated = transform_volume(v, camera_rotation(cam_id, n_cameras), np.zeros(3))
    return depth_image(rotated, 0)


# -- dataset assembly ----------------------------------------------------------

def make_dataset(name: str, n: int, extent: int, seed: int, n_views: int = 0, augment_data: bool = True,
                 idx_paths: tuple[str, str] | None = None) -> dict:
    """Build ``n`` volumes (+ labels, + context views) deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    vols, labels = [], []
    if name == "primitives":
        for _ in range(n):
            k = int(rng.integers(len(PRIMITIVE_KINDS)))
            aug = AugmentSpec.scaled(extent) if augment_data else AugmentSpec.none()
            base = voxelize_primitive(PRIMITIVE_KINDS[k], extent)
            vols.append(augment(base, aug, rng))
            labels.append(k)
    elif name == "digits":
        if idx_paths is None:
            imgs, labs = synthetic_digit_images(n, seed)
        else:
            imgs = read_idx(idx_paths[0], IDX_IMAGES_MAGIC)[:n]
            labs = read_idx(idx_paths[1], IDX_LABELS_MAGIC)[:n]
            if len(imgs) != len(labs):
                raise LabelCountMismatch(f"{len(imgs)} images but {len(labs)} labels")
        thickness = max(1, int(round(8 * extent / FULL_EXTENT)))
        aug = AugmentSpec.scaled(extent) if augment_data else None
        for img, lab in zip(imgs, labs):
            vol = extrude_image(img, extent, thickness)
            vols.append(augment(vol, aug, rng) if aug else vol)
            labels.append(int(lab))
    elif name == "necker":
        side = max(2, int(round(10 * extent / 40)))
        for _ in range(n):
            vols.append(gen_necker(int(rng.integers(2**31)), extent, side))
            labels.append(0)
    else:
        raise DataError(f"unknown dataset {name!r}")
    volumes = np.stack(vols).astype(np.float32)
    out = {"volumes": volumes, "labels": np.asarray(labels, dtype=np.int64), "name": name}
    if n_views:
        out["views"] = np.stack([context_views(v, n_views) for v in volumes])
    return out


def onehot(labels, n_classes: int) -> np.ndarray:
    return np.eye(n_classes, dtype=np.float32)[np.asarray(labels, dtype=np.int64)]


def write_dataset(directory, data: dict, meta: dict | None = None) -> None:
    """VOX1 file per volume plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, (v, lab) in enumerate(zip(data["volumes"], data["labels"])):
        fname = f"vol{i:05d}.vox"
        write_vox(os.path.join(directory, fname), v)
        entries.append({"file": fname, "label": int(lab)})
    manifest = {"dataset": data.get("name"), "extent": list(data["volumes"].shape[1:]), "items": entries}
    if meta:
        manifest["meta"] = meta
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def read_dataset(directory) -> dict:
    try:
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        items = manifest["items"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"unreadable dataset manifest in {directory}: {exc}") from exc
    vols = np.stack([read_vox(os.path.join(directory, it["file"])) for it in items])
    return {"volumes": vols, "labels": np.array([it["label"] for it in items], dtype=np.int64),
            "name": manifest.get("dataset")}
