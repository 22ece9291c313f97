"""Mesh representation, a black-box software rasterizer and REINFORCE gradients.

A mesh is a sphere of 162 vertices that slide along fixed rays from the
object centre.  The renderer is deliberately non-differentiable; learning
signals reach the mesh parameters through a score-function estimator with a
leave-one-out baseline.

Camera space: x right, y up, z forward, camera at the origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateCamera, NonPositiveDisplacement, ShapeMismatch
from .vst import rotation_matrix

N_VERTICES = 162
DEFAULT_PIXEL_SIGMA = 0.1
DEFAULT_NOISE = 0.02
DEFAULT_SAMPLES = 8
NEAR_PLANE = 1e-3

# one colour per dominant axis: +x, -x, +y, -y, +z, -z
PALETTE = np.array([
    [0.9, 0.2, 0.2], [0.2, 0.8, 0.8],
    [0.2, 0.9, 0.2], [0.8, 0.2, 0.8],
    [0.2, 0.3, 0.9], [0.9, 0.8, 0.2],
])


@dataclass
class Mesh:
    vertices: np.ndarray  # [V, 3] camera space
    faces: np.ndarray  # [F, 3] int
    colors: np.ndarray  # [F, 3] RGB albedo

    @classmethod
    def empty(cls) -> "Mesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))


@dataclass
class MeshParam:
    displacements: np.ndarray
    angles: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 3.0]))
    face_colors: np.ndarray | None = None

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.displacements, self.angles, self.translation]).astype(np.float64)

    @classmethod
    def from_vector(cls, v, face_colors=None) -> "MeshParam":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:N_VERTICES], v[N_VERTICES:N_VERTICES + 3], v[N_VERTICES + 3:N_VERTICES + 6], face_colors)


@dataclass
class RenderConfig:
    extent: tuple = (16, 16)
    focal: float = 1.0
    light_dirs: np.ndarray = field(default_factory=lambda: _unit(np.array(
        [[0.0, 0.0, -1.0], [1.0, 1.0, -1.0], [-1.0, 0.5, -0.5]])))
    light_intensities: np.ndarray = field(default_factory=lambda: np.array([0.6, 0.3, 0.3]))
    background: float = 0.0
    camera_distance: float = 3.0

    def __post_init__(self):
        self.extent = tuple(int(e) for e in self.extent)
        self.light_dirs = np.asarray(self.light_dirs, dtype=np.float64)
        self.light_intensities = np.asarray(self.light_intensities, dtype=np.float64)
        if len(self.extent) != 2 or min(self.extent) < 1:
            raise ConfigError("image extents must be two positive integers")
        if self.light_dirs.shape != (3, 3) or self.light_intensities.shape != (3,):
            raise ConfigError("exactly three lights are required")
        if not np.allclose(np.linalg.norm(self.light_dirs, axis=1), 1.0, atol=1e-9):
            raise ConfigError("light directions must be unit vectors")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# -- icosphere -----------------------------------------------------------------

def _icosahedron():
    phi = (1 + math.sqrt(5)) / 2
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    f = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    return _unit(v), f


def _subdivide(verts: list, faces: list):
    cache: dict = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = verts[a] + verts[b]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return verts, out


_BASE = None


def base_directions() -> tuple[np.ndarray, np.ndarray]:
    """Unit directions of a twice-subdivided icosahedron and its outward faces."""
    global _BASE
    if _BASE is None:
        v, f = _icosahedron()
        verts = list(v)
        for _ in range(2):
            verts, f = _subdivide(verts, f)
        dirs = np.array(verts)
        faces = np.array(f, dtype=np.int64)
        n = np.cross(dirs[faces[:, 1]] - dirs[faces[:, 0]], dirs[faces[:, 2]] - dirs[faces[:, 0]])
        inward = np.einsum("ij,ij->i", n, dirs[faces].mean(axis=1)) < 0
        faces[inward] = faces[inward][:, ::-1]
        _BASE = (dirs, faces)
    dirs, faces = _BASE
    return dirs.copy(), faces.copy()


def dominant_axis_colors(centroids: np.ndarray) -> np.ndarray:
    """Palette entry chosen by the dominant signed axis of each centroid."""
    axis = np.argmax(np.abs(centroids), axis=1)
    sign = centroids[np.arange(len(centroids)), axis] < 0
    return PALETTE[2 * axis + sign]


def default_face_colors() -> np.ndarray:
    dirs, faces = base_directions()
    return dominant_axis_colors(dirs[faces].mean(axis=1))


def mesh_from_param(p: MeshParam) -> Mesh:
    """vertex_i = R(angles) (d_i u_i) + translation."""
    d = np.asarray(p.displacements, dtype=np.float64)
    if d.shape != (N_VERTICES,):
        raise ShapeMismatch(f"expected {N_VERTICES} displacements, got {d.shape}")
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise NonPositiveDisplacement("displacements must be finite and strictly positive")
    dirs, faces = base_directions()
    R = rotation_matrix(np.asarray(p.angles, dtype=np.float64))
    verts = (d[:, None] * dirs) @ R.T + np.asarray(p.translation, dtype=np.float64)
    colors = default_face_colors() if p.face_colors is None else np.asarray(p.face_colors, dtype=np.float64)
    return Mesh(verts, faces, colors)


def cube_mesh(side: float = 1.0, center=(0.0, 0.0, 3.0), angles=(0.0, 0.0, 0.0)) -> Mesh:
    """Closed cube of 12 triangles, each side coloured by its outward axis."""
    h = side / 2.0
    corners = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [[a, b, c], [a, c, d]]
    faces = np.array(faces, dtype=np.int64)
    colors = dominant_axis_colors(corners[faces].mean(axis=1))
    R = rotation_matrix(np.asarray(angles, dtype=np.float64))
    return Mesh(corners @ R.T + np.asarray(center, dtype=np.float64), faces, colors)


# -- rasterizer ----------------------------------------------------------------

def face_shading(mesh: Mesh, cfg: RenderConfig) -> np.ndarray:
    """Flat Lambertian colour per face, normals turned towards the camera."""
    tri = mesh.vertices[mesh.faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), 0.0)
    facing = np.einsum("ij,ij->i", n, -tri.mean(axis=1)) < 0
    n[facing] *= -1
    lambert = np.clip(n @ cfg.light_dirs.T, 0.0, None) @ cfg.light_intensities
    return np.clip(mesh.colors * lambert[:, None], 0.0, 1.0)


def rasterize(mesh: Mesh, cfg: RenderConfig, max_chunk: int = 1 << 21) -> np.ndarray:
    """Perspective, depth-buffered flat-shaded render; [H, W, 3] in [0, 1]."""
    H, W = cfg.extent
    img = np.full((H * W, 3), float(cfg.background))
    if len(mesh.faces) == 0:
        return img.reshape(H, W, 3)
    if not cfg.focal > 0:
        raise DegenerateCamera("focal length must be positive")
    v = np.asarray(mesh.vertices, dtype=np.float64)
    if np.any(v[:, 2] <= NEAR_PLANE):
        raise DegenerateCamera("geometry reaches behind the camera")
    px = (cfg.focal * v[:, 0] / v[:, 2] + 1.0) * 0.5 * W
    py = (1.0 - cfg.focal * v[:, 1] / v[:, 2]) * 0.5 * H
    inv_z = 1.0 / v[:, 2]
    shade = face_shading(mesh, cfg)

    jj, ii = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    cx, cy = jj.ravel(), ii.ravel()
    best = np.zeros(H * W)
    owner = np.full(H * W, -1, dtype=np.int64)
    f = mesh.faces
    x0, x1, x2 = px[f[:, 0]], px[f[:, 1]], px[f[:, 2]]
    y0, y1, y2 = py[f[:, 0]], py[f[:, 1]], py[f[:, 2]]
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    keep = np.nonzero(np.abs(area) > 1e-12)[0]
    step = max(1, max_chunk // (H * W))
    for s in range(0, len(keep), step):
        k = keep[s:s + step]
        a = area[k][:, None]
        l0 = ((x1[k, None] - cx) * (y2[k, None] - cy) - (x2[k, None] - cx) * (y1[k, None] - cy)) / a
        l1 = ((x2[k, None] - cx) * (y0[k, None] - cy) - (x0[k, None] - cx) * (y2[k, None] - cy)) / a
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        depth = l0 * inv_z[f[k, 0], None] + l1 * inv_z[f[k, 1], None] + l2 * inv_z[f[k, 2], None]
        depth = np.where(inside, depth, 0.0)
        j = np.argmax(depth, axis=0)
        d = depth[j, np.arange(H * W)]
        win = d > best
        best[win] = d[win]
        owner[win] = k[j[win]]
    hit = owner >= 0
    img[hit] = shade[owner[hit]]
    return img.reshape(H, W, 3)


def projected_square_area(side: float, depth: float, cfg: RenderConfig) -> float:
    """Pixel area of a camera-facing square of ``side`` at ``depth``."""
    H, W = cfg.extent
    s = cfg.focal * side / depth
    return (s * W / 2.0) * (s * H / 2.0)


# -- losses and estimators ------------------------------------------------------

def gaussian_nll(x: np.ndarray, mean: np.ndarray, sigma: float = DEFAULT_PIXEL_SIGMA) -> float:
    """0.5 sum r^2 / sigma^2 + 0.5 N ln(2 pi sigma^2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != mean.shape:
        raise ShapeMismatch(f"image {x.shape} differs from render {mean.shape}")
    r = (x - mean) / sigma
    return float(0.5 * np.sum(r * r) + 0.5 * x.size * math.log(2 * math.pi * sigma * sigma))


def mesh_loss(x: np.ndarray, p: MeshParam, cfg: RenderConfig, sigma: float = DEFAULT_PIXEL_SIGMA) -> float:
    """Gaussian negative log-likelihood of ``x`` under the rendered mesh."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != cfg.extent + (3,):
        raise ShapeMismatch(f"image {x.shape} does not match render extent {cfg.extent + (3,)}")
    return gaussian_nll(x, rasterize(mesh_from_param(p), cfg), sigma)


def reinforce_grad(loss_fn: Callable[[np.ndarray], float], p, K: int = DEFAULT_SAMPLES,
                   noise_scale: float = DEFAULT_NOISE, seed: int = 0, baseline: bool = True,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Multi-sample score-function gradient of E[loss(p + sigma eps)].

    Each sample's signal is its loss minus the mean of the other K-1 losses.
    """
    if K < 2:
        raise ValueError("the leave-one-out baseline needs K >= 2")
    if not noise_scale > 0:
        raise ValueError("noise_scale must be positive")
    vec = p.to_vector() if isinstance(p, MeshParam) else np.asarray(p, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(seed)
    eps = rng.standard_normal((K,) + vec.shape)
    losses = np.array([float(loss_fn(vec + noise_scale * e)) for e in eps])
    signal = losses - (losses.sum() - losses) / (K - 1) if baseline else losses
    return np.tensordot(signal, eps, axes=(0, 0)) / noise_scale / K


# -- model canvas ---------------------------------------------------------------

def param_from_raw(raw: np.ndarray, cfg: RenderConfig) -> MeshParam:
    """Unconstrained 168-vector -> MeshParam (log displacements, angles, offset)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (N_VERTICES + 6,):
        raise ShapeMismatch(f"mesh canvas must have {N_VERTICES + 6} entries, got {raw.shape}")
    t = raw[N_VERTICES + 3:] + np.array([0.0, 0.0, cfg.camera_distance])
    return MeshParam(np.exp(raw[:N_VERTICES]), raw[N_VERTICES:N_VERTICES + 3], t)


def render_config_for(gcfg) -> RenderConfig:
    return RenderConfig(extent=gcfg.image_extent)


def render_raw(raw: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    try:
        return rasterize(mesh_from_param(param_from_raw(raw, cfg)), cfg)
    except DegenerateCamera:
        # a mesh swallowing the camera sees only its own interior
        return np.full(cfg.extent + (3,), 0.0)


def render_canvas(canvas: np.ndarray, gcfg) -> np.ndarray:
    """Render every row of a [B, 168] canvas to [B, H, W, 3] images."""
    cfg = render_config_for(gcfg)
    canvas = np.asarray(canvas, dtype=np.float64)
    return np.stack([render_raw(r, cfg) for r in canvas]).astype(canvas.dtype) if len(canvas) else \
        np.zeros((0,) + cfg.extent + (3,))


def canvas_reinforce(x: np.ndarray, canvas: np.ndarray, gcfg, rng: np.random.Generator,
                     sigma: float = DEFAULT_PIXEL_SIGMA) -> np.ndarray:
    """REINFORCE estimate of d NLL / d canvas for each datum, [B, 168]."""
    cfg = render_config_for(gcfg)
    out = np.zeros(canvas.shape, dtype=np.float64)
    for b in range(len(canvas)):
        xb = np.asarray(x[b], dtype=np.float64)
        out[b] = reinforce_grad(lambda r: gaussian_nll(xb, render_raw(r, cfg), sigma), canvas[b],
                                K=gcfg.reinforce_samples, noise_scale=gcfg.reinforce_noise, rng=rng)
    return out


# -- export ---------------------------------------------------------------------

def obj_text(mesh: Mesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(mesh.vertices, dtype=np.float64).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(mesh.faces).tolist()]
    return "\n".join(lines) + "\n"


def write_obj(path, mesh: Mesh) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(obj_text(mesh))


def read_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in parts[1:4]])
    faces = np.array(faces, dtype=np.int64).reshape(-1, 3)
    return Mesh(np.array(verts, dtype=np.float64).reshape(-1, 3), faces, np.full((len(faces), 3), 0.8))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def write_ppm(path, img: np.ndarray) -> None:
    """ASCII P3 image, one pixel row per line."""
    u = to_uint8(img)
    if u.ndim == 2:
        u = np.repeat(u[..., None], 3, axis=-1)
    H, W, _ = u.shape
    rows = [" ".join(str(int(c)) for c in row.ravel()) for row in u]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"P3\n{W} {H}\n255\n" + "\n".join(rows) + "\n")


def read_ppm(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        tokens = [t for line in fh for t in line.split("#")[0].split()]
    if not tokens or tokens[0] != "P3":
        raise ValueError("not an ASCII PPM file")
    W, H, _ = (int(t) for t in tokens[1:4])
    return np.array([int(t) for t in tokens[4:4 + W * H * 3]], dtype=np.uint8).reshape(H, W, 3)
