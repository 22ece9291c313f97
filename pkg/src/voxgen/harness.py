"""Training, evaluation, the deterministic convnet baseline and exports.

Runs are described by a :class:`RunConfig` built from a named profile
("toy" for desk-scale experiments, "paper" for the full-size settings) with
JSON overrides.  Every entry point is a pure function of the config and its
seeds: minibatches and noise at step ``s`` come from ``default_rng([seed, s])``
so an interrupted run resumed from its checkpoint replays bit-exactly.
"""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import datasets as D
from . import tensor as T
from .completion import ObservationMask, complete
from .errors import CheckpointCorrupt, ConfigError, DataError, ShapeMismatch
from .genmodel import Context, GenerativeConfig
from .inference import VoxelModel, elbo, iwae_eval, sample
from .nn import AdamState, Conv, Linear, Module, adam_step, clip_grad_norm, init_params, load_checkpoint, save_checkpoint
from .tensor import GradTensor

PROFILES = {
    "toy": {
        "extent": 8, "n_train": 2000, "n_test": 200, "batch_size": 32, "train_steps": 1500, "lr": 3e-3,
        "n_importance": 50, "n_eval": 200,
        "model": {"hidden_size": 64, "latent_dim": 10, "steps": 4, "read_dim": 64, "context_dim": 16},
    },
    "paper": {
        "extent": 30, "n_train": 60000, "n_test": 1000, "batch_size": 32, "train_steps": 200000, "lr": 1e-3,
        "n_importance": 1000, "n_eval": 1000,
        "model": {"hidden_size": 300, "latent_dim": 10, "steps": 8, "read_dim": 300, "context_dim": 64,
                  "patch": [16, 16, 16], "read_patch": [16, 16, 16]},
    },
}
DATASETS = ("primitives", "digits", "necker", "cube_scenes", "directory")
N_CLASSES = {"primitives": len(D.PRIMITIVE_KINDS), "digits": 10, "necker": 1, "cube_scenes": 1}


@dataclass
class RunConfig:
    dataset: str = "primitives"
    extent: int = 8
    n_train: int = 2000
    n_test: int = 200
    data_seed: int = 1234
    augment: bool = True
    idx_images: str | None = None
    idx_labels: str | None = None
    data_dir: str | None = None
    conditioning: str = "none"
    views: int = 0
    model: GenerativeConfig = field(default_factory=GenerativeConfig)
    lr: float = 3e-3
    batch_size: int = 32
    train_steps: int = 1500
    seed: int = 0
    log_every: int = 50
    eval_every: int = 0
    checkpoint_every: int = 0
    n_importance: int = 50
    n_eval: int = 200
    clip_norm: float = 0.0
    out: str = "runs/default"
    profile: str = "toy"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        if self.dataset == "directory" and not self.data_dir:
            raise ConfigError("the directory dataset needs data_dir")
        if self.conditioning not in ("none", "class", "views"):
            raise ConfigError("conditioning must be none, class or views")
        if self.train_steps < 1 or self.batch_size < 1:
            raise ConfigError("train_steps and batch_size must be >= 1")
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("n_train must be >= 1 and n_test >= 0")
        if not 0 <= self.views <= 3:
            raise ConfigError("views must be in 0..3")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict | None = None, profile: str = "toy", seed: int | None = None,
                  out: str | None = None) -> "RunConfig":
        """Profile defaults, then ``d`` (top-level keys and a nested ``model`` dict)."""
        if profile not in PROFILES:
            raise ConfigError(f"profile must be one of {tuple(PROFILES)}")
        d = dict(d or {})
        base = copy.deepcopy(PROFILES[profile])
        model_over = d.pop("model", {}) or {}
        if not isinstance(model_over, dict):
            raise ConfigError("model must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run keys: {sorted(unknown)}")
        model_base = base.pop("model")
        merged = {**base, **d, "profile": profile}
        if seed is not None:
            merged["seed"] = seed
        if out is not None:
            merged["out"] = out
        if profile == "paper" and merged.get("dataset") == "necker" and "extent" not in d:
            merged["extent"] = 40
        merged["model"] = _model_config(merged, {**model_base, **model_over}, model_over)
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_saved(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["model"] = GenerativeConfig.from_dict(d["model"])
        return cls(**d)


def _model_config(run: dict, model: dict, explicit: dict) -> GenerativeConfig:
    """Fill data-dependent model keys (extents, context) unless set explicitly."""
    E = int(run.get("extent", 8))
    dataset = run.get("dataset", "primitives")
    model = dict(model)
    if dataset == "cube_scenes":
        model.setdefault("representation", "mesh")
        model.setdefault("likelihood", "diagonal_gaussian")
        model.setdefault("image_extent", [16, 16])
        if "steps" not in explicit:
            model["steps"] = 1
    for key in ("extent", "patch", "read_patch"):
        if key not in explicit and (key == "extent" or max(model.get(key, [0])) > E or key not in model):
            model[key] = [E, E, E]
    model.setdefault("view_extent", [E, E])
    cond = run.get("conditioning", "none")
    if cond == "views":
        model["context"] = "views"
        model["n_views"] = int(run.get("views", 0))
        if model["n_views"] < 1:
            raise ConfigError("views conditioning needs views >= 1")
    elif cond == "class":
        model["context"] = "class"
        model.setdefault("n_classes", N_CLASSES.get(dataset, 1))
    return GenerativeConfig.from_dict(model)


# -- data ----------------------------------------------------------------------

@dataclass
class Split:
    x: np.ndarray
    labels: np.ndarray
    context: Context | None
    volumes: np.ndarray | None = None


def _context(cfg: RunConfig, volumes, labels) -> Context | None:
    if cfg.conditioning == "class":
        return Context.classes(labels, cfg.model.n_classes)
    if cfg.conditioning == "views":
        return Context("views", views=np.stack([D.context_views(v, cfg.views) for v in volumes]))
    return None


def cube_scenes(n: int, extent, seed: int) -> np.ndarray:
    """Rendered coloured cubes; the first scene is a fixed canonical pose."""
    from . import mesh as M

    rng = np.random.default_rng(seed)
    rc = M.RenderConfig(extent=extent)
    out = []
    for i in range(n):
        if i == 0:
            side, angles = 1.3, (0.5, 0.6, 0.0)
        else:
            side, angles = rng.uniform(1.0, 1.6), rng.uniform(-np.pi, np.pi, 3)
        out.append(M.rasterize(M.cube_mesh(side, (0.0, 0.0, rc.camera_distance), angles), rc))
    return np.stack(out).astype(np.float32)


def load_data(cfg: RunConfig) -> tuple[Split, Split]:
    """Deterministic train/test splits shaped for the model's data kind."""
    n = cfg.n_train + cfg.n_test
    kind = cfg.model.data_kind
    if cfg.dataset == "cube_scenes":
        imgs = cube_scenes(n, cfg.model.image_extent, cfg.data_seed)
        labels = np.zeros(n, dtype=np.int64)
        return (Split(imgs[:cfg.n_train], labels[:cfg.n_train], None),
                Split(imgs[cfg.n_train:], labels[cfg.n_train:], None))
    if kind == "image":
        raise ConfigError("mesh models train on the cube_scenes dataset")
    if cfg.dataset == "directory":
        data = D.read_dataset(cfg.data_dir)
        if len(data["volumes"]) < n:
            raise DataError(f"{cfg.data_dir} holds {len(data['volumes'])} volumes, {n} requested")
    else:
        idx = (cfg.idx_images, cfg.idx_labels) if cfg.idx_images else None
        data = D.make_dataset(cfg.dataset, n, cfg.extent, cfg.data_seed, augment_data=cfg.augment, idx_paths=idx)
    vols, labels = data["volumes"][:n], data["labels"][:n]
    if vols.shape[1:] != cfg.model.extent:
        raise ShapeMismatch(f"volumes {vols.shape[1:]} but model extent {cfg.model.extent}")
    if kind == "views":
        mc = cfg.model
        x = np.stack([[D.camera_view(v, k, mc.n_cameras) for k in range(mc.n_cameras)] for v in vols])
        if x.shape[2:] != mc.image_extent:
            raise ConfigError(f"camera images {x.shape[2:]} but image_extent {mc.image_extent}")
    else:
        x = vols
    splits = []
    for sl in (slice(0, cfg.n_train), slice(cfg.n_train, n)):
        splits.append(Split(x[sl].astype(np.float32), labels[sl], _context(cfg, vols[sl], labels[sl]), vols[sl]))
    return splits[0], splits[1]


def _batch(split: Split, idx, cfg: GenerativeConfig, cams=None):
    x = split.x[idx]
    if cfg.data_kind == "views":
        x = x[:, cams]
    c = None if split.context is None else split.context.take(idx)
    return x, c


# -- checkpoints ---------------------------------------------------------------

def _save(path, model: Module, opt: AdamState | None, step: int, cfg: RunConfig, extra: dict | None = None):
    arrays = {f"param.{k}": v for k, v in model.state_dict().items()}
    if opt is not None and opt.m:
        for (k, _), m, v in zip(model.named_parameters(), opt.m, opt.v):
            arrays[f"adam.m.{k}"] = m
            arrays[f"adam.v.{k}"] = v
    meta = {"step": step, "adam_step": opt.step if opt else 0, "run_config": cfg.to_dict()}
    meta.update(extra or {})
    save_checkpoint(path, arrays, meta)


def load_model(checkpoint: str) -> tuple[VoxelModel, RunConfig, dict]:
    arrays, extra = load_checkpoint(checkpoint)
    try:
        cfg = RunConfig.from_saved(extra["run_config"])
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointCorrupt(f"checkpoint {checkpoint} has no usable run config: {exc}") from exc
    model = VoxelModel(cfg.model, seed=cfg.seed)
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("param.")})
    return model, cfg, {"arrays": arrays, **extra}


def _restore_optimizer(model: Module, opt: AdamState, info: dict) -> None:
    arrays = info["arrays"]
    names = [k for k, _ in model.named_parameters()]
    if info.get("adam_step", 0):
        try:
            opt.m = [arrays[f"adam.m.{k}"].copy() for k in names]
            opt.v = [arrays[f"adam.v.{k}"].copy() for k in names]
        except KeyError as exc:
            raise CheckpointCorrupt(f"optimizer state missing {exc}") from exc
    opt.step = int(info.get("adam_step", 0))


# -- training ------------------------------------------------------------------

def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def _write_metrics(path: str, keep_until: int) -> list[str]:
    """Lines of an existing log with step <= keep_until (for resumption)."""
    if not os.path.exists(path):
        return []
    kept = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and json.loads(line)["step"] <= keep_until:
                kept.append(line.rstrip("\n"))
    return kept


def evaluate(model: VoxelModel, split: Split, cfg: RunConfig, n_importance: int | None = None,
             n_eval: int | None = None, seed: int = 0) -> dict:
    """Held-out importance-weighted bound as positive nats with its standard error."""
    n = min(len(split.x), n_eval or cfg.n_eval)
    if n == 0:
        raise DataError("no held-out data to evaluate")
    idx = np.arange(n)
    cams = np.arange(cfg.model.target_views) if cfg.model.data_kind == "views" else None
    x, c = _batch(split, idx, cfg.model, cams)
    K = n_importance or cfg.n_importance
    bounds = np.concatenate([
        iwae_eval(x[s:s + 64], None if c is None else c.take(np.arange(s, min(n, s + 64))), model, K,
                  seed=seed + s, target_cams=cams)
        for s in range(0, n, 64)
    ])
    nats = -bounds
    return {"nats": float(nats.mean()), "stderr": float(nats.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0, "n": n}


def train(cfg: RunConfig, resume: bool = True, stop_after: int | None = None, data=None) -> dict:
    """SGVB training with Adam; writes ``checkpoint/`` and ``metrics.jsonl`` under ``cfg.out``.

    ``stop_after`` ends the run early (after saving) to emulate an interruption.
    """
    os.makedirs(cfg.out, exist_ok=True)
    train_split, test_split = data if data is not None else load_data(cfg)
    model = VoxelModel(cfg.model, seed=cfg.seed)
    params = model.parameters()
    opt = AdamState(lr=cfg.lr)
    ckpt = os.path.join(cfg.out, "checkpoint")
    start = 0
    if resume and os.path.exists(os.path.join(ckpt, "manifest.json")):
        loaded, saved_cfg, info = load_model(ckpt)
        if saved_cfg.model != cfg.model:
            raise ConfigError("checkpoint in the output directory was trained with a different model")
        model.load_state_dict(loaded.state_dict())
        _restore_optimizer(model, opt, info)
        start = int(info["step"])
    metrics_path = os.path.join(cfg.out, "metrics.jsonl")
    lines = _write_metrics(metrics_path, start) if start else []
    mcfg = cfg.model
    n_train = len(train_split.x)
    B = min(cfg.batch_size, n_train)
    end = cfg.train_steps if stop_after is None else min(cfg.train_steps, stop_after)

    with open(metrics_path, "w", encoding="utf-8") as log:
        for line in lines:
            log.write(line + "\n")
        for step in range(start, end):
            rng = _step_rng(cfg.seed, step)
            idx = np.sort(rng.choice(n_train, size=B, replace=False))
            cams = np.sort(rng.choice(mcfg.n_cameras, mcfg.target_views, replace=False)) \
                if mcfg.data_kind == "views" else None
            x, c = _batch(train_split, idx, mcfg, cams)
            bound, _ = elbo(x, c, model, seed=int(rng.integers(2**31)), target_cams=cams)
            loss = -T.reduce("mean", bound)
            T.backward(loss)
            if cfg.clip_norm > 0:
                clip_grad_norm(params, cfg.clip_norm)
            adam_step(opt, params)
            done = step + 1
            if cfg.log_every and (done % cfg.log_every == 0 or done == cfg.train_steps):
                log.write(json.dumps({"step": done, "loss": float(loss.data), "elbo": float(-loss.data)}) + "\n")
            if cfg.eval_every and done % cfg.eval_every == 0 and len(test_split.x):
                ev = evaluate(model, test_split, cfg, seed=cfg.seed)
                log.write(json.dumps({"step": done, "eval_nats": ev["nats"], "eval_stderr": ev["stderr"]}) + "\n")
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < end:
                _save(ckpt, model, opt, done, cfg)
            log.flush()
    _save(ckpt, model, opt, end, cfg)
    return {"checkpoint": ckpt, "metrics": metrics_path, "step": end, "model": model}


def eval_benchmark(checkpoint: str, views: int | None = None, n_importance: int | None = None, seed: int = 0,
                   n_eval: int | None = None) -> dict:
    """Mean held-out nats (negated importance-weighted bound) with standard error."""
    model, cfg, _ = load_model(checkpoint)
    if views is not None and cfg.conditioning == "views" and views != cfg.views:
        raise ShapeMismatch(f"checkpoint conditions on {cfg.views} views, {views} requested")
    if views not in (None, 0) and cfg.conditioning != "views":
        raise ShapeMismatch("checkpoint is not view-conditional")
    _, test = load_data(cfg)
    return evaluate(model, test, cfg, n_importance, n_eval, seed)


# -- deterministic baseline ------------------------------------------------------

class BaselineConvnet(Module):
    """Context views -> linear seed volume -> 6 volumetric convolutions -> Bernoulli logits."""

    def __init__(self, extent: int, n_views: int = 3, seed_channels: int = 16,
                 channels=(16, 16, 32, 32, 32), kernel: int = 3):
        super().__init__()
        self.extent = extent
        self.n_views = n_views
        self.seed_channels = seed_channels
        self.encode = Linear(n_views * extent * extent, seed_channels * extent ** 3)
        chans = [seed_channels] + list(channels) + [1]
        self.convs = [Conv(a, b, kernel, 3) for a, b in zip(chans[:-1], chans[1:])]

    @property
    def n_conv_layers(self) -> int:
        return len(self.convs)

    def __call__(self, views) -> GradTensor:
        views = T._lift(views)
        B, E = views.shape[0], self.extent
        h = T.relu(self.encode(T.reshape(views, (B, -1))))
        h = T.reshape(h, (B, self.seed_channels, E, E, E))
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = T.relu(h)
        return T.reshape(h, (B, E, E, E))


def baseline_nats(net: BaselineConvnet, views: np.ndarray, volumes: np.ndarray) -> np.ndarray:
    """Per-volume Bernoulli negative log-likelihood in nats."""
    with T.no_grad():
        out = []
        for s in range(0, len(views), 64):
            logits = net(GradTensor(views[s:s + 64].astype(net.encode.weight.dtype))).data.astype(np.float64)
            x = volumes[s:s + 64].astype(np.float64)
            ll = x * -np.logaddexp(0, -logits) + (1 - x) * -np.logaddexp(0, logits)
            out.append(-ll.reshape(len(x), -1).sum(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def train_baseline(cfg: RunConfig, n_views: int = 3, data=None) -> dict:
    """Fit the convnet baseline by Bernoulli NLL; returns held-out nats per volume."""
    if cfg.model.data_kind != "volume":
        raise ConfigError("the baseline predicts volumes")
    if not 1 <= n_views <= 3:
        raise ConfigError("the baseline needs 1..3 context views")
    train_split, test_split = data if data is not None else load_data(cfg)
    vtr = np.stack([D.context_views(v, n_views) for v in train_split.volumes])
    vte = np.stack([D.context_views(v, n_views) for v in test_split.volumes])
    net = BaselineConvnet(cfg.extent, n_views)
    init_params(net, cfg.seed)
    params = net.parameters()
    opt = AdamState(lr=cfg.lr)
    n = len(vtr)
    B = min(cfg.batch_size, n)
    for step in range(cfg.train_steps):
        rng = _step_rng(cfg.seed, step)
        idx = np.sort(rng.choice(n, size=B, replace=False))
        logits = net(GradTensor(vtr[idx]))
        x = GradTensor(train_split.volumes[idx])
        ll = x * T.log_sigmoid(logits) + (1.0 - x) * T.log_sigmoid(-logits)
        loss = -T.reduce("sum", ll) / B
        T.backward(loss)
        adam_step(opt, params)
    nats = baseline_nats(net, vte, test_split.volumes) if len(vte) else np.zeros(0)
    out = os.path.join(cfg.out, "baseline")
    save_checkpoint(out, {f"param.{k}": v for k, v in net.state_dict().items()},
                    {"run_config": cfg.to_dict(), "n_views": n_views})
    se = float(nats.std(ddof=1) / math.sqrt(len(nats))) if len(nats) > 1 else 0.0
    return {"checkpoint": out, "nats": float(nats.mean()) if len(nats) else float("nan"), "stderr": se,
            "n": int(len(nats)), "model": net}


# -- exports -------------------------------------------------------------------

def slice_montage(v: np.ndarray, scale: int = 4) -> np.ndarray:
    """Depth slices of a volume tiled row-major with one-pixel gutters, [rows, cols] in [0, 1]."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0, 1)
    Dd, H, W = v.shape
    cols = int(math.ceil(math.sqrt(Dd)))
    rows = int(math.ceil(Dd / cols))
    out = np.zeros((rows * (H + 1) + 1, cols * (W + 1) + 1))
    for k in range(Dd):
        r, c = divmod(k, cols)
        out[1 + r * (H + 1):1 + r * (H + 1) + H, 1 + c * (W + 1):1 + c * (W + 1) + W] = v[k]
    return np.kron(out, np.ones((scale, scale)))


def write_gray_png(path, img: np.ndarray) -> None:
    from PIL import Image

    u = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u, mode="L").save(path, format="PNG")


def _export_volume(directory, stem, v) -> None:
    D.write_vox(os.path.join(directory, stem + ".vox"), v)
    write_gray_png(os.path.join(directory, stem + ".png"), slice_montage(v))


def sample_cmd(checkpoint: str, out: str, n: int, seed: int = 0, classes=None) -> list[str]:
    """Prior samples exported as VOX1 + montage (volumes), PNG (images) or OBJ + PNG (meshes)."""
    from . import mesh as M

    if n < 0:
        raise ConfigError("n must be >= 0")
    model, cfg, _ = load_model(checkpoint)
    mcfg = model.cfg
    written: list[str] = []
    if n == 0:
        return written
    groups: list[tuple[str, Context | None]] = []
    if mcfg.context == "class":
        wanted = list(range(mcfg.n_classes)) if classes is None else [int(k) for k in classes]
        for k in wanted:
            if not 0 <= k < mcfg.n_classes:
                raise ConfigError(f"class {k} outside [0, {mcfg.n_classes})")
            groups.append((f"class_{k}", Context.classes(np.full(n, k), mcfg.n_classes)))
    elif mcfg.context == "views":
        _, test = load_data(cfg)
        if len(test.x) == 0:
            raise DataError("view-conditional sampling takes its views from the held-out split")
        idx = np.arange(n) % len(test.x)
        groups.append(("", test.context.take(idx)))
    else:
        groups.append(("", None))
    for sub, c in groups:
        d = os.path.join(out, sub) if sub else out
        os.makedirs(d, exist_ok=True)
        canvas, means = sample(model, c, n, seed=seed)
        for i in range(n):
            stem = os.path.join(d, f"sample{i:04d}")
            if mcfg.representation == "mesh":
                rc = M.render_config_for(mcfg)
                mesh = M.mesh_from_param(M.param_from_raw(canvas[i].astype(np.float64), rc))
                M.write_obj(stem + ".obj", mesh)
                M.write_png(stem + ".png", means[i])
                written += [stem + ".obj", stem + ".png"]
            elif mcfg.projection == "camera":
                for v in range(means.shape[1]):
                    write_gray_png(f"{stem}_view{v}.png", means[i, v])
                    written.append(f"{stem}_view{v}.png")
            else:
                _export_volume(d, f"sample{i:04d}", means[i])
                written += [stem + ".vox", stem + ".png"]
    return written


def complete_cmd(checkpoint: str, out: str, n: int = 4, iters: int = 100, seed: int = 0) -> dict:
    """Left-half completion of held-out volumes; snapshots as VOX1 + montage."""
    model, cfg, _ = load_model(checkpoint)
    if model.cfg.projection != "identity":
        raise ConfigError("completion needs a volume model")
    _, test = load_data(cfg)
    if len(test.volumes) == 0:
        raise DataError("no held-out volumes to complete")
    n = min(n, len(test.volumes))
    truth = test.volumes[:n]
    mask = ObservationMask.left_half(model.cfg.extent)
    c = None if test.context is None else test.context.take(np.arange(n))
    chain = complete(truth, mask, model, iters, seed=seed, c=c)
    os.makedirs(out, exist_ok=True)
    hidden = ~mask.observed
    agreement = {}
    for it, vols in chain:
        for i, v in enumerate(vols):
            _export_volume(out, f"vol{i:03d}_iter{it:04d}", v)
        agreement[it] = float(np.mean(vols[:, hidden] == truth[:, hidden]))
    with open(os.path.join(out, "agreement.json"), "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in agreement.items()}, fh, indent=1)
    return agreement


def render_mesh_cmd(spec: dict, out: str, seed: int = 0) -> list[str]:
    """Render an icosphere (optionally noisy) or the cube fixture to PNG, PPM and OBJ."""
    from . import mesh as M

    try:
        rc = M.RenderConfig(extent=tuple(spec.get("extent", (64, 64))))
        shape = spec.get("shape", "sphere")
        angles = np.asarray(spec.get("angles", (0.4, 0.5, 0.0)), dtype=np.float64)
        if shape == "cube":
            mesh = M.cube_mesh(float(spec.get("side", 1.3)), (0.0, 0.0, rc.camera_distance), angles)
        elif shape == "sphere":
            rng = np.random.default_rng(seed)
            d = np.exp(float(spec.get("roughness", 0.0)) * rng.standard_normal(M.N_VERTICES))
            d = d * float(spec.get("radius", 1.0))
            t = np.asarray(spec.get("translation", (0.0, 0.0, rc.camera_distance)), dtype=np.float64)
            mesh = M.mesh_from_param(M.MeshParam(d, angles, t))
        else:
            raise ConfigError(f"unknown mesh shape {shape!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad render-mesh config: {exc}") from exc
    os.makedirs(out, exist_ok=True)
    img = M.rasterize(mesh, rc)
    paths = [os.path.join(out, f"{shape}.{ext}") for ext in ("png", "ppm", "obj")]
    M.write_png(paths[0], img)
    M.write_ppm(paths[1], img)
    M.write_obj(paths[2], mesh)
    return paths


def gen_data_cmd(cfg: RunConfig, out: str) -> dict:
    """Write train/test splits as VOX1 directories (plus IDX files for digits)."""
    n = cfg.n_train + cfg.n_test
    written = {}
    idx = (cfg.idx_images, cfg.idx_labels) if cfg.idx_images else None
    if cfg.dataset == "digits" and idx is None:
        imgs, labs = D.synthetic_digit_images(n, cfg.data_seed)
        os.makedirs(out, exist_ok=True)
        idx = (os.path.join(out, "images.idx"), os.path.join(out, "labels.idx"))
        D.write_idx(idx[0], imgs)
        D.write_idx(idx[1], labs)
        written["idx"] = list(idx)
    if cfg.dataset in ("cube_scenes", "directory"):
        raise ConfigError(f"gen-data does not generate the {cfg.dataset} dataset")
    data = D.make_dataset(cfg.dataset, n, cfg.extent, cfg.data_seed, augment_data=cfg.augment, idx_paths=idx)
    for name, sl in (("train", slice(0, cfg.n_train)), ("test", slice(cfg.n_train, n))):
        part = {"volumes": data["volumes"][sl], "labels": data["labels"][sl], "name": data["name"]}
        D.write_dataset(os.path.join(out, name), part, {"data_seed": cfg.data_seed})
        written[name] = int(len(part["volumes"]))
    return written
