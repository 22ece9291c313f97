"""Command-line entry point: ``voxgen <command> [--config JSON] [--seed N] [--profile toy|paper] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import harness as H
from .errors import (CheckpointCorrupt, ConfigError, ContextMismatch, DataError, DegenerateCamera, InvalidCamera,
                     NonPositiveDisplacement, ShapeMismatch)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
COMMANDS = ("gen-data", "train", "eval", "sample", "complete", "render-mesh", "train-baseline")
log = logging.getLogger("voxgen")


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _split_command_keys(cfg: dict, keys: tuple[str, ...]) -> tuple[dict, dict]:
    """Separate command options (checkpoint, n, ...) from run-config keys."""
    own = {k: cfg[k] for k in keys if k in cfg}
    rest = {k: v for k, v in cfg.items() if k not in keys}
    return own, rest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voxgen", description="Sequential generative models of 3-D structure.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="UTF-8 JSON file of run settings")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--profile", choices=tuple(H.PROFILES), default="toy")
        s.add_argument("--out", default=None, help="output directory")
        if name in ("eval", "sample", "complete"):
            s.add_argument("--checkpoint", help="checkpoint directory (default: <out>/checkpoint)")
        if name in ("sample", "complete"):
            s.add_argument("--n", type=int, default=None)
        if name == "sample":
            s.add_argument("--classes", type=int, nargs="*", default=None)
        if name == "complete":
            s.add_argument("--iters", type=int, default=None)
        if name == "eval":
            s.add_argument("--views", type=int, default=None, choices=(0, 1, 2, 3))
            s.add_argument("--n-importance", type=int, default=None)
        if name == "train-baseline":
            s.add_argument("--views", type=int, default=3, choices=(1, 2, 3))
    return p


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed < 0:
        raise ConfigError("seed must be nonnegative")
    cfg = _read_config(args.config)
    out = args.out or cfg.get("out") or os.path.join("runs", args.command)
    cmd = args.command

    if cmd == "render-mesh":
        _emit({"written": H.render_mesh_cmd(cfg, out, seed=args.seed)})
        return EXIT_OK
    if cmd in ("eval", "sample", "complete"):
        own, _ = _split_command_keys(cfg, ("checkpoint", "n", "iters", "classes", "views", "n_importance"))
        ckpt = args.checkpoint or own.get("checkpoint") or os.path.join(out, "checkpoint")
        if cmd == "eval":
            views = args.views if args.views is not None else own.get("views")
            res = H.eval_benchmark(ckpt, views=views, n_importance=args.n_importance or own.get("n_importance"),
                                   seed=args.seed)
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
                json.dump(res, fh, indent=1, sort_keys=True)
            _emit(res)
        elif cmd == "sample":
            n = args.n if args.n is not None else int(own.get("n", 8))
            classes = args.classes if args.classes is not None else own.get("classes")
            files = H.sample_cmd(ckpt, out, n, seed=args.seed, classes=classes)
            _emit({"written": len(files)})
        else:
            n = args.n if args.n is not None else int(own.get("n", 4))
            iters = args.iters if args.iters is not None else int(own.get("iters", 100))
            res = H.complete_cmd(ckpt, out, n=n, iters=iters, seed=args.seed)
            _emit({"agreement": {str(k): v for k, v in res.items()}})
        return EXIT_OK

    run_cfg = H.RunConfig.from_dict(cfg, profile=args.profile, seed=args.seed, out=out)
    if cmd == "gen-data":
        _emit(H.gen_data_cmd(run_cfg, out))
    elif cmd == "train":
        res = H.train(run_cfg)
        _emit({"checkpoint": res["checkpoint"], "metrics": res["metrics"], "step": res["step"]})
    else:
        res = H.train_baseline(run_cfg, n_views=args.views)
        _emit({k: res[k] for k in ("checkpoint", "nats", "stderr", "n")})
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(argv)
    except (ConfigError, ContextMismatch, ShapeMismatch, DegenerateCamera, InvalidCamera,
            NonPositiveDisplacement) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, CheckpointCorrupt) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
