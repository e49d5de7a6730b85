"""``camorect`` command-line entry point.

Exit codes: 0 on success, 2 on invalid arguments or configuration, 1 on
I/O or runtime failures. Every command appends one JSON line to
``run_manifest.jsonl`` at the root of its ``--out`` directory.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

RUN_MANIFEST = "run_manifest.jsonl"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _hash_path(p) -> str | None:
    p = Path(p)
    h = hashlib.sha256()
    if p.is_file():
        h.update(p.read_bytes())
    elif p.is_dir():
        for f in sorted(x for x in p.rglob("*") if x.is_file()):
            h.update(str(f.relative_to(p)).encode())
            h.update(f.read_bytes())
    else:
        return None
    return h.hexdigest()


def _prepare_out(out: Path, force: bool, keep_corpus: bool = False) -> None:
    """Refuse to reuse a non-empty --out unless --force; --force clears it
    (keeping the run manifest history)."""
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out {out} exists and is not a directory")
    if out.exists() and any(p.name != RUN_MANIFEST for p in out.iterdir()):
        if not force:
            raise UsageError(f"--out {out} is not empty; pass --force to overwrite")
        if not keep_corpus:
            for p in out.iterdir():
                if p.name == RUN_MANIFEST:
                    continue
                shutil.rmtree(p) if p.is_dir() else p.unlink()
    out.mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, command: str, config: dict, inputs: dict, artifacts: list, start: str) -> Path:
    record = {
        "command": command,
        "config": config,
        "inputs": {k: _hash_path(v) for k, v in inputs.items()},
        "start": start,
        "end": _now(),
        "artifacts": [str(a) for a in artifacts],
    }
    path = out / RUN_MANIFEST
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    return path


def _read_config(path: str, seed: int | None):
    from .training import TrainConfig

    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {p} is not valid JSON: {exc}") from exc
    if seed is not None:
        data["seed"] = seed
    try:
        return TrainConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {p}: {exc}") from exc


def _schedule_from_manifest(manifest: dict):
    from .training import TrainConfig

    cfg = manifest.get("config")
    return TrainConfig.from_dict(cfg) if cfg else TrainConfig()


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    from .synth import build_corpus

    if args.count < 1:
        raise UsageError("--count must be >= 1")
    h, w = args.size
    if h < 64 or w < 64 or h % 8 or w % 8:
        raise UsageError(f"--size {h} {w}: both sides must be >= 64 and divisible by 8")
    out = Path(args.out)
    start = _now()
    _prepare_out(out, args.force, keep_corpus=True)
    build_corpus(args.count, (h, w), out, seed=args.seed, force=True)
    cfg = {"count": args.count, "size": [h, w], "seed": args.seed}
    _write_manifest(out, "gen-data", cfg, {}, [out / "manifest.json"], start)
    print(out / "manifest.json")
    return 0


def _train(args, role: str) -> int:
    from .training import train_follower, train_leader

    cfg = _read_config(args.config, args.seed)
    if role == "follower":
        if not args.leader_ckpt:
            raise UsageError("train-follower requires --leader-ckpt")
        if not Path(args.leader_ckpt).exists():
            raise UsageError(f"leader checkpoint not found: {args.leader_ckpt}")
    else:
        cfg = type(cfg).from_dict({**cfg.to_dict(), "tce_mode": None})
    out = Path(args.out)
    start = _now()
    _prepare_out(out, args.force)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    if role == "leader":
        res = train_leader(cfg, out)
        inputs = {"config": args.config}
    else:
        res = train_follower(cfg, args.leader_ckpt, out)
        inputs = {"config": args.config, "leader_ckpt": args.leader_ckpt}
    _write_manifest(out, f"train-{role}", cfg.to_dict(), inputs, [res.checkpoint, out / "train_log.jsonl"], start)
    print(res.checkpoint)
    print(f"final_loss {res.final_loss:.6f}")
    return 0


def cmd_train_leader(args) -> int:
    return _train(args, "leader")


def cmd_train_follower(args) -> int:
    return _train(args, "follower")


def cmd_sample(args) -> int:
    from .metrics import save_prediction
    from .synth import load_corpus, resize_bicubic
    from .training import load_split, load_checkpoint, predict

    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt}")
    model, manifest, _ = load_checkpoint(ckpt)
    cfg = _schedule_from_manifest(manifest)
    if args.steps < 1 or args.steps > cfg.T:
        raise UsageError(f"--steps must lie in [1, T={cfg.T}], got {args.steps}")
    corpus = load_corpus(args.corpus)
    if not args.hq and args.scale not in corpus.scales:
        raise UsageError(f"scale {args.scale} not in corpus scales {corpus.scales}")
    out = Path(args.out)
    start = _now()
    _prepare_out(out, args.force)
    data = load_split(corpus, args.split, None if args.hq else args.scale, model.arch.resolution)
    images = data.hq if args.hq else data.lq
    preds = predict(model, images, cfg.noise_schedule(), args.steps, args.seed)
    pdir = out / "predictions"
    pdir.mkdir()
    h, w = corpus.size
    for sid, p in zip(data.ids, preds):
        if p.shape != (h, w):
            p = np.clip(resize_bicubic(p, h, w), 0, 1)
        save_prediction(pdir / f"{sid}.png", p)
    cfg_rec = {"ckpt": str(ckpt), "scale": None if args.hq else args.scale, "steps": args.steps,
               "seed": args.seed, "split": args.split}
    _write_manifest(out, "sample", cfg_rec, {"ckpt": ckpt, "corpus": Path(args.corpus) / "manifest.json"},
                    [pdir], start)
    print(pdir)
    return 0


def cmd_evaluate(args) -> int:
    from .metrics import evaluate_dataset
    from .synth import load_corpus

    pred = Path(args.pred)
    if not pred.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred}")
    corpus = load_corpus(args.corpus)
    out = Path(args.out)
    start = _now()
    _prepare_out(out, args.force)
    report = evaluate_dataset(pred, corpus, args.scale, args.split, out)
    _write_manifest(out, "evaluate", {"scale": args.scale, "split": args.split},
                    {"pred": pred, "corpus": Path(args.corpus) / "manifest.json"},
                    [out / "report.txt", out / "report.json"], start)
    print(out / "report.json")
    if report.aggregate is None:
        print("error: no predictions could be scored", file=sys.stderr)
        return 1
    for k, v in report.aggregate.items():
        print(f"{k} {v:.6f}")
    return 0


def cmd_ablate(args) -> int:
    from .training import run_ablation

    cfg = _read_config(args.config, args.seed)
    mpath = Path(args.matrix)
    if not mpath.exists():
        raise UsageError(f"matrix file not found: {mpath}")
    try:
        rows = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"matrix {mpath} is not valid JSON: {exc}") from exc
    if isinstance(rows, dict):
        rows = rows.get("rows", [])
    if not isinstance(rows, list):
        raise UsageError("matrix must be a JSON list of rows")
    if rows and not args.leader_ckpt:
        raise UsageError("ablate requires --leader-ckpt")
    out = Path(args.out)
    start = _now()
    _prepare_out(out, args.force)
    table = run_ablation(cfg, rows, args.leader_ckpt, out)
    inputs = {"config": args.config, "matrix": mpath}
    if args.leader_ckpt:
        inputs["leader_ckpt"] = args.leader_ckpt
    _write_manifest(out, "ablate", {"base": cfg.to_dict(), "rows": rows}, inputs,
                    [out / "table.tsv", out / "table.json"], start)
    print(out / "table.tsv")
    failed = [r["name"] for r in table if "error" in r]
    if failed:
        print(f"failed rows: {', '.join(failed)}", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    from .plotting import load_series, plot_series

    for r in args.reports:
        if not Path(r).exists():
            raise FileNotFoundError(f"report not found: {r}")
    series = load_series(args.reports)
    out = Path(args.out)
    start = _now()
    _prepare_out(out, args.force)
    paths = plot_series(series, out)
    _write_manifest(out, "plot", {"reports": args.reports}, {f"report{i}": r for i, r in enumerate(args.reports)},
                    paths, start)
    for p in paths:
        print(p)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="camorect", description="Diffusion COD with leader/follower rectification.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_default=None):
        p.add_argument("--out", required=True)
        p.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
        p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, nargs=2, default=[128, 128], metavar=("H", "W"))
    common(p, 0)
    p.set_defaults(func=cmd_gen_data)

    for name, fn in (("train-leader", cmd_train_leader), ("train-follower", cmd_train_follower)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--leader-ckpt")
        common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("sample", help="sample prediction maps for a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--split", default="test")
    p.add_argument("--hq", action="store_true", help="use HQ images instead of LQ")
    common(p, 0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate")
    p.add_argument("--pred", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--scale", type=int)
    p.add_argument("--split", default="test")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate")
    p.add_argument("--config", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--leader-ckpt")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
