"""Command-line entry point: ``seqdenoise prepare|train|eval|sweep``.

Every command writes only inside ``--out`` and leaves a ``manifest.json``
there.  Exit codes: 0 success, 2 input error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .config import ABLATIONS, Config, load
from .errors import ConfigError, DataError, DivergenceError, SeqDenoiseError

log = logging.getLogger("seqdenoise")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3
MANIFEST_VERSION = 1

# grids used when --values=grid
REFERENCE_GRIDS = {
    "t": (1, 5, 10, 15, 20),
    "m": (1, 5, 10, 15, 20, 25),
    "train_ratio": (0.2, 0.4, 0.6, 0.8, 1.0),
}
SWEEP_FIELDS = ("param", "value", "seed", "metric", "K", "score")


class InputError(SeqDenoiseError):
    """Bad arguments or unreadable inputs (exit code 2)."""


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    command: str
    seed: int | None
    config: dict | None
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: list[str] = field(default_factory=list)
    params: dict = field(default_factory=dict)
    version: str = __version__
    git: str | None = None
    format_version: int = MANIFEST_VERSION

    def write(self, out: Path):
        doc = asdict(self)
        (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def git_stamp() -> str | None:
    try:
        res = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5, check=False,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return res.stdout.strip() or None if res.returncode == 0 else None


def _manifest(command, cfg: Config | None, inputs, outputs, params=None) -> RunManifest:
    return RunManifest(
        command=command,
        seed=cfg.train.seed if cfg is not None else params.get("seed"),
        config=cfg.effective().to_flat() if cfg is not None else None,
        inputs={str(p): sha256_file(p) for p in inputs},
        outputs=sorted(outputs),
        params=params or {},
        git=git_stamp(),
    )


# ---------------------------------------------------------------------------
# shared helpers


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {path}")
    return p


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_sets(pairs) -> dict:
    overrides = {}
    for item in pairs or ():
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    return overrides


def _parse_ablate(values) -> tuple[str, ...]:
    flags = []
    for v in values or ():
        flags.extend(p.strip() for p in v.split(",") if p.strip())
    bad = [f for f in flags if f not in ABLATIONS]
    if bad:
        raise InputError(f"unknown ablation {bad[0]!r}; choose from {', '.join(ABLATIONS)}")
    return tuple(dict.fromkeys(flags))


def _build_config(args) -> tuple[Config, list[Path]]:
    inputs = []
    path = None
    if getattr(args, "config", None):
        path = _require_file(args.config, "config file")
        inputs.append(path)
    overrides = _parse_sets(getattr(args, "set", None))
    ablate = _parse_ablate(getattr(args, "ablate", None))
    if ablate:
        overrides["train.ablate"] = ",".join(ablate)
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = str(args.seed)
    return load(path, overrides), inputs


def _load_bundle(path):
    from .data import SplitBundle

    p = _require_file(path, "bundle")
    try:
        return SplitBundle.from_json(p.read_text(encoding="utf-8")), p
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"unreadable bundle {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args) -> int:
    from .data import ingest_events, prepare_bundle

    src = _require_file(args.input, "input file")
    with open(src, "rb") as fh:
        events = ingest_events(fh)
    bundle, stats = prepare_bundle(events, min_count=args.min_count, max_len=args.max_len,
                                   t=args.t, seed=args.seed, train_pairs=args.train_pairs)
    out = _out_dir(args.out)
    (out / "bundle.json").write_text(bundle.to_json(), encoding="utf-8")
    stats_doc = {**stats.to_dict(), "skipped_users": bundle.skipped_users, "train_rows": len(bundle.train)}
    (out / "stats.json").write_text(json.dumps(stats_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    params = {"max_len": args.max_len, "min_count": args.min_count, "t": args.t,
              "seed": args.seed, "train_pairs": args.train_pairs}
    _manifest("prepare", None, [src], ["bundle.json", "stats.json"], params).write(out)
    print(json.dumps(stats_doc, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import save_checkpoint, train

    cfg, inputs = _build_config(args)
    bundle, bpath = _load_bundle(args.bundle)
    out = _out_dir(args.out)
    effective = cfg.effective()
    (out / "config.cfg").write_text(effective.dumps(), encoding="utf-8")
    sys.stdout.write(effective.dumps())
    result = None
    try:
        result = train(cfg, bundle, log_path=out / "metrics.csv", verbose=args.verbose)
    except DivergenceError as exc:
        (out / "divergence.json").write_text(json.dumps(exc.diagnostics, indent=2, sort_keys=True, default=str) + "\n",
                                             encoding="utf-8")
        _manifest("train", cfg, inputs + [bpath], ["config.cfg", "metrics.csv", "divergence.json"]).write(out)
        raise
    save_checkpoint(out / "checkpoint.bin", result.model,
                    {"best_epoch": result.best_epoch, "best_valid_hr@20": result.best_valid_hr20})
    _manifest("train", cfg, inputs + [bpath], ["checkpoint.bin", "config.cfg", "metrics.csv"],
              {"best_epoch": result.best_epoch, "stopped_early": result.stopped_early}).write(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import bucketed_eval
    from .train import evaluate_noise, evaluate_rows, load_checkpoint

    ckpt = _require_file(args.checkpoint, "checkpoint")
    try:
        model, _meta = load_checkpoint(ckpt)
    except (ValueError, KeyError, OSError) as exc:
        raise InputError(f"unreadable checkpoint {args.checkpoint}: {exc}") from exc
    bundle, bpath = _load_bundle(args.bundle)
    if bundle.n_items != model.n_items:
        raise InputError(f"bundle has {bundle.n_items} item slots but the checkpoint has {model.n_items}")
    rows = getattr(bundle, args.split)
    ks = model.cfg.eval.ks
    report = evaluate_rows(model, rows, ks)
    if args.buckets:
        report.buckets = bucketed_eval([len(r[1]) for r in rows], report, args.buckets)
    out = _out_dir(args.out)
    outputs = ["report.json", "report.csv"]
    doc = {"split": args.split, **report.to_dict()}
    if args.noise_report:
        noise = evaluate_noise(model, rows, model.cfg.data.t, model.cfg.train.seed)
        doc["noise"] = noise.to_dict()
        (out / "noise.json").write_text(json.dumps(noise.to_dict(), indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
        outputs.append("noise.json")
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("bucket", "metric", "K", "score"))
        for row in report.rows():
            w.writerow(row)
    _manifest("eval", model.cfg, [ckpt, bpath], outputs,
              {"split": args.split, "buckets": args.buckets, "noise_report": bool(args.noise_report)}).write(out)
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def _sweep_values(param: str, raw: str):
    if raw.strip() == "grid":
        return list(REFERENCE_GRIDS[param])
    cast = float if param == "train_ratio" else int
    try:
        return [cast(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad --values {raw!r}") from exc


def _parse_metrics(raw: str):
    out = []
    for item in raw.split(","):
        name, sep, k = item.strip().partition("@")
        if not sep or name not in ("hr", "ndcg", "mrr") or not k.isdigit():
            raise InputError(f"bad metric {item!r}; expected e.g. hr@20")
        out.append((name, int(k)))
    return out


def _sweep_one(job):
    """Train and score one (value, seed) cell; runs in a worker process under --jobs."""
    from .config import loads
    from .data import SplitBundle
    from .metrics import mrr_at_k, subsample_train
    from .train import evaluate_rows, train

    cfg_text, bundle_text, param, value, seed, metrics, split = job
    cfg = loads(cfg_text)
    bundle = SplitBundle.from_json(bundle_text)
    cfg.train.seed = seed
    rows = None
    if param == "t":
        cfg.data.t = int(value)
    elif param == "m":
        cfg.interests.count = int(value)
    else:
        rows = subsample_train(bundle.train, float(value), seed)
    cfg.validate()
    res = train(cfg, bundle, train_rows=rows)
    ks = tuple(sorted({k for _, k in metrics}))
    rep = evaluate_rows(res.model, getattr(bundle, split), ks)
    scores = rep.metrics
    out = []
    for name, k in metrics:
        score = mrr_at_k(rep.ranks, k) if name == "mrr" else scores[f"{name}@{k}"]
        out.append((param, value, seed, name, k, score))
    return out


def cmd_sweep(args) -> int:
    cfg, inputs = _build_config(args)
    bundle, bpath = _load_bundle(args.bundle)
    values = _sweep_values(args.param, args.values)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise InputError(f"bad --seeds {args.seeds!r}") from exc
    metrics = _parse_metrics(args.metrics)
    if args.param == "train_ratio" and any(not 0 < v <= 1 for v in values):
        raise InputError("train_ratio values must lie in (0, 1]")
    out = _out_dir(args.out)
    bundle_text = bundle.to_json()
    jobs = [(cfg.dumps(), bundle_text, args.param, v, s, metrics, args.split) for v in values for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_FIELDS)
        for rows in results:
            for r in rows:
                w.writerow(r)
    _manifest("sweep", cfg, inputs + [bpath], ["sweep.csv"],
              {"param": args.param, "values": values, "seeds": seeds,
               "metrics": [f"{n}@{k}" for n, k in metrics], "split": args.split}).write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqdenoise", description="Denoising sequential recommender toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("prepare", help="filter, split and augment a TSV interaction log")
    pr.add_argument("--input", required=True, help="TSV with user, item, timestamp columns")
    pr.add_argument("--max-len", type=int, default=50)
    pr.add_argument("--min-count", type=int, default=5)
    pr.add_argument("--t", type=int, default=2, help="items injected per augmented sequence")
    pr.add_argument("--seed", type=int, default=2024)
    pr.add_argument("--train-pairs", choices=("last", "all"), default="last")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_prepare)

    def config_args(sp):
        sp.add_argument("--bundle", required=True, help="bundle.json written by prepare")
        sp.add_argument("--config", help="flat section.key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--ablate", action="append", metavar="FLAG",
                        help=f"one of {', '.join(ABLATIONS)}; repeatable or comma-separated")
        sp.add_argument("--seed", type=int, help="overrides train.seed and the environment")
        sp.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train a model and write a checkpoint plus per-epoch log")
    config_args(tr)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="rank held-out targets and optionally score noise detection")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--bundle", required=True)
    ev.add_argument("--split", choices=("train", "valid", "test"), default="test")
    ev.add_argument("--buckets", nargs="?", const="terciles", choices=("terciles", "saturated"),
                    help="add long/medium/short rows (default scheme: terciles)")
    ev.add_argument("--noise-report", action="store_true",
                    help="inject noise into the split and score the discriminator")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="train over a parameter grid and seeds; long-format CSV")
    config_args(sw)
    sw.add_argument("--param", required=True, choices=tuple(REFERENCE_GRIDS))
    sw.add_argument("--values", required=True, help="comma list, or 'grid' for the standard grid of the parameter")
    sw.add_argument("--seeds", default="2024")
    sw.add_argument("--metrics", default="hr@20", help="comma list such as hr@20,ndcg@10")
    sw.add_argument("--split", choices=("valid", "test"), default="test")
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InputError, DataError, ConfigError, SeqDenoiseError, OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
