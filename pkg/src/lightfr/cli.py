"""Command-line driver: prepare, train, evaluate, sweep, bench and privacy.

Every command takes a JSON config (``--config``) whose keys mirror
:class:`ExperimentConfig`; command-line flags override it. Outputs land under
``--out`` together with a ``manifest.json`` listing the files and the config hash.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .baselines import RealFactors
from .corpus import DataFormatError, write_split_manifest
from .costs import CostModel, bench_inference, cost_table
from .evaluation import evaluate
from .experiments import ExperimentConfig, load_split, run_model, scorer_for, sweep
from .fedsim import TrainState, load_checkpoint, save_checkpoint, write_metrics_csv
from .plotting import plot_bench, plot_costs, plot_sweep, plot_training_curve
from .privacy import privacy_report

log = logging.getLogger("lightfr")

# config keys that may be overridden from the command line, with their types
_OVERRIDES = {
    "data": str, "sep": str, "rating_max": float, "rating_min": float, "model": str,
    "f": int, "f_real": int, "lam": float, "T": int, "E": int, "p": float, "eta": float,
    "negatives": int, "k": int, "seed": int, "out": str, "workers": int,
    "eval_every": int, "mf_epochs": int,
}


class _Outputs:
    """Tracks written artifacts for the manifest."""

    def __init__(self, out: Path, cfg: ExperimentConfig, command: str):
        self.out = out
        self.cfg = cfg
        self.command = command
        self.files: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")
        return p

    def write_csv(self, name: str, rows: list[dict]) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [])
            w.writeheader()
            w.writerows(rows)
        return p

    def finish(self) -> None:
        missing = [str(p) for p in self.files if not p.is_file()]
        if missing:
            raise OSError(f"artifacts not written: {missing}")
        entries = [{"file": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
                   for p in self.files]
        manifest = {"command": self.command, "config_hash": self.cfg.config_hash(),
                    "config": asdict(self.cfg) | {"workers": None}, "files": entries}
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _dataset_name(cfg: ExperimentConfig) -> str:
    name = Path(cfg.data).name if cfg.data else "none"
    for suffix in (".gz", ".txt", ".csv", ".dat", ".inter", ".tsv"):
        name = name.removesuffix(suffix)
    return name


def cmd_prepare(cfg: ExperimentConfig, args) -> None:
    ds, split = load_split(cfg)
    out = _Outputs(Path(cfg.out), cfg, "prepare")
    for part in ("train", "validation", "test"):
        write_split_manifest(split, out.path(f"{part}.csv"), parts=(part,))
    stats = ds.stats() | {"train": split.train.N, "validation": split.validation.N,
                          "test": split.test.N, "evaluable_users": len(split.evaluable)}
    out.write_json("stats.json", stats)
    out.finish()
    print(json.dumps(stats))


def cmd_train(cfg: ExperimentConfig, args) -> None:
    _, split = load_split(cfg)
    run = run_model(split, cfg)
    out = _Outputs(Path(cfg.out), cfg, "train")
    art = run.artifact
    if isinstance(art, RealFactors):
        art.save(out.path("model.lfmf"))
    else:
        save_checkpoint(out.path("model.lfck"), art)
    if run.history:
        write_metrics_csv(out.path("metrics.csv"), run.history)
        plot_training_curve(run.history, out.path("training_curve.png"), cfg.model)
    summary = run.summary(cfg, _dataset_name(cfg))
    out.write_json("summary.json", summary)
    out.finish()
    print(json.dumps(summary))


def _load_artifact(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    head = path.read_bytes()[:4]
    if head == b"LFMF":
        return RealFactors.load(path)
    return load_checkpoint(path)


def cmd_evaluate(cfg: ExperimentConfig, args) -> None:
    art = _load_artifact(Path(args.checkpoint))
    _, split = load_split(cfg)
    rep = evaluate(scorer_for(art), split, k=cfg.k, negatives=cfg.negatives,
                   seed=cfg.seed, part=args.part)
    out = _Outputs(Path(cfg.out), cfg, "evaluate")
    result = rep.as_dict() | {"checkpoint": Path(args.checkpoint).name, "part": args.part,
                              "seed": cfg.seed,
                              "round": art.round if isinstance(art, TrainState) else None}
    out.write_json("metrics.json", result)
    out.finish()
    print(json.dumps(result))


def cmd_sweep(cfg: ExperimentConfig, args) -> None:
    _, split = load_split(cfg)
    rows = sweep(split, cfg, args.axis, args.values)
    out = _Outputs(Path(cfg.out), cfg, "sweep")
    out.write_csv(f"sweep_{args.axis}.csv", rows)
    plot_sweep(rows, args.axis, out.path(f"sweep_{args.axis}.png"))
    out.finish()
    for r in rows:
        print(json.dumps(r))


def cmd_bench(cfg: ExperimentConfig, args) -> None:
    rows = bench_inference(args.m_list, f_bin=cfg.f, f_real=cfg.f_real, k=cfg.k,
                           repetitions=args.repetitions, seed=cfg.seed)
    costs = cost_table(CostModel(m=args.cost_m, f=cfg.f_real), CostModel(m=args.cost_m, f=cfg.f))
    out = _Outputs(Path(cfg.out), cfg, "bench")
    out.write_csv("bench.csv", rows)
    out.write_csv("cost.csv", [c.as_dict() for c in costs])
    plot_bench(rows, out.path("bench.png"))
    plot_costs(costs, out.path("cost.png"))
    out.finish()
    for r in rows:
        print(f"m={r['m']}: hamming {r['hamming_seconds'] * 1e3:.3f} ms, "
              f"inner {r['inner_seconds'] * 1e3:.3f} ms, speedup {r['speedup']:.2f}x")


def cmd_privacy(cfg: ExperimentConfig, args) -> None:
    rep = privacy_report(trials=args.trials, f=args.bits, seed=cfg.seed)
    out = _Outputs(Path(cfg.out), cfg, "privacy")
    out.write_json("privacy.json", rep)
    out.finish()
    print(f"binary protocol ambiguity_rate={rep['ambiguity_rate']:.4f} over {rep['trials']} trials")
    print(f"real-valued attack max |error|={rep['real_valued']['max_recovery_error']:.3e}")
    for d in rep["real_valued"]["demo"]:
        print(f"  true rating {d['true_rating']:.4f} -> recovered {d['recovered_rating']:.4f}")


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "bench": cmd_bench, "privacy": cmd_privacy}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightfr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--skip-header", dest="skip_header", action="store_true", default=None)
    common.add_argument("--early-stopping", dest="early_stopping", action="store_true", default=None)
    for name, typ in _OVERRIDES.items():
        common.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="split a ratings file and write stats")
    sub.add_parser("train", parents=[common], help="train one model")
    ev = sub.add_parser("evaluate", parents=[common], help="score a saved checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--part", choices=("validation", "test"), default="test")
    sw = sub.add_parser("sweep", parents=[common], help="vary f, lambda or p")
    sw.add_argument("--axis", choices=("f", "lambda", "p"), required=True)
    sw.add_argument("--values", type=float, nargs="+", required=True)
    be = sub.add_parser("bench", parents=[common], help="top-k latency and cost tables")
    be.add_argument("--m-list", type=int, nargs="+", default=[10**3, 10**4, 10**5, 10**6])
    be.add_argument("--repetitions", type=int, default=5)
    be.add_argument("--cost-m", type=int, default=105096, help="item count for the cost table")
    pr = sub.add_parser("privacy", parents=[common], help="rating recoverability probe")
    pr.add_argument("--trials", type=int, default=1000)
    pr.add_argument("--bits", type=int, default=12)
    return parser


def make_config(args) -> ExperimentConfig:
    keys = (*_OVERRIDES, "skip_header", "early_stopping")
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k) is not None}
    if args.config is not None:
        if not args.config.is_file():
            raise FileNotFoundError(f"config file not found: {args.config}")
        return ExperimentConfig.from_json(args.config, **overrides)
    return ExperimentConfig.from_dict(overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        COMMANDS[args.command](cfg, args)
    except (OSError, ValueError, KeyError, DataFormatError) as exc:
        print(f"lightfr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
