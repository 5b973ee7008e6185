"""Experiment configuration and the model runners shared by the CLI and the test suite."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .baselines import RealFactors, centralized_mf_train, quantize_median, random_codes, train_fed_mf
from .corpus import Dataset, SplitDataset, chronological_split, load_ratings
from .discrete import HyperParams
from .evaluation import (EvalInstances, MetricsReport, build_instances, evaluate,
                         hamming_scorer, inner_product_scorer)
from .fedsim import TrainState, train

log = logging.getLogger(__name__)

MODELS = ("lightfr", "lightfr_para", "lightfr_init", "random", "fedmf_real")


@dataclass
class ExperimentConfig:
    seed: int
    data: str | None = None
    sep: str | None = None
    rating_max: float | None = None
    rating_min: float | None = None
    skip_header: bool = False
    model: str = "lightfr"
    f: int = 64
    f_real: int = 32
    lam: float = 0.01
    T: int = 50
    E: int = 1
    p: float = 0.6
    sweeps: int = 1
    weighted: bool = False
    eta: float = 0.01
    fedmf_lam: float = 0.01
    mf_eta: float = 0.05
    mf_lam: float = 0.01
    mf_epochs: int = 50
    negatives: int = 99
    k: int = 10
    eval_every: int = 1
    early_stopping: bool = False
    patience: int = 5
    out: str = "runs"
    workers: int = field(default_factory=lambda: int(os.environ.get("LIGHTFR_WORKERS", os.cpu_count() or 1)))

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if data.get("seed") is None:
            raise ValueError("config must set 'seed'")
        return cls(**data)

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            data = json.load(fh)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def hyperparams(self, **over) -> HyperParams:
        kw = dict(f=self.f, lam=self.lam, T=self.T, E=self.E, p=self.p,
                  sweeps=self.sweeps, weighted=self.weighted)
        kw.update(over)
        return HyperParams(**kw)

    def config_hash(self) -> str:
        d = asdict(self)
        for volatile in ("out", "workers"):
            d.pop(volatile)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_split(cfg: ExperimentConfig) -> tuple[Dataset, SplitDataset]:
    if not cfg.data:
        raise ValueError("config has no 'data' path")
    ds = load_ratings(cfg.data, cfg.sep, cfg.rating_max, cfg.rating_min, cfg.skip_header)
    return ds, chronological_split(ds)


@dataclass
class ModelRun:
    model: str
    metrics: MetricsReport
    history: list
    artifact: Any  # TrainState for binary models, RealFactors for fedmf_real
    upload_bytes_total: int = 0
    download_bytes_total: int = 0
    storage_bytes: int = 0

    def summary(self, cfg: ExperimentConfig, dataset: str) -> dict:
        return {"model": self.model, "dataset": dataset, "f": self.f(cfg), "T": cfg.T,
                "E": cfg.E, "p": cfg.p, "lambda": cfg.lam,
                "hr_at_10": self.metrics.hr_at_k, "ndcg_at_10": self.metrics.ndcg_at_k,
                "evaluated_instances": self.metrics.evaluated_instances,
                "upload_bytes_total": self.upload_bytes_total,
                "download_bytes_total": self.download_bytes_total,
                "storage_bytes": self.storage_bytes, "seed": cfg.seed}

    def f(self, cfg) -> int:
        return cfg.f_real if self.model == "fedmf_real" else cfg.f

    def scorer(self):
        return scorer_for(self.artifact)


def scorer_for(artifact):
    if isinstance(artifact, RealFactors):
        return inner_product_scorer(artifact.P, artifact.Q)
    return hamming_scorer(artifact.user_codes, artifact.items)


def run_model(split: SplitDataset, cfg: ExperimentConfig, test: EvalInstances | None = None,
              val: EvalInstances | None = None, **hp_over) -> ModelRun:
    """Train (or construct) one model and score it on the test instances."""
    if test is None:
        test = build_instances(split, "test", cfg.negatives, cfg.seed)
    model = cfg.model
    history: list = []
    up = down = 0
    if model in ("lightfr", "lightfr_para"):
        hp = cfg.hyperparams(**hp_over)
        res = train(split, hp, cfg.seed, "grad" if model == "lightfr" else "para",
                    workers=cfg.workers, eval_every=cfg.eval_every,
                    early_stopping=cfg.early_stopping, patience=cfg.patience,
                    negatives=cfg.negatives, k=cfg.k, val_instances=val)
        artifact, history = res.state, res.history
        up = sum(r["upload_bytes"] for r in history)
        down = sum(r["download_bytes"] for r in history)
        f = hp.f
    elif model == "lightfr_init":
        f = hp_over.get("f", cfg.f)
        factors, losses = centralized_mf_train(split.train, f, cfg.mf_eta, cfg.mf_lam,
                                               cfg.mf_epochs, cfg.seed, n=split.n, m=split.m)
        U, D = quantize_median(factors)
        artifact = TrainState(D, U)
        history = [{"round": e + 1, "loss": l} for e, l in enumerate(losses)]
    elif model == "random":
        f = hp_over.get("f", cfg.f)
        U, D = random_codes(split.n, split.m, f, cfg.seed)
        artifact = TrainState(D, U)
    else:
        f = cfg.f_real
        artifact, history = train_fed_mf(split, f, cfg.eta, cfg.fedmf_lam, cfg.T, cfg.p, cfg.seed,
                                         eval_every=cfg.eval_every, negatives=cfg.negatives,
                                         val_instances=val)
        up = sum(r["upload_bytes"] for r in history)
        down = sum(r["download_bytes"] for r in history)
    storage = (split.m + 1) * f * 8 if model == "fedmf_real" else (split.m + 1) * f // 8
    metrics = evaluate(scorer_for(artifact), instances=test, k=cfg.k)
    log.info("%s: HR@%d=%.4f NDCG@%d=%.4f", model, cfg.k, metrics.hr_at_k, cfg.k, metrics.ndcg_at_k)
    return ModelRun(model, metrics, history, artifact, up, down, storage)


def tune_lambda(split: SplitDataset, cfg: ExperimentConfig, grid, model: str = "lightfr",
                test: EvalInstances | None = None, val: EvalInstances | None = None):
    """Pick lambda by validation HR@k, then report the chosen run's test metrics.

    Returns (best lambda, best run, {lambda: validation HR}).
    """
    if val is None:
        val = build_instances(split, "validation", cfg.negatives, cfg.seed)
    scores, runs = {}, {}
    for lam in grid:
        c = ExperimentConfig(**{**asdict(cfg), "lam": float(lam), "model": model, "eval_every": 0})
        run = run_model(split, c, test=test, val=val)
        scores[lam] = evaluate(run.scorer(), instances=val, k=cfg.k).hr_at_k
        runs[lam] = run
    best = max(grid, key=lambda l: (scores[l], -l))
    return best, runs[best], scores


def sweep(split: SplitDataset, cfg: ExperimentConfig, axis: str, values,
          test: EvalInstances | None = None) -> list[dict]:
    """Train LightFR once per value of ``axis`` (f, lambda or p); one result row per value."""
    key = {"f": "f", "lambda": "lam", "lam": "lam", "p": "p"}.get(axis)
    if key is None:
        raise ValueError(f"sweep axis must be f, lambda or p; got {axis!r}")
    if test is None:
        test = build_instances(split, "test", cfg.negatives, cfg.seed)
    rows = []
    for v in values:
        v = int(v) if key == "f" else float(v)
        c = ExperimentConfig(**{**asdict(cfg), key: v, "model": "lightfr"})
        run = run_model(split, c, test=test)
        rows.append({"axis": axis, "value": v, "hr_at_10": run.metrics.hr_at_k,
                     "ndcg_at_10": run.metrics.ndcg_at_k, "seed": cfg.seed})
    return rows


def final_codes_equal(a: TrainState, b: TrainState) -> bool:
    return np.array_equal(a.items, b.items) and np.array_equal(a.user_codes, b.user_codes)
