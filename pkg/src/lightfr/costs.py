"""Closed-form storage/communication costs and the retrieval latency benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .binary import ItemCodeMatrix, BinaryCode, top_k_hamming, top_k_inner

MODELS = ("FCF", "FedMF", "FedRec", "MetaMF", "PrivRec", "LightFR")


@dataclass
class CostModel:
    """Inputs of the per-client cost formulas.

    Defaults are the Ciao setting: m=105,096 items, 38 rated items per user,
    32 real dimensions (64 for binary codes), 1024-bit keys, rho=3, L=2,
    h=8, s=8.
    """

    m: int = 105_096
    f: int = 32
    avg_profile: float = 38
    rho: float = 3
    L: int = 2
    h: int = 8
    s: int = 8
    key_bits: int = 1024

    def __post_init__(self):
        for name in ("m", "f", "avg_profile", "rho", "L", "h", "s", "key_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class CostReport:
    model: str
    storage_bytes: float
    communication_bytes: float

    def as_dict(self) -> dict:
        return {"model": self.model, "storage_bytes": self.storage_bytes,
                "communication_bytes": self.communication_bytes}


def cost_report(model: str, cm: CostModel) -> CostReport:
    """Storage and per-round communication in bytes for one client.

    The LightFR formulas count bits (one per code component), so they are
    divided by 8 here; every other row already ends in ``/ 8``.
    """
    m, f, iu = cm.m, cm.f, cm.avg_profile
    if model == "FCF" or model == "PrivRec":
        storage = (1 + m) * f * 64 / 8
        comm = (iu + m) * f * 64 / 8
    elif model == "FedMF":
        storage = (1 + m) * f * cm.key_bits / 8
        comm = (iu + m) * f * cm.key_bits / 8
    elif model == "FedRec":
        storage = (1 + m) * f * 64 / 8
        comm = (iu * (1 + cm.rho) + m) * f * 64 / 8
    elif model == "MetaMF":
        storage = (m + cm.L * cm.h) * f * 64 / 8
        comm = (m * f + 2 * cm.L * cm.h + f * cm.s + cm.s * m) * 64 / 8
    elif model == "LightFR":
        storage = (1 + m) * f / 8
        comm = (iu + m) * f / 8
    else:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    return CostReport(model, storage, comm)


def cost_table(cm_real: CostModel, cm_binary: CostModel | None = None) -> list[CostReport]:
    """All models, with LightFR evaluated on its own (binary) code length."""
    cm_binary = cm_binary or cm_real
    return [cost_report(name, cm_binary if name == "LightFR" else cm_real) for name in MODELS]


def _time_call(fn, repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.mean(times))


def bench_inference(m_list, f_bin: int = 64, f_real: int = 32, k: int = 10,
                    repetitions: int = 5, seed: int = 0, warmup: int = 1) -> list[dict]:
    """Mean wall time of one top-k query per item count, Hamming vs inner product."""
    rows = []
    rng = np.random.default_rng(seed)
    for m in m_list:
        m = int(m)
        codes = ItemCodeMatrix.from_signs(rng.choice(np.array([-1, 1], dtype=np.int8), size=(m, f_bin)))
        query = BinaryCode.from_signs(rng.choice(np.array([-1, 1], dtype=np.int8), size=f_bin))
        Q = rng.uniform(-0.05, 0.05, size=(m, f_real))
        q = rng.uniform(-0.05, 0.05, size=f_real)
        kk = min(k, m)
        run_h = lambda: top_k_hamming(query, codes, kk)  # noqa: E731
        run_r = lambda: top_k_inner(q, Q, kk)  # noqa: E731
        for _ in range(warmup):
            run_h()
            run_r()
        t_h = _time_call(run_h, repetitions)
        t_r = _time_call(run_r, repetitions)
        rows.append({
            "m": m, "k": kk, "f_bin": f_bin, "f_real": f_real, "repetitions": repetitions,
            "hamming_seconds": t_h, "inner_seconds": t_r,
            "speedup": t_r / t_h if t_h > 0 else float("inf"),
            "binary_bytes": codes.nbytes(), "real_bytes": Q.nbytes,
        })
    return rows
