"""Comparison models: real-valued federated MF, centralized MF, quantized MF and random codes."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Dataset, SplitDataset
from .discrete import GradientUpdate, sum_gradients
from .evaluation import EvalInstances, build_instances, evaluate, inner_product_scorer
from .fedsim import select_clients

log = logging.getLogger(__name__)

INIT_SCALE = 0.05


class DivergenceError(FloatingPointError):
    pass


@dataclass
class RealFactors:
    P: np.ndarray  # (n, f)
    Q: np.ndarray  # (m, f)

    @property
    def f(self) -> int:
        return self.P.shape[1]

    def copy(self) -> "RealFactors":
        return RealFactors(self.P.copy(), self.Q.copy())

    def to_bytes(self) -> bytes:
        out = b"LFMF"
        for mat in (self.P, self.Q):
            out += struct.pack("<QI", mat.shape[0], mat.shape[1])
            out += np.ascontiguousarray(mat, dtype="<f8").tobytes()
        return out

    @classmethod
    def from_bytes(cls, blob: bytes) -> "RealFactors":
        if blob[:4] != b"LFMF":
            raise ValueError("not a real-valued factor file")
        off, mats = 4, []
        for _ in range(2):
            rows, f = struct.unpack_from("<QI", blob, off)
            off += 12
            mats.append(np.frombuffer(blob, dtype="<f8", count=rows * f, offset=off).reshape(rows, f).copy())
            off += rows * f * 8
        return cls(*mats)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RealFactors":
        return cls.from_bytes(Path(path).read_bytes())


def init_factors(n: int, m: int, f: int, seed: int, scale: float = INIT_SCALE) -> RealFactors:
    rng = np.random.default_rng([seed, 0x3F])
    return RealFactors(rng.uniform(-scale, scale, (n, f)), rng.uniform(-scale, scale, (m, f)))


def _finite(x: np.ndarray, eta: float) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite parameters; learning rate eta={eta} is too large")
    return x


def fed_mf_local_user_update(p_u, item_ids, ratings, Q, eta: float, lam: float) -> np.ndarray:
    """One local gradient step on the user embedding."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    p_u = np.asarray(p_u, dtype=np.float64)
    Qi = Q[np.asarray(item_ids, dtype=np.int64)]
    with np.errstate(over="ignore", invalid="ignore"):  # reported as DivergenceError below
        err = Qi @ p_u - np.asarray(ratings, dtype=np.float64)
        new = p_u - 2 * eta * (err @ Qi + lam * p_u)
    return _finite(new, eta)


def fed_mf_item_gradients(client_id: int, p_u, item_ids, ratings, Q, lam: float) -> GradientUpdate:
    """Per-item upload (p.q_i - r) p + lam q_i, as in the real-valued protocol."""
    item_ids = np.asarray(item_ids, dtype=np.int64)
    Qi = Q[item_ids]
    err = Qi @ p_u - np.asarray(ratings, dtype=np.float64)
    grads = err[:, None] * p_u[None, :] + lam * Qi
    return GradientUpdate(client_id, item_ids, grads, Q.shape[1])


def fed_mf_server_item_update(Q, updates: Sequence[GradientUpdate], eta: float) -> np.ndarray:
    """Sum all client gradients per item, then take a single step."""
    Q = np.asarray(Q, dtype=np.float64)
    G, touches = sum_gradients(updates, Q.shape[0], Q.shape[1])
    return _finite(Q - 2 * eta * G, eta)


def fed_mf_round(factors: RealFactors, split: SplitDataset, clients: Sequence[int],
                 eta: float, lam: float) -> tuple[RealFactors, int]:
    """Selected clients step their user vectors and upload item gradients.

    Item gradients use the user vector from before the local step, so with all
    clients selected a round equals one full-batch gradient step.
    Returns (new factors, upload bytes).
    """
    P = factors.P.copy()
    updates, upload = [], 0
    for u in sorted(clients):
        items, r = split.user_items[u], split.user_ratings[u]
        p_old = factors.P[u]
        upd = fed_mf_item_gradients(u, p_old, items, r, factors.Q, lam)
        P[u] = fed_mf_local_user_update(p_old, items, r, factors.Q, eta, lam)
        updates.append(upd)
        upload += len(upd.to_bytes())
    Q = fed_mf_server_item_update(factors.Q, updates, eta)
    return RealFactors(P, Q), upload


def _mse(factors: RealFactors, ds: Dataset) -> float:
    if ds.N == 0:
        return float("nan")
    pred = np.einsum("ij,ij->i", factors.P[ds.users], factors.Q[ds.items])
    return float(np.mean((pred - ds.unit) ** 2))


def train_fed_mf(split: SplitDataset, f: int = 32, eta: float = 0.01, lam: float = 0.01,
                 T: int = 50, p: float = 0.6, seed: int = 0, decay: float = 0.9,
                 eval_every: int = 1, negatives: int = 99,
                 val_instances: EvalInstances | None = None) -> tuple[RealFactors, list]:
    """Real-valued federated MF; eta shrinks by ``decay`` whenever validation MSE rises."""
    factors = init_factors(split.n, split.m, f, seed)
    history = []
    if eval_every and val_instances is None:
        try:
            val_instances = build_instances(split, "validation", negatives, seed)
        except ValueError:
            eval_every = 0
    prev_val = float("inf")
    download = split.m * f * 8
    for t in range(T):
        plan = select_clients(split.n, p, t, seed)
        factors, upload = fed_mf_round(factors, split, plan.selected, eta, lam)
        val = _mse(factors, split.validation)
        if val > prev_val:
            eta *= decay
        prev_val = val
        rec = {"round": t + 1, "loss": _mse(factors, split.train), "val_mse": val, "eta": eta,
               "hr_at_10": float("nan"), "ndcg_at_10": float("nan"), "flips": 0,
               "upload_bytes": upload, "download_bytes": download * len(plan.selected)}
        if eval_every and (t + 1) % eval_every == 0:
            rep = evaluate(inner_product_scorer(factors.P, factors.Q), instances=val_instances)
            rec["hr_at_10"], rec["ndcg_at_10"] = rep.hr_at_k, rep.ndcg_at_k
        history.append(rec)
        log.info("fedmf round %d train_mse=%.4f val_mse=%.4f", t + 1, rec["loss"], val)
    return factors, history


def centralized_mf_train(ds: Dataset, f: int = 32, eta: float = 0.05, lam: float = 0.01,
                         epochs: int = 50, seed: int = 0, batch_size: int = 512,
                         n: int | None = None, m: int | None = None) -> tuple[RealFactors, list]:
    """Mini-batch SGD on the squared error with L2 on the touched factors.

    Returns the factors and the training MSE after each epoch.
    """
    n = ds.n if n is None else n
    m = ds.m if m is None else m
    factors = init_factors(n, m, f, seed)
    P, Q = factors.P, factors.Q
    rng = np.random.default_rng([seed, 0xCE])
    users, items, r = ds.users, ds.items, ds.unit
    losses = []
    for _ in range(epochs):
        order = rng.permutation(ds.N)
        for lo in range(0, ds.N, batch_size):
            b = order[lo:lo + batch_size]
            u, i = users[b], items[b]
            pu, qi = P[u], Q[i]
            err = np.einsum("ij,ij->i", pu, qi) - r[b]
            np.add.at(P, u, -2 * eta * (err[:, None] * qi + lam * pu))
            np.add.at(Q, i, -2 * eta * (err[:, None] * pu + lam * qi))
        _finite(P, eta)
        _finite(Q, eta)
        losses.append(_mse(factors, ds))
    return factors, losses


def quantize_median(factors: RealFactors) -> tuple[np.ndarray, np.ndarray]:
    """+1 where a value exceeds its dimension's median, -1 otherwise.

    Users and items are thresholded against their own population medians.
    Returns dense (user codes, item codes) as int8 arrays.
    """
    def q(X):
        med = np.median(X, axis=0, keepdims=True)
        return np.where(X > med, 1, -1).astype(np.int8)
    return q(factors.P), q(factors.Q)


def random_codes(n: int, m: int, f: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([seed, 0xAD])
    pm = np.array([-1, 1], dtype=np.int8)
    return rng.choice(pm, size=(n, f)), rng.choice(pm, size=(m, f))
