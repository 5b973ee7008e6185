"""In-process federated training loop for binary codes.

Each round samples a fraction of clients, hands every selected client the
same read-only snapshot of the item codes, runs the local updates (possibly
in a thread pool) and lets a single aggregator produce the next item codes.
Client results are re-ordered by client id before aggregation, so the outcome
does not depend on the number of workers or on completion order.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .binary import ItemCodeMatrix
from .corpus import SplitDataset
from .discrete import (ClientState, GradientUpdate, HyperParams, aggregate_grad,
                       aggregate_para, compute_item_gradients, data_loss,
                       local_item_update, local_user_update)
from .evaluation import EvalInstances, build_instances, evaluate, hamming_scorer

log = logging.getLogger(__name__)

MODES = ("grad", "para")
METRIC_FIELDS = ("round", "loss", "hr_at_10", "ndcg_at_10", "flips",
                 "upload_bytes", "download_bytes")


@dataclass(frozen=True)
class RoundPlan:
    round_index: int
    selected: tuple
    seed: int


@dataclass
class TrainState:
    items: np.ndarray  # (m, f) int8 +/-1
    user_codes: np.ndarray  # (n, f) int8 +/-1
    round: int = 0
    history: list = field(default_factory=list)

    @property
    def f(self) -> int:
        return self.items.shape[1]

    def item_matrix(self) -> ItemCodeMatrix:
        return ItemCodeMatrix.from_signs(self.items)


def init_state(split: SplitDataset, hp: HyperParams, seed: int) -> TrainState:
    rng = np.random.default_rng([seed, 0x1A17])
    pm = np.array([-1, 1], dtype=np.int8)
    items = rng.choice(pm, size=(split.m, hp.f))
    users = rng.choice(pm, size=(split.n, hp.f))
    return TrainState(items, users)


def selection_size(n: int, p: float) -> int:
    return max(1, min(n, int(math.floor(p * n + 0.5))))


def select_clients(n: int, p: float, round_index: int, seed: int) -> RoundPlan:
    """Uniform sample without replacement, sorted by client id."""
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    ss = np.random.SeedSequence([seed, round_index, 0x5E1])
    rng = np.random.default_rng(ss)
    chosen = np.sort(rng.choice(n, size=selection_size(n, p), replace=False))
    return RoundPlan(round_index, tuple(int(c) for c in chosen), int(ss.generate_state(1)[0]))


_UPLOAD_HEADER = struct.Struct("<qq")


def encode_code_upload(client_id: int, item_ids: np.ndarray, rows: np.ndarray) -> bytes:
    """Wire form of locally updated item codes: (client_id, count, ids, packed rows)."""
    packed = ItemCodeMatrix.from_signs(rows).packed if len(rows) else np.empty((0, 0), np.uint8)
    return (_UPLOAD_HEADER.pack(client_id, len(item_ids))
            + np.asarray(item_ids, dtype="<i8").tobytes() + packed.tobytes())


@dataclass
class ClientResult:
    client_id: int
    code: np.ndarray
    flips: int
    gradient: GradientUpdate | None = None
    item_rows: tuple | None = None  # (item ids, +/-1 rows) for parameter aggregation
    upload_bytes: int = 0


def client_update(client: ClientState, snapshot: np.ndarray, hp: HyperParams,
                  mode: str = "grad") -> ClientResult:
    """E local epochs of {user code sweep; item gradients} against a fixed snapshot."""
    flips = 0
    grad = None
    for _ in range(hp.E):
        code, n_flip = local_user_update(client, snapshot, hp.lam, hp.sweeps)
        client = ClientState(client.user_id, code, client.items, client.ratings)
        flips += n_flip
        grad = compute_item_gradients(client, snapshot)
    if mode == "grad":
        return ClientResult(client.user_id, client.code, flips, gradient=grad,
                            upload_bytes=len(grad.to_bytes()))
    ids, rows = local_item_update(client, snapshot, hp.lam, hp.sweeps)
    return ClientResult(client.user_id, client.code, flips, item_rows=(ids, rows),
                        upload_bytes=len(encode_code_upload(client.user_id, ids, rows)))


def _client(split: SplitDataset, state: TrainState, u: int) -> ClientState:
    return ClientState(u, state.user_codes[u], split.user_items[u], split.user_ratings[u])


def run_round(state: TrainState, plan: RoundPlan, split: SplitDataset, hp: HyperParams,
              mode: str = "grad", workers: int = 1, order: str = "ascending") -> TrainState:
    """One global round; returns a new state (the input state is not modified).

    ``order`` only changes the scheduling of clients (``"ascending"``,
    ``"descending"``); it exists so tests can show the result ignores it.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if plan.round_index != state.round:
        raise ValueError(f"plan for round {plan.round_index} applied to state at round {state.round}")
    snapshot = state.items
    snapshot.flags.writeable = False
    schedule = list(plan.selected) if order == "ascending" else list(reversed(plan.selected))

    def job(u):
        return client_update(_client(split, state, u), snapshot, hp, mode)

    if workers > 1 and len(schedule) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, schedule))
    else:
        results = [job(u) for u in schedule]
    results.sort(key=lambda r: r.client_id)

    user_codes = state.user_codes.copy()
    user_flips = 0
    for res in results:
        user_flips += int(np.count_nonzero(user_codes[res.client_id] != res.code))
        user_codes[res.client_id] = res.code

    weights = None
    if hp.weighted:
        total = sum(len(split.user_items[r.client_id]) for r in results) or 1
        weights = {r.client_id: len(split.user_items[r.client_id]) / total for r in results}
    if mode == "grad":
        new_items, _ = aggregate_grad([r.gradient for r in results], snapshot, hp.lam, weights)
    else:
        uploads = [(r.client_id, r.item_rows) for r in results if len(r.item_rows[0])]
        new_items = aggregate_para(uploads, previous=snapshot) if uploads else snapshot.copy()
    new_items = np.array(new_items, dtype=np.int8)
    snapshot.flags.writeable = True

    item_flips = int(np.count_nonzero(new_items != snapshot))
    download = len(plan.selected) * ItemCodeMatrix.from_signs(snapshot).nbytes()
    record = {"round": plan.round_index + 1, "flips": user_flips + item_flips,
              "user_flips": user_flips, "item_flips": item_flips,
              "upload_bytes": sum(r.upload_bytes for r in results),
              "download_bytes": download, "clients": len(results)}
    return TrainState(new_items, user_codes, state.round + 1, state.history + [record])


def train_loss(state: TrainState, split: SplitDataset) -> float:
    tr = split.train
    return data_loss(state.user_codes, state.items, tr.users, tr.items, tr.unit)


@dataclass
class TrainResult:
    state: TrainState
    history: list

    @property
    def final_items(self) -> ItemCodeMatrix:
        return self.state.item_matrix()


def train(split: SplitDataset, hp: HyperParams, seed: int = 0, mode: str = "grad",
          workers: int = 1, eval_every: int = 1, early_stopping: bool = False,
          patience: int = 5, negatives: int = 99, k: int = 10,
          val_instances: EvalInstances | None = None,
          on_round: Callable[[TrainState], None] | None = None) -> TrainResult:
    """Run ``hp.T`` rounds (fewer with early stopping) and collect per-round metrics.

    Validation HR/NDCG are computed every ``eval_every`` rounds (0 disables);
    early stopping halts after ``patience`` evaluations without an HR gain.
    """
    state = init_state(split, hp, seed)
    if hp.T == 0:
        return TrainResult(state, [])
    if eval_every and val_instances is None:
        try:
            val_instances = build_instances(split, "validation", negatives, seed)
        except ValueError:
            log.warning("no validation instances; skipping validation metrics")
            eval_every = 0
    best, stale = -1.0, 0
    for t in range(hp.T):
        plan = select_clients(split.n, hp.p, t, seed)
        state = run_round(state, plan, split, hp, mode, workers)
        rec = state.history[-1]
        rec["loss"] = train_loss(state, split)
        rec["hr_at_10"] = rec["ndcg_at_10"] = float("nan")
        if eval_every and (t + 1) % eval_every == 0:
            rep = evaluate(hamming_scorer(state.user_codes, state.items),
                           instances=val_instances, k=k)
            rec["hr_at_10"], rec["ndcg_at_10"] = rep.hr_at_k, rep.ndcg_at_k
            if rep.hr_at_k > best:
                best, stale = rep.hr_at_k, 0
            else:
                stale += 1
        log.info("round %d loss=%.4f hr=%.4f flips=%d", rec["round"], rec["loss"],
                 rec["hr_at_10"], rec["flips"])
        if on_round is not None:
            on_round(state)
        if early_stopping and stale >= patience:
            log.info("early stop after round %d", rec["round"])
            break
    return TrainResult(state, state.history)


_CKPT = struct.Struct("<4sI")


def save_checkpoint(path, state: TrainState) -> None:
    items = ItemCodeMatrix.from_signs(state.items).to_bytes()
    users = ItemCodeMatrix.from_signs(state.user_codes).to_bytes()
    Path(path).write_bytes(_CKPT.pack(b"LFCK", state.round) + items + users)


def load_checkpoint(path) -> TrainState:
    blob = Path(path).read_bytes()
    magic, rnd = _CKPT.unpack_from(blob)
    if magic != b"LFCK":
        raise ValueError(f"{path}: not a LightFR checkpoint")
    items = ItemCodeMatrix.from_bytes(blob, _CKPT.size)
    users = ItemCodeMatrix.from_bytes(blob, _CKPT.size + items.serialized_size())
    return TrainState(items.signs(), users.signs(), rnd)


def write_metrics_csv(path, history: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        w.writeheader()
        for rec in history:
            w.writerow(rec)
