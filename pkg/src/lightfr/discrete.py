"""Discrete coordinate descent for binary matrix factorization.

Client side: bit-wise user code updates and per-item gradients. Server side:
gradient aggregation (``aggregate_grad``) and majority vote over locally
updated item codes (``aggregate_para``). Codes are handled as dense int8
arrays of +/-1 here; :class:`~lightfr.binary.ItemCodeMatrix` inputs are
unpacked on entry.

The per-client objective is

    sum_i (r_ui - sim(b_u, d_i))**2 + lam * (sum_k b_uk)**2,
    sim(b, d) = 1/2 + b.d / (2f),

and the score of bit k is the coefficient ``s`` in ``loss = const - b_k * s``,
so ``sign(s)`` minimizes over that bit with the others fixed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .binary import BinaryCode, ItemCodeMatrix, SUPPORTED_CODE_LENGTHS


@dataclass
class HyperParams:
    f: int = 64
    lam: float = 0.2
    T: int = 50
    E: int = 1
    p: float = 0.6
    sweeps: int = 1
    weighted: bool = False

    def __post_init__(self):
        if self.f not in SUPPORTED_CODE_LENGTHS:
            raise ValueError(f"f must be one of {SUPPORTED_CODE_LENGTHS}")
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.T < 0 or self.E < 1 or self.sweeps < 1:
            raise ValueError("need T >= 0, E >= 1, sweeps >= 1")


@dataclass
class ClientState:
    user_id: int
    code: np.ndarray  # int8 +/-1, length f
    items: np.ndarray  # int64 item ids of the local ratings
    ratings: np.ndarray  # unit-scale ratings aligned with ``items``

    def __post_init__(self):
        self.code = np.asarray(self.code, dtype=np.int8)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.ratings = np.asarray(self.ratings, dtype=np.float64)
        if len(self.items) != len(self.ratings):
            raise ValueError("items and ratings differ in length")
        if len(np.unique(self.items)) != len(self.items):
            raise ValueError(f"client {self.user_id}: duplicate local items")

    @property
    def f(self) -> int:
        return len(self.code)

    def binary_code(self) -> BinaryCode:
        return BinaryCode.from_signs(self.code)


_GU_HEADER = struct.Struct("<qq")


@dataclass
class GradientUpdate:
    """Sparse item-gradient payload of one client: one f-vector per rated item."""

    client_id: int
    item_ids: np.ndarray
    grads: np.ndarray  # (len(item_ids), f) float64
    f: int = 0

    def __post_init__(self):
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        grads = np.asarray(self.grads, dtype=np.float64)
        if grads.size == 0:
            width = self.f or (grads.shape[-1] if grads.ndim == 2 else 0)
            self.grads = grads.reshape(0, width)
        else:
            self.grads = grads.reshape(len(self.item_ids), -1)
        if not self.f:
            self.f = self.grads.shape[1]

    @property
    def entries(self) -> dict[int, np.ndarray]:
        return {int(i): g for i, g in zip(self.item_ids, self.grads)}

    def __len__(self):
        return len(self.item_ids)

    def to_bytes(self) -> bytes:
        rec = np.dtype([("item", "<i8"), ("grad", "<f8", (self.f,))])
        body = np.empty(len(self.item_ids), dtype=rec)
        body["item"] = self.item_ids
        body["grad"] = self.grads
        return _GU_HEADER.pack(self.client_id, len(self.item_ids)) + body.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, f: int | None = None) -> "GradientUpdate":
        client_id, count = _GU_HEADER.unpack_from(blob)
        payload = len(blob) - _GU_HEADER.size
        if count:
            f_blob, rem = divmod(payload // count - 8, 8)
            if rem or payload % count or (f is not None and f != f_blob):
                raise ValueError("gradient payload size does not match its header")
            f = f_blob
        rec = np.dtype([("item", "<i8"), ("grad", "<f8", (f or 0,))])
        body = np.frombuffer(blob, dtype=rec, count=count, offset=_GU_HEADER.size)
        return cls(client_id, body["item"].copy(), body["grad"].copy().reshape(count, f or 0), f or 0)

    def serialized_size(self) -> int:
        return _GU_HEADER.size + len(self.item_ids) * 8 * (1 + self.f)


def as_signs(items) -> np.ndarray:
    if isinstance(items, ItemCodeMatrix):
        return items.signs()
    return np.asarray(items, dtype=np.int8)


def _like(template, signs: np.ndarray):
    return ItemCodeMatrix.from_signs(signs) if isinstance(template, ItemCodeMatrix) else signs


def _local_items(client: ClientState, D: np.ndarray) -> np.ndarray:
    if len(client.items) and (client.items.min() < 0 or client.items.max() >= len(D)):
        raise KeyError(f"client {client.user_id} rates items missing from the code matrix")
    if D.shape[1] != client.f:
        raise ValueError(f"code length mismatch: client {client.f}, items {D.shape[1]}")
    return D[client.items].astype(np.int64)


def local_loss(client: ClientState, items, lam: float) -> float:
    D = _local_items(client, as_signs(items))
    b = client.code.astype(np.int64)
    f = client.f
    sim = 0.5 + (D @ b) / (2 * f)
    return float(np.sum((client.ratings - sim) ** 2) + lam * float(b.sum()) ** 2)


def _bit_score(Dk: np.ndarray, rest: np.ndarray, ratings: np.ndarray, f: int,
               others_sum: int, lam: float) -> float:
    # Dk: column k of the partner codes; rest: partner.code dot products without bit k
    data = float(np.sum((ratings - 0.5 - rest / (2 * f)) * Dk)) / f
    return data - 2.0 * lam * others_sum


def user_bit_score(client: ClientState, items, k: int, lam: float) -> float:
    """Coordinate score of bit k; the loss-minimizing bit value is its sign."""
    D = _local_items(client, as_signs(items))
    b = client.code.astype(np.int64)
    if not 0 <= k < client.f:
        raise IndexError(f"bit index {k} out of range for f={client.f}")
    s = D @ b
    rest = s - D[:, k] * b[k]
    return _bit_score(D[:, k], rest, client.ratings, client.f, int(b.sum() - b[k]), lam)


def _dcd(code: np.ndarray, partners: np.ndarray, ratings: np.ndarray, lam: float,
         sweeps: int) -> tuple[np.ndarray, int]:
    """Bit-by-bit sign updates of ``code`` against fixed +/-1 ``partners``."""
    b = code.astype(np.int64)
    f = len(b)
    s = partners @ b
    total = int(b.sum())
    flips = 0
    for _ in range(sweeps):
        for k in range(f):
            col = partners[:, k]
            bk = int(b[k])
            score = _bit_score(col, s - col * bk, ratings, f, total - bk, lam)
            if score == 0.0:
                continue
            new = 1 if score > 0 else -1
            if new != bk:
                b[k] = new
                s += col * (new - bk)
                total += new - bk
                flips += 1
    return b.astype(np.int8), flips


def local_user_update(client: ClientState, items, lam: float, sweeps: int = 1) -> tuple[np.ndarray, int]:
    """Run ``sweeps`` coordinate passes over the user code; returns (code, flips).

    A bit whose score is exactly zero keeps its value.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    D = _local_items(client, as_signs(items))
    return _dcd(client.code, D, client.ratings, lam, sweeps)


def local_user_update_until_stable(client: ClientState, items, lam: float,
                                   max_sweeps: int = 100) -> tuple[np.ndarray, int, int]:
    """Sweep until a full pass flips nothing; returns (code, total flips, sweeps used)."""
    D = _local_items(client, as_signs(items))
    code, total = client.code, 0
    for used in range(1, max_sweeps + 1):
        code, flips = _dcd(code, D, client.ratings, lam, 1)
        total += flips
        if flips == 0:
            return code, total, used
    return code, total, max_sweeps


def compute_item_gradients(client: ClientState, items) -> GradientUpdate:
    """Per-item, per-bit gradients against the downloaded (unmodified) item codes."""
    D = _local_items(client, as_signs(items))
    b = client.code.astype(np.int64)
    f = client.f
    s = D @ b
    rest = s[:, None] - D * b[None, :]
    grads = (client.ratings[:, None] - 0.5 - rest / (2 * f)) * b[None, :]
    return GradientUpdate(client.user_id, client.items.copy(), grads, f)


def _check_updates(updates: Sequence[GradientUpdate], f: int) -> list[GradientUpdate]:
    for up in updates:
        if len(up) and up.grads.shape[1] != f:
            raise ValueError(f"client {up.client_id}: gradient length {up.grads.shape[1]} != f={f}")
    return sorted(updates, key=lambda u: u.client_id)


def sum_gradients(updates: Sequence[GradientUpdate], m: int, f: int,
                  weights: Mapping[int, float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sum item gradients in ascending client id; returns (sums (m, f), touch counts (m,))."""
    ordered = _check_updates(updates, f)
    G = np.zeros((m, f), dtype=np.float64)
    touches = np.zeros(m, dtype=np.int64)
    nonempty = [u for u in ordered if len(u)]
    if not nonempty:
        return G, touches
    ids = np.concatenate([u.item_ids for u in nonempty])
    if weights is None:
        grads = np.concatenate([u.grads for u in nonempty])
    else:
        grads = np.concatenate([u.grads * weights.get(u.client_id, 1.0) for u in nonempty])
    if ids.min() < 0 or ids.max() >= m:
        raise KeyError("gradient for an item outside the code matrix")
    np.add.at(G, ids, grads)  # unbuffered, applied in index order
    np.add.at(touches, ids, 1)
    return G, touches


def _sign_sweep(Dt: np.ndarray, G: np.ndarray, lam: float, f: int) -> None:
    # in-place bit-by-bit update of the rows Dt; G already summed over clients
    Dt64 = Dt.astype(np.int64)
    total = Dt64.sum(axis=1)
    for k in range(f):
        old = Dt64[:, k]
        score = G[:, k] / f - 2.0 * lam * (total - old)
        new = np.where(score > 0, 1, np.where(score < 0, -1, old))
        total += new - old
        Dt64[:, k] = new
    Dt[:] = Dt64


def aggregate_grad(updates: Sequence[GradientUpdate], items, lam: float,
                   weights: Mapping[int, float] | None = None):
    """Server update of every item touched by at least one client gradient.

    Bits are re-signed in order k = 0..f-1 with the balance term computed from
    the current (partially updated) row. Untouched items are returned as is.
    Returns (new items, touch counts); the item container type is preserved.
    """
    D = as_signs(items)
    m, f = D.shape
    G, touches = sum_gradients(updates, m, f, weights)
    new = D.copy()
    touched = np.flatnonzero(touches)
    if touched.size:
        rows = new[touched]
        _sign_sweep(rows, G[touched], lam, f)
        new[touched] = rows
    return _like(items, new), touches


def local_item_update(client: ClientState, items, lam: float, sweeps: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Client-side item code update used before parameter aggregation.

    Each rated item is fitted to this client's (b_u, r_ui) by the same
    coordinate rule as the user code. Returns (item ids, updated rows).
    """
    D = _local_items(client, as_signs(items))
    return client.items.copy(), _dcd_rows(D, client.code.astype(np.int64), client.ratings, lam, sweeps)


def _dcd_rows(rows: np.ndarray, partner: np.ndarray, ratings: np.ndarray, lam: float,
              sweeps: int) -> np.ndarray:
    """Coordinate descent of many codes, each against one partner and one rating.

    Row j ends up as ``_dcd(rows[j], partner[None], ratings[j:j+1], lam, sweeps)``
    would leave it; the bit loop runs once for all rows.
    """
    R = rows.astype(np.int64)
    f = R.shape[1]
    s = R @ partner
    total = R.sum(axis=1)
    for _ in range(sweeps):
        for k in range(f):
            col = R[:, k].copy()
            pk = int(partner[k])
            data = (ratings - 0.5 - (s - col * pk) / (2 * f)) * pk / f
            score = data - 2.0 * lam * (total - col)
            new = np.where(score > 0, 1, np.where(score < 0, -1, col))
            s += (new - col) * pk
            total += new - col
            R[:, k] = new
    return R.astype(np.int8)


def aggregate_para(local_matrices: Iterable, previous=None):
    """Majority vote over item codes uploaded by clients.

    Each element is ``(client_id, ItemCodeMatrix | (m, f) array)`` for a full
    matrix, or ``(client_id, (item_ids, rows))`` for a partial upload. A bit
    whose vote sums to zero keeps its value in ``previous``; items nobody
    uploaded are copied from ``previous``.
    """
    uploads = sorted(local_matrices, key=lambda x: x[0])
    if not uploads:
        if previous is None:
            raise ValueError("no uploads and no previous matrix")
        return previous
    prev = as_signs(previous) if previous is not None else None
    votes = None
    shape = prev.shape if prev is not None else None
    for cid, payload in uploads:
        if isinstance(payload, tuple):
            ids, rows = np.asarray(payload[0], dtype=np.int64), np.asarray(payload[1], dtype=np.int64)
            if shape is None:
                raise ValueError("partial uploads need the previous matrix")
            if rows.shape != (len(ids), shape[1]):
                raise ValueError(f"client {cid}: upload shape {rows.shape} does not match f={shape[1]}")
            if votes is None:
                votes = np.zeros(shape, dtype=np.int64)
            np.add.at(votes, ids, rows)
        else:
            full = as_signs(payload).astype(np.int64)
            if shape is None:
                shape = full.shape
            if full.shape != shape:
                raise ValueError(f"client {cid}: matrix shape {full.shape} != {shape}")
            if votes is None:
                votes = np.zeros(shape, dtype=np.int64)
            votes += full
    if prev is None:
        if np.any(votes == 0):
            raise ValueError("tied vote without a previous matrix to fall back on")
        prev = np.zeros(shape, dtype=np.int8)
    new = np.where(votes > 0, 1, np.where(votes < 0, -1, prev)).astype(np.int8)
    template = previous if previous is not None else uploads[0][1]
    return _like(template, new)


def cold_start_user(new_client: ClientState, items, sweeps: int = 1) -> np.ndarray:
    """Fit the code of a client that joins after training; no balance term."""
    if len(new_client.items) == 0:
        raise ValueError(f"client {new_client.user_id} has no ratings; "
                         "zero-interaction cold start needs side information")
    code, _ = local_user_update(new_client, items, 0.0, sweeps)
    return code


def cold_start_item(updates: Sequence[GradientUpdate], items, item_id: int) -> np.ndarray:
    """Code of a newly added item from the gradients clients computed for it."""
    D = as_signs(items)
    m, f = D.shape
    relevant = []
    for up in updates:
        mask = up.item_ids == item_id
        if mask.any():
            relevant.append(GradientUpdate(up.client_id, up.item_ids[mask], up.grads[mask], f))
    if not relevant:
        raise ValueError(f"no client gradients for item {item_id}")
    G, _ = sum_gradients(relevant, m, f)
    row = D[item_id:item_id + 1].copy()
    _sign_sweep(row, G[item_id:item_id + 1], 0.0, f)
    return row[0]


def data_loss(user_codes: np.ndarray, items, users: np.ndarray, item_idx: np.ndarray,
              ratings: np.ndarray) -> float:
    """Squared reconstruction error summed over (user, item, rating) triples."""
    D = as_signs(items)
    f = D.shape[1]
    dots = np.einsum("ij,ij->i", user_codes[users].astype(np.int64), D[item_idx].astype(np.int64))
    return float(np.sum((ratings - (0.5 + dots / (2 * f))) ** 2))
