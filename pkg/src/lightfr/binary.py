"""Bit-packed +/-1 codes, Hamming similarity and linear-scan top-k retrieval.

A code of length ``f`` is stored as ``f // 8`` bytes; component ``k`` lives in
bit ``k % 8`` of byte ``k // 8`` (little-endian bit order) and a set bit means
``+1``. Popcount over XOR-ed words gives the Hamming distance ``h`` and the
+/-1 inner product is ``f - 2h``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

SUPPORTED_CODE_LENGTHS = (8, 16, 32, 64, 128)

_MAGIC = b"LFRB"
_HEADER = struct.Struct("<4sIQ")


def check_code_length(f: int) -> int:
    if f not in SUPPORTED_CODE_LENGTHS:
        raise ValueError(f"code length must be one of {SUPPORTED_CODE_LENGTHS}, got {f}")
    return f


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack a (..., f) array of +/-1 values into (..., f // 8) uint8 bytes."""
    signs = np.asarray(signs)
    if signs.shape[-1] % 8:
        raise ValueError(f"code length {signs.shape[-1]} is not a multiple of 8")
    return np.packbits(signs > 0, axis=-1, bitorder="little")


def unpack_bits(packed: np.ndarray, f: int) -> np.ndarray:
    """Inverse of :func:`pack_signs`; returns int8 values in {-1, +1}."""
    bits = np.unpackbits(np.asarray(packed, dtype=np.uint8), axis=-1, count=f, bitorder="little")
    return (bits.astype(np.int8) << 1) - 1


def _as_words(packed: np.ndarray) -> np.ndarray:
    # widest unsigned view that divides the row width; popcount is per word
    nbytes = packed.shape[-1]
    for width, dtype in ((8, "<u8"), (4, "<u4"), (2, "<u2")):
        if nbytes % width == 0:
            return np.ascontiguousarray(packed).view(dtype)
    return packed


@dataclass(frozen=True)
class BinaryCode:
    bits: np.ndarray  # uint8, length f // 8
    f: int

    def __post_init__(self):
        if self.bits.shape != (self.f // 8,):
            raise ValueError(f"expected {self.f // 8} packed bytes, got shape {self.bits.shape}")

    @classmethod
    def from_signs(cls, signs) -> "BinaryCode":
        signs = np.asarray(signs)
        return cls(pack_signs(signs), signs.shape[-1])

    def signs(self) -> np.ndarray:
        return unpack_bits(self.bits, self.f)

    def complement(self) -> "BinaryCode":
        return BinaryCode(np.bitwise_not(self.bits), self.f)

    def __eq__(self, other):
        if not isinstance(other, BinaryCode):
            return NotImplemented
        return self.f == other.f and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.f, self.bits.tobytes()))

    def __repr__(self):
        return f"BinaryCode(f={self.f}, {to_text(self.signs()[None, :]).strip()})"


class ItemCodeMatrix:
    """m codes of a shared length f, stored as a contiguous (m, f // 8) byte array."""

    def __init__(self, packed: np.ndarray, f: int):
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        check_code_length(f)
        if packed.ndim != 2 or packed.shape[1] != f // 8:
            raise ValueError(f"packed matrix must have shape (m, {f // 8}), got {packed.shape}")
        self.packed = packed
        self.f = f

    @classmethod
    def from_signs(cls, signs) -> "ItemCodeMatrix":
        signs = np.asarray(signs)
        return cls(pack_signs(signs), signs.shape[1])

    @property
    def m(self) -> int:
        return self.packed.shape[0]

    def __len__(self):
        return self.m

    def __getitem__(self, i: int) -> BinaryCode:
        return BinaryCode(self.packed[i].copy(), self.f)

    def signs(self) -> np.ndarray:
        return unpack_bits(self.packed, self.f)

    def words(self) -> np.ndarray:
        return _as_words(self.packed)

    def nbytes(self) -> int:
        return self.packed.nbytes

    def __eq__(self, other):
        if not isinstance(other, ItemCodeMatrix):
            return NotImplemented
        return self.f == other.f and np.array_equal(self.packed, other.packed)

    def to_bytes(self) -> bytes:
        return _HEADER.pack(_MAGIC, self.f, self.m) + self.packed.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes, offset: int = 0) -> "ItemCodeMatrix":
        magic, f, m = _HEADER.unpack_from(blob, offset)
        if magic != _MAGIC:
            raise ValueError("not a binary code matrix (bad magic)")
        start = offset + _HEADER.size
        n = m * (f // 8)
        if len(blob) < start + n:
            raise ValueError("truncated code matrix")
        packed = np.frombuffer(blob, dtype=np.uint8, count=n, offset=start).reshape(m, f // 8)
        return cls(packed.copy(), f)

    def serialized_size(self) -> int:
        return _HEADER.size + self.packed.nbytes

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ItemCodeMatrix":
        return cls.from_bytes(Path(path).read_bytes())


def to_text(signs: np.ndarray) -> str:
    """Debug form: one row per code, '+' and '-' per component."""
    signs = np.atleast_2d(signs)
    return "".join("".join("+" if v > 0 else "-" for v in row) + "\n" for row in signs)


def from_text(text: str) -> np.ndarray:
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    return np.array([[1 if ch == "+" else -1 for ch in row] for row in rows], dtype=np.int8)


def _check_pair(a: BinaryCode, b: BinaryCode) -> None:
    if a.f != b.f:
        raise ValueError(f"code length mismatch: {a.f} != {b.f}")


def hamming_distance(a: BinaryCode, b: BinaryCode) -> int:
    _check_pair(a, b)
    return int(np.bitwise_count(np.bitwise_xor(a.bits, b.bits)).sum())


def dot_pm1(a: BinaryCode, b: BinaryCode) -> int:
    """+/-1 inner product of two codes, computed as f - 2 * hamming distance."""
    return a.f - 2 * hamming_distance(a, b)


def hamming_similarity(a: BinaryCode, b: BinaryCode) -> float:
    return 0.5 + dot_pm1(a, b) / (2 * a.f)


def hamming_distances(query: BinaryCode, items: ItemCodeMatrix) -> np.ndarray:
    if query.f != items.f:
        raise ValueError(f"code length mismatch: {query.f} != {items.f}")
    q = _as_words(query.bits[None, :])
    x = np.bitwise_xor(items.words(), q)
    counts = np.bitwise_count(x)
    if counts.shape[1] == 1:
        return counts[:, 0]
    return counts.sum(axis=1, dtype=np.uint16)


def _check_k(k: int, m: int, excluded: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > m - excluded:
        raise ValueError(f"k={k} exceeds the {m - excluded} available candidates")


def _exclusion(exclude: Iterable[int] | None, m: int) -> np.ndarray:
    if exclude is None:
        return np.empty(0, dtype=np.int64)
    ex = np.unique(np.fromiter(exclude, dtype=np.int64))
    return ex[(ex >= 0) & (ex < m)]


def top_k_hamming(query: BinaryCode, items: ItemCodeMatrix, k: int,
                  exclude: Iterable[int] | None = None) -> list[tuple[int, float]]:
    """Top-k items by Hamming similarity, ties broken by ascending item id.

    Distances are small integers, so the cutoff distance is found with a
    histogram and the survivors are collected in id order; no comparison sort
    over all m items is needed.
    """
    f = items.f
    ex = _exclusion(exclude, items.m)
    _check_k(k, items.m, ex.size)
    dist = hamming_distances(query, items).astype(np.int32, copy=False)
    if ex.size:
        dist = dist.copy()
        dist[ex] = f + 1
    hist = np.bincount(dist, minlength=f + 2)
    cutoff = int(np.searchsorted(np.cumsum(hist), k))
    ids = np.flatnonzero(dist <= cutoff)
    # stable sort keeps ascending id within equal distance
    ids = ids[np.argsort(dist[ids], kind="stable")][:k]
    sims = 1.0 - dist[ids] / f
    return [(int(i), float(s)) for i, s in zip(ids, sims)]


def top_k_inner(query: np.ndarray, items: np.ndarray, k: int,
                exclude: Iterable[int] | None = None) -> list[tuple[int, float]]:
    """Top-k items by inner product score, ties broken by ascending item id."""
    items = np.asarray(items, dtype=np.float64)
    m = items.shape[0]
    ex = _exclusion(exclude, m)
    _check_k(k, m, ex.size)
    scores = items @ np.asarray(query, dtype=np.float64)
    if ex.size:
        scores[ex] = -np.inf
    if k < m:
        part = np.argpartition(-scores, k - 1)[:k]
        # pull in every item tied with the k-th score so id tie-breaks stay exact
        kth = scores[part].min()
        part = np.flatnonzero(scores >= kth)
    else:
        part = np.arange(m)
    order = np.lexsort((part, -scores[part]))[:k]
    ids = part[order]
    return [(int(i), float(scores[i])) for i in ids]
