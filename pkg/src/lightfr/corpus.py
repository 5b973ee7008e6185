"""Rating ingestion, unit normalization, chronological splits and negative sampling."""

from __future__ import annotations

import csv
import gzip
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

SPLITS = ("train", "validation", "test")


class DataFormatError(ValueError):
    """Raised for unreadable or malformed ratings files."""


class RatingTriple(NamedTuple):
    user_id: int
    item_id: int
    rating: float
    timestamp: int


@dataclass
class Dataset:
    """Column-oriented ratings with contiguous 0-based user and item ids.

    ``ratings`` holds raw-scale values; ``unit`` holds ``rating / rating_max``.
    ``user_ids`` / ``item_ids`` map internal indices back to the raw ids.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: np.ndarray
    n: int
    m: int
    rating_max: float
    rating_min: float
    user_ids: np.ndarray | None = None
    item_ids: np.ndarray | None = None

    def __post_init__(self):
        if not (len(self.users) == len(self.items) == len(self.ratings) == len(self.timestamps)):
            raise ValueError("column lengths differ")
        if len(self.users) and (self.users.max() >= self.n or self.items.max() >= self.m):
            raise ValueError("ids exceed declared n/m")

    @property
    def N(self) -> int:
        return len(self.users)

    @property
    def unit(self) -> np.ndarray:
        return normalize_rating(self.ratings, self.rating_max)

    def __len__(self):
        return self.N

    def __iter__(self):
        for u, i, r, t in zip(self.users, self.items, self.ratings, self.timestamps):
            yield RatingTriple(int(u), int(i), float(r), int(t))

    def subset(self, mask_or_index) -> "Dataset":
        return Dataset(self.users[mask_or_index], self.items[mask_or_index],
                       self.ratings[mask_or_index], self.timestamps[mask_or_index],
                       self.n, self.m, self.rating_max, self.rating_min,
                       self.user_ids, self.item_ids)

    def stats(self) -> dict:
        return {"n": self.n, "m": self.m, "N": self.N,
                "rating_min": self.rating_min, "rating_max": self.rating_max,
                "density": self.N / (self.n * self.m) if self.n and self.m else 0.0}


def _open_text(path: Path):
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _splitter(sep: str | None):
    if sep in (None, "", "whitespace"):
        return str.split
    if sep == "csv":
        return lambda line: next(csv.reader([line]))
    if sep == "tab":
        sep = "\t"
    if len(sep) > 1 and not sep.isalnum():
        pattern = re.compile(re.escape(sep))
        return pattern.split
    return lambda line: line.split(sep)


def load_ratings(path, sep: str | None = None, rating_max: float | None = None,
                 rating_min: float | None = None, skip_header: bool = False) -> Dataset:
    """Read ``user item rating [timestamp]`` lines into a :class:`Dataset`.

    ``sep`` is a literal delimiter (``"::"`` for MovieLens-1M), ``"csv"``,
    ``"tab"`` or ``None`` for whitespace. ``.gz`` files are decompressed.
    Users and items are reindexed in order of first appearance. A missing
    timestamp column is replaced by the line number, which keeps file order
    as chronological order. Duplicate (user, item) pairs keep the last line.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"ratings file not found: {path}")
    split = _splitter(sep)
    raw_u, raw_i, vals, stamps = [], [], [], []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and skip_header:
                continue
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = split(line)
            if len(fields) < 3:
                raise DataFormatError(f"{path}:{lineno}: expected user, item, rating[, timestamp]; got {line!r}")
            try:
                r = float(fields[2])
                t = int(float(fields[3])) if len(fields) > 3 and fields[3] else lineno
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            raw_u.append(fields[0].strip())
            raw_i.append(fields[1].strip())
            vals.append(r)
            stamps.append(t)
    if not vals:
        raise DataFormatError(f"{path}: no ratings found")

    user_ids, users = np.unique(np.array(raw_u), return_inverse=True)
    item_ids, items = np.unique(np.array(raw_i), return_inverse=True)
    # order of first appearance rather than lexical order
    users, user_ids = _first_appearance(users, user_ids)
    items, item_ids = _first_appearance(items, item_ids)
    ratings = np.asarray(vals, dtype=np.float64)
    timestamps = np.asarray(stamps, dtype=np.int64)

    pair = users.astype(np.int64) * len(item_ids) + items
    _, last = np.unique(pair[::-1], return_index=True)
    keep = np.sort(len(pair) - 1 - last)
    users, items, ratings, timestamps = users[keep], items[keep], ratings[keep], timestamps[keep]

    rmax = float(ratings.max()) if rating_max is None else float(rating_max)
    rmin = float(ratings.min()) if rating_min is None else float(rating_min)
    if rmax <= 0:
        raise DataFormatError(f"{path}: rating maximum must be positive, got {rmax}")
    bad = np.flatnonzero((ratings > rmax) | (ratings < rmin))
    if bad.size:
        raise DataFormatError(f"{path}: rating {ratings[bad[0]]} outside [{rmin}, {rmax}]")
    return Dataset(users.astype(np.int64), items.astype(np.int64), ratings, timestamps,
                   len(user_ids), len(item_ids), rmax, rmin, user_ids, item_ids)


def _first_appearance(inverse: np.ndarray, labels: np.ndarray):
    _, first = np.unique(inverse, return_index=True)
    order = np.argsort(first, kind="stable")  # old index sorted by first appearance
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[inverse], labels[order]


def normalize_rating(r, rating_max: float):
    """Map a raw rating onto the unit interval as ``r / rating_max``."""
    return np.asarray(r, dtype=np.float64) / rating_max if np.ndim(r) else float(r) / rating_max


def split_counts(total: int, fractions=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    """Train/validation/test sizes for one user's history.

    Validation gets ``floor(total * fv)``, test gets ``total * ft`` rounded half
    up (at least 1 unless ``ft`` is 0) and train keeps the remainder; below
    three interactions everything is train.
    """
    if total < 3:
        return total, 0, 0
    _, fv, ft = fractions
    n_test = max(1, int(np.floor(total * ft + 0.5))) if ft > 0 else 0
    n_val = int(np.floor(total * fv))
    if total - n_test - n_val < 1:
        n_val = max(0, total - n_test - 1)
    return total - n_val - n_test, n_val, n_test


@dataclass
class SplitDataset:
    train: Dataset
    validation: Dataset
    test: Dataset
    evaluable: np.ndarray  # bool per user
    # per-user train items (index arrays) and per-item train users
    user_items: list = field(default_factory=list)
    user_ratings: list = field(default_factory=list)
    item_users: list = field(default_factory=list)
    _interacted: list = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.train.n

    @property
    def m(self) -> int:
        return self.train.m

    def interacted(self, user: int) -> np.ndarray:
        """Sorted ids of every item the user rated in any split."""
        return self._interacted[user]

    def part(self, name: str) -> Dataset:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def manifest_rows(self, parts=SPLITS):
        for name in parts:
            ds = self.part(name)
            unit = ds.unit
            for idx in range(ds.N):
                yield (int(ds.users[idx]), int(ds.items[idx]), float(unit[idx]),
                       int(ds.timestamps[idx]), name)


def chronological_split(ds: Dataset, fractions=(0.8, 0.1, 0.1)) -> SplitDataset:
    """Per-user chronological split; ties in timestamp are ordered by item id."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    order = np.lexsort((ds.items, ds.timestamps, ds.users))
    users = ds.users[order]
    label = np.zeros(ds.N, dtype=np.int8)  # 0 train, 1 validation, 2 test
    evaluable = np.zeros(ds.n, dtype=bool)
    bounds = np.searchsorted(users, np.arange(ds.n + 1))
    for u in range(ds.n):
        lo, hi = bounds[u], bounds[u + 1]
        n_tr, n_va, n_te = split_counts(hi - lo, fractions)
        label[lo + n_tr: lo + n_tr + n_va] = 1
        label[lo + n_tr + n_va: hi] = 2
        evaluable[u] = n_te > 0
    sorted_ds = ds.subset(order)
    train, val, test = (sorted_ds.subset(label == s) for s in range(3))

    user_items, user_ratings = [], []
    tb = np.searchsorted(train.users, np.arange(ds.n + 1))
    unit = train.unit
    for u in range(ds.n):
        user_items.append(train.items[tb[u]:tb[u + 1]])
        user_ratings.append(unit[tb[u]:tb[u + 1]])
    by_item = np.argsort(train.items, kind="stable")
    ib = np.searchsorted(train.items[by_item], np.arange(ds.m + 1))
    item_users = [train.users[by_item[ib[i]:ib[i + 1]]] for i in range(ds.m)]
    interacted = [np.sort(sorted_ds.items[bounds[u]:bounds[u + 1]]) for u in range(ds.n)]
    return SplitDataset(train, val, test, evaluable, user_items, user_ratings, item_users, interacted)


def sample_negatives(user: int, count: int, split: SplitDataset, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` distinct items the user never rated in any split."""
    seen = split.interacted(user)
    available = split.m - len(seen)
    if count > available:
        raise ValueError(f"user {user}: asked for {count} negatives but only {available} unrated items exist")
    if count == 0:
        return np.empty(0, dtype=np.int64)
    if count * 4 < available:
        # rejection sampling is much cheaper than materializing the complement
        picked: list[int] = []
        taken = set(seen.tolist())
        while len(picked) < count:
            for c in rng.integers(0, split.m, size=2 * (count - len(picked))).tolist():
                if c not in taken:
                    taken.add(c)
                    picked.append(c)
                    if len(picked) == count:
                        break
        return np.asarray(picked, dtype=np.int64)
    candidates = np.setdiff1d(np.arange(split.m), seen, assume_unique=True)
    return rng.choice(candidates, size=count, replace=False).astype(np.int64)


def write_split_manifest(split: SplitDataset, path, parts=SPLITS) -> None:
    """CSV with columns user_id,item_id,unit_rating,timestamp,split."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "unit_rating", "timestamp", "split"])
        for row in split.manifest_rows(parts):
            w.writerow([row[0], row[1], repr(row[2]), row[3], row[4]])
