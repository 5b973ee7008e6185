"""Leave-out ranking evaluation: each held-out positive is ranked against sampled negatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .corpus import SplitDataset, sample_negatives

# scorer(users (B,), items (B, C)) -> scores (B, C); higher means more relevant
Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_NEGATIVES = 99


@dataclass
class MetricsReport:
    hr_at_k: float
    ndcg_at_k: float
    k: int
    evaluated_instances: int

    def as_dict(self) -> dict:
        return {"k": self.k, f"hr_at_{self.k}": self.hr_at_k,
                f"ndcg_at_{self.k}": self.ndcg_at_k,
                "evaluated_instances": self.evaluated_instances}


@dataclass
class EvalInstances:
    """One row per (user, held-out item); column 0 of ``candidates`` is the positive."""

    users: np.ndarray
    candidates: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return self.candidates[:, 0]

    def __len__(self):
        return len(self.users)


def build_instances(split: SplitDataset, part: str = "test",
                    negatives: int = DEFAULT_NEGATIVES, seed: int = 0) -> EvalInstances:
    """Fix the negative set of every (user, held-out item) pair of evaluable users.

    Negatives are drawn from items the user never rated in any split. Users are
    visited in ascending id with one generator, so the result depends only on
    the split and the seed.
    """
    ds = split.part(part)
    rng = np.random.default_rng([seed, 0xE7A1])
    bounds = np.searchsorted(ds.users, np.arange(split.n + 1))
    users, rows = [], []
    for u in range(split.n):
        lo, hi = bounds[u], bounds[u + 1]
        if lo == hi or not split.evaluable[u]:
            continue
        for pos in ds.items[lo:hi]:
            neg = sample_negatives(u, negatives, split, rng)
            users.append(u)
            rows.append(np.concatenate(([pos], neg)))
    if not users:
        raise ValueError(f"no evaluable users in the {part} split")
    return EvalInstances(np.asarray(users, dtype=np.int64), np.asarray(rows, dtype=np.int64))


def ranks_from_scores(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """1-based rank of column 0 in each row.

    Higher scores rank first; on equal scores the lower item id ranks first.
    """
    scores = np.asarray(scores)
    pos = scores[:, :1]
    pos_id = candidates[:, :1]
    ahead = (scores[:, 1:] > pos) | ((scores[:, 1:] == pos) & (candidates[:, 1:] < pos_id))
    return 1 + ahead.sum(axis=1)


def rank_of_positive(user: int, positive: int, negatives, scorer: Scorer) -> int:
    negatives = np.asarray(negatives, dtype=np.int64)
    if np.any(negatives == positive):
        raise ValueError("positive item appears among the negatives")
    cands = np.concatenate(([positive], negatives))[None, :]
    scores = scorer(np.array([user]), cands)
    return int(ranks_from_scores(scores, cands)[0])


def hr_at_k(ranks, k: int = 10) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no ranks to average")
    return float(np.mean(ranks <= k))


def ndcg_at_k(ranks, k: int = 10) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no ranks to average")
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def evaluate(scorer: Scorer, split: SplitDataset | None = None, k: int = 10,
             negatives: int = DEFAULT_NEGATIVES, seed: int = 0, part: str = "test",
             instances: EvalInstances | None = None, chunk: int = 2048) -> MetricsReport:
    """HR@k and NDCG@k averaged over all held-out instances."""
    if instances is None:
        if split is None:
            raise ValueError("need a split or prebuilt instances")
        instances = build_instances(split, part, negatives, seed)
    if len(instances) == 0:
        raise ValueError("no evaluation instances")
    ranks = np.empty(len(instances), dtype=np.int64)
    for lo in range(0, len(instances), chunk):
        sl = slice(lo, lo + chunk)
        scores = scorer(instances.users[sl], instances.candidates[sl])
        ranks[sl] = ranks_from_scores(scores, instances.candidates[sl])
    return MetricsReport(hr_at_k(ranks, k), ndcg_at_k(ranks, k), k, len(ranks))


def hamming_scorer(user_codes: np.ndarray, item_codes: np.ndarray) -> Scorer:
    """Scores are +/-1 inner products, i.e. an affine map of Hamming similarity."""
    U = np.asarray(user_codes, dtype=np.float32)
    D = np.asarray(item_codes, dtype=np.float32)

    def score(users, items):
        return np.einsum("bf,bcf->bc", U[users], D[items])
    return score


def inner_product_scorer(P: np.ndarray, Q: np.ndarray) -> Scorer:
    def score(users, items):
        return np.einsum("bf,bcf->bc", P[users], Q[items])
    return score


def random_scorer(seed: int = 0) -> Scorer:
    rng = np.random.default_rng(seed)

    def score(users, items):
        return rng.random(items.shape)
    return score


