"""Rating recoverability from client uploads.

Real-valued protocol: with lam = 0 a client uploads g = (p.q - r) p for an
item it rated, so anyone who knows p and q reads off r = p.q - g_k / p_k.

Binary protocol: an upload is the per-bit gradient vector of one item. The
server knows the item code d but not the user code b. Enumerating every b
and solving each bit's equation for r shows which (b, r) pairs explain the
upload; (b, r) and (-b, 1 - r) always explain it equally well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discrete import ClientState, compute_item_gradients

MAX_ENUM_BITS = 16


@dataclass
class UploadTranscript:
    """Uploads of one client for one item over consecutive rounds.

    For ``binary_gradient`` each round is (gradient vector, item code d);
    for ``real_valued`` each round is (gradient vector, item vector q) and
    ``user_vector`` holds the known p.
    """

    protocol: str
    rounds: list
    user_vector: np.ndarray | None = None

    def __post_init__(self):
        if self.protocol not in ("real_valued", "binary_gradient"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if not self.rounds:
            raise ValueError("empty transcript")
        f = len(self.rounds[0][0])
        for g, d in self.rounds:
            if len(g) != f or len(d) != f:
                raise ValueError("payload dimensions do not match")


@dataclass
class FeasibleSet:
    codes: np.ndarray  # (K, f) +/-1 candidate user codes
    ratings: np.ndarray  # (K,) implied ratings
    candidates: list = field(init=False)

    def __post_init__(self):
        self.candidates = [(c, float(r)) for c, r in zip(self.codes, self.ratings)]

    def __len__(self):
        return len(self.ratings)

    def distinct_ratings(self, tol: float = 1e-9) -> np.ndarray:
        r = np.sort(self.ratings)
        if r.size == 0:
            return r
        keep = np.concatenate(([True], np.diff(r) > tol))
        return r[keep]

    def contains(self, code, rating: float, tol: float = 1e-9) -> bool:
        code = np.asarray(code)
        hit = np.all(self.codes == code[None, :], axis=1) & (np.abs(self.ratings - rating) <= tol)
        return bool(hit.any())


def real_gradient(p: np.ndarray, q: np.ndarray, r: float, lam: float = 0.0) -> np.ndarray:
    """Upload of the real-valued protocol for one (user, item) pair."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return (p @ q - r) * p + lam * q


def recover_rating_real(p, q, g, k: int | None = None) -> float:
    """Invert a lam = 0 upload: r = p.q - g_k / p_k.

    ``k`` picks the probed dimension; by default the one with the largest |p_k|.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if k is None:
        k = int(np.argmax(np.abs(p)))
    if p[k] == 0:
        raise ZeroDivisionError(f"user vector is zero in dimension {k}; the attack needs p_k != 0")
    return float(p @ q - g[k] / p[k])


def all_codes(f: int) -> np.ndarray:
    if f > MAX_ENUM_BITS:
        raise ValueError(f"enumeration limited to f <= {MAX_ENUM_BITS}, got {f}")
    bits = (np.arange(2 ** f)[:, None] >> np.arange(f)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


def implied_ratings(codes: np.ndarray, grad: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Per-bit rating implied by each candidate code: (K, f)."""
    f = len(d)
    B = codes.astype(np.float64)
    d = np.asarray(d, dtype=np.float64)
    s = B @ d
    rest = s[:, None] - B * d[None, :]
    return np.asarray(grad, dtype=np.float64)[None, :] * B + 0.5 + rest / (2 * f)


def feasible_ratings_binary(grad, d, grid=None, tol: float = 1e-9,
                            transcript: UploadTranscript | None = None) -> FeasibleSet:
    """All (code, rating) pairs consistent with the observed gradient upload(s).

    A candidate code is kept when every bit implies the same rating (to
    ``tol``) and that rating lies in [0, 1]. With a multi-round transcript the
    code must explain every round with one common rating. ``grid`` optionally
    restricts ratings to the given values.
    """
    rounds = transcript.rounds if transcript is not None else [(grad, d)]
    f = len(rounds[0][1])
    codes = all_codes(f)
    ok = np.ones(len(codes), dtype=bool)
    rating = None
    for g, dd in rounds:
        R = implied_ratings(codes, g, dd)
        r_mean = R.mean(axis=1)
        ok &= (R.max(axis=1) - R.min(axis=1)) <= tol
        if rating is None:
            rating = r_mean
        else:
            ok &= np.abs(r_mean - rating) <= tol
    ok &= (rating >= -tol) & (rating <= 1 + tol)
    if grid is not None:
        grid = np.asarray(grid, dtype=np.float64)
        ok &= np.min(np.abs(rating[:, None] - grid[None, :]), axis=1) <= tol
    return FeasibleSet(codes[ok], rating[ok])


def regenerate_upload(code, rating: float, d) -> np.ndarray:
    client = ClientState(0, code, [0], [rating])
    return compute_item_gradients(client, np.asarray(d, dtype=np.int8)[None, :]).grads[0]


def ambiguity_rate(trials: int, f: int = 12, rating_grid=(0.2, 0.4, 0.6, 0.8, 1.0),
                   seed: int = 0, return_examples: int = 0):
    """Fraction of random single-upload trials that leave >= 2 distinct feasible ratings.

    True ratings are drawn from ``rating_grid``; the feasible set itself is
    searched over all ratings in [0, 1].
    """
    if trials <= 0:
        raise ValueError("need at least one trial")
    if f > MAX_ENUM_BITS:
        raise ValueError(f"f must be <= {MAX_ENUM_BITS}")
    rng = np.random.default_rng([seed, 0xB1])
    pm = np.array([-1, 1], dtype=np.int8)
    grid = np.asarray(rating_grid, dtype=np.float64)
    ambiguous = 0
    examples = []
    for _ in range(trials):
        b = rng.choice(pm, size=f)
        d = rng.choice(pm, size=f)
        r = float(rng.choice(grid))
        g = regenerate_upload(b, r, d)
        fs = feasible_ratings_binary(g, d)
        if len(fs.distinct_ratings()) >= 2:
            ambiguous += 1
        if len(examples) < return_examples:
            examples.append({"true_rating": r, "true_code": b.tolist(),
                             "feasible": [{"code": c.tolist(), "rating": rr} for c, rr in fs.candidates]})
    rate = ambiguous / trials
    return (rate, examples) if return_examples else rate


def real_attack_errors(trials: int, f: int = 32, seed: int = 0) -> np.ndarray:
    """Absolute recovery errors of the real-valued attack on random uploads."""
    rng = np.random.default_rng([seed, 0xA7])
    errs = np.empty(trials)
    for t in range(trials):
        p = rng.normal(size=f)
        q = rng.normal(size=f)
        r = float(rng.uniform(0, 1))
        errs[t] = abs(recover_rating_real(p, q, real_gradient(p, q, r)) - r)
    return errs


def privacy_report(trials: int = 1000, f: int = 12, rating_grid=(0.2, 0.4, 0.6, 0.8, 1.0),
                   seed: int = 0, examples: int = 2, attack_demo: int = 5) -> dict:
    rate, ex = ambiguity_rate(trials, f, rating_grid, seed, return_examples=max(examples, 1))
    errs = real_attack_errors(trials, seed=seed)
    rng = np.random.default_rng([seed, 0xDE])
    demo = []
    for _ in range(attack_demo):
        p, q = rng.normal(size=8), rng.normal(size=8)
        r = float(rng.choice(np.asarray(rating_grid)))
        demo.append({"true_rating": r, "recovered_rating": recover_rating_real(p, q, real_gradient(p, q, r))})
    return {
        "protocol": "binary_gradient",
        "trials": trials,
        "f": f,
        "ambiguity_rate": rate,
        "example_feasible_sets": ex[:examples],
        "real_valued": {"protocol": "real_valued", "trials": trials,
                        "max_recovery_error": float(errs.max()), "demo": demo},
    }
