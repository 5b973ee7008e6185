import numpy as np
import pytest

from lightfr.corpus import Dataset, chronological_split

PM = np.array([-1, 1], dtype=np.int8)


def random_signs(rng, *shape):
    return rng.choice(PM, size=shape)


def make_dataset(triples, rating_max=1.0, n=None, m=None):
    """Dataset from (user, item, rating, timestamp) tuples with 0-based ids."""
    arr = np.asarray(triples, dtype=np.float64).reshape(-1, 4)
    users = arr[:, 0].astype(np.int64)
    items = arr[:, 1].astype(np.int64)
    n = int(users.max()) + 1 if n is None else n
    m = int(items.max()) + 1 if m is None else m
    return Dataset(users, items, arr[:, 2], arr[:, 3].astype(np.int64), n, m,
                   rating_max, float(arr[:, 2].min()))


def synthetic_ratings(n, m, per_user, seed, rating_max=5):
    """Ratings with latent structure: users like items of their own cluster."""
    rng = np.random.default_rng(seed)
    clusters = 4
    uc = rng.integers(0, clusters, n)
    ic = rng.integers(0, clusters, m)
    rows = []
    for u in range(n):
        cnt = min(m, per_user + int(rng.integers(0, per_user)))
        same = np.flatnonzero(ic == uc[u])
        other = np.flatnonzero(ic != uc[u])
        k_same = min(len(same), int(cnt * 0.7))
        picked = np.concatenate([rng.choice(same, k_same, replace=False),
                                 rng.choice(other, cnt - k_same, replace=False)])
        for t, i in enumerate(rng.permutation(picked)):
            r = rating_max if ic[i] == uc[u] else int(rng.integers(1, 3))
            rows.append((u, int(i), float(r), t * 10 + u))
    return make_dataset(rows, rating_max, n, m)


@pytest.fixture(scope="session")
def small_split():
    return chronological_split(synthetic_ratings(60, 80, 12, seed=3))


@pytest.fixture(scope="session")
def toy_split():
    # 3 users, 3 items: each user rates their own item 1.0 and the others 0.0
    rows = [(u, i, 1.0 if u == i else 0.0, 3 * u + i) for u in range(3) for i in range(3)]
    ds = make_dataset(rows, rating_max=1.0)
    return chronological_split(ds, fractions=(1.0, 0.0, 0.0))


# acceptance results, printed once at the end of the run
ACCEPTANCE: dict = {}


def record(number, name, status, detail=""):
    ACCEPTANCE[number] = (name, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{number}] {status:<7} {name}: {detail}")
