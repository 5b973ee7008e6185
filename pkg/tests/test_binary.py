import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightfr.binary import (BinaryCode, ItemCodeMatrix, dot_pm1, from_text, hamming_distance,
                            hamming_distances, hamming_similarity, pack_signs, to_text,
                            top_k_hamming, top_k_inner, unpack_bits)

from conftest import random_signs

LENGTHS = (8, 16, 32, 64, 128)


def code(signs):
    return BinaryCode.from_signs(np.asarray(signs, dtype=np.int8))


def naive_sim(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return 0.5 + (a @ b) / (2 * len(a))


@st.composite
def sign_vectors(draw, f=None):
    f = draw(st.sampled_from(LENGTHS)) if f is None else f
    return np.array(draw(st.lists(st.sampled_from([-1, 1]), min_size=f, max_size=f)), dtype=np.int8)


@st.composite
def sign_pairs(draw):
    f = draw(st.sampled_from(LENGTHS))
    return draw(sign_vectors(f)), draw(sign_vectors(f))


class TestDot:
    def test_identity(self):
        c = code(np.ones(64))
        assert dot_pm1(c, c) == 64

    def test_antipodal(self):
        rng = np.random.default_rng(0)
        c = code(random_signs(rng, 64))
        assert dot_pm1(c, c.complement()) == -64

    def test_three_bits_differ(self):
        a = np.ones(8, dtype=np.int8)
        b = a.copy()
        b[[1, 4, 7]] = -1
        assert hamming_distance(code(a), code(b)) == 3
        assert dot_pm1(code(a), code(b)) == 2

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            dot_pm1(code(np.ones(8)), code(np.ones(16)))
        with pytest.raises(ValueError):
            hamming_similarity(code(np.ones(8)), code(np.ones(16)))

    @pytest.mark.parametrize("f", [8, 64, 128])
    def test_popcount_matches_naive_dot(self, f):
        rng = np.random.default_rng(f)
        for _ in range(1000):
            a, b = random_signs(rng, f), random_signs(rng, f)
            d = dot_pm1(code(a), code(b))
            assert d == int(a.astype(np.int64) @ b)
            assert d % 2 == f % 2


class TestSimilarity:
    def test_identical(self):
        c = code(random_signs(np.random.default_rng(1), 32))
        assert hamming_similarity(c, c) == 1.0

    def test_opposite(self):
        c = code(random_signs(np.random.default_rng(2), 32))
        assert hamming_similarity(c, c.complement()) == 0.0

    def test_worked_example(self):
        # f=4 is not a supported packing width, so check the formula on the naive path
        assert naive_sim([1, 1, -1, 1], [1, -1, -1, 1]) == 0.75
        # and the packed path on the same pattern padded to 8 with agreeing bits
        a = code([1, 1, -1, 1, 1, 1, 1, 1])
        b = code([1, -1, -1, 1, 1, 1, 1, 1])
        assert hamming_similarity(a, b) == 0.5 + 6 / 16

    @settings(max_examples=200, deadline=None)
    @given(sign_pairs())
    def test_symmetric_and_bounded(self, pair):
        a, b = code(pair[0]), code(pair[1])
        s = hamming_similarity(a, b)
        assert s == hamming_similarity(b, a)
        assert 0.0 <= s <= 1.0
        assert s == naive_sim(*pair)
        assert hamming_similarity(a, a) == 1.0
        assert hamming_similarity(a, a.complement()) == 0.0


class TestPacking:
    @settings(max_examples=200, deadline=None)
    @given(sign_vectors())
    def test_roundtrip(self, signs):
        c = code(signs)
        assert np.array_equal(c.signs(), signs)
        assert BinaryCode(pack_signs(unpack_bits(c.bits, c.f) * 2 - 1), c.f) == c

    def test_bit_one_means_plus(self):
        c = code([1, -1, -1, -1, -1, -1, -1, -1])
        assert c.bits.tolist() == [1]

    def test_unsupported_length(self):
        with pytest.raises(ValueError):
            code(np.ones(12))

    def test_matrix_serialization(self, tmp_path):
        rng = np.random.default_rng(5)
        D = ItemCodeMatrix.from_signs(random_signs(rng, 7, 64))
        blob = D.to_bytes()
        assert blob[:4] == b"LFRB"
        assert len(blob) == D.serialized_size() == 16 + 7 * 8
        assert ItemCodeMatrix.from_bytes(blob) == D
        D.save(tmp_path / "d.bin")
        assert ItemCodeMatrix.load(tmp_path / "d.bin") == D

    def test_text_form(self):
        s = np.array([[1, -1, 1, 1, -1, -1, 1, -1]], dtype=np.int8)
        assert np.array_equal(from_text(to_text(s)), s)

    def test_indexing(self):
        rng = np.random.default_rng(6)
        S = random_signs(rng, 5, 16)
        D = ItemCodeMatrix.from_signs(S)
        assert len(D) == 5
        assert np.array_equal(D[3].signs(), S[3])
        assert D.nbytes() == 5 * 16 // 8


class TestTopKHamming:
    def test_sorting_example(self):
        # item similarities 0.75, 1.0, 0.25 against the all-plus query
        q = np.ones(8, dtype=np.int8)
        items = np.array([q, q, q], dtype=np.int8)
        items[0, :2] = -1
        items[2, :6] = -1
        res = top_k_hamming(code(q), ItemCodeMatrix.from_signs(items), 2)
        assert [i for i, _ in res] == [1, 0]
        assert [s for _, s in res] == [1.0, 0.75]

    def test_query_in_items(self):
        rng = np.random.default_rng(7)
        S = random_signs(rng, 20, 32)
        res = top_k_hamming(code(S[13]), ItemCodeMatrix.from_signs(S), 1)
        first_copy = int(np.flatnonzero((S == S[13]).all(axis=1))[0])
        assert res == [(first_copy, 1.0)]

    def test_k_too_large(self):
        D = ItemCodeMatrix.from_signs(np.ones((3, 8), dtype=np.int8))
        with pytest.raises(ValueError):
            top_k_hamming(code(np.ones(8)), D, 3, exclude={0})
        with pytest.raises(ValueError):
            top_k_hamming(code(np.ones(8)), D, 0)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(8)
        for trial in range(60):
            f = int(rng.choice([8, 16, 64]))
            m = int(rng.integers(1, 1001))
            S = random_signs(rng, m, f)
            q = random_signs(rng, f)
            ex = set(rng.choice(m, size=int(rng.integers(0, min(m, 5) + 1)), replace=False).tolist())
            k = int(rng.integers(1, m - len(ex) + 1)) if trial % 3 else m - len(ex)
            if k < 1:
                continue
            sims = [naive_sim(q, S[i]) for i in range(m)]
            oracle = sorted((i for i in range(m) if i not in ex), key=lambda i: -sims[i])[:k]
            got = top_k_hamming(code(q), ItemCodeMatrix.from_signs(S), k, exclude=ex)
            assert [i for i, _ in got] == oracle
            assert [s for _, s in got] == [sims[i] for i in oracle]

    def test_distances_vector(self):
        rng = np.random.default_rng(9)
        S = random_signs(rng, 50, 128)
        q = random_signs(rng, 128)
        expect = (S != q[None, :]).sum(axis=1)
        assert np.array_equal(hamming_distances(code(q), ItemCodeMatrix.from_signs(S)), expect)


class TestTopKInner:
    def test_example(self):
        res = top_k_inner(np.array([1.0, 0.0]), np.array([[0.0, 1.0], [2.0, 0.0]]), 1)
        assert res == [(1, 2.0)]

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            top_k_inner(np.zeros(2), np.zeros((2, 2)), 3)

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            m = int(rng.integers(1, 400))
            Q = rng.integers(-3, 4, size=(m, 4)).astype(float)  # integer scores force ties
            q = rng.integers(-2, 3, size=4).astype(float)
            k = int(rng.integers(1, m + 1))
            scores = Q @ q
            oracle = sorted(range(m), key=lambda i: (-scores[i], i))[:k]
            assert [i for i, _ in top_k_inner(q, Q, k)] == oracle
