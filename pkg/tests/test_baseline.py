import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlmask.annotations import derive_mask
from hmlmask.baseline import (
    activation_probability,
    brute_force_count,
    count_valid_annotations,
    estimate_random_baseline,
    sample_random_prediction,
    valid_label_cardinality_bound,
)
from hmlmask.errors import HMLError
from hmlmask.hierarchy import close_bits, is_closed, parse_hierarchy
from hmlmask.rng import stream

from conftest import chain, random_tree


def itertools_count(h):
    """Count ancestor-closed subsets one bit-string at a time."""
    seen = set()
    for x in range(1 << h.n):
        bits = np.array([(x >> i) & 1 for i in range(h.n)], bool)
        seen.add(close_bits(h, bits).tobytes())
    return len(seen)


class TestCounting:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("root > a > b", 4),
            ("R > a\nR > b", 5),
            ("R > a\nR > b\nR > c\nR > d", 17),
            ("R", 2),
        ],
    )
    def test_small_trees(self, text, expected):
        h = parse_hierarchy(text)
        assert count_valid_annotations(h) == expected
        assert brute_force_count(h) == expected

    def test_chain_formula(self):
        for n in range(1, 7):
            assert count_valid_annotations(chain(n)) == n + 1

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_python_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        h = random_tree(rng, int(rng.integers(1, 10)))
        assert brute_force_count(h) == itertools_count(h) == count_valid_annotations(h)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 15), st.integers(0, 2**32 - 1))
    def test_dp_vs_brute_force_and_bounds(self, n, seed):
        h = random_tree(np.random.default_rng(seed), n)
        c = count_valid_annotations(h)
        assert c == brute_force_count(h)
        lo, hi = valid_label_cardinality_bound(n)
        assert lo <= c <= hi

    def test_big_integers(self):
        # 200 leaves under one root: 2**200 + 1 closed subsets
        h = parse_hierarchy("\n".join(f"R > x{k}" for k in range(200)))
        assert count_valid_annotations(h) == 2**200 + 1

    def test_too_large(self):
        with pytest.raises(HMLError) as exc:
            brute_force_count(random_tree(np.random.default_rng(0), 25))
        assert exc.value.code == "hierarchy-too-large"

    def test_bound_errors(self):
        assert valid_label_cardinality_bound(3) == (4, 8)
        with pytest.raises(HMLError):
            valid_label_cardinality_bound(0)


class TestRandomPrediction:
    def test_always_closed(self, substrate):
        bits = sample_random_prediction(substrate, 0.5, np.random.default_rng(0), size=2000)
        assert is_closed(substrate, bits)

    def test_activation_law(self, substrate):
        draws = 100_000
        bits = sample_random_prediction(substrate, 0.5, stream(0, "law"), size=draws)
        q = activation_probability(substrate, 0.5)
        np.testing.assert_allclose(q, 1 - 2.0 ** -substrate.subtree_sizes)
        se = np.sqrt(q * (1 - q) / draws)
        se[se == 0] = 1 / draws
        assert np.all(np.abs(bits.mean(axis=0) - q) <= 4 * se)

    def test_popcount_peaks_mid(self):
        n = 24
        pop = (np.random.default_rng(1).random((50_000, n)) < 0.5).sum(axis=1)
        assert abs(np.bincount(pop).argmax() - n / 2) <= 1

    def test_invalid_probability(self, chain3):
        with pytest.raises(HMLError) as exc:
            sample_random_prediction(chain3, 1.0)
        assert exc.value.code == "invalid-probability"


class TestEstimate:
    @pytest.fixture
    def problem(self, substrate):
        rng = np.random.default_rng(2)
        t = close_bits(substrate, rng.random((200, substrate.n)) < 0.15)
        t[:, 0] = True
        return [substrate], {"Substrate": t}, {"Substrate": derive_mask(substrate, t)}

    def test_reproducible_and_order_free(self, problem):
        a = estimate_random_baseline(*problem, trials=4, seed=5)
        b = estimate_random_baseline(*problem, trials=4, seed=5)
        c = estimate_random_baseline(*problem, trials=6, seed=5)
        assert a.to_dict() == b.to_dict()
        # the first trials are unchanged when more are requested
        assert c.metrics["ap"].values[:4] == a.metrics["ap"].values

    def test_std_is_sample_std(self, problem):
        r = estimate_random_baseline(*problem, trials=5, seed=0)
        s = r.metrics["hml_ap"]
        assert s.std == pytest.approx(np.std(s.values, ddof=1))
        assert s.mean == pytest.approx(np.mean(s.values))

    def test_activation_table(self, problem):
        d = estimate_random_baseline(*problem, trials=2).to_dict(problem[0])
        assert d["activation"][0]["expected_rate"] == pytest.approx(1 - 2.0**-24)

    def test_errors(self, problem, substrate):
        with pytest.raises(HMLError) as exc:
            estimate_random_baseline(*problem, trials=1)
        assert exc.value.code == "invalid-trials"
        empty = np.zeros((0, substrate.n), bool)
        with pytest.raises(HMLError) as exc:
            estimate_random_baseline([substrate], {"Substrate": empty}, {"Substrate": empty})
        assert exc.value.code == "empty-test-set"
