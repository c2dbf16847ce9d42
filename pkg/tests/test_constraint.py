import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlmask.constraint import binarize, constrain, predict_bits, sigmoid, subtree_argmax
from hmlmask.errors import HMLError
from hmlmask.hierarchy import descendant_matrix, is_closed

from conftest import chain, random_tree


def naive_constrain(h, x):
    R = descendant_matrix(h).astype(bool)
    out = np.empty_like(x)
    for b in range(x.shape[0]):
        for i in range(h.n):
            out[b, i] = max(x[b, j] for j in range(h.n) if R[i, j])
    return out


class TestConstrain:
    def test_chain_example(self):
        np.testing.assert_allclose(constrain(chain(3), np.array([0.2, 0.1, 0.9])), [0.9, 0.9, 0.9])

    def test_animal(self, animal):
        np.testing.assert_allclose(constrain(animal, np.array([0.1, 0.6, 0.3])), [0.6, 0.6, 0.3])

    def test_dimension_mismatch(self, animal):
        with pytest.raises(HMLError) as exc:
            constrain(animal, np.zeros((2, 4)))
        assert exc.value.code == "dimension-mismatch"

    def test_does_not_modify_input(self, chain3):
        x = np.array([0.0, 0.0, 1.0])
        constrain(chain3, x)
        np.testing.assert_array_equal(x, [0.0, 0.0, 1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_matches_matrix_max_and_laws(self, n, seed):
        rng = np.random.default_rng(seed)
        h = random_tree(rng, n)
        x = rng.random((4, n))
        c = constrain(h, x)
        np.testing.assert_array_equal(c, naive_constrain(h, x))
        np.testing.assert_array_equal(constrain(h, c), c)
        assert np.all(c >= x)
        for i in range(1, n):
            assert np.all(c[:, h.parents[i]] >= c[:, i])
        # monotone in the input
        y = x + rng.random((4, n))
        assert np.all(constrain(h, y) >= c)
        # commutes with the sigmoid
        z = rng.normal(size=(4, n)) * 5
        np.testing.assert_array_equal(constrain(h, sigmoid(z)), sigmoid(constrain(h, z)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_predicted_bits_closed(self, n, seed):
        rng = np.random.default_rng(seed)
        h = random_tree(rng, n)
        bits = predict_bits(h, rng.random((6, n)))
        assert is_closed(h, bits)


class TestSubtreeArgmax:
    def test_ties_go_to_lowest_index(self, substrate):
        x = np.zeros((1, substrate.n))
        val, idx = subtree_argmax(substrate, x)
        np.testing.assert_array_equal(idx[0], np.arange(substrate.n))
        x[0, [5, 9, 20]] = 1.0
        _, idx = subtree_argmax(substrate, x)
        assert idx[0, 0] == 5

    def test_allowed_none_in_subtree(self, chain3):
        val, idx = subtree_argmax(chain3, np.array([[0.3, 0.5, 0.9]]), allowed=np.array([[True, False, False]]))
        np.testing.assert_array_equal(idx[0], [0, -1, -1])
        assert val[0, 0] == 0.3 and np.isneginf(val[0, 1])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 15), st.integers(0, 2**32 - 1))
    def test_brute_force(self, n, seed):
        rng = np.random.default_rng(seed)
        h = random_tree(rng, n)
        x = rng.integers(0, 3, size=(3, n)).astype(float)  # plenty of ties
        allowed = rng.random((3, n)) < 0.6
        val, idx = subtree_argmax(h, x, allowed)
        for b in range(3):
            for i in range(n):
                cand = [j for j in h.subtree(i) if allowed[b, j]]
                if not cand:
                    assert idx[b, i] == -1
                    continue
                best = max(x[b, j] for j in cand)
                assert idx[b, i] == min(j for j in cand if x[b, j] == best)
                assert val[b, i] == best


class TestBinarize:
    def test_strict_threshold(self):
        np.testing.assert_array_equal(binarize(np.array([0.5, np.nextafter(0.5, 1), 0.0, 1.0])), [False, True, False, True])

    @pytest.mark.parametrize("bad", [-0.01, 1.01, np.nan])
    def test_out_of_range(self, bad):
        with pytest.raises(HMLError) as exc:
            binarize(np.array([0.2, bad]))
        assert exc.value.code == "out-of-range-prob"

    def test_sigmoid_extremes(self):
        s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])
