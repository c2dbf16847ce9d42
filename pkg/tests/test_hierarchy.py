import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmlmask.errors import HMLError
from hmlmask.hierarchy import ancestor_closure, close_bits, descendant_matrix, is_closed, load_hierarchy, parse_hierarchy

from conftest import chain, random_tree


def parent_walk_closure(h, nodes):
    out = set()
    for i in nodes:
        j = i
        while j is not None:
            out.add(j)
            j = h.nodes[j].parent
    return out


def recursive_subtree_size(h, v):
    return 1 + sum(recursive_subtree_size(h, c) for c in h.children[v])


class TestParse:
    def test_single_root(self):
        h = parse_hierarchy("Substrate")
        assert h.n == 1
        assert h.nodes[0].depth == 0
        assert h.nodes[0].parent is None

    def test_bundled_sizes(self, substrate, relief, bedforms):
        assert substrate.n == 24
        assert relief.n == 7
        assert bedforms.n == 7

    def test_preorder_and_depths(self, substrate):
        for node in substrate.nodes[1:]:
            assert node.parent < node.index
            assert node.depth == substrate.nodes[node.parent].depth + 1
        # every subtree is a contiguous index range
        for i in range(substrate.n):
            for j in substrate.subtree(i):
                assert i in parent_walk_closure(substrate, [j])

    def test_preorder_groups_late_siblings(self):
        h = parse_hierarchy("S > A > x\nS > B\nS > A > y\n")
        assert [nd.name for nd in h.nodes] == ["S", "A", "x", "y", "B"]

    def test_comments_and_blank_lines(self):
        h = parse_hierarchy("# header\n\nR > a  # trailing\n   \nR > b\n")
        assert [nd.name for nd in h.nodes] == ["R", "a", "b"]

    def test_names_with_slash_and_parens(self, substrate):
        i = substrate.index_of("Substrate > Unconsolidated (soft) > Pebble / gravel")
        assert substrate.nodes[i].name == "Pebble / gravel"
        assert substrate.nodes[i].depth == 2

    def test_whitespace_around_separator(self, substrate):
        assert substrate.index_of("Substrate   > Consolidated (hard)  >  Rock ") == substrate.index_of(
            "Substrate > Consolidated (hard) > Rock"
        )

    @pytest.mark.parametrize(
        "text, code",
        [
            ("", "empty-category"),
            ("# only a comment\n", "empty-category"),
            ("R > a\nR > a\n", "duplicate-path"),
            ("R > a\nQ > b\n", "orphan-path"),
        ],
    )
    def test_errors(self, text, code):
        with pytest.raises(HMLError) as exc:
            parse_hierarchy(text)
        assert exc.value.code == code

    def test_missing_file(self, tmp_path):
        with pytest.raises(HMLError) as exc:
            load_hierarchy(tmp_path / "nope.txt")
        assert exc.value.code == "file-not-found"

    def test_load_bundled_by_name(self):
        assert load_hierarchy("relief").category_name == "Relief"

    def test_flat_category_is_height_one(self):
        h = parse_hierarchy("Colour > Red\nColour > Green\nColour > Blue\n")
        assert h.max_depth == 1
        assert list(h.depths) == [0, 1, 1, 1]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 40), st.integers(0, 2**32 - 1))
    def test_round_trip(self, n, seed):
        h = random_tree(np.random.default_rng(seed), n)
        again = parse_hierarchy(h.serialize())
        assert again.nodes == h.nodes
        assert again.paths == h.paths


class TestDescendantMatrix:
    def test_chain(self):
        np.testing.assert_array_equal(descendant_matrix(chain(2)), [[1, 1], [0, 1]])

    def test_animal(self, animal):
        R = descendant_matrix(animal)
        np.testing.assert_array_equal(R[0], [1, 1, 1])
        np.testing.assert_array_equal(R[1], [0, 1, 0])

    @pytest.mark.parametrize("seed", range(20))
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        h = random_tree(rng, int(rng.integers(1, 30)))
        R = descendant_matrix(h).astype(int)
        assert np.trace(R) == h.n
        # transitive closure: R @ R has the same support as R
        np.testing.assert_array_equal((R @ R) > 0, R > 0)
        for v in range(h.n):
            assert R[v].sum() == recursive_subtree_size(h, v)
            if not h.children[v]:
                assert R[v].sum() == 1
            for j in range(h.n):
                assert R[v, j] == (v in parent_walk_closure(h, [j]))


class TestClosure:
    def test_empty(self, chain3):
        assert ancestor_closure(chain3, []) == set()

    def test_chain_leaf(self, chain3):
        assert ancestor_closure(chain3, [2]) == {0, 1, 2}

    def test_invalid_index(self, chain3):
        with pytest.raises(HMLError) as exc:
            ancestor_closure(chain3, [3])
        assert exc.value.code == "invalid-index"

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**32 - 1), st.data())
    def test_matches_parent_walk_and_laws(self, n, seed, data):
        h = random_tree(np.random.default_rng(seed), n)
        S = set(data.draw(st.lists(st.integers(0, n - 1), max_size=n)))
        T = S | set(data.draw(st.lists(st.integers(0, n - 1), max_size=n)))
        cS = ancestor_closure(h, S)
        assert cS == parent_walk_closure(h, S)
        assert ancestor_closure(h, cS) == cS
        assert cS <= ancestor_closure(h, T)
        bits = np.zeros(n, dtype=bool)
        bits[list(S)] = True
        np.testing.assert_array_equal(np.flatnonzero(close_bits(h, bits)), sorted(cS))
        assert is_closed(h, close_bits(h, bits))

    def test_union_of_paths(self, substrate):
        a = substrate.index_of("Substrate > Consolidated (hard) > Rock")
        b = substrate.index_of("Substrate > Unconsolidated (soft) > Pebble / gravel > Biologenic")
        union = ancestor_closure(substrate, [a]) | ancestor_closure(substrate, [b])
        assert ancestor_closure(substrate, [a, b]) == union
