from collections import Counter

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from transrec.errors import ParameterError
from transrec.transition import (
    NoTransitionRow,
    TransitionGraph,
    build_transition_graph,
    pseudo_label_row,
    row_normalize,
    transition_frequency,
    transition_recommend,
)


def brute_pairs(seqs, k):
    counts = Counter()
    for seq in seqs:
        for t in range(len(seq)):
            for u in range(t + 1, len(seq)):
                if u - t <= k:
                    counts[(seq[t], seq[u])] += 1
    return counts


corpora = st.lists(st.lists(st.integers(1, 30), max_size=15), min_size=1, max_size=50)


def test_single_pair():
    assert build_transition_graph([[1, 2]], 2, 1).rows == {1: {2: 1}}


def test_alternating_sequence():
    g = build_transition_graph([[1, 2, 1, 2]], 2, 1)
    assert g.rows == {1: {2: 2}, 2: {1: 1}}
    assert transition_frequency(g, 1, 2) == 2
    assert transition_frequency(g, 2, 2) == 0


def test_k_must_be_positive():
    with pytest.raises(ParameterError):
        build_transition_graph([[1, 2]], 2, 0)


def test_k2_matches_brute_force():
    rng = np.random.default_rng(0)
    seqs = [list(rng.integers(1, 31, size=rng.integers(1, 12))) for _ in range(20)]
    g = build_transition_graph(seqs, 30, 2)
    expected = brute_pairs(seqs, 2)
    got = {(i, j): c for i, row in g.rows.items() for j, c in row.items()}
    assert got == dict(expected)


@given(corpora, st.integers(1, 3))
def test_total_count_identity(seqs, k):
    g = build_transition_graph(seqs, 30, k)
    assert g.total() == sum(max(0, len(s) - d) for s in seqs for d in range(1, k + 1))
    for i, row in g.rows.items():
        assert all(c >= 1 for c in row.values())
    pairs = brute_pairs(seqs, k)
    for (i, j), c in pairs.items():
        assert transition_frequency(g, i, j) == c
        assert transition_frequency(g, j, i) == pairs.get((j, i), 0)


def test_row_normalize_examples():
    g = TransitionGraph(7, 1, {1: {2: 4, 3: 2}, 4: {5: 7}})
    assert row_normalize(g, 1) == {2: 1.0, 3: 0.5}
    assert row_normalize(g, 4) == {5: 1.0}
    assert row_normalize(g, 6) == {}


@given(corpora)
def test_row_normalize_range(seqs):
    g = build_transition_graph(seqs, 30, 1)
    for i in g.rows:
        row = row_normalize(g, i)
        assert max(row.values()) == 1.0
        assert all(0.0 < v <= 1.0 for v in row.values())


def test_pseudo_label_example():
    g = TransitionGraph(3, 1, {3: {1: 2, 2: 1}})
    mpmath.mp.dps = 40
    e = [mpmath.exp(mpmath.mpf(x) / mpmath.mpf("0.1")) for x in (1, 0.5, 0)]
    oracle = [float(v / sum(e)) for v in e]
    got = pseudo_label_row(g, 3, 0.1)
    np.testing.assert_allclose(got, oracle, rtol=1e-12)
    np.testing.assert_allclose(got, [0.99326, 0.00669, 0.0000451], rtol=1e-3)


def test_pseudo_label_uniform_counts():
    g = TransitionGraph(4, 1, {1: {1: 3, 2: 3, 3: 3, 4: 3}})
    for tau in (0.05, 1.0, 20.0):
        np.testing.assert_allclose(pseudo_label_row(g, 1, tau), 0.25, atol=1e-15)


def test_pseudo_label_high_temperature():
    g = TransitionGraph(5, 1, {2: {1: 9, 4: 1}})
    np.testing.assert_allclose(pseudo_label_row(g, 2, 1e6), 0.2, atol=1e-6)


def test_pseudo_label_empty_row():
    g = TransitionGraph(5, 1, {2: {1: 9}})
    with pytest.raises(NoTransitionRow):
        pseudo_label_row(g, 3, 0.1)


@given(st.dictionaries(st.integers(1, 12), st.integers(1, 50), min_size=1), st.integers(2, 9),
       st.floats(0.05, 5.0))
def test_pseudo_label_scale_invariance(row, factor, tau):
    g = TransitionGraph(12, 1, {1: row})
    scaled = TransitionGraph(12, 1, {1: {j: c * factor for j, c in row.items()}})
    a = pseudo_label_row(g, 1, tau)
    b = pseudo_label_row(scaled, 1, tau)
    assert np.max(np.abs(a - b)) <= 1e-12
    assert abs(a.sum() - 1.0) < 1e-9
    assert np.all(a > 0)


def test_recommend_examples():
    g = TransitionGraph(8, 1, {1: {2: 5, 7: 3}})
    assert transition_recommend(g, 1, 2) == [2, 7]
    assert transition_recommend(g, 1, 4, exclusions={2}) == [7, 1, 3, 4]


@given(st.integers(0, 10_000))
def test_recommend_matches_full_sort(seed):
    rng = np.random.default_rng(seed)
    rows = {}
    for i in range(1, 31):
        targets = rng.choice(np.arange(1, 31), size=rng.integers(0, 8), replace=False)
        if targets.size:
            rows[i] = {int(j): int(rng.integers(1, 4)) for j in targets}
    g = TransitionGraph(30, 1, rows)
    current = int(rng.integers(1, 31))
    excl = set(rng.choice(np.arange(1, 31), size=rng.integers(0, 5), replace=False).tolist())
    oracle = sorted((j for j in range(1, 31) if j not in excl),
                    key=lambda j: (-transition_frequency(g, current, j), j))
    assert transition_recommend(g, current, 30, excl) == oracle


def test_dump_sorted_and_reloads(tmp_path):
    g = build_transition_graph([[3, 1, 2, 1, 3]], 3, 1)
    path = tmp_path / "graph.tsv"
    g.dump(path)
    lines = path.read_text().splitlines()
    keys = [tuple(int(x) for x in line.split("\t")[:2]) for line in lines]
    assert keys == sorted(keys)
    assert TransitionGraph.load(path, 3).rows == g.rows
