import itertools

import networkx as nx
import numpy as np
import pytest

from platoonform.matching import max_weight_matching


def _random_graph(rng, n, p, wmax=1000):
    edges = []
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < p:
            edges.append((i, j, int(rng.integers(1, wmax))))
    return edges


def _oracle_weight(n, edges):
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_weighted_edges_from(edges)
    return sum(g[a][b]["weight"] for a, b in nx.max_weight_matching(g))


def _check_matching(n, edges, mate):
    weights = {}
    for i, j, w in edges:
        weights[(i, j)] = weights[(j, i)] = w
    for v, u in enumerate(mate):
        if u >= 0:
            assert mate[u] == v
            assert (v, u) in weights
    return sum(weights[(v, u)] for v, u in enumerate(mate) if u > v)


def test_matches_networkx_on_random_graphs():
    rng = np.random.default_rng(0)
    for _ in range(400):
        n = int(rng.integers(2, 18))
        edges = _random_graph(rng, n, float(rng.uniform(0.1, 0.9)), int(rng.choice([3, 50, 10_000])))
        res = max_weight_matching(n, edges)
        assert res.complete
        assert _check_matching(n, edges, res.mate) == res.weight == _oracle_weight(n, edges)
        assert res.upper_bound == res.weight


def test_odd_cycles_need_blossoms():
    # a triangle with a pendant edge: the heavy pendant forces a blossom expansion
    edges = [(0, 1, 6), (1, 2, 6), (2, 0, 6), (2, 3, 7), (3, 4, 1)]
    res = max_weight_matching(5, edges)
    assert res.weight == _oracle_weight(5, edges) == 13


def test_empty_and_invalid_input():
    res = max_weight_matching(3, [])
    assert res.mate == [-1, -1, -1] and res.weight == 0 and res.complete
    with pytest.raises(ValueError):
        max_weight_matching(2, [(1, 1, 3)])


class _StepClock:
    """Clock that passes the deadline after a fixed number of reads."""

    def __init__(self, budget):
        self.calls = 0
        self.budget = budget

    def __call__(self):
        self.calls += 1
        return 0.0 if self.calls <= self.budget else 1.0


def test_interrupted_search_brackets_the_optimum():
    rng = np.random.default_rng(1)
    interrupted = 0
    for trial in range(150):
        n = int(rng.integers(10, 40))
        edges = _random_graph(rng, n, 0.3)
        if not edges:
            continue
        opt = _oracle_weight(n, edges)
        res = max_weight_matching(n, edges, deadline=0.5, clock=_StepClock(int(rng.integers(1, 30))))
        assert _check_matching(n, edges, res.mate) == res.weight
        assert res.weight <= opt <= res.upper_bound
        interrupted += not res.complete
    assert interrupted > 100
