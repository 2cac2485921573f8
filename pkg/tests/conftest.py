import itertools

import numpy as np
import pytest

from fragpes.geometry import FragGraph, Geometry, Node, enumerate_simplexes


def water(o=(0.0, 0.0, 0.0), rot=None):
    """Standard water (O, H, H) placed at ``o``."""
    half = np.deg2rad(104.5) / 2
    h = 0.96 * np.array([[np.sin(half), 0, np.cos(half)], [-np.sin(half), 0, np.cos(half)]])
    if rot is not None:
        h = h @ rot.T
    return ["O", "H", "H"], np.vstack([o, np.asarray(o) + h])


def waters(oxygens, rng=None):
    from fragpes.synthetic import random_rotation
    syms, pos = [], []
    for o in oxygens:
        s, p = water(o, random_rotation(rng) if rng is not None else None)
        syms += s
        pos.append(p)
    return Geometry(syms, np.vstack(pos))


def graph_from_edges(n, edges, max_rank):
    nodes = [Node((3 * i, 3 * i + 1, 3 * i + 2), "H2O", 0) for i in range(n)]
    g = FragGraph(nodes, {tuple(sorted(e)) for e in edges}, max_rank=max_rank)
    g.simplex_sets = enumerate_simplexes(g, max_rank)
    return g


def brute_force_cliques(n, edges, size):
    es = {tuple(sorted(e)) for e in edges}
    return [c for c in itertools.combinations(range(n), size)
            if all(p in es for p in itertools.combinations(c, 2))]


def random_connected_edges(n, rng, p=0.4):
    """Random spanning tree plus extra edges with probability ``p``."""
    edges = set()
    for i in range(1, n):
        edges.add((int(rng.integers(i)), i))
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < p:
            edges.add((i, j))
    return edges


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
