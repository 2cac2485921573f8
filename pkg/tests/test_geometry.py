import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragpes.geometry import (
    GeometryError,
    Geometry,
    assign_nodes,
    build_graph,
    compute_multiplicities,
    enumerate_simplexes,
    extract_fragment,
    formula,
    fragment_graph,
    parse_xyz,
)

from conftest import brute_force_cliques, graph_from_edges, random_connected_edges, water, waters


def containment_oracle(sets, R):
    """M by explicit p(a, m) counting, independent of the library's subset walk."""
    ids = {r: [s.node_ids for s in sets.get(r, [])] for r in range(R + 1)}
    out = {}
    for r in range(R + 1):
        for a in ids[r]:
            out[a] = sum((-1) ** (m + r) * sum(set(a) <= set(b) for b in ids[m]) for m in range(r, R + 1))
    return out


# ---- parse_xyz ----

def test_parse_single_frame():
    (g,) = parse_xyz("3\n\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0")
    assert g.symbols == ("O", "H", "H")
    assert g.masses.tolist() == [15.999, 1.008, 1.008]
    assert g.positions[2].tolist() == [-0.24, 0.93, 0.0]
    assert g.frame_id == 0


def test_parse_empty_frame():
    (g,) = parse_xyz("0\n\n")
    assert len(g) == 0


def test_parse_concatenated_frames():
    frame = "2\ncomment\nO 0 0 0\nH 0 0 0.97\n"
    frames = parse_xyz(frame + frame)
    assert [f.frame_id for f in frames] == [0, 1]


@pytest.mark.parametrize("text", [
    "3\n\nO 0 0 0\nH 1 0 0\n",          # count mismatch
    "1\n\nXx 0 0 0\n",                  # unknown element
    "1\n\nO 0 zero 0\n",                # non-numeric coordinate
    "abc\n\n",
])
def test_parse_errors(text):
    with pytest.raises(GeometryError):
        parse_xyz(text)


def test_xyz_roundtrip():
    g = waters([(0, 0, 0), (2.8, 0.1, 0)], np.random.default_rng(0))
    (back,) = parse_xyz(g.to_xyz())
    assert back.symbols == g.symbols
    np.testing.assert_array_equal(back.positions, g.positions)


# ---- nodes ----

def test_formula_hill_order_and_charge():
    assert formula(["O", "H", "H"]) == "H2O"
    assert formula(["O", "H", "H", "H"], 1) == "H3O+"
    assert formula(["H"] * 4 + ["O"], 2) == "H4O++"
    assert formula(["C", "O", "H", "H", "H", "H"]) == "CH4O"
    assert formula(["O", "H"], -1) == "HO-"


def test_water_monomer_node():
    s, p = water()
    (node,) = assign_nodes(Geometry(s, p), 1.4)
    assert node.kind == "H2O" and node.charge == 0
    assert node.atom_indices == (0, 1, 2)


def test_zundel_bridging_hydrogen_goes_to_nearer_oxygen():
    # O-O 2.38 A; bridging H 1.18 A from O0 and 1.20 A from O1
    o0, o1 = np.array([0.0, 0, 0]), np.array([2.38, 0, 0])
    bridge = np.array([1.18, 0, 0])
    assert np.linalg.norm(bridge - o0) < np.linalg.norm(bridge - o1) < 1.4
    pos = [o0, o0 + [-0.3, 0.92, 0], o0 + [-0.3, -0.92, 0], o1, o1 + [0.3, 0.92, 0], o1 + [0.3, -0.92, 0], bridge]
    g = Geometry(["O", "H", "H", "O", "H", "H", "H"], np.array(pos))
    nodes = assign_nodes(g, 1.4)
    assert [n.kind for n in nodes] == ["H3O+", "H2O"]
    assert 6 in nodes[0].atom_indices


def test_equidistant_hydrogen_goes_to_lower_index_oxygen():
    pos = [[0, 0, 0], [2.4, 0, 0], [1.2, 0, 0]]
    nodes = assign_nodes(Geometry(["O", "O", "H"], np.array(pos, float)), 1.4)
    assert 2 in nodes[0].atom_indices


def test_doubly_protonated_node():
    pos = np.array([[0, 0, 0], [0.97, 0, 0], [-0.97, 0, 0], [0, 0.97, 0], [0, 0, 0.97]], float)
    (node,) = assign_nodes(Geometry(["O", "H", "H", "H", "H"], pos), 1.4)
    assert node.kind == "H4O++" and node.charge == 2


def test_orphan_hydrogen_and_foreign_element():
    with pytest.raises(GeometryError, match="orphan"):
        assign_nodes(Geometry(["O", "H"], np.array([[0, 0, 0], [1.5, 0, 0]], float)), 1.4)
    with pytest.raises(GeometryError, match="O/H"):
        assign_nodes(Geometry(["C", "O"], np.array([[0, 0, 0], [1.2, 0, 0]], float)), 1.4)


# ---- graph ----

def line_of_waters(spacing=2.8, n=3):
    return waters([(spacing * i, 0, 0) for i in range(n)])


def test_edges_from_oo_cutoff():
    g = line_of_waters()
    nodes = assign_nodes(g)
    assert build_graph(g, nodes, 4.5).edges == {(0, 1), (1, 2)}
    assert build_graph(g, nodes, 7.5).edges == {(0, 1), (0, 2), (1, 2)}


def test_single_node_graph():
    s, p = water()
    g = Geometry(s, p)
    graph = build_graph(g, assign_nodes(g), 4.5)
    assert len(graph.nodes) == 1 and not graph.edges


def test_path_has_no_triangle():
    sets = enumerate_simplexes(graph_from_edges(3, [(0, 1), (1, 2)], 2), 2)
    assert [s.node_ids for s in sets[1]] == [(0, 1), (1, 2)]
    assert sets[2] == []


def test_triangle_has_one_face():
    sets = enumerate_simplexes(graph_from_edges(3, [(0, 1), (1, 2), (0, 2)], 2), 2)
    assert [s.node_ids for s in sets[2]] == [(0, 1, 2)]


def test_k4_clique_counts():
    g = graph_from_edges(4, itertools.combinations(range(4), 2), 3)
    sets = enumerate_simplexes(g, 3)
    assert [len(sets[r]) for r in range(4)] == [4, 6, 4, 1]


def test_cliques_match_brute_force(rng):
    for _ in range(50):
        n = int(rng.integers(1, 9))
        edges = random_connected_edges(n, rng, 0.5)
        sets = enumerate_simplexes(graph_from_edges(n, edges, 3), 3)
        for r in range(4):
            assert [s.node_ids for s in sets[r]] == brute_force_cliques(n, edges, r + 1)


def test_simplex_kinds():
    g = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)], 2)
    sets = enumerate_simplexes(g, 2)
    assert sets[1][0].kind == "H4O2"
    assert sets[2][0].kind == "H6O3"


# ---- multiplicities ----

def test_path_multiplicities():
    sets = enumerate_simplexes(graph_from_edges(3, [(0, 1), (1, 2)], 1), 1)
    m = compute_multiplicities(sets, 1)
    assert m == {(0,): 0, (1,): -1, (2,): 0, (0, 1): 1, (1, 2): 1}
    assert m == containment_oracle(sets, 1)


def test_triangle_collapses_to_face():
    sets = enumerate_simplexes(graph_from_edges(3, [(0, 1), (1, 2), (0, 2)], 2), 2)
    m = compute_multiplicities(sets, 2)
    assert m[(0, 1, 2)] == 1
    assert all(v == 0 for k, v in m.items() if len(k) < 3)


def test_isolated_node_multiplicity():
    for R in range(4):
        sets = enumerate_simplexes(graph_from_edges(1, [], R), R)
        assert compute_multiplicities(sets, R) == {(0,): 1}


def test_multiplicities_match_containment_oracle(rng):
    for _ in range(100):
        n = int(rng.integers(1, 9))
        R = int(rng.integers(0, 4))
        sets = enumerate_simplexes(graph_from_edges(n, random_connected_edges(n, rng), R), R)
        assert compute_multiplicities(sets, R) == containment_oracle(sets, R)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 10), R=st.integers(0, 3), seed=st.integers(0, 2**31))
def test_coverage_identity(n, R, seed):
    rng = np.random.default_rng(seed)
    sets = enumerate_simplexes(graph_from_edges(n, random_connected_edges(n, rng), R), R)
    m = compute_multiplicities(sets, R)
    for node in range(n):
        assert sum(v for k, v in m.items() if node in k) == 1


def test_clique_closure(rng):
    for _ in range(30):
        n = int(rng.integers(2, 9))
        sets = enumerate_simplexes(graph_from_edges(n, random_connected_edges(n, rng, 0.6), 3), 3)
        for r in range(1, 4):
            lower = {s.node_ids for s in sets[r - 1]}
            for s in sets[r]:
                faces = list(itertools.combinations(s.node_ids, r))
                assert len(faces) == r + 1 and all(f in lower for f in faces)


# ---- fragments ----

def test_extract_edge_and_face():
    g = waters([(0, 0, 0), (2.8, 0, 0), (1.4, 2.4, 0)])
    graph = fragment_graph(g, 1.4, 4.5, 2)
    edge = extract_fragment(g, graph.simplex_sets[1][0], graph.nodes)
    assert len(edge.geometry) == 6 and edge.kind == "H4O2"
    np.testing.assert_array_equal(edge.geometry.positions, g.positions[:6])


def test_hydronium_fragments():
    o0, o1, o2 = np.array([0.0, 0, 0]), np.array([2.6, 0, 0]), np.array([1.3, 2.3, 0])
    pos = [o0, o0 + [-0.3, 0.92, 0], o0 + [-0.3, -0.92, 0], o0 + [0, 0, 0.98],
           *water(o1)[1], *water(o2)[1]]
    g = Geometry(["O", "H", "H", "H"] + ["O", "H", "H"] * 2, np.array(pos))
    graph = fragment_graph(g, 1.4, 4.5, 2)
    node = extract_fragment(g, graph.simplex_sets[0][0], graph.nodes)
    assert node.kind == "H3O+" and len(node.geometry) == 4
    face = extract_fragment(g, graph.simplex_sets[2][0], graph.nodes)
    assert face.kind == "H7O3+" and len(face.geometry) == 10


def test_node_partition_and_determinism(rng):
    from fragpes.synthetic import PRIMITIVE, cluster_trajectory
    for g in cluster_trajectory(PRIMITIVE, 5, seed=3):
        a = fragment_graph(g, 1.4, 4.5, 3)
        b = fragment_graph(g, 1.4, 4.5, 3)
        atoms = sorted(i for n in a.nodes for i in n.atom_indices)
        assert atoms == list(range(len(g)))
        assert a.edges == b.edges and a.multiplicities == b.multiplicities
        assert a.simplex_sets == b.simplex_sets


def test_rank_zero_only_nodes():
    g = line_of_waters()
    graph = fragment_graph(g, 1.4, 4.5, 0)
    assert list(graph.simplex_sets) == [0]
    assert all(v == 1 for v in graph.multiplicities.values())


def test_monotone_coverage_in_rank():
    g = waters([(0, 0, 0), (2.8, 0, 0), (1.4, 2.4, 0), (1.4, 0.8, 2.3)])
    prev = set()
    for R in range(4):
        cur = {s.node_ids for s in fragment_graph(g, 1.4, 4.5, R).simplexes()}
        assert prev <= cur
        prev = cur
