import numpy as np
import pytest

from fragpes.assembly import (
    HARTREE_TO_KCAL,
    MissingModel,
    assemble_exact,
    assemble_ml,
    cost_estimate,
    error_report,
    fragment_weights,
    ml_error_decomposition,
    to_kcal,
)
from fragpes.descriptor import DescriptorVector, descriptor_vector
from fragpes.geometry import compute_multiplicities, extract_fragments, fragment_graph
from fragpes.oracle import DEFAULT_REFERENCE, DEFAULT_TARGET, delta_label

from conftest import graph_from_edges, random_connected_edges, waters

CHAIN_M = {(0,): 0, (1,): -1, (2,): 0, (0, 1): 1, (1, 2): 1}


class Table:
    """Bank entry that looks predictions up by descriptor row."""

    def __init__(self, rows):
        self.rows = {tuple(k): v for k, v in rows}

    def predict(self, X):
        return np.array([self.rows[tuple(x)] for x in X])


class Constant:
    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(len(X), self.value)


def chain_descriptors():
    kinds = {1: "H2O", 2: "H4O2"}
    return {k: DescriptorVector(kinds[len(k)], np.array([float(sum(k)) + len(k)])) for k in CHAIN_M}


def test_chain_exact():
    e = {(0,): 3.0, (1,): -1.0, (2,): 7.0, (0, 1): -5.0, (1, 2): -4.0}
    assert assemble_exact(e, CHAIN_M) == -8.0


def test_triangle_and_single_node():
    sets = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)], 2).simplex_sets
    m = compute_multiplicities(sets, 2)
    e = {k: float(len(k) * 10 + sum(k)) for k in m}
    assert assemble_exact(e, m) == e[(0, 1, 2)]
    assert assemble_exact({(0,): -2.5}, {(0,): 1}) == -2.5


def test_missing_energy():
    with pytest.raises(KeyError):
        assemble_exact({(0, 1): 1.0}, CHAIN_M)


def test_all_zero_corrections():
    bank = {"H2O": Constant(0.0), "H4O2": Constant(0.0)}
    out = assemble_ml(-12.0, chain_descriptors(), CHAIN_M, bank)
    assert out.total == -12.0


def test_breakdown_total_matches_parts():
    bank = {"H2O": Constant(0.5), "H4O2": Constant(-0.25)}
    out = assemble_ml(1.0, chain_descriptors(), CHAIN_M, bank)
    assert out.rank_sums == {0: -0.5, 1: -0.5}
    assert out.total == 1.0 + out.correction() == 0.0
    assert (0,) not in out.contributions


def test_unknown_kind_policy():
    bank = {"H4O2": Constant(1.0)}
    with pytest.raises(MissingModel):
        assemble_ml(0.0, chain_descriptors(), CHAIN_M, bank)
    out = assemble_ml(0.0, chain_descriptors(), CHAIN_M, bank, unknown_kind="zero")
    assert out.n_unknown == 1 and out.total == 2.0
    assert not out.contributions[(1,)].known
    with pytest.raises(ValueError):
        assemble_ml(0.0, chain_descriptors(), CHAIN_M, bank, unknown_kind="skip")


def water_system(rng, n, R=2):
    g = waters(rng.uniform(0, 5, size=(n, 3)), rng)
    graph = fragment_graph(g, 1.4, 4.5, R)
    frags = {f.simplex.node_ids: f for f in extract_fragments(g, graph)}
    return g, graph, frags


def test_oracle_bank_reproduces_exact(rng):
    g, graph, frags = water_system(rng, 6)
    deltas = {k: delta_label(f, DEFAULT_TARGET, DEFAULT_REFERENCE) for k, f in frags.items()}
    bank = {}
    for k, f in frags.items():
        d = descriptor_vector(f)
        bank.setdefault(d.kind, []).append((d.values, deltas[k]))
    bank = {kind: Table(rows) for kind, rows in bank.items()}
    e_ref = {k: DEFAULT_REFERENCE.energy(f.geometry) for k, f in frags.items()}
    e_tgt = {k: DEFAULT_TARGET.energy(f.geometry) for k, f in frags.items()}
    ml = assemble_ml(assemble_exact(e_ref, graph.multiplicities), frags, graph.multiplicities, bank)
    assert ml.total == pytest.approx(assemble_exact(e_tgt, graph.multiplicities), rel=1e-12, abs=1e-12)
    _, err = ml_error_decomposition(ml, deltas)
    assert err == pytest.approx(0.0, abs=1e-12)


def test_error_decomposition_single_offset():
    bank = {"H2O": Constant(1.0), "H4O2": Constant(0.0)}
    out = assemble_ml(0.0, chain_descriptors(), CHAIN_M, bank)
    per, total = ml_error_decomposition(out, {k: 0.0 for k in CHAIN_M})
    assert total == -1.0 and per[(1,)] == -1.0


def test_error_identity_two_paths(rng):
    for _ in range(10):
        n = int(rng.integers(3, 8))
        sets = graph_from_edges(n, random_connected_edges(n, rng), 2).simplex_sets
        m = compute_multiplicities(sets, 2)
        true = {k: float(rng.normal()) for k in m}
        fake = {k: float(rng.normal()) for k in m}
        desc = {k: DescriptorVector(f"K{len(k)}", np.array([float(i)])) for i, k in enumerate(m)}
        bank = {f"K{r}": Table([(desc[k].values, fake[k]) for k in m if len(k) == r]) for r in (1, 2, 3)}
        out = assemble_ml(0.0, desc, m, bank)
        _, total = ml_error_decomposition(out, true)
        direct = out.total - assemble_exact(true, m)
        assert abs(total - direct) <= 1e-9


def test_chain_weights():
    w = fragment_weights(CHAIN_M, lambda k: "H2O" if len(k) == 1 else "H4O2")
    assert w.kind_weights[(0, "H2O")] == pytest.approx(1 / 3)
    assert w.kind_weights[(1, "H4O2")] == pytest.approx(2 / 3)
    assert w.rank_weights == pytest.approx({0: 1 / 3, 1: 2 / 3})


def test_weight_special_cases():
    assert fragment_weights({(0,): 1}, {(0,): "H2O"}).kind_weights == {(0, "H2O"): 1.0}
    tri = {(0,): 0, (1,): 0, (2,): 0, (0, 1): 0, (0, 2): 0, (1, 2): 0, (0, 1, 2): 1}
    w = fragment_weights(tri, lambda k: f"n{len(k)}")
    assert w.kind_weights[(2, "n3")] == 1.0 and w.kind_weights[(1, "n2")] == 0.0
    zero = fragment_weights({(0,): 0}, lambda k: "H2O")
    assert zero.kind_weights == {(0, "H2O"): 0.0}


def test_weights_sum_to_one(rng):
    for _ in range(20):
        n = int(rng.integers(1, 9))
        sets = graph_from_edges(n, random_connected_edges(n, rng), 3).simplex_sets
        w = fragment_weights(compute_multiplicities(sets, 3), lambda k: str(len(k) % 2))
        assert sum(w.kind_weights.values()) == pytest.approx(1.0, abs=1e-12)


def test_error_report():
    rep = error_report([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert rep.mae == 0.0 and rep.max_error == 0.0
    rep = error_report([1.0, -1.0, 2.0], [0.0, 0.0, 0.0], bin_width=1.0)
    assert rep.mae == pytest.approx(4 / 3) and rep.max_error == 2.0
    assert rep.histogram_rows() == [(0.0, 0), (1.0, 2), (2.0, 1)]
    with pytest.raises(ValueError):
        error_report([1.0], [1.0, 2.0])


def test_cost_estimate():
    assert cost_estimate(64)[0] == 34596
    assert cost_estimate(3)[0] == 9
    _, cost = cost_estimate(64, n_electrons=211, n_frames=28294)
    assert cost == pytest.approx(2.497e18, rel=1e-3)
    assert abs(cost - 2.5e18) / 2.5e18 <= 0.005
    with pytest.raises(ValueError):
        cost_estimate(2)


def test_hartree_conversion():
    assert to_kcal(1.0, "hartree") == HARTREE_TO_KCAL
    assert to_kcal(2.0) == 2.0
    with pytest.raises(ValueError):
        to_kcal(1.0, "eV")
