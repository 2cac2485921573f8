"""Molecular geometries, fragmentation graphs and inclusion-exclusion multiplicities.

A system is split into nodes (one oxygen plus the hydrogens bonded to it),
nodes closer than an O-O cutoff are joined by edges, and every clique of
the resulting graph up to a maximum rank becomes a fragment (simplex).
The signed multiplicity of each simplex makes the weighted sum of
fragment energies count every interaction exactly once.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

# Standard atomic weights (amu), abridged.
ATOMIC_MASSES = {
    "H": 1.008, "He": 4.0026, "Li": 6.94, "Be": 9.0122, "B": 10.81,
    "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998, "Ne": 20.180,
    "Na": 22.990, "Mg": 24.305, "Al": 26.982, "Si": 28.085, "P": 30.974,
    "S": 32.06, "Cl": 35.45, "Ar": 39.948, "K": 39.098, "Ca": 40.078,
    "Fe": 55.845, "Cu": 63.546, "Zn": 65.38, "Br": 79.904, "I": 126.90,
}

OH_CUTOFF = 1.4
OO_CUTOFF_PRIMITIVE = 7.5
OO_CUTOFF_TARGET = 4.5


class GeometryError(ValueError):
    """Malformed geometry input or a system the node rules cannot handle."""


@dataclass
class Geometry:
    symbols: tuple[str, ...]
    positions: np.ndarray
    masses: np.ndarray = None
    frame_id: int | None = None
    comment: str = ""

    def __post_init__(self):
        self.symbols = tuple(self.symbols)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.masses is None:
            self.masses = np.array([atomic_mass(s) for s in self.symbols], dtype=float)
        else:
            self.masses = np.asarray(self.masses, dtype=float)
        if len(self.symbols) != len(self.positions) or len(self.masses) != len(self.symbols):
            raise GeometryError("symbols, masses and positions differ in length")
        if np.any(self.masses <= 0):
            raise GeometryError("atomic masses must be positive")
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("non-finite atomic position")

    def __len__(self) -> int:
        return len(self.symbols)

    def subset(self, indices: Sequence[int]) -> "Geometry":
        idx = list(indices)
        return Geometry(
            tuple(self.symbols[i] for i in idx),
            self.positions[idx].copy(),
            self.masses[idx].copy(),
            frame_id=self.frame_id,
        )

    def to_xyz(self) -> str:
        lines = [str(len(self)), self.comment]
        for s, (x, y, z) in zip(self.symbols, self.positions):
            lines.append(f"{s} {float(x)!r} {float(y)!r} {float(z)!r}")
        return "\n".join(lines) + "\n"


def atomic_mass(symbol: str) -> float:
    try:
        return ATOMIC_MASSES[symbol]
    except KeyError:
        raise GeometryError(f"unknown element symbol {symbol!r}") from None


def _iter_frames(lines: list[str]) -> Iterator[Geometry]:
    pos = 0
    frame = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        head = lines[pos].strip()
        try:
            natoms = int(head.split()[0])
        except ValueError:
            raise GeometryError(f"line {pos + 1}: expected atom count, got {head!r}") from None
        comment = lines[pos + 1].rstrip("\n") if pos + 1 < len(lines) else ""
        body = lines[pos + 2:pos + 2 + natoms]
        if len(body) < natoms:
            raise GeometryError(
                f"frame {frame}: atom count {natoms} but only {len(body)} atom lines"
            )
        symbols = []
        coords = []
        for k, line in enumerate(body):
            parts = line.split()
            if len(parts) < 4:
                raise GeometryError(f"line {pos + 3 + k}: expected 'symbol x y z', got {line!r}")
            sym = parts[0]
            atomic_mass(sym)
            try:
                coords.append([float(v) for v in parts[1:4]])
            except ValueError:
                raise GeometryError(f"line {pos + 3 + k}: non-numeric coordinate in {line!r}") from None
            symbols.append(sym)
        yield Geometry(tuple(symbols), np.array(coords).reshape(-1, 3), frame_id=frame, comment=comment)
        frame += 1
        pos += 2 + natoms


def parse_xyz(text: str) -> list[Geometry]:
    """Parse one or more concatenated XYZ frames.

    Frames get consecutive ``frame_id`` values starting at 0. Standard
    atomic masses are assigned from the element symbols.
    """
    return list(_iter_frames(text.splitlines()))


def read_xyz(path) -> list[Geometry]:
    with open(path) as fh:
        return parse_xyz(fh.read())


def write_xyz(path, frames: Iterable[Geometry]) -> None:
    with open(path, "w") as fh:
        for g in frames:
            fh.write(g.to_xyz())


def formula(symbols: Iterable[str], charge: int = 0) -> str:
    """Hill-order formula with a trailing ``+``/``-`` per unit of charge."""
    counts = Counter(symbols)
    if "C" in counts:
        order = ["C"] + (["H"] if "H" in counts else []) + sorted(
            s for s in counts if s not in ("C", "H"))
    else:
        order = sorted(counts)
    out = "".join(s + (str(counts[s]) if counts[s] > 1 else "") for s in order)
    if charge > 0:
        out += "+" * charge
    elif charge < 0:
        out += "-" * (-charge)
    return out


@dataclass(frozen=True)
class Node:
    atom_indices: tuple[int, ...]
    kind: str
    charge: int


@dataclass(frozen=True)
class Simplex:
    rank: int
    node_ids: tuple[int, ...]
    kind: str


@dataclass
class FragGraph:
    nodes: list[Node]
    edges: set[tuple[int, int]]
    simplex_sets: dict[int, list[Simplex]] = field(default_factory=dict)
    max_rank: int = 1
    multiplicities: dict[tuple[int, ...], int] = field(default_factory=dict)

    def simplexes(self) -> Iterator[Simplex]:
        for r in sorted(self.simplex_sets):
            yield from self.simplex_sets[r]

    def neighbors(self) -> list[set[int]]:
        adj = [set() for _ in self.nodes]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj


@dataclass
class Fragment:
    geometry: Geometry
    simplex: Simplex
    source: tuple[str, int | None] = ("", None)

    @property
    def kind(self) -> str:
        return self.simplex.kind


def assign_nodes(g: Geometry, oh_cutoff: float = OH_CUTOFF) -> list[Node]:
    """Group every hydrogen with its nearest oxygen.

    Nodes are returned in oxygen atom order. An H equidistant from two
    oxygens goes to the lower-index O.
    """
    if oh_cutoff <= 0:
        raise ValueError("oh_cutoff must be positive")
    other = sorted(set(g.symbols) - {"O", "H"})
    if other:
        raise GeometryError(f"only O/H systems are supported, found {', '.join(other)}")
    o_idx = [i for i, s in enumerate(g.symbols) if s == "O"]
    h_idx = [i for i, s in enumerate(g.symbols) if s == "H"]
    if h_idx and not o_idx:
        raise GeometryError("hydrogen atoms present but no oxygen")
    members = {o: [o] for o in o_idx}
    if h_idx:
        d = np.linalg.norm(g.positions[h_idx][:, None, :] - g.positions[o_idx][None, :, :], axis=-1)
        nearest = np.argmin(d, axis=1)
        for row, h in enumerate(h_idx):
            col = nearest[row]
            if d[row, col] > oh_cutoff:
                raise GeometryError(
                    f"orphan hydrogen {h}: nearest oxygen at {d[row, col]:.3f} A > {oh_cutoff} A"
                )
            members[o_idx[col]].append(h)
    nodes = []
    for o in o_idx:
        atoms = tuple(sorted(members[o]))
        n_h = len(atoms) - 1
        charge = n_h - 2
        nodes.append(Node(atoms, formula((g.symbols[i] for i in atoms), charge), charge))
    return nodes


def _node_oxygens(g: Geometry, node: Node) -> np.ndarray:
    return g.positions[[i for i in node.atom_indices if g.symbols[i] == "O"]]


def build_graph(g: Geometry, nodes: Sequence[Node], oo_cutoff: float) -> FragGraph:
    """Connect nodes whose closest O-O distance is within ``oo_cutoff``."""
    if oo_cutoff <= 0:
        raise ValueError("oo_cutoff must be positive")
    oxy = [_node_oxygens(g, n) for n in nodes]
    edges = set()
    for i, j in itertools.combinations(range(len(nodes)), 2):
        d = np.linalg.norm(oxy[i][:, None, :] - oxy[j][None, :, :], axis=-1).min()
        if d <= oo_cutoff:
            edges.add((i, j))
    graph = FragGraph(list(nodes), edges, max_rank=1)
    graph.simplex_sets = enumerate_simplexes(graph, 1)
    return graph


def _kind_from_nodes(nodes: Sequence[Node], node_ids: Iterable[int]) -> str:
    # Node kinds are formulas of O/H units; rebuild the union from them.
    counts = Counter()
    charge = 0
    for n in node_ids:
        node = nodes[n]
        charge += node.charge
        counts["O"] += 1
        counts["H"] += node.charge + 2
    return formula(counts.elements(), charge)


def enumerate_simplexes(graph: FragGraph, max_rank: int) -> dict[int, list[Simplex]]:
    """All (r+1)-cliques of the graph for r = 0..max_rank.

    Cliques are grown by appending only node ids larger than the current
    maximum member, so every clique appears once, as a sorted tuple.
    """
    if max_rank < 0:
        raise ValueError("max_rank must be >= 0")
    adj = graph.neighbors()
    layers = [[(i,) for i in range(len(graph.nodes))]]
    for _ in range(max_rank):
        nxt = []
        for clique in layers[-1]:
            common = set.intersection(*(adj[i] for i in clique))
            nxt.extend(clique + (j,) for j in sorted(common) if j > clique[-1])
        layers.append(nxt)
    return {
        r: [Simplex(r, c, _kind_from_nodes(graph.nodes, c)) for c in cliques]
        for r, cliques in enumerate(layers)
    }


def compute_multiplicities(simplex_sets: Mapping[int, Iterable], max_rank: int) -> dict[tuple[int, ...], int]:
    """Inclusion-exclusion multiplicities of every simplex up to ``max_rank``.

    ``M(a) = sum over m = r..R of (-1)**(m + r) * p(a, m)`` where ``p(a, m)``
    counts the rank-m simplexes containing ``a``. Entries of
    ``simplex_sets`` may be :class:`Simplex` objects or plain node-id tuples.
    """
    mult: dict[tuple[int, ...], int] = {}
    for r in range(max_rank + 1):
        for s in simplex_sets.get(r, ()):
            mult[tuple(getattr(s, "node_ids", s))] = 0
    for beta in list(mult):
        top = len(beta)
        for size in range(1, top + 1):
            sign = -1 if (top - size) % 2 else 1
            for sub in itertools.combinations(beta, size):
                if sub not in mult:
                    raise ValueError(f"simplex set not closed: {sub} missing under {beta}")
                mult[sub] += sign
    return mult


def fragment_graph(g: Geometry, oh_cutoff: float, oo_cutoff: float, max_rank: int) -> FragGraph:
    """Nodes, edges, simplexes and multiplicities for one geometry."""
    nodes = assign_nodes(g, oh_cutoff)
    graph = build_graph(g, nodes, oo_cutoff)
    graph.max_rank = max_rank
    graph.simplex_sets = enumerate_simplexes(graph, max_rank)
    graph.multiplicities = compute_multiplicities(graph.simplex_sets, max_rank)
    return graph


def extract_fragment(g: Geometry, simplex: Simplex, nodes: Sequence[Node], system: str = "") -> Fragment:
    atoms = [i for n in simplex.node_ids for i in nodes[n].atom_indices]
    return Fragment(g.subset(atoms), simplex, (system, g.frame_id))


def extract_fragments(g: Geometry, graph: FragGraph, system: str = "") -> list[Fragment]:
    return [extract_fragment(g, s, graph.nodes, system) for s in graph.simplexes()]

