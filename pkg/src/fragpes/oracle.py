"""Analytic stand-in potentials for the reference and target levels of theory.

Energies depend only on oxygen positions (one per water-like node), in
kcal/mol with distances in angstrom. A Morse pair term over all O-O
pairs plus an optional k-body term over every k-tuple of oxygens within
range is enough to make the fragment expansion exact at known rank.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import Fragment, Geometry


@dataclass(frozen=True)
class OraclePotential:
    kind: str = "pairwise"
    depth: float = 5.0
    r0: float = 2.8
    alpha: float = 1.5
    amplitude: float = 0.0
    cutoff: float = 6.0
    body_order: int = 3

    def energy(self, g: Geometry) -> float:
        if self.kind == "pairwise" or self.amplitude == 0.0:
            return pair_potential_energy(g, self.depth, self.r0, self.alpha)
        return manybody_potential_energy(g, self.body_order, self.depth, self.r0, self.alpha,
                                         self.amplitude, self.cutoff)


def morse(r, depth: float, r0: float, alpha: float):
    x = 1.0 - np.exp(-alpha * (np.asarray(r) - r0))
    return depth * (x * x - 1.0)


def switch(r, cutoff: float):
    """Cosine switching function: 1 at r = 0, 0 for r >= cutoff."""
    r = np.asarray(r, dtype=float)
    return np.where(r < cutoff, 0.5 * (np.cos(np.pi * r / cutoff) + 1.0), 0.0)


def _oxygens(g) -> np.ndarray:
    g = g.geometry if isinstance(g, Fragment) else g
    return g.positions[[i for i, s in enumerate(g.symbols) if s == "O"]]


def _oo_distances(o: np.ndarray) -> np.ndarray:
    return np.linalg.norm(o[:, None, :] - o[None, :, :], axis=-1)


def pair_potential_energy(g, depth: float = 5.0, r0: float = 2.8, alpha: float = 1.5) -> float:
    """Morse energy summed over all O-O pairs."""
    o = _oxygens(g)
    if len(o) < 2:
        return 0.0
    i, j = np.triu_indices(len(o), k=1)
    r = _oo_distances(o)[i, j]
    return float(np.sum(morse(r, depth, r0, alpha)))


def manybody_potential_energy(g, order: int = 3, depth: float = 5.0, r0: float = 2.8,
                              alpha: float = 1.5, amplitude: float = 1.0, cutoff: float = 6.0) -> float:
    """Pair energy plus ``amplitude * prod(switch(r_ij))`` over every ``order``-tuple of oxygens."""
    if order < 2:
        raise ValueError("body order must be >= 2")
    e = pair_potential_energy(g, depth, r0, alpha)
    o = _oxygens(g)
    if amplitude == 0.0 or len(o) < order:
        return e
    s = switch(_oo_distances(o), cutoff)
    total = 0.0
    for tup in itertools.combinations(range(len(o)), order):
        prod = 1.0
        for a, b in itertools.combinations(tup, 2):
            prod *= s[a, b]
            if prod == 0.0:
                break
        total += prod
    return e + amplitude * total


def delta_label(fragment, target: OraclePotential, reference: OraclePotential) -> float:
    """Target-minus-reference energy of a fragment (kcal/mol)."""
    g = fragment.geometry if isinstance(fragment, Fragment) else fragment
    return target.energy(g) - reference.energy(g)


DEFAULT_REFERENCE = OraclePotential("pairwise", depth=5.0, r0=2.8, alpha=1.5)
DEFAULT_TARGET = OraclePotential("k-body", depth=6.0, r0=2.75, alpha=1.7, amplitude=1.5,
                                 cutoff=6.0, body_order=3)

