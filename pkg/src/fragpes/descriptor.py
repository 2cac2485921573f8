"""Permutation-invariant distance descriptors in the inertia frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Fragment, Geometry

DEGENERACY_RTOL = 1e-6
THIRD_MOMENT_ATOL = 1e-9


@dataclass
class CanonicalFrame:
    origin: np.ndarray
    axes: np.ndarray  # rows are the principal axes
    moments: np.ndarray
    degenerate: bool = False

    def project(self, positions: np.ndarray) -> np.ndarray:
        return (np.asarray(positions) - self.origin) @ self.axes.T


@dataclass
class DescriptorVector:
    kind: str
    values: np.ndarray
    degenerate: bool = False

    @property
    def n_atoms(self) -> int:
        m = len(self.values)
        return int(round((1 + np.sqrt(1 + 8 * m)) / 2))


def _geometry(f) -> Geometry:
    return f.geometry if isinstance(f, Fragment) else f


def inertia_tensor(masses: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Inertia tensor about the origin of ``positions``."""
    r2 = np.einsum("ij,ij->i", positions, positions)
    return np.einsum("i,i->", masses, r2) * np.eye(3) - np.einsum("i,ij,ik->jk", masses, positions, positions)


def canonical_frame(f) -> CanonicalFrame:
    """Center of mass and principal axes, ascending by absolute moment.

    The sign of each axis is chosen so that the mass-weighted third moment
    of the atom projections is non-negative. When that moment vanishes
    the lowest-index heaviest atom must project onto the non-negative side.
    """
    g = _geometry(f)
    if len(g) < 2:
        raise ValueError("canonical frame needs at least two atoms")
    m = g.masses
    origin = m @ g.positions / m.sum()
    rel = g.positions - origin
    moments, vecs = np.linalg.eigh(inertia_tensor(m, rel))
    order = np.argsort(np.abs(moments), kind="stable")
    moments = moments[order]
    axes = vecs[:, order].T.copy()

    heavy = int(np.argmax(m))
    for k in range(3):
        proj = rel @ axes[k]
        third = float(m @ proj**3)
        if abs(third) > THIRD_MOMENT_ATOL:
            flip = third < 0
        else:
            flip = proj[heavy] < 0
        if flip:
            axes[k] = -axes[k]

    scale = np.abs(moments)
    gaps = np.abs(np.diff(scale))
    ref = np.maximum(scale[1:], scale[:-1])
    degenerate = bool(np.any(gaps <= DEGENERACY_RTOL * np.where(ref > 0, ref, 1.0)))
    return CanonicalFrame(origin, axes, moments, degenerate)


def canonical_atom_order(f, frame: CanonicalFrame | None = None) -> np.ndarray:
    """Atom permutation sorted by mass, then projections on axes 1, 2, 3, then index."""
    g = _geometry(f)
    if frame is None:
        frame = canonical_frame(g)
    p = frame.project(g.positions)
    idx = np.arange(len(g))
    # lexsort: last key is primary
    return np.lexsort((idx, p[:, 2], p[:, 1], p[:, 0], g.masses))


def pair_distances(positions: np.ndarray) -> np.ndarray:
    """Upper-triangle inter-atomic distances, row-major."""
    i, j = np.triu_indices(len(positions), k=1)
    return np.linalg.norm(positions[i] - positions[j], axis=1)


def descriptor_vector(f: Fragment) -> DescriptorVector:
    frame = canonical_frame(f)
    order = canonical_atom_order(f, frame)
    values = pair_distances(_geometry(f).positions[order])
    return DescriptorVector(f.kind, values, frame.degenerate)


def descriptor_length(n_atoms: int) -> int:
    return n_atoms * (n_atoms - 1) // 2
