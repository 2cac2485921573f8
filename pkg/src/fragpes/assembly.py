"""Full-system energies from fragment terms, error bookkeeping and cost estimates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .descriptor import DescriptorVector, descriptor_vector
from .geometry import Fragment

log = logging.getLogger(__name__)

HARTREE_TO_KCAL = 627.5094740631


class MissingModel(KeyError):
    pass


def to_kcal(value, unit: str = "kcal/mol"):
    u = unit.lower().replace(" ", "")
    if u in ("kcal/mol", "kcal"):
        return value
    if u in ("hartree", "eh", "au"):
        return np.asarray(value) * HARTREE_TO_KCAL
    raise ValueError(f"unknown energy unit {unit!r}")


@dataclass
class Contribution:
    rank: int
    kind: str
    multiplicity: int
    delta: float
    known: bool = True


@dataclass
class EnergyBreakdown:
    reference: float
    contributions: dict[tuple[int, ...], Contribution] = field(default_factory=dict)
    rank_sums: dict[int, float] = field(default_factory=dict)
    total: float = 0.0
    n_unknown: int = 0

    def correction(self) -> float:
        return sum(c.multiplicity * c.delta for c in self.contributions.values())


@dataclass
class WeightReport:
    kind_weights: dict[tuple[int, str], float]
    rank_weights: dict[int, float]


def assemble_exact(fragment_energies: Mapping, multiplicities: Mapping) -> float:
    """``sum(M * E)`` over all simplexes with a nonzero multiplicity."""
    total = 0.0
    for key, m in multiplicities.items():
        if m == 0:
            continue
        if key not in fragment_energies:
            raise KeyError(f"no energy for simplex {key}")
        total += m * fragment_energies[key]
    return total


def _descriptor(item) -> DescriptorVector:
    if isinstance(item, DescriptorVector):
        return item
    if isinstance(item, Fragment):
        return descriptor_vector(item)
    raise TypeError(f"cannot build a descriptor from {type(item).__name__}")


def assemble_ml(ref_energy: float, fragments: Mapping, multiplicities: Mapping,
                model_bank: Mapping, unknown_kind: str = "error") -> EnergyBreakdown:
    """Reference energy plus multiplicity-weighted predicted corrections.

    ``fragments`` maps simplex node tuples to :class:`Fragment` or
    :class:`DescriptorVector`. Each bank entry needs a ``predict`` method
    taking a 2-D descriptor batch. With ``unknown_kind="zero"`` fragments
    without a model contribute nothing and are counted in ``n_unknown``.
    """
    if unknown_kind not in ("error", "zero"):
        raise ValueError("unknown_kind must be 'error' or 'zero'")
    out = EnergyBreakdown(ref_energy)
    batches: dict[str, list] = {}
    for key, item in fragments.items():
        m = multiplicities[key]
        if m == 0:
            continue
        desc = _descriptor(item)
        rank = len(key) - 1
        if desc.kind not in model_bank:
            if unknown_kind == "error":
                raise MissingModel(f"no model for fragment kind {desc.kind}")
            out.contributions[key] = Contribution(rank, desc.kind, m, 0.0, known=False)
            out.n_unknown += 1
            continue
        batches.setdefault(desc.kind, []).append((key, rank, m, desc.values))
    for kind, rows in batches.items():
        pred = np.asarray(model_bank[kind].predict(np.vstack([r[3] for r in rows])), dtype=float)
        for (key, rank, m, _), p in zip(rows, pred):
            out.contributions[key] = Contribution(rank, kind, m, float(p))
    if out.n_unknown:
        log.warning("%d fragments without a model predicted as 0", out.n_unknown)
    for c in out.contributions.values():
        out.rank_sums[c.rank] = out.rank_sums.get(c.rank, 0.0) + c.multiplicity * c.delta
    out.total = ref_energy + sum(out.rank_sums[r] for r in sorted(out.rank_sums))
    return out


def ml_error_decomposition(breakdown: EnergyBreakdown, true_deltas: Mapping) -> tuple[dict, float]:
    """Per-simplex ``M * (dE_ml - dE)`` and their sum."""
    per = {key: c.multiplicity * (c.delta - true_deltas[key]) for key, c in breakdown.contributions.items()}
    return per, float(sum(per.values()))


def fragment_weights(multiplicities: Mapping, kind_of: Mapping | Callable) -> WeightReport:
    """Share of ``sum |M|`` held by each (rank, kind) and by each rank."""
    lookup = kind_of if callable(kind_of) else kind_of.__getitem__
    by_kind: dict[tuple[int, str], float] = {}
    by_rank: dict[int, float] = {}
    for key, m in multiplicities.items():
        r = len(key) - 1
        kk = (r, lookup(key))
        by_kind[kk] = by_kind.get(kk, 0.0) + abs(m)
        by_rank[r] = by_rank.get(r, 0.0) + abs(m)
    total = sum(by_rank.values())
    if total == 0:
        return WeightReport({k: 0.0 for k in by_kind}, {r: 0.0 for r in by_rank})
    return WeightReport({k: v / total for k, v in by_kind.items()},
                        {r: v / total for r, v in by_rank.items()})


@dataclass
class ErrorReport:
    mae: float
    max_error: float
    bin_edges: np.ndarray
    counts: np.ndarray

    def histogram_rows(self) -> list[tuple[float, int]]:
        return [(float(e), int(c)) for e, c in zip(self.bin_edges[:-1], self.counts)]


def error_report(predictions: Sequence[float], references: Sequence[float],
                 bin_width: float | None = None) -> ErrorReport:
    """MAE, largest absolute error and a histogram of absolute errors."""
    p = np.asarray(predictions, dtype=float)
    r = np.asarray(references, dtype=float)
    if p.shape != r.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {r.shape}")
    err = np.abs(p - r)
    if not len(err):
        return ErrorReport(0.0, 0.0, np.zeros(1), np.zeros(0, dtype=int))
    top = float(err.max())
    if bin_width is None or bin_width <= 0:
        bin_width = top / 20 if top > 0 else 1.0
    nbins = max(1, int(np.floor(top / bin_width)) + 1)
    edges = np.arange(nbins + 1) * bin_width
    idx = np.minimum((err // bin_width).astype(int), nbins - 1)
    counts = np.bincount(idx, minlength=nbins)
    return ErrorReport(float(err.mean()), top, edges, counts)


def cost_estimate(n_atoms: int, n_electrons: int = 1, n_frames: int = 1) -> tuple[int, float]:
    """Training samples ``(3N - 6)**2`` and a CCSD-like ``frames * electrons**6`` cost."""
    if n_atoms < 3:
        raise ValueError("need at least 3 atoms")
    if n_electrons < 1 or n_frames < 1:
        raise ValueError("electron and frame counts must be positive")
    return (3 * n_atoms - 6) ** 2, float(n_frames) * float(n_electrons) ** 6
