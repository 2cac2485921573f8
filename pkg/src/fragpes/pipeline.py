"""In-memory pipeline stages: fragment, label, train, transfer, predict.

The CLI wraps these with file I/O; tests and experiments call them directly.
"""

from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import sampling
from .assembly import EnergyBreakdown, assemble_ml, error_report
from .descriptor import DescriptorVector, descriptor_vector
from .geometry import (Fragment, Geometry, Simplex, compute_multiplicities, extract_fragment,
                       fragment_graph)
from .model import NNArray, TrainConfig, train_array, transfer_slice
from .oracle import OraclePotential, delta_label

log = logging.getLogger(__name__)

MIN_KIND_SAMPLES = 3


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("FRAGPES_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    threads = threads or thread_count()
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def kind_seed(seed: int, kind: str) -> int:
    return seed * 100003 + zlib.crc32(kind.encode()) % 100003


@dataclass
class FragmentRecord:
    frame: int
    nodes: tuple[int, ...]
    kind: str
    multiplicity: int
    geometry: Geometry


@dataclass
class LabeledSystem:
    """Descriptors, delta labels and multiplicities of every fragment of a trajectory."""
    system: str
    max_rank: int
    frame: np.ndarray
    nodes: list[tuple[int, ...]]
    kind: list[str]
    multiplicity: np.ndarray
    descriptors: list[np.ndarray]
    delta: np.ndarray
    e_ref: dict[int, float] = field(default_factory=dict)
    e_target: dict[int, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.kind)

    @property
    def kinds(self) -> list[str]:
        return sorted(set(self.kind))

    @property
    def frame_ids(self) -> list[int]:
        return sorted(self.e_ref) if self.e_ref else sorted(set(self.frame.tolist()))

    def kind_rows(self, kind: str) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kind) if k == kind], dtype=int)

    def kind_data(self, kind: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = self.kind_rows(kind)
        X = np.vstack([self.descriptors[i] for i in rows]) if len(rows) else np.zeros((0, 0))
        return rows, X, self.delta[rows]

    def frame_rows(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, f in enumerate(self.frame.tolist()):
            out.setdefault(f, []).append(i)
        return out

    def graph_energy(self, frame: int, rows: Iterable[int]) -> float:
        return self.e_ref[frame] + float(sum(self.multiplicity[i] * self.delta[i] for i in rows))


def fragment_frames(frames: Sequence[Geometry], oh_cutoff: float, oo_cutoff: float,
                    max_rank: int, system: str = "", threads: int | None = None) -> list[FragmentRecord]:
    def one(g: Geometry):
        graph = fragment_graph(g, oh_cutoff, oo_cutoff, max_rank)
        out = []
        for s in graph.simplexes():
            frag = extract_fragment(g, s, graph.nodes, system)
            out.append(FragmentRecord(g.frame_id, s.node_ids, s.kind, graph.multiplicities[s.node_ids],
                                      frag.geometry))
        return out

    records = []
    for chunk in parallel_map(one, list(frames), threads):
        records.extend(chunk)
    return records


def label_fragments(records: Sequence[FragmentRecord], frames: Sequence[Geometry], max_rank: int,
                    target: OraclePotential, reference: OraclePotential, system: str = "",
                    threads: int | None = None) -> LabeledSystem:
    """Descriptors and oracle delta labels for every fragment, plus frame energies."""

    def one(rec: FragmentRecord):
        if len(rec.geometry) < 2:
            raise ValueError(f"frame {rec.frame}: fragment {rec.nodes} has fewer than 2 atoms")
        frag = Fragment(rec.geometry, Simplex(len(rec.nodes) - 1, rec.nodes, rec.kind))
        return descriptor_vector(frag).values, delta_label(rec.geometry, target, reference)

    results = parallel_map(one, list(records), threads)
    ls = LabeledSystem(
        system, max_rank,
        np.array([r.frame for r in records], dtype=int),
        [tuple(r.nodes) for r in records],
        [r.kind for r in records],
        np.array([r.multiplicity for r in records], dtype=int),
        [v for v, _ in results],
        np.array([d for _, d in results], dtype=float),
    )
    for g in frames:
        ls.e_ref[g.frame_id] = reference.energy(g)
        ls.e_target[g.frame_id] = target.energy(g)
    return ls


@dataclass
class SamplingConfig:
    fraction: float = sampling.SAMPLE_FRACTION
    inertia_factor: float = sampling.INERTIA_FACTOR
    batch_size: int = 1024
    max_iter: int = 100


@dataclass
class KindModel:
    kind: str
    array: NNArray
    clusters: sampling.ClusterModel | None
    train_X: np.ndarray
    train_y: np.ndarray
    seed: int
    train_mae: float = float("nan")
    slices: list[int] = field(default_factory=list)


def _mae(arr: NNArray, X, y) -> float:
    if not len(y):
        return float("nan")
    return float(np.mean(np.abs(arr.predict(X) - y)))


def train_kind(kind: str, X: np.ndarray, y: np.ndarray, scfg: SamplingConfig, tcfg: TrainConfig,
               seed: int) -> KindModel:
    """k-means selection of a training subset, then a network array fit on it."""
    ks = kind_seed(seed, kind)
    k = sampling.sample_count(len(X), scfg.fraction)
    clusters = sampling.minibatch_kmeans(X, k, scfg.batch_size, scfg.max_iter, seed=ks)
    if scfg.fraction >= 1.0:
        idx = np.arange(len(X))
    else:
        idx = sampling.select_training_points(X, clusters.centroids)
    arr = train_array(X[idx], y[idx], replace(tcfg, seed=ks), kind=kind)
    return KindModel(kind, arr, clusters, X[idx], y[idx], ks, _mae(arr, X[idx], y[idx]))


def train_bank(ls: LabeledSystem, scfg: SamplingConfig = SamplingConfig(),
               tcfg: TrainConfig = TrainConfig(), seed: int = 0, threads: int | None = None,
               kinds: Sequence[str] | None = None) -> dict[str, KindModel]:
    todo = []
    for kind in kinds or ls.kinds:
        _, X, y = ls.kind_data(kind)
        if len(y) < MIN_KIND_SAMPLES:
            log.warning("kind %s: only %d samples, skipped", kind, len(y))
            continue
        todo.append((kind, X, y))
    models = parallel_map(lambda t: train_kind(*t, scfg, tcfg, seed), todo, threads)
    return {m.kind: m for m in models}


@dataclass
class SliceStep:
    kind: str
    slice_id: int
    n_samples: int
    n_train: int
    rounds: int
    mae_slice_before: float
    mae_slice_after: float
    mae_target_after: float
    mae_primitive_after: float


def transfer_kind(km: KindModel | None, kind: str, X: np.ndarray, y: np.ndarray,
                  scfg: SamplingConfig, tcfg: TrainConfig, seed: int,
                  primitive_X: np.ndarray | None = None, primitive_y: np.ndarray | None = None,
                  ) -> tuple[KindModel, list[SliceStep]]:
    """Walk the target data slice by slice outward from the primitive centroids.

    Every occupied slice, starting with the innermost, is tessellated recursively; its
    representative points extend the cumulative training set, and the
    array is updated with :func:`transfer_slice`.
    """
    ks = kind_seed(seed, kind)
    if km is None:
        log.warning("kind %s: no primitive model, starting cold", kind)
        cold = train_kind(kind, X, y, scfg, tcfg, seed)
        return cold, [SliceStep(kind, 1, len(y), len(cold.train_y), 0, float("nan"),
                                cold.train_mae, _mae(cold.array, X, y), float("nan"))]
    eta0 = km.clusters.avg_inertia
    part = sampling.assign_slices(X, km.clusters)
    arr = km.array
    cum_X, cum_y = km.train_X, km.train_y
    steps = []
    consumed = list(km.slices)
    for s in range(1, part.n_slices + 1):
        rows = part.members(s)
        if not len(rows):
            steps.append(SliceStep(kind, s, 0, 0, 0, *[float("nan")] * 4))
            continue
        sX, sy = X[rows], y[rows]
        before = _mae(arr, sX, sy)
        if eta0 > 0:
            res = sampling.recursive_slice_clustering(
                sX, eta0, seed=ks + s, slice_id=s, factor=scfg.inertia_factor,
                batch_size=scfg.batch_size, max_iter=scfg.max_iter)
            pick, rounds = res.training_indices, res.rounds
        else:
            pick, rounds = np.arange(len(rows)), 0
        cum_X = np.vstack([cum_X, sX[pick]])
        cum_y = np.concatenate([cum_y, sy[pick]])
        arr = transfer_slice(arr, sX[pick], sy[pick], cum_X, cum_y,
                             replace(tcfg, seed=ks + 31 * s), kind=kind, label=f"slice{s}")
        consumed.append(s)
        prim = _mae(arr, primitive_X, primitive_y) if primitive_X is not None else float("nan")
        steps.append(SliceStep(kind, s, len(rows), len(pick), rounds, before, _mae(arr, sX, sy),
                               _mae(arr, X, y), prim))
    out = KindModel(kind, arr, km.clusters, cum_X, cum_y, km.seed, _mae(arr, cum_X, cum_y), consumed)
    return out, steps


def transfer_bank(bank: dict[str, KindModel], target: LabeledSystem,
                  scfg: SamplingConfig = SamplingConfig(), tcfg: TrainConfig = TrainConfig(),
                  seed: int = 0, primitive: LabeledSystem | None = None,
                  threads: int | None = None) -> tuple[dict[str, KindModel], list[SliceStep]]:
    def one(kind):
        _, X, y = target.kind_data(kind)
        pX = py = None
        if primitive is not None and kind in primitive.kinds:
            _, pX, py = primitive.kind_data(kind)
        return transfer_kind(bank.get(kind), kind, X, y, scfg, tcfg, seed, pX, py)

    kinds = [k for k in target.kinds if len(target.kind_rows(k)) >= MIN_KIND_SAMPLES]
    out = dict(bank)
    trace = []
    for km, steps in parallel_map(one, kinds, threads):
        out[km.kind] = km
        trace.extend(steps)
    return out, trace


@dataclass
class FramePrediction:
    frame: int
    e_ref: float
    e_ml: float
    e_exact: float
    breakdown: EnergyBreakdown

    @property
    def error(self) -> float:
        return self.e_ml - self.e_exact


def frame_multiplicities(ls: LabeledSystem, rows: Sequence[int], rank: int) -> dict[tuple, int]:
    sets: dict[int, list] = {}
    for i in rows:
        key = ls.nodes[i]
        if len(key) - 1 <= rank:
            sets.setdefault(len(key) - 1, []).append(key)
    return compute_multiplicities(sets, rank)


def predict_system(bank, ls: LabeledSystem, rank: int | None = None,
                   unknown_kind: str = "error") -> list[FramePrediction]:
    """Per-frame ML and exact graph energies at ``rank`` (default: the labeled rank)."""
    if rank is None:
        rank = ls.max_rank
    if rank > ls.max_rank:
        raise ValueError(f"rank {rank} exceeds the fragmented rank {ls.max_rank}")
    models = {k: (v.array if isinstance(v, KindModel) else v) for k, v in bank.items()}
    out = []
    for frame, rows in sorted(ls.frame_rows().items()):
        if rank == ls.max_rank:
            mult = {ls.nodes[i]: int(ls.multiplicity[i]) for i in rows}
        else:
            mult = frame_multiplicities(ls, rows, rank)
        by_key = {ls.nodes[i]: i for i in rows}
        frags = {key: DescriptorVector(ls.kind[by_key[key]], ls.descriptors[by_key[key]]) for key in mult}
        bd = assemble_ml(ls.e_ref[frame], frags, mult, models, unknown_kind)
        exact = ls.e_ref[frame] + float(sum(m * ls.delta[by_key[key]] for key, m in mult.items()))
        out.append(FramePrediction(frame, ls.e_ref[frame], bd.total, exact, bd))
    return out


def system_mae(preds: Sequence[FramePrediction]) -> float:
    return error_report([p.e_ml for p in preds], [p.e_exact for p in preds]).mae
