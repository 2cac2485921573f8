"""Plain-text artifacts written between pipeline stages.

Every file starts with a ``#fragpes`` header line naming the artifact
type and the hash of the settings that produced it. Readers compare that
hash with the one the current config implies and refuse stale files.
Floats are written with ``repr`` so a reload is exact and reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Geometry
from .model import GaussianNet, NNArray
from .pipeline import FragmentRecord, KindModel, LabeledSystem, SliceStep
from .sampling import ClusterModel


class ArtifactError(ValueError):
    """Missing, malformed or stale artifact."""


def fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def header(artifact: str, config_hash: str, **extra) -> str:
    parts = [f"#fragpes {artifact}", f"config={config_hash}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return " ".join(parts) + "\n"


def parse_header(line: str, artifact: str, path) -> dict[str, str]:
    fields = line.split()
    if len(fields) < 2 or fields[0] != "#fragpes" or fields[1] != artifact:
        raise ArtifactError(f"{path}: not a fragpes {artifact} file")
    out = {}
    for item in fields[2:]:
        k, _, v = item.partition("=")
        out[k] = v
    return out


def check_hash(meta: dict, expected: str | None, path) -> None:
    if expected is not None and meta.get("config") != expected:
        raise ArtifactError(f"{path}: stale artifact (config {meta.get('config')} != {expected}); "
                            "rerun the upstream command")


def _open(path: Path):
    if not Path(path).is_file():
        raise ArtifactError(f"missing artifact {path}")
    return open(path, encoding="utf-8")


def write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def csv_text(head: str, columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(head)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def read_csv(path: Path, artifact: str, expected: str | None = None) -> tuple[dict, list[dict]]:
    with _open(path) as fh:
        meta = parse_header(fh.readline(), artifact, path)
        check_hash(meta, expected, path)
        return meta, list(csv.DictReader(fh))


def nodes_str(nodes: Sequence[int]) -> str:
    return "-".join(str(n) for n in nodes)


def parse_nodes(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split("-"))


# -- fragments --

def write_fragments(path: Path, records: Sequence[FragmentRecord], config_hash: str, system: str,
                    n_frames: int) -> None:
    out = [header("fragments", config_hash, system=system, frames=n_frames)]
    for r in records:
        g = r.geometry
        out.append(f"FRAGMENT frame={r.frame} rank={len(r.nodes) - 1} nodes={nodes_str(r.nodes)} "
                   f"kind={r.kind} multiplicity={r.multiplicity} natoms={len(g)}\n")
        for s, p in zip(g.symbols, g.positions):
            out.append(f"{s} {fmt(p[0])} {fmt(p[1])} {fmt(p[2])}\n")
    write_text(path, "".join(out))


def read_fragments(path: Path, expected: str | None = None) -> tuple[dict, list[FragmentRecord]]:
    with _open(path) as fh:
        meta = parse_header(fh.readline(), "fragments", path)
        check_hash(meta, expected, path)
        lines = fh.read().splitlines()
    records = []
    i = 0
    try:
        while i < len(lines):
            head = lines[i].split()
            if not head or head[0] != "FRAGMENT":
                raise ArtifactError(f"{path}: expected FRAGMENT at line {i + 2}")
            f = dict(item.split("=", 1) for item in head[1:])
            n = int(f["natoms"])
            atoms = [ln.split() for ln in lines[i + 1:i + 1 + n]]
            if len(atoms) != n:
                raise ArtifactError(f"{path}: truncated fragment at line {i + 2}")
            g = Geometry([a[0] for a in atoms], np.array([[float(v) for v in a[1:4]] for a in atoms]),
                         frame_id=int(f["frame"]))
            records.append(FragmentRecord(int(f["frame"]), parse_nodes(f["nodes"]), f["kind"],
                                          int(f["multiplicity"]), g))
            i += n + 1
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, ArtifactError):
            raise
        raise ArtifactError(f"{path}: malformed fragment record near line {i + 2}: {exc}") from exc
    return meta, records


# -- labeled descriptors and frame energies --

def write_labels(directory: Path, ls: LabeledSystem, config_hash: str) -> None:
    rows = []
    for i in range(len(ls)):
        rows.append([ls.kind[i], ls.system, int(ls.frame[i]), len(ls.nodes[i]) - 1, nodes_str(ls.nodes[i]),
                     int(ls.multiplicity[i]), len(ls.descriptors[i]),
                     " ".join(fmt(v) for v in ls.descriptors[i]), fmt(ls.delta[i])])
    write_text(Path(directory) / "descriptors.csv",
               csv_text(header("descriptors", config_hash, system=ls.system, max_rank=ls.max_rank),
                        ["kind", "system", "frame", "rank", "nodes", "multiplicity", "n", "distances", "dE"],
                        rows))
    frows = []
    by_frame = ls.frame_rows()
    for f in ls.frame_ids:
        rws = by_frame.get(f, [])
        frows.append([f, fmt(ls.e_ref[f]), fmt(ls.e_target[f]), fmt(ls.graph_energy(f, rws))])
    write_text(Path(directory) / "frames.csv",
               csv_text(header("frames", config_hash, system=ls.system),
                        ["frame", "E_ref", "E_target", "E_graph"], frows))


def read_labels(directory: Path, expected: str | None = None) -> LabeledSystem:
    meta, rows = read_csv(Path(directory) / "descriptors.csv", "descriptors", expected)
    _, frows = read_csv(Path(directory) / "frames.csv", "frames", expected)
    try:
        ls = LabeledSystem(
            meta.get("system", ""), int(meta["max_rank"]),
            np.array([int(r["frame"]) for r in rows], dtype=int),
            [parse_nodes(r["nodes"]) for r in rows],
            [r["kind"] for r in rows],
            np.array([int(r["multiplicity"]) for r in rows], dtype=int),
            [np.array([float(v) for v in r["distances"].split()]) for r in rows],
            np.array([float(r["dE"]) for r in rows], dtype=float),
        )
        for r in frows:
            ls.e_ref[int(r["frame"])] = float(r["E_ref"])
            ls.e_target[int(r["frame"])] = float(r["E_target"])
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{directory}: malformed labels: {exc}") from exc
    return ls


# -- models --

def _matrix_lines(tag: str, a: np.ndarray) -> list[str]:
    a = np.atleast_2d(a)
    out = [f"{tag} {a.shape[0]} {a.shape[1]}\n"]
    out += [" ".join(fmt(v) for v in row) + "\n" for row in a]
    return out


def model_text(arr: NNArray, config_hash: str, seed: int) -> str:
    sizes = arr.members[0].layer_sizes
    out = [header("model", config_hash, kind=arr.kind, seed=seed),
           f"features {arr.n_features}\n",
           f"members {len(arr.members)}\n",
           "layers " + " ".join(str(s) for s in sizes) + "\n",
           "history " + (",".join(arr.history) or "-") + "\n"]
    for m, net in enumerate(arr.members):
        out.append(f"member {m} bias {fmt(net.b_out)}\n")
        for W in net.hidden:
            out += _matrix_lines("matrix", W)
        out += _matrix_lines("output", net.w_out[None, :])
    return "".join(out)


def read_model(path: Path, expected: str | None = None) -> tuple[dict, NNArray]:
    with _open(path) as fh:
        meta = parse_header(fh.readline(), "model", path)
        check_hash(meta, expected, path)
        lines = [ln.split() for ln in fh.read().splitlines()]
    try:
        d = int(lines[0][1])
        n_members = int(lines[1][1])
        sizes = [int(v) for v in lines[2][1:]]
        history = [] if lines[3][1] == "-" else lines[3][1].split(",")
        pos = 4
        members = []
        for _ in range(n_members):
            b = float(lines[pos][3])
            pos += 1
            mats = []
            for _layer in range(len(sizes) - 1):
                tag, r, c = lines[pos][0], int(lines[pos][1]), int(lines[pos][2])
                mats.append((tag, np.array([[float(v) for v in lines[pos + 1 + i]] for i in range(r)])))
                pos += r + 1
            hidden = [m for tag, m in mats if tag == "matrix"]
            out = [m for tag, m in mats if tag == "output"]
            if len(out) != 1:
                raise ValueError("missing output layer")
            members.append(GaussianNet(hidden, out[0][0], b))
    except (IndexError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed model file: {exc}") from exc
    arr = NNArray(members, meta["kind"], d, history)
    if arr.members[0].layer_sizes != sizes:
        raise ArtifactError(f"{path}: layer sizes do not match the weights")
    return meta, arr


def clusters_text(c: ClusterModel, config_hash: str, kind: str) -> str:
    out = [header("clusters", config_hash, kind=kind, seed=c.seed),
           f"k {c.k}\n", f"width {fmt(c.max_sample_to_centroid_distance)}\n",
           f"eta0 {fmt(c.avg_inertia)}\n", f"iterations {c.n_iter}\n"]
    out += _matrix_lines("centroids", c.centroids)
    out.append("inertia " + " ".join(fmt(v) for v in c.per_cluster_avg_inertia) + "\n")
    return "".join(out)


def read_clusters(path: Path, expected: str | None = None) -> ClusterModel:
    with _open(path) as fh:
        meta = parse_header(fh.readline(), "clusters", path)
        check_hash(meta, expected, path)
        lines = [ln.split() for ln in fh.read().splitlines()]
    try:
        k = int(lines[0][1])
        width = float(lines[1][1])
        eta0 = float(lines[2][1])
        n_iter = int(lines[3][1])
        r = int(lines[4][1])
        cents = np.array([[float(v) for v in lines[5 + i]] for i in range(r)])
        inertia = np.array([float(v) for v in lines[5 + r][1:]])
    except (IndexError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed cluster file: {exc}") from exc
    return ClusterModel(k, cents, np.zeros(0, dtype=int), inertia, eta0, width,
                        int(meta.get("seed", 0)), n_iter)


def train_set_text(X: np.ndarray, y: np.ndarray, config_hash: str, kind: str) -> str:
    rows = [[" ".join(fmt(v) for v in x), fmt(t)] for x, t in zip(X, y)]
    return csv_text(header("trainset", config_hash, kind=kind), ["distances", "dE"], rows)


def read_train_set(path: Path, expected: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    _, rows = read_csv(path, "trainset", expected)
    X = np.array([[float(v) for v in r["distances"].split()] for r in rows])
    return X, np.array([float(r["dE"]) for r in rows])


def safe_name(kind: str) -> str:
    return kind.replace("+", "p").replace("-", "m")


def write_bank(directory: Path, bank: dict[str, KindModel], config_hash: str) -> None:
    directory = Path(directory)
    rows = []
    for kind in sorted(bank):
        km = bank[kind]
        name = safe_name(kind)
        write_text(directory / f"{name}.model", model_text(km.array, config_hash, km.seed))
        write_text(directory / f"{name}.clusters", clusters_text(km.clusters, config_hash, kind))
        write_text(directory / f"{name}.train.csv", train_set_text(km.train_X, km.train_y, config_hash, kind))
        rows.append([kind, name, km.seed, len(km.train_y), fmt(km.train_mae),
                     ";".join(str(s) for s in km.slices) or "-"])
    write_text(directory / "manifest.csv",
               csv_text(header("manifest", config_hash),
                        ["kind", "file", "seed", "n_train", "train_mae", "slices"], rows))


def read_bank(directory: Path, expected: str | None = None) -> dict[str, KindModel]:
    directory = Path(directory)
    _, rows = read_csv(directory / "manifest.csv", "manifest", expected)
    bank = {}
    for r in rows:
        _, arr = read_model(directory / f"{r['file']}.model", expected)
        clusters = read_clusters(directory / f"{r['file']}.clusters", expected)
        X, y = read_train_set(directory / f"{r['file']}.train.csv", expected)
        slices = [] if r["slices"] == "-" else [int(s) for s in r["slices"].split(";")]
        bank[r["kind"]] = KindModel(r["kind"], arr, clusters, X, y, int(r["seed"]),
                                    float(r["train_mae"]), slices)
    return bank


def trace_text(steps: Sequence[SliceStep], config_hash: str) -> str:
    cols = ["kind", "slice", "n_samples", "n_train", "rounds", "mae_slice_before", "mae_slice_after",
            "mae_target_after", "mae_primitive_after"]
    rows = [[s.kind, s.slice_id, s.n_samples, s.n_train, s.rounds, s.mae_slice_before, s.mae_slice_after,
             s.mae_target_after, s.mae_primitive_after] for s in steps]
    return csv_text(header("trace", config_hash), cols, rows)
