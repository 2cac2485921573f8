"""``fragpes`` command line.

Commands run one pipeline stage each and exchange plain-text artifacts
under the configured output directory::

    <out>/<system>/fragments.txt          fragment
    <out>/<system>/descriptors.csv        label
    <out>/<system>/frames.csv             label
    <out>/models/                         train
    <out>/transfer/                       transfer (bank + trace.csv)
    <out>/reports/                        predict, report

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts as A
from . import pipeline as P
from . import plotting, synthetic
from .assembly import MissingModel, error_report, fragment_weights
from .config import SYSTEMS, ConfigError, PipelineConfig, digest, file_digest, load_config
from .geometry import GeometryError, read_xyz, write_xyz
from .model import KindMismatch, NumericError
from .sampling import ClusteringError

log = logging.getLogger("fragpes")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
BANKS = ("trained", "transferred")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- paths and hashes --

class Run:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.output_dir
        self._cache: dict = {}

    def sysdir(self, system: str) -> Path:
        return self.out / system

    def bank_dir(self, bank: str) -> Path:
        return self.out / ("models" if bank == "trained" else "transfer")

    def reports(self) -> Path:
        return self.out / "reports"

    def frag_hash(self, system: str) -> str:
        key = ("frag", system)
        if key not in self._cache:
            path = self.cfg.input_path(system)
            if not path.is_file():
                raise A.ArtifactError(f"{system} trajectory not found: {path}")
            self._cache[key] = digest("fragment", self.cfg.stage_settings("fragment", system),
                                      file_digest(path))
        return self._cache[key]

    def label_hash(self, system: str) -> str:
        return digest("label", self.frag_hash(system), self.cfg.stage_settings("label"))

    def train_hash(self) -> str:
        return digest("train", self.label_hash("primitive"), self.cfg.stage_settings("train"))

    def transfer_hash(self) -> str:
        return digest("transfer", self.train_hash(), self.label_hash("target"),
                      self.cfg.stage_settings("transfer"))

    def bank_hash(self, bank: str) -> str:
        return self.train_hash() if bank == "trained" else self.transfer_hash()

    def report_hash(self, system: str, bank: str, rank: int) -> str:
        return digest("predict", self.bank_hash(bank), self.label_hash(system), rank, self.cfg.unknown_kind)

    def report_name(self, system: str, bank: str, rank: int) -> str:
        return f"{system}_{bank}_R{rank}"


# -- commands --

def cmd_synth(run: Run, args) -> int:
    cfg = run.cfg
    todo = [args.system] if args.system else list(SYSTEMS)
    for system in todo:
        spec = synthetic.PRIMITIVE if system == "primitive" else synthetic.TARGET
        n_waters = cfg.synthetic.primitive_waters if system == "primitive" else cfg.synthetic.target_waters
        n_frames = cfg.synthetic.primitive_frames if system == "primitive" else cfg.synthetic.target_frames
        seed = 2 * cfg.seed + (1 if system == "primitive" else 2)
        frames = synthetic.cluster_trajectory(replace(spec, n_waters=n_waters), n_frames, seed, cfg.oh_cutoff)
        path = cfg.input_path(system)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_xyz(path, frames)
        print(f"{system}: wrote {len(frames)} frames of {n_waters} waters to {path}")
    return EXIT_OK


def cmd_fragment(run: Run, args) -> int:
    cfg, system = run.cfg, args.system or "primitive"
    path = cfg.input_path(system)
    if not path.is_file():
        raise A.ArtifactError(f"{system} trajectory not found: {path}")
    frames = read_xyz(path)
    if not frames:
        log.warning("%s: empty trajectory", system)
    try:
        records = P.fragment_frames(frames, cfg.oh_cutoff, cfg.oo_cutoff(system), cfg.max_rank, system)
    except GeometryError as exc:
        raise GeometryError(f"{path}: {exc}") from exc
    A.write_fragments(run.sysdir(system) / "fragments.txt", records, run.frag_hash(system), system,
                      len(frames))
    counts = Counter((len(r.nodes) - 1, r.kind) for r in records)
    print(f"{system}: {len(frames)} frames, {len(records)} fragments (R={cfg.max_rank})")
    print("rank,kind,count")
    for (rank, kind), n in sorted(counts.items()):
        print(f"{rank},{kind},{n}")
    return EXIT_OK


def _frames(run: Run, system: str):
    return read_xyz(run.cfg.input_path(system))


def cmd_label(run: Run, args) -> int:
    cfg, system = run.cfg, args.system or "primitive"
    _, records = A.read_fragments(run.sysdir(system) / "fragments.txt", run.frag_hash(system))
    ls = P.label_fragments(records, _frames(run, system), cfg.max_rank, cfg.target, cfg.reference, system)
    A.write_labels(run.sysdir(system), ls, run.label_hash(system))
    print(f"{system}: labeled {len(ls)} fragments in {len(ls.frame_ids)} frames")
    print("kind,count,dE_mean,dE_std")
    for kind in ls.kinds:
        _, _, y = ls.kind_data(kind)
        print(f"{kind},{len(y)},{A.fmt(np.mean(y))},{A.fmt(np.std(y))}")
    return EXIT_OK


def _load_labels(run: Run, system: str) -> P.LabeledSystem:
    return A.read_labels(run.sysdir(system), run.label_hash(system))


def cmd_train(run: Run, args) -> int:
    cfg = run.cfg
    ls = _load_labels(run, "primitive")
    bank = P.train_bank(ls, cfg.sampling, cfg.training, cfg.seed)
    if not bank:
        raise A.ArtifactError("no fragment kind has enough samples to train")
    A.write_bank(run.bank_dir("trained"), bank, run.train_hash())
    print("kind,n_samples,n_train,train_mae")
    for kind, km in sorted(bank.items()):
        print(f"{kind},{len(ls.kind_rows(kind))},{len(km.train_y)},{A.fmt(km.train_mae)}")
    return EXIT_OK


def cmd_transfer(run: Run, args) -> int:
    cfg = run.cfg
    bank = A.read_bank(run.bank_dir("trained"), run.train_hash())
    target = _load_labels(run, "target")
    primitive = _load_labels(run, "primitive")
    new, trace = P.transfer_bank(bank, target, cfg.sampling, cfg.transfer_training(), cfg.seed, primitive)
    h = run.transfer_hash()
    A.write_bank(run.bank_dir("transferred"), new, h)
    A.write_text(run.bank_dir("transferred") / "trace.csv", A.trace_text(trace, h))
    print("kind,slice,n_samples,n_train,mae_before,mae_after")
    for s in trace:
        print(f"{s.kind},{s.slice_id},{s.n_samples},{s.n_train},{A.fmt(s.mae_slice_before)},"
              f"{A.fmt(s.mae_slice_after)}")
    return EXIT_OK


def _resolve_bank(run: Run, bank: str) -> str:
    if bank != "auto":
        return bank
    return "transferred" if (run.bank_dir("transferred") / "manifest.csv").is_file() else "trained"


def cmd_predict(run: Run, args) -> int:
    cfg = run.cfg
    system = args.system or "target"
    rank = cfg.max_rank if args.rank is None else args.rank
    if not 0 <= rank <= cfg.max_rank:
        raise UsageError(f"--rank must lie in 0..{cfg.max_rank}")
    bank_name = _resolve_bank(run, args.bank)
    bank = A.read_bank(run.bank_dir(bank_name), run.bank_hash(bank_name))
    ls = _load_labels(run, system)
    preds = P.predict_system(bank, ls, rank, cfg.unknown_kind)
    rep = error_report([p.e_ml for p in preds], [p.e_exact for p in preds], cfg.histogram_bin or None)
    h = run.report_hash(system, bank_name, rank)
    name = run.report_name(system, bank_name, rank)
    head = A.header("report", h, system=system, bank=bank_name, rank=rank)
    A.write_text(run.reports() / f"predict_{name}.csv", A.csv_text(
        head, ["frame", "E_ref", "E_ML", "E_exact", "error", "n_unknown"],
        [[p.frame, p.e_ref, p.e_ml, p.e_exact, p.error, p.breakdown.n_unknown] for p in preds]))
    A.write_text(run.reports() / f"histogram_{name}.csv", A.csv_text(
        A.header("histogram", h, system=system, bank=bank_name, rank=rank), ["bin_lower", "count"],
        rep.histogram_rows()))
    mult, kind_of = {}, {}
    for f, rows in ls.frame_rows().items():
        m = (P.frame_multiplicities(ls, rows, rank) if rank < ls.max_rank
             else {ls.nodes[i]: int(ls.multiplicity[i]) for i in rows})
        kinds = {ls.nodes[i]: ls.kind[i] for i in rows}
        for key, v in m.items():
            mult[(f, key)] = v
            kind_of[(f, key)] = kinds[key]
    w = fragment_weights(mult, lambda k: kind_of[k]) if mult else None
    A.write_text(run.reports() / f"weights_{system}_R{rank}.csv", A.csv_text(
        A.header("weights", digest("weights", run.label_hash(system), rank), system=system, rank=rank),
        ["kind", "rank", "weight"],
        [[kind, r, val] for (r, kind), val in sorted(w.kind_weights.items())] if w else []))
    print(f"{system} {bank_name} R={rank}: {len(preds)} frames, MAE {A.fmt(rep.mae)}, "
          f"max {A.fmt(rep.max_error)} kcal/mol")
    return EXIT_OK



def cmd_report(run: Run, args) -> int:
    cfg = run.cfg
    rdir = run.reports()
    systems = [args.system] if args.system else list(SYSTEMS)
    ranks = [args.rank] if args.rank is not None else list(range(cfg.max_rank + 1))
    rows, figs = [], []
    for system in systems:
        for bank in BANKS:
            for rank in ranks:
                name = run.report_name(system, bank, rank)
                path = rdir / f"predict_{name}.csv"
                if not path.is_file():
                    continue
                _, data = A.read_csv(path, "report", run.report_hash(system, bank, rank))
                err = [abs(float(r["error"])) for r in data]
                mae = float(np.mean(err)) if err else 0.0
                rows.append([system, bank, rank, len(data), mae, max(err, default=0.0),
                             sum(int(r["n_unknown"]) for r in data)])
                _, hist = A.read_csv(rdir / f"histogram_{name}.csv", "histogram",
                                     run.report_hash(system, bank, rank))
                lower = [float(r["bin_lower"]) for r in hist]
                counts = [int(r["count"]) for r in hist]
                step = lower[1] - lower[0] if len(lower) > 1 else max(mae, 1.0)
                figs.append(plotting.error_histogram(lower + [lower[-1] + step] if lower else [0.0, 1.0],
                                                     counts or [0], name, rdir / f"histogram_{name}.png"))
    if not rows:
        raise A.ArtifactError(f"no prediction reports under {rdir}; run 'fragpes predict' first")
    A.write_text(rdir / "summary.csv", A.csv_text(
        A.header("summary", digest("summary", [r[:3] for r in rows])),
        ["system", "bank", "rank", "frames", "mae", "max_error", "n_unknown"], rows))
    figs.append(plotting.rank_errors([(f"{r[0]} {r[1]}", r[2], r[4]) for r in rows], rdir / "mae_by_rank.png"))
    trace_path = run.bank_dir("transferred") / "trace.csv"
    if trace_path.is_file():
        _, trace = A.read_csv(trace_path, "trace", run.transfer_hash())
        series: dict = {}
        for r in trace:
            if r["mae_slice_after"] != "nan":
                series.setdefault(r["kind"], []).append(
                    (int(r["slice"]), float(r["mae_slice_before"]), float(r["mae_slice_after"])))
        if series:
            figs.append(plotting.mae_by_slice(series, rdir / "mae_by_slice.png"))
    for system in systems:
        for rank in ranks:
            path = rdir / f"weights_{system}_R{rank}.csv"
            if path.is_file():
                _, data = A.read_csv(path, "weights", digest("weights", run.label_hash(system), rank))
                weights = {(int(r["rank"]), r["kind"]): float(r["weight"]) for r in data}
                if weights:
                    figs.append(plotting.weights_bar(weights, f"{system} R={rank}",
                                                     rdir / f"weights_{system}_R{rank}.png"))
    print("system,bank,rank,frames,mae,max_error,n_unknown")
    for r in rows:
        print(",".join(A.fmt(v) if isinstance(v, float) else str(v) for v in r))
    print(f"figures: {len(figs)} in {rdir}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "fragment": cmd_fragment,
    "label": cmd_label,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "predict": cmd_predict,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fragpes", description="Fragment-based delta-learning pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI pipeline configuration")
        p.add_argument("--system", choices=SYSTEMS)
        p.add_argument("--rank", type=int, help="max rank (fragment/label/train/transfer) "
                                               "or assembly rank (predict/report)")
        p.add_argument("--seed", type=int)
        if name == "predict":
            p.add_argument("--bank", choices=("auto",) + BANKS, default="auto")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"fragpes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {"seed": args.seed}
        if args.command not in ("predict", "report") and args.rank is not None:
            if args.rank < 0:
                raise UsageError("--rank must be >= 0")
            overrides["max_rank"] = args.rank
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](Run(cfg), args)
    except (UsageError, ConfigError) as exc:
        print(f"fragpes: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"fragpes: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (A.ArtifactError, GeometryError, MissingModel, KindMismatch, ClusteringError, OSError) as exc:
        print(f"fragpes: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
