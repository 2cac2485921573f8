"""Figures rendered by ``fragpes report`` next to its delimited tables."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def error_histogram(edges: Sequence[float], counts: Sequence[int], title: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    widths = [b - a for a, b in zip(edges[:-1], edges[1:])]
    ax.bar(edges[:-1], counts, width=widths, align="edge", edgecolor="black", linewidth=0.5)
    ax.set_xlabel("|E_ML - E_exact| (kcal/mol)")
    ax.set_ylabel("frames")
    ax.set_title(title)
    return _save(fig, path)


def mae_by_slice(trace: Mapping[str, Sequence[tuple[int, float, float]]], path: Path) -> Path:
    """One line per kind: slice id against MAE on that slice before and after its update."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind, pts in sorted(trace.items()):
        s = [p[0] for p in pts]
        line, = ax.plot(s, [p[2] for p in pts], marker="o", label=f"{kind} after")
        ax.plot(s, [p[1] for p in pts], marker="x", linestyle="--", color=line.get_color(),
                label=f"{kind} before")
    ax.set_xlabel("slice")
    ax.set_ylabel("MAE on slice (kcal/mol)")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    return _save(fig, path)


def rank_errors(rows: Sequence[tuple[str, int, float]], path: Path) -> Path:
    """MAE against assembly rank, one line per (system, bank) label."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    series: dict[str, list] = {}
    for label, rank, mae in rows:
        series.setdefault(label, []).append((rank, mae))
    for label, pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    ax.set_xlabel("rank R")
    ax.set_ylabel("frame MAE (kcal/mol)")
    ax.legend(fontsize=7)
    return _save(fig, path)


def weights_bar(weights: Mapping[tuple[int, str], float], title: str, path: Path) -> Path:
    keys = sorted(weights)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(range(len(keys)), [weights[k] for k in keys])
    ax.set_xticks(range(len(keys)), [f"r{r} {k}" for r, k in keys], rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("weight")
    ax.set_title(title)
    return _save(fig, path)
