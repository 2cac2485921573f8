"""Synthetic water-cluster trajectories for exercising the pipeline.

A cluster is grown one oxygen at a time, each new oxygen placed at a
random distance from a random existing one. Frames jitter the oxygens
and the water orientations around that base structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Geometry, assign_nodes

OH_BOND = 0.96
HOH_ANGLE = np.deg2rad(104.5)


@dataclass(frozen=True)
class ClusterSpec:
    n_waters: int = 6
    min_spacing: float = 2.6
    max_spacing: float = 3.0
    oxygen_jitter: float = 0.12
    angle_jitter: float = 0.25
    bond_jitter: float = 0.02
    min_oo: float = 2.3


PRIMITIVE = ClusterSpec(6, 2.7, 3.1, 0.12, 0.25, min_oo=2.5)
TARGET = ClusterSpec(12, 2.3, 2.5, 0.15, 0.6, min_oo=2.1)


def random_rotation(rng) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def small_rotation(rng, scale: float) -> np.ndarray:
    v = rng.normal(scale=scale, size=3)
    theta = np.linalg.norm(v)
    if theta == 0:
        return np.eye(3)
    k = v / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * K @ K


def grow_oxygens(n: int, rng, lo: float, hi: float) -> np.ndarray:
    pts = [np.zeros(3)]
    while len(pts) < n:
        anchor = pts[rng.integers(len(pts))]
        d = rng.normal(size=3)
        cand = anchor + rng.uniform(lo, hi) * d / np.linalg.norm(d)
        if min(np.linalg.norm(cand - p) for p in pts) >= lo:
            pts.append(cand)
    return np.array(pts)


def water_hydrogens(rng, bond_jitter: float = 0.0) -> np.ndarray:
    """Two H offsets in a local frame, bisector along +z."""
    half = HOH_ANGLE / 2
    out = []
    for sgn in (1, -1):
        b = OH_BOND + rng.normal(scale=bond_jitter) if bond_jitter else OH_BOND
        out.append(b * np.array([sgn * np.sin(half), 0.0, np.cos(half)]))
    return np.array(out)


def cluster_trajectory(spec: ClusterSpec, n_frames: int, seed: int = 0,
                       oh_cutoff: float = 1.4) -> list[Geometry]:
    """Frames of a jittered water cluster with atoms ordered O, H, H per water."""
    rng = np.random.default_rng(seed)
    base = grow_oxygens(spec.n_waters, rng, spec.min_spacing, spec.max_spacing)
    base -= base.mean(axis=0)
    orient = [random_rotation(rng) for _ in range(spec.n_waters)]
    symbols = ("O", "H", "H") * spec.n_waters
    frames = []
    while len(frames) < n_frames:
        oxy = base + rng.normal(scale=spec.oxygen_jitter, size=base.shape)
        d = np.linalg.norm(oxy[:, None] - oxy[None], axis=-1)
        if np.min(d[np.triu_indices(len(oxy), 1)]) < spec.min_oo:
            continue
        pos = []
        for o, R in zip(oxy, orient):
            Rj = R @ small_rotation(rng, spec.angle_jitter)
            pos.append(o)
            pos.extend(o + water_hydrogens(rng, spec.bond_jitter) @ Rj.T)
        g = Geometry(symbols, np.array(pos), frame_id=len(frames))
        nodes = assign_nodes(g, oh_cutoff)
        if any(n.charge != 0 for n in nodes):
            continue
        frames.append(g)
    return frames
