"""Pipeline configuration: an INI file with sections of ``key = value`` lines.

Relative paths are resolved against the directory holding the config file.
Each artifact stage gets a hash of exactly the settings it depends on.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .geometry import OH_CUTOFF, OO_CUTOFF_PRIMITIVE, OO_CUTOFF_TARGET
from .model import TrainConfig
from .oracle import DEFAULT_REFERENCE, DEFAULT_TARGET, OraclePotential
from .pipeline import SamplingConfig

SYSTEMS = ("primitive", "target")


class ConfigError(ValueError):
    pass


@dataclass
class SyntheticConfig:
    """Settings for the ``synth`` command's generated trajectories."""
    primitive_frames: int = 2000
    target_frames: int = 300
    primitive_waters: int = 6
    target_waters: int = 12


@dataclass
class PipelineConfig:
    source: Path | None = None
    primitive_path: Path = Path("primitive.xyz")
    target_path: Path = Path("target.xyz")
    output_dir: Path = Path("out")
    oh_cutoff: float = OH_CUTOFF
    oo_cutoff_primitive: float = OO_CUTOFF_PRIMITIVE
    oo_cutoff_target: float = OO_CUTOFF_TARGET
    max_rank: int = 3
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    transfer_max_epochs: int = 400
    reference: OraclePotential = DEFAULT_REFERENCE
    target: OraclePotential = DEFAULT_TARGET
    seed: int = 0
    unknown_kind: str = "error"
    histogram_bin: float = 0.0
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def input_path(self, system: str) -> Path:
        return self.primitive_path if system == "primitive" else self.target_path

    def oo_cutoff(self, system: str) -> float:
        return self.oo_cutoff_primitive if system == "primitive" else self.oo_cutoff_target

    def transfer_training(self) -> TrainConfig:
        return replace(self.training, max_epochs=self.transfer_max_epochs)

    def validate(self) -> "PipelineConfig":
        if min(self.oh_cutoff, self.oo_cutoff_primitive, self.oo_cutoff_target) <= 0:
            raise ConfigError("cutoffs must be positive")
        if self.max_rank < 0:
            raise ConfigError("max_rank must be >= 0")
        if not 0 < self.sampling.fraction <= 1:
            raise ConfigError("sampling fraction must lie in (0, 1]")
        if self.sampling.inertia_factor <= 0:
            raise ConfigError("inertia_factor must be positive")
        if self.unknown_kind not in ("error", "zero"):
            raise ConfigError("unknown_kind must be 'error' or 'zero'")
        if self.training.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be 'adam' or 'sgd'")
        if self.training.learning_rate < 0 or self.training.batch_size < 1:
            raise ConfigError("invalid training settings")
        for pot in (self.reference, self.target):
            if pot.body_order < 2:
                raise ConfigError("oracle body_order must be >= 2")
        return self

    # -- stage hashes --

    def stage_settings(self, stage: str, system: str = "primitive") -> dict:
        if stage == "fragment":
            return {"oh": self.oh_cutoff, "oo": self.oo_cutoff(system), "rank": self.max_rank,
                    "system": system}
        if stage == "label":
            return {"reference": asdict(self.reference), "target": asdict(self.target)}
        if stage == "train":
            return {"sampling": asdict(self.sampling), "training": asdict(self.training),
                    "seed": self.seed}
        if stage == "transfer":
            return {"transfer_max_epochs": self.transfer_max_epochs}
        raise KeyError(stage)


def digest(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


# -- parsing --

_CASTS = {int: int, float: float, str: str}


def _fill(obj, section: configparser.SectionProxy, name: str):
    """Return a copy of dataclass ``obj`` updated from ``section``; unknown keys are errors."""
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        default = getattr(obj, key)
        try:
            updates[key] = _CASTS[type(default)](raw.strip())
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[{name}] bad value for {key}: {raw!r}") from exc
    return replace(obj, **updates)


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.resolve().parent
    cfg = PipelineConfig(source=path.resolve())
    allowed = {"paths", "fragment", "sampling", "training", "oracle.reference", "oracle.target",
               "run", "report", "synthetic"}
    for name in cp.sections():
        if name not in allowed:
            raise ConfigError(f"unknown section [{name}]")
    try:
        if cp.has_section("paths"):
            p = cp["paths"]
            for key in p:
                if key not in ("primitive", "target", "output"):
                    raise ConfigError(f"[paths] unknown key {key!r}")
            cfg.primitive_path = base / p.get("primitive", str(cfg.primitive_path))
            cfg.target_path = base / p.get("target", str(cfg.target_path))
            cfg.output_dir = base / p.get("output", str(cfg.output_dir))
        else:
            cfg.primitive_path = base / cfg.primitive_path
            cfg.target_path = base / cfg.target_path
            cfg.output_dir = base / cfg.output_dir
        if cp.has_section("fragment"):
            f = cp["fragment"]
            for key in f:
                if key not in ("oh_cutoff", "oo_cutoff_primitive", "oo_cutoff_target", "max_rank"):
                    raise ConfigError(f"[fragment] unknown key {key!r}")
            cfg.oh_cutoff = f.getfloat("oh_cutoff", cfg.oh_cutoff)
            cfg.oo_cutoff_primitive = f.getfloat("oo_cutoff_primitive", cfg.oo_cutoff_primitive)
            cfg.oo_cutoff_target = f.getfloat("oo_cutoff_target", cfg.oo_cutoff_target)
            cfg.max_rank = f.getint("max_rank", cfg.max_rank)
        if cp.has_section("sampling"):
            cfg.sampling = _fill(cfg.sampling, cp["sampling"], "sampling")
        if cp.has_section("training"):
            t = dict(cp["training"])
            if "transfer_max_epochs" in t:
                cfg.transfer_max_epochs = int(t.pop("transfer_max_epochs"))
            sec = configparser.ConfigParser(interpolation=None)
            sec.read_dict({"training": t})
            cfg.training = _fill(cfg.training, sec["training"], "training")
        if cp.has_section("oracle.reference"):
            cfg.reference = _fill(cfg.reference, cp["oracle.reference"], "oracle.reference")
        if cp.has_section("oracle.target"):
            cfg.target = _fill(cfg.target, cp["oracle.target"], "oracle.target")
        if cp.has_section("run"):
            r = cp["run"]
            for key in r:
                if key not in ("seed", "unknown_kind"):
                    raise ConfigError(f"[run] unknown key {key!r}")
            cfg.seed = r.getint("seed", cfg.seed)
            cfg.unknown_kind = r.get("unknown_kind", cfg.unknown_kind).strip()
        if cp.has_section("report"):
            r = cp["report"]
            for key in r:
                if key != "histogram_bin":
                    raise ConfigError(f"[report] unknown key {key!r}")
            cfg.histogram_bin = r.getfloat("histogram_bin", cfg.histogram_bin)
        if cp.has_section("synthetic"):
            cfg.synthetic = _fill(cfg.synthetic, cp["synthetic"], "synthetic")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.training = replace(cfg.training, seed=cfg.seed)
    return cfg.validate()


def render_config(cfg: PipelineConfig) -> str:
    """INI text that :func:`load_config` reads back to the same settings."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["paths"] = {"primitive": str(cfg.primitive_path), "target": str(cfg.target_path),
                   "output": str(cfg.output_dir)}
    cp["fragment"] = {"oh_cutoff": repr(cfg.oh_cutoff), "oo_cutoff_primitive": repr(cfg.oo_cutoff_primitive),
                      "oo_cutoff_target": repr(cfg.oo_cutoff_target), "max_rank": str(cfg.max_rank)}
    cp["sampling"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(cfg.sampling).items()}
    train = {k: repr(v) if isinstance(v, float) else str(v)
             for k, v in asdict(cfg.training).items() if k != "seed"}
    train["transfer_max_epochs"] = str(cfg.transfer_max_epochs)
    cp["training"] = train
    for name, pot in (("oracle.reference", cfg.reference), ("oracle.target", cfg.target)):
        cp[name] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(pot).items()}
    cp["run"] = {"seed": str(cfg.seed), "unknown_kind": cfg.unknown_kind}
    cp["report"] = {"histogram_bin": repr(cfg.histogram_bin)}
    cp["synthetic"] = {k: str(v) for k, v in asdict(cfg.synthetic).items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
