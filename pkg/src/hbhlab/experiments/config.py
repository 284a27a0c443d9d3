"""Experiment configuration: a JSON tree that resolves every model, network and training field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..ansatz import NetworkConfig
from ..optimize import TrainConfig

ABLATIONS = ("baseline", "complex", "mse", "fourier", "patches", "embeddings", "float64", "curriculum")
WIDTH_LADDER = (8, 16, 32, 64, 128, 256)
DEFAULT_CURRICULUM = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)


@dataclass(frozen=True)
class NetGrid:
    """Ranges of network settings; the sweep visits their Cartesian product."""

    architectures: tuple = ("mlp",)
    depths: tuple = (2,)
    widths: tuple = (32,)
    cnn_widths: tuple = (10, 20, 44)
    parameter_fields: tuple = ("real",)
    encodings: tuple = ("plusminus",)
    precisions: tuple = ("f32",)

    def configs(self, seed: int = 0) -> list[NetworkConfig]:
        out = []
        for arch in self.architectures:
            widths = self.widths if arch == "mlp" else self.cnn_widths
            for depth in self.depths:
                for width in widths:
                    for pf in self.parameter_fields:
                        for enc in self.encodings:
                            for prec in self.precisions:
                                out.append(NetworkConfig(arch, depth, width, pf, enc, prec, seed))
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    shapes: tuple = ((4, 5),)
    particles: tuple = (4,)
    alphas: tuple = (0.0, 0.3)
    j_hop: float = 1.0
    net: NetGrid = field(default_factory=NetGrid)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(max_steps=100_000, patience=20_000))
    methods: tuple = ("supervised",)
    seeds: tuple = (0,)
    ablations: tuple = ABLATIONS
    curriculum_alphas: tuple = DEFAULT_CURRICULUM
    width_ladder: tuple = WIDTH_LADDER
    gap_fraction: float = 0.1
    output_dir: str = "results"

    def __post_init__(self):
        for name in ("shapes", "particles", "alphas", "methods", "seeds", "width_ladder"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be non-empty")
        for lx, ly in self.shapes:
            for n in self.particles:
                if not 0 <= n <= lx * ly:
                    raise ValueError(f"N={n} does not fit on a {lx}x{ly} lattice")
        for m in self.methods:
            if m not in ("sr", "site", "supervised"):
                raise ValueError(f"unknown method {m!r}")
        for a in self.ablations:
            if a not in ABLATIONS:
                raise ValueError(f"unknown ablation {a!r}; expected one of {ABLATIONS}")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **kw})


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    return x


def _build(cls, data: Optional[dict]):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: _tuplify(v) for k, v in data.items()})


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    net = _build(NetGrid, data.pop("net", None))
    train_data = data.pop("train", None)
    train = ExperimentConfig().train if train_data is None else _build(TrainConfig, {**asdict(ExperimentConfig().train), **train_data})
    cfg = _build(ExperimentConfig, data)
    return cfg.replace(net=net, train=train)


def load_config(path) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def dump_config(cfg: ExperimentConfig, path) -> None:
    """Write the fully resolved configuration (every field explicit)."""
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
