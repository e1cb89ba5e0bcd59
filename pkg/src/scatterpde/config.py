"""Flat ``key = value`` run configuration with strict validation."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .pointcloud import Domain, PointSet, sample_grid, sample_lattice, sample_random
from .spectral import PDECoefficients
from .stencil import n_unknowns
from .train import TrainConfig

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]

SAMPLINGS = ("grid", "random", "lattice")
COEFFICIENT_KEYS = ("a10", "a01", "a20", "a11", "a02")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # domain and observation points
    extent: float = 32.0
    sampling: str = "grid"
    side: int = 64
    n_points: int = 4096
    point_seed: int = 0
    fine_side: int = 256
    # equation and initial conditions (defaults: all five coefficients 1)
    a10: float = 1.0
    a01: float = 1.0
    a20: float = 1.0
    a11: float = 1.0
    a02: float = 1.0
    max_wavenumber: int = 8
    spectrum_decay: float = 0.05
    dt: float = 0.1
    T: int = 171
    n_train: int = 24
    ic_seed: int = 0
    test_seed: int = 1000
    # model and training
    Q: int = 2
    K: int = 24
    L: int = 20
    lr: float = 1e-3
    weight_decay: float = 1e-7
    batch_size: int = 9
    epochs: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # evaluation
    horizon: int = 150
    out_dir: str = "out"
    # keys set explicitly in the file (truth tables are only printed when coefficients were given)
    explicit: frozenset = field(default=frozenset(), compare=False, repr=False)

    def __post_init__(self):
        try:
            self.validate()
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def validate(self):
        if self.sampling not in SAMPLINGS:
            raise ConfigError(f"sampling must be one of {SAMPLINGS}, got {self.sampling!r}")
        Domain(self.extent)
        if self.side < 2:
            raise ConfigError("side must be >= 2")
        if self.n_points < 1:
            raise ConfigError("n_points must be >= 1")
        if self.max_wavenumber < 1:
            raise ConfigError("max_wavenumber must be >= 1")
        if self.spectrum_decay < 0:
            raise ConfigError("spectrum_decay must be non-negative")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if self.n_train < 1:
            raise ConfigError("n_train must be >= 1")
        if self.Q < 1:
            raise ConfigError("Q must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.horizon >= self.T:
            raise ConfigError(f"horizon {self.horizon} needs T >= horizon + 1, got T={self.T}")
        self.train_config()
        # coefficient stability is checked by ``generate`` (exit code 2), not here

    @property
    def m(self):
        return n_unknowns(self.Q)

    @property
    def domain(self):
        return Domain(self.extent)

    def coefficients(self) -> PDECoefficients:
        return PDECoefficients(*(getattr(self, k) for k in COEFFICIENT_KEYS))

    def has_truth(self):
        return any(k in self.explicit for k in COEFFICIENT_KEYS)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            L=self.L, lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
            epochs=self.epochs, seed=self.seed, adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2, adam_eps=self.adam_eps,
        )

    def pointset(self) -> PointSet:
        if self.sampling == "grid":
            return sample_grid(self.domain, self.side)
        if self.sampling == "random":
            return sample_random(self.domain, self.n_points, self.point_seed)
        return sample_lattice(self.domain, self.n_points, self.point_seed, self.fine_side)

    def override(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, explicit=self.explicit | frozenset(changes), **changes)


_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "explicit"}


def _convert(key, raw):
    kind = _FIELDS[key].type
    try:
        if kind == "int":
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    return RunConfig(**values, explicit=frozenset(values))


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text)
