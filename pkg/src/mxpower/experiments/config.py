"""Experiment configuration: one flat set of keys shared by all experiment kinds.

Config files are flat TOML (``key = value`` lines, no tables). Unknown keys
are rejected. Resolution order: global defaults, then per-kind defaults,
then the file, then command-line overrides.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..errors import ConfigError

KINDS = ("calibration", "equivalence", "power", "knockoffs", "amp", "optimality")


@dataclass
class ExperimentConfig:
    kind: str = "calibration"
    seed: int = 1
    replicates: int = 1000
    threads: int = 1
    out: str = "results"

    # covariate model (binary Markov chain) and random-effects response
    pi_init: float = 0.1
    pi_flip: float = 0.1
    n_train: int = 100
    n_test: int = 100
    p: int = 500
    d: int = 1
    snr: float = 1.0
    sigma_eps2: float = 1.0
    ridge_folds: int = 10
    design: str = "markov"

    alpha: float = 0.05
    B: int = 500

    # calibration: run the nine one-at-a-time settings instead of one
    sweep: bool = False

    # power
    power_mode: str = "synthetic"
    h_grid: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    err2: float = 0.0
    sigma2: float = 1.0
    pi_split: float = 0.5
    n_total: int = 400
    lasso_lambda: float = 1.0
    lambda_grid: list = field(default_factory=list)
    delta: float = 2.0
    gamma_values: list = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    gamma_probs: list = field(default_factory=lambda: [1 / 3, 1 / 3, 1 / 3])
    quad_order: int = 61
    amp_check_n: int = 0

    # knockoffs
    m: int = 50
    n_signals: int = 10
    amplitude: float = 4.0
    q: float = 0.2
    rho: float = 0.0
    contrast: str = "fitted"

    # optimality
    beta: float = 0.5
    opt_m: int = 10
    opt_signals: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        positive = ("replicates", "threads", "n_train", "n_test", "p", "d", "ridge_folds",
                    "n_total", "quad_order", "m", "opt_m")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.B < 0 or self.amp_check_n < 0:
            raise ConfigError("B and amp_check_n must be nonnegative")
        for name in ("alpha", "q"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        for name in ("pi_init", "pi_flip"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie strictly inside (0, 1), got {v}")
        if not 0.0 < self.pi_split <= 1.0:
            raise ConfigError(f"pi_split must lie in (0, 1], got {self.pi_split}")
        if self.snr < 0 or self.err2 < 0 or self.sigma2 <= 0 or self.sigma_eps2 <= 0:
            raise ConfigError("snr and err2 must be >= 0; sigma2 and sigma_eps2 must be > 0")
        if self.design not in ("markov", "gaussian"):
            raise ConfigError(f"design must be 'markov' or 'gaussian', got {self.design!r}")
        if self.power_mode not in ("synthetic", "lasso"):
            raise ConfigError(f"power_mode must be 'synthetic' or 'lasso', got {self.power_mode!r}")
        if self.contrast not in ("fitted", "oracle"):
            raise ConfigError(f"contrast must be 'fitted' or 'oracle', got {self.contrast!r}")
        if not 0 <= self.n_signals <= self.m or not 0 <= self.opt_signals <= self.opt_m:
            raise ConfigError("signal counts must not exceed the number of variables")
        if len(self.gamma_values) != len(self.gamma_probs):
            raise ConfigError("gamma_values and gamma_probs must have equal length")
        if not -1.0 < self.rho < 1.0:
            raise ConfigError(f"rho must lie in (-1, 1), got {self.rho}")

    def to_dict(self):
        return dataclasses.asdict(self)


# per-kind defaults layered over the dataclass defaults
KIND_DEFAULTS = {
    "calibration": {},
    "equivalence": {},
    "power": {"p": 5, "n_test": 1000, "replicates": 2000, "B": 0},
    "knockoffs": {"n_test": 300, "replicates": 500},
    "amp": {"amp_check_n": 0},
    "optimality": {"n_test": 50, "p": 20, "replicates": 500, "B": 200},
}


def _coerce(name, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{name} must be a list")
        return [float(v) for v in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    return value


def resolve_config(kind, file_values=None, overrides=None):
    """Build a validated config for ``kind`` from file values and overrides."""
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    base = ExperimentConfig(kind=kind)
    values = base.to_dict()
    values.update(KIND_DEFAULTS[kind])
    known = set(values)
    for source in (file_values or {}, overrides or {}):
        for key, val in source.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if val is None:
                continue
            if key == "kind" and val != kind:
                raise ConfigError(f"config kind {val!r} does not match command {kind!r}")
            values[key] = _coerce(key, val, values[key])
    return ExperimentConfig(**values)


def load_config_file(path):
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"cannot parse {path}: {err}") from err
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; found tables {nested}")
    return data
