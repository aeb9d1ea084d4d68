"""Experiment configuration and the line-oriented ``key = value`` file format.

Keys are ``section.field``, e.g. ``horizon.N = 3`` or ``cost.Q = 1e-3, 1, 1``
(vectors are comma separated; ``cost.Q`` and ``cost.Lambda`` give matrix
diagonals). Blank lines and ``#`` comments are ignored; unknown keys and
malformed values raise :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .cost import CostSpec
from .plant import DT, PlantParams
from .predictor import HorizonConfig
from .solver import SolverConfig
from .tasks import DEFAULT_PARAMS
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


TASK_NAMES = ("eight", "pringle", "line", "disturbance", "waypoints")


@dataclass
class CostConfig:
    Q: tuple = (1e-3, 1.0, 1.0)
    Lambda: tuple = (10.0, 10.0)
    s: float = 1e-3
    hessian_form: str = "gauss_newton"

    def __post_init__(self):
        if len(self.Q) != 3 or len(self.Lambda) != 2:
            raise ValueError("cost.Q needs 3 diagonal entries and cost.Lambda 2")
        # fail at parse time rather than at the first control step
        self.spec(0.0, 1.0)

    def spec(self, u_min: float, u_max: float) -> CostSpec:
        return CostSpec.from_limits(u_min, u_max, s=self.s, Q=np.diag(self.Q),
                                    Lambda=np.diag(self.Lambda), hessian_form=self.hessian_form)


@dataclass
class TaskConfig:
    name: str = "eight"
    A: float | None = None
    B: float | None = None
    C: float | None = None
    omega: float | None = None
    y0: tuple | None = None
    waypoints: str = ""          # CSV t,y0,y1,y2 used by the "waypoints" task

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValueError(f"unknown task {self.name!r}; choose from {TASK_NAMES}")
        if self.y0 is not None and len(np.atleast_1d(self.y0)) != 3:
            raise ValueError("task.y0 needs three comma-separated values")

    def params(self, name: str | None = None):
        base = DEFAULT_PARAMS[name or self.name]
        over = {k: getattr(self, k) for k in ("A", "B", "C", "omega", "y0")
                if getattr(self, k) is not None}
        return dataclasses.replace(base, **over)


@dataclass
class RunConfig:
    duration: float = 30.0
    dt: float = DT
    failure_policy: str = "hold"   # or "abort"

    def __post_init__(self):
        if self.failure_policy not in ("hold", "abort"):
            raise ValueError("failure_policy must be 'hold' or 'abort'")


@dataclass
class DisturbanceConfig:
    mass: float = 137.0
    em_amp: float = 6e-3
    t0: float = 4.0
    duration: float = 10.0
    target: tuple = (-11.0, 0.0, 0.0)

    def __post_init__(self):
        if self.mass < 0 or self.em_amp < 0:
            raise ValueError("disturbance.mass and disturbance.em_amp must be >= 0")
        if len(self.target) != 3:
            raise ValueError("disturbance.target needs three values")
        if not 0 <= self.t0 < self.duration:
            raise ValueError("need 0 <= disturbance.t0 < disturbance.duration")


@dataclass
class ExcitationConfig:
    stage_duration: float = 60.0
    cycles: int = 1
    seed: int = 1
    dither: float = 0.05


@dataclass
class ExperimentConfig:
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    task: TaskConfig = field(default_factory=TaskConfig)
    run: RunConfig = field(default_factory=RunConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(history_noise=1.0))

    def cost_spec(self) -> CostSpec:
        return self.cost.spec(self.plant.u_min, self.plant.u_max)


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, str):
            return raw
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        # optional fields: a number, or a vector when comma separated
        if "," in raw:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if default is None and raw.lower() == "none":
            return None
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    updates: dict[str, dict] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"line {lineno}: key {key!r} must be 'section.field'")
        section, name = key.split(".")
        if section not in {f.name for f in dataclasses.fields(cfg)}:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        sub = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(sub)}
        if name not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates.setdefault(section, {})[name] = _coerce(value, getattr(sub, name), key)
    kwargs = {}
    for section, vals in updates.items():
        try:
            kwargs[section] = dataclasses.replace(getattr(cfg, section), **vals)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"section {section!r}: {exc}") from exc
    return dataclasses.replace(cfg, **kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg: ExperimentConfig) -> str:
    """Render every field as ``key = value``; ``parse_config`` reads it back."""
    lines = []
    for f in dataclasses.fields(cfg):
        sub = getattr(cfg, f.name)
        for g in dataclasses.fields(sub):
            v = getattr(sub, g.name)
            if isinstance(v, (tuple, list, np.ndarray)):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}.{g.name} = {v}")
    return "\n".join(lines) + "\n"
