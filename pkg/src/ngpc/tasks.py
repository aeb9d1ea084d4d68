"""Reference paths: Eight, Pringle and Line.

Every generator accepts a scalar time or an array of times and returns an
array whose last axis holds the three pose coordinates (mm).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateParameterError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryParams:
    A: float
    B: float
    C: float
    omega: float
    y0: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be > 0")
        object.__setattr__(self, "y0", tuple(float(v) for v in self.y0))


def _stack(a, b, c):
    return np.stack(np.broadcast_arrays(a, b, c), axis=-1)


def eight_ref(t, p: TrajectoryParams) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    s, c = np.sin(p.omega * t), np.cos(p.omega * t)
    return _stack(p.A * s**2 + p.y0[0], p.B * s * c + p.y0[1], p.C * s + p.y0[2])


def _paraboloid(p: TrajectoryParams, d1, d2):
    if p.B == 0 or p.C == 0:
        raise DegenerateParameterError("B and C must be nonzero")
    return p.A * (d2**2 / p.B**2 - d1**2 / p.C**2) + p.y0[0]


def pringle_ref(t, p: TrajectoryParams) -> np.ndarray:
    """Closed saddle curve: circle-like in (y1, y2), paraboloid in y0.

    The first coordinate is evaluated on the offset-free deviations of the
    other two, so it stays centred on ``y0[0]``.
    """
    t = np.asarray(t, dtype=float)
    phase = 2 * np.pi * p.omega * t
    d1, d2 = p.B * np.cos(phase), p.C * np.sin(phase)
    return _stack(_paraboloid(p, d1, d2), d1 + p.y0[1], d2 + p.y0[2])


def line_ref(t, p: TrajectoryParams) -> np.ndarray:
    """Segment in (y1, y2) swept with a slow quadratic chirp."""
    t = np.asarray(t, dtype=float)
    phase = 2 * np.pi * p.omega * t + 1e-6 * t**2
    d1, d2 = p.B * np.sin(phase), p.C * np.sin(phase)
    return _stack(_paraboloid(p, d1, d2), d1 + p.y0[1], d2 + p.y0[2])


GENERATORS = {"eight": eight_ref, "pringle": pringle_ref, "line": line_ref}

# Defaults sized for the synthetic plant: the Eight lies on its reachable
# surface (y0 = -11 + 22 (y2 / 17)**2), the others only approximately.
DEFAULT_PARAMS = {
    "eight": TrajectoryParams(A=22.0 * 10.5**2 / 17.0**2, B=17.0, C=10.5,
                              omega=2 * np.pi / 20.0, y0=(-11.0, 0.0, 0.0)),
    "pringle": TrajectoryParams(A=1.5, B=8.5, C=10.5, omega=1 / 20.0, y0=(-8.0, 0.0, 0.0)),
    "line": TrajectoryParams(A=1.5, B=8.5, C=10.5, omega=1 / 20.0, y0=(-8.0, 0.0, 0.0)),
}


def reference(task: str, t, params: TrajectoryParams | None = None) -> np.ndarray:
    if task not in GENERATORS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(GENERATORS)}")
    return GENERATORS[task](t, params or DEFAULT_PARAMS[task])


def largest_semi_axis(task: str, params: TrajectoryParams | None = None, samples: int = 4001):
    """Half the largest per-axis extent of one period of the path."""
    p = params or DEFAULT_PARAMS[task]
    period = 2 * np.pi / p.omega if task == "eight" else 1.0 / p.omega
    y = reference(task, np.linspace(0.0, period, samples), p)
    return float(np.max(np.ptp(y, axis=0)) / 2)
