"""Synthetic tendon-driven soft actuator with optical-lace-like sensing.

Not a physical model. The plant exists to give the controller something
nonlinear, hysteretic and laggy to track with:

* each tendon command passes through a rate-independent Bouc-Wen element;
* the two hysteretic tendon strains set a lateral (``y1``) and a vertical
  (``y2``) deflection through ``tanh`` saturations, and the mesh bows along
  ``y0`` quadratically with the vertical deflection;
* the pose follows that static map through a first-order lag;
* eleven sensor channels are seeded random sigmoid mixtures of the pose and
  tendon strains, plus zero-mean Gaussian noise, clipped to ``[0, 1]``.

A hanging mass enters as a downward bias on ``y2``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

Y_RANGE = np.array([40.4, 28.3, 35.0])  # mm, reachable span per axis
DT = 1.0 / 120.0


@dataclass
class PlantParams:
    u_min: float = 0.0
    u_max: float = 3.0
    # Bouc-Wen element on the normalized command v in [0, 1]
    bw_A: float = 1.0
    bw_beta: float = 2.5
    bw_gamma: float = 2.5
    bw_alpha: float = 0.8
    # static map
    lateral_gain: float = 2.0
    vertical_gain: float = 2.0
    lateral_scale: float = 14.0
    vertical_scale: float = 17.0
    bow_scale: float = 22.0
    time_constant: float = 0.1
    # disturbance and sensing
    mass_gain: float = 0.02       # mm of y2 drop per gram
    sensor_gain: float = 1.0
    noise_amp: float = 2e-3
    seed: int = 0                 # sensor map
    noise_seed: int = 0
    n_sensors: int = 11
    max_substep: float = 0.01

    def __post_init__(self):
        if self.u_max <= self.u_min:
            raise ValueError("u_max must exceed u_min")
        if self.time_constant <= 0:
            raise ValueError("time_constant must be > 0")

    @property
    def u_rest(self) -> np.ndarray:
        return np.full(2, 0.5 * (self.u_min + self.u_max))


@dataclass
class PlantState:
    y_lag: np.ndarray            # lagged pose without disturbance bias (mm)
    z: np.ndarray                # Bouc-Wen memory per tendon
    v: np.ndarray                # last normalized command per tendon
    load_mass: float = 0.0       # grams
    em_noise_amp: float = 0.0

    def copy(self) -> "PlantState":
        return replace(self, y_lag=self.y_lag.copy(), z=self.z.copy(), v=self.v.copy())


class SoftActuatorPlant:
    """Two tendons in, three pose coordinates and eleven sensor channels out."""

    m = 2
    n = 3

    def __init__(self, params: PlantParams | None = None):
        self.params = params or PlantParams()
        rng = np.random.default_rng(self.params.seed)
        w = self.params.n_sensors
        # inputs to the sensor map: normalized pose (3) and tendon strains (2)
        self._sensor_W = rng.normal(0.0, 0.8, size=(w, 5))
        self._sensor_b = rng.normal(0.0, 0.3, size=w)
        self.reset()

    @property
    def w(self) -> int:
        return self.params.n_sensors

    def reset(self):
        p = self.params
        self.rng = np.random.default_rng(p.noise_seed)
        v0 = self.normalize(p.u_rest)
        z0 = np.zeros(2)
        self.state = PlantState(self.static_pose(self._strain(v0, z0)), z0, v0, 0.0, p.noise_amp)
        self.y, self.l = self.measure()

    def normalize(self, u) -> np.ndarray:
        p = self.params
        return (np.asarray(u, dtype=float) - p.u_min) / (p.u_max - p.u_min)

    def _strain(self, v, z):
        a = self.params.bw_alpha
        return a * v + (1.0 - a) * z

    def _rest_strain(self):
        return self.params.bw_alpha * 0.5

    def static_pose(self, h) -> np.ndarray:
        """Pose the mesh settles to for tendon strains ``h`` (no load)."""
        p = self.params
        h0 = self._rest_strain()
        lateral = np.tanh(p.lateral_gain * (h[0] - h[1]))
        vertical = np.tanh(p.vertical_gain * (h[0] + h[1] - 2 * h0))
        return np.array([
            p.bow_scale * (vertical**2 - 0.5),
            p.lateral_scale * lateral,
            p.vertical_scale * vertical,
        ])

    def static_map(self, u) -> np.ndarray:
        """Settled pose for command ``u`` with empty hysteresis memory."""
        return self.static_pose(self._strain(self.normalize(u), np.zeros(2)))

    def _bouc_wen(self, z, v_old, v_new):
        p = self.params
        dv_total = v_new - v_old
        k = max(1, int(np.ceil(np.max(np.abs(dv_total)) / p.max_substep)))
        dv = dv_total / k
        for _ in range(k):
            z = z + p.bw_A * dv - p.bw_beta * np.abs(dv) * z - p.bw_gamma * dv * np.abs(z)
        return z

    def pose(self, state: PlantState | None = None) -> np.ndarray:
        s = self.state if state is None else state
        y = s.y_lag.copy()
        y[2] -= self.params.mass_gain * s.load_mass
        half = Y_RANGE / 2
        return np.clip(y, -half, half)

    def sensors(self, y, h, noise) -> np.ndarray:
        p = self.params
        feats = np.concatenate([2.0 * y / Y_RANGE, 2.0 * h - 1.0])
        pre = p.sensor_gain * (self._sensor_W @ feats) + self._sensor_b
        return np.clip(0.5 * (1.0 + np.tanh(0.5 * pre)) + noise, 0.0, 1.0)

    def measure(self):
        s = self.state
        y = self.pose()
        noise = self.rng.normal(0.0, 1.0, size=self.w) * s.em_noise_amp
        return y, self.sensors(y, self._strain(s.v, s.z), noise)

    def step(self, u, dt: float = DT):
        """Apply ``u`` for ``dt`` seconds; returns the new ``(y, l)``."""
        if dt <= 0:
            raise ValueError("dt must be > 0")
        u = np.asarray(u, dtype=float)
        if u.shape != (2,) or not np.all(np.isfinite(u)):
            raise ValueError(f"plant input must be 2 finite values, got {u!r}")
        s = self.state
        v = self.normalize(u)
        z = self._bouc_wen(s.z, s.v, v)
        target = self.static_pose(self._strain(v, z))
        a = 1.0 - np.exp(-dt / self.params.time_constant)
        s.y_lag = s.y_lag + a * (target - s.y_lag)
        s.z, s.v = z, v
        self.y, self.l = self.measure()
        return self.y.copy(), self.l.copy()

    def apply_disturbance(self, mass_g: float, em_amp: float | None = None):
        """Hang ``mass_g`` grams on the end effector and set the sensor noise level."""
        if mass_g < 0:
            raise ValueError("mass must be >= 0")
        self.state.load_mass = float(mass_g)
        if em_amp is not None:
            self.state.em_noise_amp = float(em_amp)
        # the load shows immediately; sensor noise is drawn at the next step
        self.y = self.pose()
        self.l = self.sensors(self.y, self._strain(self.state.v, self.state.z), 0.0)
        return self.y.copy()
