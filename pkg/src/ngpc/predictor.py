"""Input assembly and the N-step recursive prediction tree.

Queue conventions (all "most recent first"):

* ``tau`` holds ``n_d + 1`` control vectors. ``tau[0]`` is the slot for the
  control about to be applied; during a rollout it is overwritten by the
  candidate from ``U``.
* ``alpha`` holds ``d_d`` output estimates, ``alpha[0]`` being the estimate
  of the current output.
* ``l`` is the current sensor reading and stays frozen during the rollout.

A model called on ``build_input_vector(q)`` predicts the output one control
period ahead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .recnn import ChildModel, DimensionError, Dims


@dataclass(frozen=True)
class HorizonConfig:
    N: int = 3
    N1: int = 1
    N2: int = 3
    Nc: int = 1
    n_d: int = 2
    d_d: int = 1

    def __post_init__(self):
        if self.N < 1 or self.Nc < 1 or self.N2 < 1:
            raise ValueError("N, Nc and N2 must be >= 1")
        if self.N1 < 0 or self.n_d < 0 or self.d_d < 0:
            raise ValueError("N1, n_d and d_d must be >= 0")
        if not self.N1 < self.N2 <= self.N:
            raise ValueError(f"need N1 < N2 <= N, got N1={self.N1} N2={self.N2} N={self.N}")
        if self.Nc > self.N:
            raise ValueError(f"need Nc <= N, got Nc={self.Nc} N={self.N}")

    def input_length(self, dims: Dims) -> int:
        return dims.input_length(self.n_d, self.d_d)

    @property
    def window(self) -> range:
        """Prediction steps that enter the tracking cost."""
        return range(self.N1, self.N2 + 1)

    def control_row(self, step: int) -> int:
        """Row of ``U`` consumed by prediction step ``step`` (1-based)."""
        return min(step - 1, self.Nc - 1)


@dataclass
class QueueState:
    tau: np.ndarray    # (n_d + 1, m)
    alpha: np.ndarray  # (d_d, n)
    l: np.ndarray      # (w,)

    def __post_init__(self):
        self.tau = np.atleast_2d(np.asarray(self.tau, dtype=float))
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.ndim == 1:
            self.alpha = self.alpha.reshape(-1, 1) if self.alpha.size else self.alpha.reshape(0, 0)
        self.l = np.asarray(self.l, dtype=float).ravel()

    @classmethod
    def filled(cls, u, y, l, cfg: HorizonConfig) -> "QueueState":
        """Queues holding a constant (rest) state."""
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(np.tile(u, (cfg.n_d + 1, 1)), np.tile(y, (cfg.d_d, 1)).reshape(cfg.d_d, y.size),
                   np.asarray(l, dtype=float))

    def copy(self) -> "QueueState":
        return QueueState(self.tau.copy(), self.alpha.copy(), self.l.copy())

    def check(self, cfg: HorizonConfig, dims: Dims):
        if self.tau.shape != (cfg.n_d + 1, dims.m):
            raise DimensionError(f"tau shape {self.tau.shape} != {(cfg.n_d + 1, dims.m)}")
        if cfg.d_d and self.alpha.shape != (cfg.d_d, dims.n):
            raise DimensionError(f"alpha shape {self.alpha.shape} != {(cfg.d_d, dims.n)}")
        if self.l.shape != (dims.w,):
            raise DimensionError(f"sensor vector shape {self.l.shape} != {(dims.w,)}")
        if np.any(self.l < 0.0) or np.any(self.l > 1.0):
            raise ValueError("sensor channels must be normalized to [0, 1]")


def build_input_vector(q: QueueState) -> np.ndarray:
    """Flatten the queues as ``[tau taps, alpha taps, l]``, most recent tap first."""
    return np.concatenate([q.tau.ravel(), q.alpha.ravel(), q.l])


def roll_queues(q: QueueState, u_new, y_new) -> QueueState:
    tau = np.vstack([np.asarray(u_new, dtype=float)[None, :], q.tau[:-1]])
    if q.alpha.shape[0]:
        alpha = np.vstack([np.asarray(y_new, dtype=float)[None, :], q.alpha[:-1]])
    else:
        alpha = q.alpha.copy()
    return QueueState(tau, alpha, q.l.copy())


def with_control(q: QueueState, u) -> QueueState:
    """Copy of ``q`` with the ``tau[0]`` slot set to ``u``."""
    tau = q.tau.copy()
    tau[0] = u
    return QueueState(tau, q.alpha.copy(), q.l.copy())


def first_input(q0: QueueState, U) -> np.ndarray:
    """Network input of prediction step 1 for candidate sequence ``U``."""
    return build_input_vector(with_control(q0, np.asarray(U, dtype=float)[0]))


def check_model(model: ChildModel, q0: QueueState, cfg: HorizonConfig, dims: Dims | None = None):
    m = q0.tau.shape[1]
    if dims is None:
        dims = Dims(m, model.output_size, q0.l.size)
    q0.check(cfg, dims)
    p = cfg.input_length(dims)
    if model.input_size != p:
        raise DimensionError(f"model expects {model.input_size} inputs, horizon implies {p}")
    if model.output_size != dims.n:
        raise DimensionError(f"model produces {model.output_size} outputs, expected {dims.n}")


def rollout(model: ChildModel, q0: QueueState, U, cfg: HorizonConfig) -> np.ndarray:
    """Predict ``N`` future outputs for control sequence ``U``.

    Recurrent carries are reset before step 1 and then flow through the tree.

    Returns
    -------
    ndarray, shape (N, n)
        Row ``j - 1`` is the prediction for step ``j``.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape != (cfg.Nc, q0.tau.shape[1]):
        raise DimensionError(f"U has shape {U.shape}, expected {(cfg.Nc, q0.tau.shape[1])}")
    check_model(model, q0, cfg)
    model.reset_state()
    q = with_control(q0, U[0])
    out = np.empty((cfg.N, model.output_size))
    for j in range(1, cfg.N + 1):
        y = model(build_input_vector(q))
        out[j - 1] = y
        if j < cfg.N:
            q = roll_queues(q, U[cfg.control_row(j + 1)], y)
    model.reset_state()
    return out


def step_evaluator(model: ChildModel):
    """Pure batched evaluator of the first prediction step.

    Every evaluation starts from the reset carry, which is the state a
    rollout's first step sees.
    """
    def g(X):
        X = np.asarray(X, dtype=float)
        batch = None if X.ndim == 1 else X.shape[0]
        y, _ = model.step(X, model.initial_state(batch))
        return y
    return g
