"""Receding-horizon cost: tracking error, input-change penalty and a soft barrier.

The decision variable ``U`` has shape ``(Nc, m)``. Derivatives are built on a
frozen linearization: prediction step ``j`` responds to its own control row
``U[c(j)]`` (``c(j) = min(j - 1, Nc - 1)``) through a single ``(n, m)``
sensitivity ``dy_du``, and with curvature ``d2y_du2``.

Flattening for the Hessian is step-major: index ``k * m + i`` is row ``k``,
channel ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .predictor import HorizonConfig


class BarrierDomainError(ValueError):
    """A control value lies on or outside the barrier poles."""


@dataclass
class CostSpec:
    """Weights of the three cost terms.

    ``s = 0`` switches the barrier term off completely, including its
    ``-4/r`` offset. ``hessian_form`` selects how the tracking curvature is
    formed: ``"gauss_newton"`` uses ``dy_du.T @ Q @ dy_du``; ``"hadamard"``
    keeps only the per-channel terms ``sum_r Q_rr dy_du[r, i]**2``.
    """

    Q: np.ndarray = field(default_factory=lambda: np.eye(3))
    Lambda: np.ndarray = field(default_factory=lambda: np.eye(2) * 1e-2)
    s: float = 1e-3
    r: float = 3.0
    b: float = 1.5
    hessian_form: str = "gauss_newton"

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.Lambda = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        if np.any(np.diag(self.Q) < 0) or np.any(np.diag(self.Lambda) < 0):
            raise ValueError("Q and Lambda entries must be >= 0")
        if self.r <= 0:
            raise ValueError("barrier width r must be > 0")
        if self.s < 0:
            raise ValueError("barrier sharpness s must be >= 0")
        if self.hessian_form not in ("gauss_newton", "hadamard"):
            raise ValueError(f"unknown hessian_form {self.hessian_form!r}")

    @classmethod
    def from_limits(cls, u_min, u_max, s=1e-3, **kw) -> "CostSpec":
        return cls(s=s, r=float(u_max - u_min), b=0.5 * float(u_min + u_max), **kw)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.b - self.r / 2, self.b + self.r / 2


def _gaps(u, spec: CostSpec):
    u = np.asarray(u, dtype=float)
    lo = u + spec.r / 2 - spec.b
    hi = spec.r / 2 + spec.b - u
    if np.any(lo <= 0) or np.any(hi <= 0):
        raise BarrierDomainError(
            f"control outside the open interval ({spec.b - spec.r / 2}, {spec.b + spec.r / 2})")
    return lo, hi


def barrier(u, spec: CostSpec):
    if spec.s == 0:
        return np.zeros_like(np.asarray(u, dtype=float))
    lo, hi = _gaps(u, spec)
    return spec.s / lo + spec.s / hi - 4.0 / spec.r


def barrier_grad(u, spec: CostSpec):
    if spec.s == 0:
        return np.zeros_like(np.asarray(u, dtype=float))
    lo, hi = _gaps(u, spec)
    return -spec.s / lo**2 + spec.s / hi**2


def barrier_hess(u, spec: CostSpec):
    if spec.s == 0:
        return np.zeros_like(np.asarray(u, dtype=float))
    lo, hi = _gaps(u, spec)
    return 2 * spec.s / lo**3 + 2 * spec.s / hi**3


def input_changes(U, u_prev) -> np.ndarray:
    """``du[0] = U[0] - u_prev`` and ``du[k] = U[k] - U[k-1]``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return np.diff(np.vstack([np.asarray(u_prev, dtype=float)[None, :], U]), axis=0)


def _window_rows(cfg: HorizonConfig):
    # step 0 is the current output: it does not depend on U
    return [(w, cfg.control_row(j) if j >= 1 else None) for w, j in enumerate(cfg.window)]


def _check_window(predictions, y_ref, cfg):
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    y_ref = np.atleast_2d(np.asarray(y_ref, dtype=float))
    size = cfg.N2 - cfg.N1 + 1
    if predictions.shape[0] != size or y_ref.shape != predictions.shape:
        raise ValueError(f"predictions and y_ref must both cover {size} window steps")
    return predictions, y_ref


def cost_value(predictions, y_ref, U, u_prev, spec: CostSpec, cfg: HorizonConfig) -> float:
    """Tracking + input-change + barrier cost.

    ``predictions`` and ``y_ref`` hold one row per window step ``N1 .. N2``.
    """
    predictions, y_ref = _check_window(predictions, y_ref, cfg)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    e = y_ref - predictions
    track = float(np.einsum("ji,ik,jk->", e, spec.Q, e))
    du = input_changes(U, u_prev)
    smooth = float(np.einsum("ji,ik,jk->", du, spec.Lambda, du))
    return track + smooth + float(np.sum(barrier(U, spec)))


def cost_jacobian(dy_du, predictions, y_ref, U, u_prev, spec: CostSpec,
                  cfg: HorizonConfig) -> np.ndarray:
    """Gradient of :func:`cost_value` over ``U`` under the frozen linearization.

    Returns
    -------
    ndarray, shape (Nc, m)
    """
    predictions, y_ref = _check_window(predictions, y_ref, cfg)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    dy_du = np.asarray(dy_du, dtype=float)
    G = np.zeros_like(U)
    e = y_ref - predictions
    for w, row in _window_rows(cfg):
        if row is not None:
            G[row] += -2.0 * e[w] @ spec.Q @ dy_du
    du = input_changes(U, u_prev)
    L = spec.Lambda
    G += 2.0 * du @ L.T
    G[:-1] -= 2.0 * du[1:] @ L.T
    return G + barrier_grad(U, spec)


def cost_hessian(dy_du, d2y_du2, predictions, y_ref, U, u_prev, spec: CostSpec,
                 cfg: HorizonConfig) -> np.ndarray:
    """Symmetrized ``(Nc m) x (Nc m)`` Hessian of the cost.

    Tracking curvature sits in the diagonal blocks of the rows each window
    step uses; the input-change penalty couples neighbouring rows; the
    barrier curvature lands on the diagonal.
    """
    predictions, y_ref = _check_window(predictions, y_ref, cfg)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Nc, m = U.shape
    dy_du = np.asarray(dy_du, dtype=float)
    d2 = np.zeros((dy_du.shape[0], m, m)) if d2y_du2 is None else np.asarray(d2y_du2, dtype=float)
    if spec.hessian_form == "gauss_newton":
        curv = dy_du.T @ spec.Q @ dy_du
    else:
        curv = np.diag(np.diag(spec.Q) @ (dy_du * dy_du))
    H = np.zeros((Nc * m, Nc * m))
    e = y_ref - predictions
    for w, row in _window_rows(cfg):
        if row is None:
            continue
        sl = slice(row * m, (row + 1) * m)
        residual = np.tensordot(e[w] @ spec.Q, d2, axes=1)
        H[sl, sl] += 2.0 * curv - 2.0 * residual
    L2 = 2.0 * spec.Lambda
    for k in range(Nc):
        sk = slice(k * m, (k + 1) * m)
        H[sk, sk] += L2
        if k >= 1:
            sp = slice((k - 1) * m, k * m)
            H[sp, sp] += L2
            H[sk, sp] -= L2
            H[sp, sk] -= L2.T
    H[np.diag_indices_from(H)] += barrier_hess(U, spec).ravel()
    return 0.5 * (H + H.T)
