"""Newton-Raphson receding-horizon update."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .cost import BarrierDomainError, CostSpec, cost_hessian, cost_jacobian, cost_value
from .derivatives import NumericFailureError, assemble_dy_du, shared_derivatives
from .predictor import HorizonConfig, QueueState, check_model, first_input, rollout, step_evaluator


class SolverFailure(RuntimeError):
    """The Newton system stayed singular after every damping boost."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class SolverConfig:
    newton_iters: int = 2
    damping: float = 0.0
    clip_margin: float = 1e-3
    line_search: bool = True
    max_halvings: int = 10
    max_boosts: int = 8
    damping_floor: float = 1e-6
    eps_rel: float = 1e-4

    def __post_init__(self):
        if self.newton_iters < 1:
            raise ValueError("newton_iters must be >= 1")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.clip_margin <= 0:
            raise ValueError("clip_margin must be > 0")


def newton_step(H, g, U_flat, damping: float = 0.0, max_boosts: int = 8,
                damping_floor: float = 1e-6) -> np.ndarray:
    """Solve ``(H + damping I) dU = -g`` by Cholesky and return ``U_flat + dU``.

    When the factorization fails the damping is multiplied by ten (starting
    from ``damping_floor`` times the largest diagonal magnitude of ``H``,
    at least 1, if it was zero), up to ``max_boosts`` times.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).ravel()
    U_flat = np.asarray(U_flat, dtype=float).ravel()
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g))):
        raise SolverFailure("non-finite Hessian or gradient", {"damping": damping})
    eye = np.eye(H.shape[0])
    floor = damping_floor * max(1.0, float(np.max(np.abs(np.diag(H)), initial=0.0)))
    lam = damping
    for attempt in range(max_boosts + 1):
        try:
            factor = cho_factor(H + lam * eye)
            dU = cho_solve(factor, -g)
            if np.all(np.isfinite(dU)):
                return U_flat + dU
        except LinAlgError:
            pass
        lam = floor if lam == 0 else 10.0 * lam
    raise SolverFailure("Newton system singular after damping retries",
                        {"damping": lam / 10.0, "boosts": max_boosts,
                         "min_eig": float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())})


def clip_controls(U, spec: CostSpec, clip_margin: float) -> np.ndarray:
    lo, hi = spec.bounds
    return np.clip(np.asarray(U, dtype=float), lo + clip_margin, hi - clip_margin)


def shift_warm_start(U) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return np.vstack([U[1:], U[-1:]])


def reference_window(y_ref_all, cfg: HorizonConfig) -> np.ndarray:
    """Select steps ``N1 .. N2`` from references indexed by step ``0 .. N``."""
    return np.asarray(y_ref_all, dtype=float)[cfg.N1:cfg.N2 + 1]


def window_predictions(preds, y_now, cfg: HorizonConfig) -> np.ndarray:
    """Rows ``N1 .. N2`` of the predictions, step 0 being ``y_now``."""
    stacked = np.vstack([np.asarray(y_now, dtype=float)[None, :], preds])
    return stacked[cfg.N1:cfg.N2 + 1]


@dataclass
class StepDiagnostics:
    J_before: float
    J_after: float
    step_norm: float
    halvings: int = 0
    timings: dict = field(default_factory=dict)


def control_step(model, q: QueueState, U_warm, y_ref_window, cost_spec: CostSpec,
                 horizon: HorizonConfig, solver_cfg: SolverConfig | None = None,
                 u_prev=None, y_now=None):
    """One sense-predict-optimize iteration.

    Parameters
    ----------
    model : ChildModel
    q : QueueState
        Queues at the current time; ``tau[0]`` is the slot for the control
        being decided.
    U_warm : array_like, shape (Nc, m)
    y_ref_window : array_like, shape (N2 - N1 + 1, n)
        References for prediction steps ``N1 .. N2``.
    u_prev : array_like, optional
        Last applied control; defaults to ``q.tau[0]``.
    y_now : array_like, optional
        Current output estimate, used only when ``N1 == 0``; defaults to
        ``q.alpha[0]``.

    Returns
    -------
    u_apply : ndarray, shape (m,)
    U_next : ndarray, shape (Nc, m)
        Shift-and-duplicate warm start for the next step.
    diagnostics : StepDiagnostics

    Raises
    ------
    SolverFailure
        When the Newton system stays singular or the model returns
        non-finite values at a stencil point.
    """
    solver_cfg = solver_cfg or SolverConfig()
    check_model(model, q, horizon)
    m = q.tau.shape[1]
    u_prev = q.tau[0].copy() if u_prev is None else np.asarray(u_prev, dtype=float)
    if y_now is None:
        y_now = q.alpha[0] if q.alpha.shape[0] else np.zeros(model.output_size)
    y_ref_window = np.asarray(y_ref_window, dtype=float)
    g_model = step_evaluator(model)
    timings = {"predict": 0.0, "derivatives": 0.0, "solve": 0.0}

    def evaluate(U):
        t0 = time.perf_counter()
        preds = rollout(model, q, U, horizon)
        timings["predict"] += time.perf_counter() - t0
        win = window_predictions(preds, y_now, horizon)
        try:
            J = cost_value(win, y_ref_window, U, u_prev, cost_spec, horizon)
        except BarrierDomainError:
            J = np.inf
        return J, win

    U = clip_controls(np.atleast_2d(U_warm), cost_spec, solver_cfg.clip_margin)
    J, win = evaluate(U)
    J_before = J
    halvings = 0
    step_norm = 0.0
    for _ in range(solver_cfg.newton_iters):
        t0 = time.perf_counter()
        x = first_input(q, U)
        try:
            theta, d2 = shared_derivatives(g_model, x, horizon.n_d, m,
                                           eps=solver_cfg.eps_rel * np.maximum(1.0, np.abs(x)),
                                           vectorized=True)
        except NumericFailureError as exc:
            raise SolverFailure(str(exc), {"perturbation": exc.index}) from exc
        dy_du = assemble_dy_du(theta, horizon.n_d, m)
        timings["derivatives"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        grad = cost_jacobian(dy_du, win, y_ref_window, U, u_prev, cost_spec, horizon)
        hess = cost_hessian(dy_du, d2, win, y_ref_window, U, u_prev, cost_spec, horizon)
        U_new = newton_step(hess, grad, U, solver_cfg.damping, solver_cfg.max_boosts,
                            solver_cfg.damping_floor).reshape(U.shape)
        timings["solve"] += time.perf_counter() - t0
        dU = clip_controls(U_new, cost_spec, solver_cfg.clip_margin) - U

        cand = U + dU
        J_cand, win_cand = evaluate(cand)
        if solver_cfg.line_search:
            k = 0
            while J_cand > J and k < solver_cfg.max_halvings:
                dU = 0.5 * dU
                cand = U + dU
                J_cand, win_cand = evaluate(cand)
                k += 1
            halvings += k
            if J_cand > J:
                break
        step_norm += float(np.linalg.norm(dU))
        U, J, win = cand, J_cand, win_cand

    U = clip_controls(U, cost_spec, solver_cfg.clip_margin)
    diag = StepDiagnostics(float(J_before), float(J), step_norm, halvings,
                           {k: 1e6 * v for k, v in timings.items()})
    return U[0].copy(), shift_warm_start(U), diag
