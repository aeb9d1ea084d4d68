import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_model, random_queue
from ngpc.cost import CostSpec, cost_value
from ngpc.predictor import HorizonConfig, QueueState, rollout
from ngpc.recnn import ChildModel, dense
from ngpc.solver import (
    SolverConfig, SolverFailure, clip_controls, control_step, newton_step, reference_window,
    shift_warm_start, window_predictions,
)


def test_newton_quadratic_exact():
    U_star = np.array([0.3, -1.2, 2.0])
    U0 = np.zeros(3)
    out = newton_step(2 * np.eye(3), 2 * (U0 - U_star), U0)
    assert np.allclose(out, U_star, rtol=0, atol=1e-15)


@given(st.integers(1, 6), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_newton_general_convex_quadratic(k, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(k, k))
    A = M @ M.T + 0.5 * np.eye(k)
    b = rng.normal(size=k)
    U0 = rng.normal(size=k)
    # J = 0.5 U^T A U + b^T U, minimizer -A^{-1} b
    out = newton_step(A, A @ U0 + b, U0)
    assert np.allclose(out, np.linalg.solve(A, -b), rtol=0, atol=1e-9)


def test_zero_gradient_is_stationary():
    U = np.array([1.0, 2.0])
    assert np.array_equal(newton_step(np.eye(2), np.zeros(2), U), U)


def test_singular_hessian_damped_by_hand():
    g = np.array([1.0, -2.0])
    out = newton_step(np.zeros((2, 2)), g, np.zeros(2), damping_floor=1e-3)
    assert np.allclose(out, -g / 1e-3, rtol=1e-12)
    out = newton_step(np.zeros((2, 2)), g, np.zeros(2), damping=0.5)
    assert np.allclose(out, -g / 0.5, rtol=1e-12)


def test_indefinite_hessian_boosted_until_factorable():
    H = np.diag([1.0, -3.0])
    out = newton_step(H, np.array([1.0, 1.0]), np.zeros(2), damping=1.0)
    lam = 10.0
    assert np.allclose(out, np.linalg.solve(H + lam * np.eye(2), [-1.0, -1.0]))


def test_hopeless_hessian_raises_with_diagnostics():
    with pytest.raises(SolverFailure) as info:
        newton_step(-1e12 * np.eye(2), np.ones(2), np.zeros(2), max_boosts=2)
    assert "min_eig" in info.value.diagnostics
    with pytest.raises(SolverFailure):
        newton_step(np.eye(2), np.array([np.nan, 0.0]), np.zeros(2))


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_newton_output_finite(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(4, 4))
    H = 0.5 * (M + M.T)
    out = newton_step(H, rng.normal(size=4), rng.normal(size=4))
    assert np.all(np.isfinite(out))


def test_clip_controls():
    spec = CostSpec(r=3.0, b=1.5)
    U = np.array([[1.0, 4.5], [-2.0, 2.0]])
    out = clip_controls(U, spec, 0.01)
    assert np.array_equal(out, [[1.0, 2.99], [0.01, 2.0]])


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8))
def test_clipped_inside_barrier(values):
    spec = CostSpec(s=1.0, r=3.0, b=1.5)
    out = clip_controls(np.array(values), spec, 1e-3)
    lo, hi = spec.bounds
    assert np.all(out > lo) and np.all(out < hi)


def test_warm_start_and_windows():
    U = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(shift_warm_start(U), [[3, 4], [5, 6], [5, 6]])
    cfg = HorizonConfig(N=3, N1=0, N2=2)
    preds = np.arange(9.0).reshape(3, 3)
    got = window_predictions(preds, [-1.0, -2.0, -3.0], cfg)
    assert np.array_equal(got, [[-1, -2, -3], [0, 1, 2], [3, 4, 5]])
    assert np.array_equal(reference_window(np.arange(4.0)[:, None], cfg), [[0], [1], [2]])


def linear_child(rng, m=2, n=3, w=11, cfg=HorizonConfig()):
    p = (cfg.n_d + 1) * m + cfg.d_d * n + w
    W = rng.normal(0, 0.5, size=(n, p))
    return ChildModel([dense(n, "linear")], p, [{"W": W, "b": rng.normal(size=n)}])


def test_already_optimal_keeps_center():
    cfg = HorizonConfig()
    rng = np.random.default_rng(0)
    model = random_model("fc", 20, 0)
    q = random_queue(cfg, rng)
    q.tau[:] = 1.5
    U = np.full((1, 2), 1.5)
    ref = rollout(model, q, U, cfg)
    spec = CostSpec(Q=np.eye(3), Lambda=np.eye(2), s=1e-3, r=3.0, b=1.5)
    u, U_next, diag = control_step(model, q, U, ref, spec, cfg, u_prev=[1.5, 1.5])
    assert np.allclose(u, 1.5, atol=1e-12)
    assert U_next.shape == (1, 2)
    assert diag.J_after <= diag.J_before + 1e-12


def analytic_minimizer(model, q, ref, spec, cfg, u_prev):
    """Minimize J(u) for N=1, Nc=1 and a linear child in closed form."""
    W, b = model.weights[0]["W"], model.weights[0]["b"]
    m = q.tau.shape[1]
    D = sum(W[:, k * m:(k + 1) * m] for k in range(cfg.n_d + 1))
    c = W @ np.concatenate([np.zeros((cfg.n_d + 1) * m), q.alpha.ravel(), q.l]) + b
    r = ref[-1]
    A = D.T @ spec.Q @ D + spec.Lambda
    return np.linalg.solve(A, D.T @ spec.Q @ (r - c) + spec.Lambda @ u_prev), D


def test_one_newton_iteration_hits_minimizer():
    # dyadic weights, inputs and stencil steps keep every model evaluation
    # exact, so the stencil curvature of the linear child is exactly zero
    for seed in range(10):
        rng = np.random.default_rng(seed)
        cfg = HorizonConfig(N=1, N1=0, N2=1, Nc=1, n_d=0)
        p = 2 + cfg.d_d * 3 + 11
        W = rng.integers(-8, 9, size=(3, p)) / 8.0
        model = ChildModel([dense(3, "linear")], p, [{"W": W, "b": rng.integers(-4, 5, 3) / 4.0}])
        q = QueueState(np.full((1, 2), 0.5), rng.integers(-8, 9, (1, 3)) / 16.0, rng.integers(0, 9, 11) / 8.0)
        spec = CostSpec(Q=np.diag(rng.uniform(0.5, 2, 3)), Lambda=np.diag(rng.uniform(0.1, 1, 2)),
                        s=0.0, r=100.0, b=1.5)
        u_prev = rng.uniform(1, 2, 2)
        ref = rng.normal(size=(2, 3))
        u_star, _ = analytic_minimizer(model, q, ref, spec, cfg, u_prev)
        sc = SolverConfig(newton_iters=1, line_search=False, eps_rel=2.0 ** -10)
        u, _, _ = control_step(model, q, [[0.5, 0.5]], ref, spec, cfg, sc, u_prev=u_prev)
        assert np.allclose(u, u_star, rtol=0, atol=1e-9)


def test_linear_child_tracking_error_decreases():
    rng = np.random.default_rng(4)
    cfg = HorizonConfig()
    model = linear_child(rng, cfg=cfg)
    q = random_queue(cfg, rng)
    spec = CostSpec(Q=np.eye(3), Lambda=np.zeros((2, 2)), s=0.0, r=100.0, b=1.5)
    U0 = np.array([[1.5, 1.5]])
    ref = rollout(model, q, [[2.0, 1.0]], cfg)
    before = np.sum((ref - rollout(model, q, U0, cfg)) ** 2)
    u, _, diag = control_step(model, q, U0, ref, spec, cfg, SolverConfig(newton_iters=1), u_prev=U0[0])
    after = np.sum((ref - rollout(model, q, u[None, :], cfg)) ** 2)
    assert after < before
    assert diag.J_after < diag.J_before


@pytest.mark.parametrize("arch", ["fc", "gru", "lstm"])
def test_line_search_never_increases_cost(arch):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        cfg = HorizonConfig(Nc=2)
        model = random_model(arch, 20, seed, scale=3.0)
        q = random_queue(cfg, rng)
        spec = CostSpec(Q=np.eye(3), Lambda=0.1 * np.eye(2), s=1e-3, r=3.0, b=1.5)
        ref = rng.normal(size=(3, 3))
        U0 = rng.uniform(0.5, 2.5, (2, 2))
        u, U_next, diag = control_step(model, q, U0, ref, spec, cfg, SolverConfig(newton_iters=3),
                                       u_prev=U0[0])
        assert diag.J_after <= diag.J_before
        assert np.all(u > 0) and np.all(u < 3)
        assert np.array_equal(U_next[-1], U_next[-2])
        U_fin = np.vstack([u, U_next[-1]])
        preds = window_predictions(rollout(model, q, U_fin, cfg), q.alpha[0], cfg)
        assert np.isclose(cost_value(preds, ref, U_fin, U0[0], spec, cfg), diag.J_after, rtol=1e-12)


def test_diagnostics_timings_present():
    cfg = HorizonConfig()
    rng = np.random.default_rng(1)
    model = random_model("fc", 20, 1)
    q = random_queue(cfg, rng)
    _, _, diag = control_step(model, q, [[1.5, 1.5]], np.zeros((3, 3)), CostSpec(), cfg)
    assert set(diag.timings) == {"predict", "derivatives", "solve"}
    assert all(v >= 0 for v in diag.timings.values())
    assert diag.step_norm >= 0


def test_solver_config_validation():
    for bad in (dict(newton_iters=0), dict(damping=-1.0), dict(clip_margin=0.0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_queue_state_unchanged_by_control_step():
    cfg = HorizonConfig()
    rng = np.random.default_rng(2)
    model = random_model("gru", 20, 2)
    q = random_queue(cfg, rng)
    snapshot = QueueState(q.tau.copy(), q.alpha.copy(), q.l.copy())
    control_step(model, q, [[1.5, 1.5]], np.zeros((3, 3)), CostSpec(), cfg)
    assert np.array_equal(q.tau, snapshot.tau) and np.array_equal(q.alpha, snapshot.alpha)
