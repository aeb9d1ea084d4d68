import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_model, random_queue
from ngpc.derivatives import (
    NumericFailureError, assemble_d2y_du2, assemble_dy_du, central_jacobian, central_second,
    default_epsilon, fold_second, model_theta, shared_derivatives,
)
from ngpc.predictor import HorizonConfig, QueueState, first_input, rollout, step_evaluator
from ngpc.recnn import ChildModel, Dims, dense


def test_linear_map_exact():
    A = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, 4.0]])
    theta = central_jacobian(lambda x: A @ x, np.array([0.3, -1.0, 2.0]), eps=0.7)
    assert np.allclose(theta, A.T, rtol=0, atol=1e-13)


def test_square_at_one():
    theta = central_jacobian(lambda x: x[0] ** 2, np.array([1.0]), eps=0.1)
    assert theta.shape == (1,)
    assert np.isclose(theta[0], 2.0, rtol=0, atol=1e-14)


def test_sin_at_zero():
    d = central_jacobian(np.sin, np.array([0.0]), eps=1e-3)[0, 0]
    assert abs(1.0 - d) <= 1e-6 and d < 1.0


def test_error_ratio_second_order():
    x = np.linspace(-1.0, 1.0, 5)
    errs = []
    for eps in (1e-2, 5e-3):
        theta = central_jacobian(lambda v: np.sin(v), x, eps=eps)
        errs.append(np.max(np.abs(np.diag(theta) - np.cos(x))))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_nonfinite_reports_index():
    with pytest.raises(NumericFailureError) as info:
        central_jacobian(lambda x: np.array([np.inf]) if x[2] > 1.0 else x[:1], np.ones(3), eps=0.1)
    assert info.value.index == (2, "+")


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        central_jacobian(np.sin, np.zeros(2), eps=0.0)


def test_default_epsilon():
    assert np.allclose(default_epsilon([0.0, -3.0, 0.5]), [1e-4, 3e-4, 1e-4])


def test_second_quadratic_form():
    A = np.array([[2.0, 0.5, -1.0], [0.5, 1.0, 0.0], [-1.0, 0.0, 3.0]])
    H = central_second(lambda x: x @ A @ x, np.array([0.1, 0.2, -0.3]), eps=0.05)
    assert np.allclose(H, 2 * A, rtol=0, atol=1e-10)


def test_second_linear_is_zero():
    H = central_second(lambda x: np.array([x.sum(), 2 * x[0]]), np.ones(3), eps=0.1)
    assert H.shape == (2, 3, 3)
    assert np.allclose(H, 0.0, atol=1e-12)


def test_second_quartic():
    H = central_second(lambda x: x[0] ** 4, np.array([1.0]), eps=1e-2)
    assert abs(H[0, 0] - 12.0) < 1e-2


def test_assemble_single_tap():
    theta = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(assemble_dy_du(theta, 0, 2), theta[:2].T)


def test_assemble_two_taps_by_hand():
    r = np.arange(1.0, 16.0).reshape(5, 3)
    out = assemble_dy_du(r, 1, 2)
    assert np.array_equal(out[:, 0], r[0] + r[2])
    assert np.array_equal(out[:, 1], r[1] + r[3])
    assert np.array_equal(assemble_dy_du(np.zeros((6, 3)), 2, 2), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        assemble_dy_du(np.zeros((3, 3)), 1, 2)


def test_fold_second_by_hand():
    H = np.arange(16.0).reshape(4, 4)
    got = fold_second(H, 1, 2)
    want = np.array([[H[0, 0] + H[0, 2] + H[2, 0] + H[2, 2], H[0, 1] + H[0, 3] + H[2, 1] + H[2, 3]],
                     [H[1, 0] + H[1, 2] + H[3, 0] + H[3, 2], H[1, 1] + H[1, 3] + H[3, 1] + H[3, 3]]])
    assert np.array_equal(got, want)


def test_linear_child_has_zero_curvature():
    cfg = HorizonConfig()
    model = ChildModel.build([dense(3, "linear")], 20, seed=1)
    q = random_queue(cfg, np.random.default_rng(1))
    d2 = assemble_d2y_du2(model, q, [[1.0, 1.0]], cfg)
    assert d2.shape == (3, 2, 2)
    assert np.allclose(d2, 0.0, atol=1e-6)


def test_tanh_second_derivative_oracle():
    cfg = HorizonConfig(N=1, N1=0, N2=1, n_d=0, d_d=0)
    W, b = np.array([[0.7, -0.4]]), np.array([0.2])
    model = ChildModel([dense(1, "tanh")], 2, [{"W": W, "b": b}])
    q = QueueState([[0.0]], np.zeros((0, 1)), [0.3])
    u = 0.5
    z = W[0, 0] * u + W[0, 1] * 0.3 + b[0]
    t = np.tanh(z)
    exact = W[0, 0] ** 2 * (-2 * t * (1 - t ** 2))
    d2 = assemble_d2y_du2(model, q, [[u]], cfg, eps=1e-3)
    assert d2.shape == (1, 1, 1)
    assert abs(d2[0, 0, 0] - exact) < 1e-5


@pytest.mark.parametrize("arch", ["fc", "gru", "lstm"])
def test_second_symmetric(arch):
    cfg = HorizonConfig()
    model = random_model(arch, 20, 7)
    d2 = assemble_d2y_du2(model, random_queue(cfg, np.random.default_rng(7)), [[1.2, 1.7]], cfg)
    assert np.allclose(d2, np.swapaxes(d2, 1, 2), rtol=0, atol=1e-9)


@pytest.mark.parametrize("arch", ["fc", "gru", "lstm"])
def test_theta_repeatable(arch):
    cfg = HorizonConfig()
    model = random_model(arch, 20, 5)
    q = random_queue(cfg, np.random.default_rng(5))
    assert np.array_equal(model_theta(model, q, [[1.0, 2.0]], cfg), model_theta(model, q, [[1.0, 2.0]], cfg))


def test_dy_du_matches_shared_perturbation_of_step_one():
    rng = np.random.default_rng(11)
    cfg = HorizonConfig(N=3, Nc=1)
    model = random_model("gru", 20, 11)
    q = random_queue(cfg, rng)
    U = rng.uniform(0.5, 2.5, size=(1, 2))
    dy_du = assemble_dy_du(model_theta(model, q, U, cfg), cfg.n_d, 2)
    h = 1e-5
    for i in range(2):
        qp, qm = q.copy(), q.copy()
        qp.tau[:, i] += h
        qm.tau[:, i] -= h
        fd = (rollout(model, qp, U + h * np.eye(2)[i], cfg)[0] - rollout(model, qm, U - h * np.eye(2)[i], cfg)[0]) / (2 * h)
        assert np.allclose(dy_du[:, i], fd, rtol=1e-6, atol=1e-9)


@given(st.integers(0, 2), st.integers(0, 5000))
@settings(max_examples=20, deadline=None)
def test_shared_matches_separate(n_d, seed):
    rng = np.random.default_rng(seed)
    cfg = HorizonConfig(n_d=n_d)
    p = cfg.input_length(Dims())
    model = random_model("lstm", p, seed)
    g = step_evaluator(model)
    x = first_input(random_queue(cfg, rng), rng.uniform(0.5, 2.5, size=(1, 2)))
    eps = default_epsilon(x)
    theta, d2 = shared_derivatives(g, x, n_d, 2, eps=eps, vectorized=True)
    theta_ref = central_jacobian(g, x, eps, vectorized=True)
    slots = list(range((n_d + 1) * 2))
    d2_ref = fold_second(central_second(g, x, eps, slots, vectorized=True), n_d, 2)
    assert np.allclose(theta, theta_ref, rtol=1e-9, atol=1e-12)
    assert np.allclose(d2, d2_ref, rtol=1e-6, atol=1e-6)


def test_vectorized_equals_pointwise():
    model = random_model("fc", 20, 0)
    g = step_evaluator(model)
    x = np.random.default_rng(0).uniform(0, 1, 20)
    assert np.allclose(central_jacobian(g, x, vectorized=True), central_jacobian(g, x), rtol=0, atol=1e-10)
