"""Central-difference sensitivities of the child model.

``central_jacobian`` builds the ``p x n`` matrix of output sensitivities to
every flattened input slot; ``assemble_dy_du`` folds the control rows of that
matrix into an ``n x m`` sensitivity by summing over history taps, i.e. the
derivative with respect to a control held constant across its history.
Second derivatives are handled the same way over the control slots only.

Evaluators ``g`` may be vectorized (accept a ``(B, p)`` batch and return
``(B, n)``), in which case every stencil point is evaluated in one call.
"""

from __future__ import annotations

import numpy as np

from .predictor import HorizonConfig, QueueState, check_model, first_input, step_evaluator


class NumericFailureError(FloatingPointError):
    """A stencil evaluation produced a non-finite value."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite model output at perturbation {index}")


def default_epsilon(x, rel: float = 1e-4) -> np.ndarray:
    """Per-slot step ``rel * max(1, |x_i|)``."""
    return rel * np.maximum(1.0, np.abs(np.asarray(x, dtype=float)))


def _steps(x, eps):
    x = np.asarray(x, dtype=float)
    if eps is None:
        eps = default_epsilon(x)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), x.shape).copy()
    if np.any(eps <= 0):
        raise ValueError("stencil step must be > 0")
    return x, eps


def _evaluate(g, points, vectorized, labels):
    if vectorized:
        vals = np.asarray(g(points), dtype=float)
    else:
        vals = np.array([np.asarray(g(pt), dtype=float) for pt in points])
    bad = ~np.isfinite(vals.reshape(len(points), -1)).all(axis=1)
    if bad.any():
        raise NumericFailureError(labels[int(np.argmax(bad))])
    return vals


def central_jacobian(g, x, eps=None, vectorized=False) -> np.ndarray:
    """``Theta[i, j] = (g(x + eps_i e_i)[j] - g(x - eps_i e_i)[j]) / (2 eps_i)``.

    Parameters
    ----------
    g : callable
        Maps a vector of length ``p`` to a vector of length ``n`` (or a
        scalar, giving a ``(p,)`` result).
    x : array_like, shape (p,)
    eps : float or array_like, optional
        Step per slot; defaults to :func:`default_epsilon`.
    vectorized : bool
        Whether ``g`` accepts a batch of points.

    Returns
    -------
    ndarray, shape (p, n)
    """
    x, eps = _steps(x, eps)
    p = x.size
    E = np.diag(eps)
    points = np.concatenate([x + E, x - E])
    labels = [(i, "+") for i in range(p)] + [(i, "-") for i in range(p)]
    vals = _evaluate(g, points, vectorized, labels)
    shape = (p,) + (1,) * (vals.ndim - 1)
    return (vals[:p] - vals[p:]) / (2.0 * eps.reshape(shape))


def central_second(g, x, eps=None, slots=None, vectorized=False) -> np.ndarray:
    """Second partials of ``g`` with respect to ``slots`` (default: all).

    Diagonal terms use the three-point stencil and off-diagonal terms the
    four-point cross stencil.

    Returns
    -------
    ndarray, shape (*out_shape, k, k)
        ``k = len(slots)``; symmetric in the last two axes by construction.
    """
    x, eps = _steps(x, eps)
    slots = list(range(x.size)) if slots is None else list(slots)
    k = len(slots)
    h = eps[slots]
    pts, labels = [x], ["center"]
    for a, i in enumerate(slots):
        for sign in (1.0, -1.0):
            pt = x.copy()
            pt[i] += sign * h[a]
            pts.append(pt)
            labels.append((i, "+" if sign > 0 else "-"))
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    for a, b in pairs:
        i, j = slots[a], slots[b]
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            pt = x.copy()
            pt[i] += si * h[a]
            pt[j] += sj * h[b]
            pts.append(pt)
            labels.append((i, j, si, sj))
    vals = _evaluate(g, np.array(pts), vectorized, labels)
    return _second_from_values(vals, h, k, pairs)


def _second_from_values(vals, h, k, pairs):
    out_shape = vals.shape[1:]
    H = np.empty((k, k) + out_shape)
    f0 = vals[0]
    for a in range(k):
        fp, fm = vals[1 + 2 * a], vals[2 + 2 * a]
        H[a, a] = (fp - 2.0 * f0 + fm) / h[a] ** 2
    base = 1 + 2 * k
    for q, (a, b) in enumerate(pairs):
        fpp, fpm, fmp, fmm = vals[base + 4 * q: base + 4 * q + 4]
        H[a, b] = H[b, a] = (fpp - fpm - fmp + fmm) / (4.0 * h[a] * h[b])
    return np.moveaxis(np.moveaxis(H, 0, -1), 0, -1)


def control_slots(n_d: int, m: int) -> list[int]:
    return list(range((n_d + 1) * m))


def assemble_dy_du(theta, n_d: int, m: int) -> np.ndarray:
    """Collapse the control rows of ``theta`` into an ``(n, m)`` sensitivity.

    Column ``i`` is ``sum_k theta[m * k + i]`` for ``k = 0 .. n_d``.
    """
    theta = np.asarray(theta, dtype=float)
    rows = (n_d + 1) * m
    if theta.ndim != 2 or theta.shape[0] < rows:
        raise ValueError(f"theta needs at least {rows} rows, got shape {theta.shape}")
    return theta[:rows].reshape(n_d + 1, m, -1).sum(axis=0).T


def fold_second(H, n_d: int, m: int) -> np.ndarray:
    """Sum a ``(..., (n_d+1)m, (n_d+1)m)`` block over history taps to ``(..., m, m)``."""
    H = np.asarray(H, dtype=float)
    lead = H.shape[:-2]
    H = H.reshape(lead + (n_d + 1, m, n_d + 1, m))
    return H.sum(axis=(-4, -2))


def assemble_d2y_du2(model, q: QueueState, U, cfg: HorizonConfig, eps=None) -> np.ndarray:
    """Per-output ``m x m`` second derivatives at the first prediction step.

    Returns
    -------
    ndarray, shape (n, m, m)
    """
    check_model(model, q, cfg)
    x = first_input(q, U)
    m = q.tau.shape[1]
    H = central_second(step_evaluator(model), x, eps, control_slots(cfg.n_d, m), vectorized=True)
    return fold_second(H, cfg.n_d, m)


def model_theta(model, q: QueueState, U, cfg: HorizonConfig, eps=None) -> np.ndarray:
    """``Theta`` of the child model at the first-step input."""
    check_model(model, q, cfg)
    return central_jacobian(step_evaluator(model), first_input(q, U), eps, vectorized=True)


def shared_derivatives(g, x, n_d: int, m: int, eps=None, vectorized=False):
    """``Theta`` and the folded control second derivative from one stencil.

    The +/- single-slot points needed by the central Jacobian are reused for
    the diagonal of the second-derivative stencil. Up to rounding in the
    batched evaluation the result equals separate calls to
    :func:`central_jacobian` and :func:`central_second` with the same steps,
    at ``2 (n_d + 1) m`` fewer evaluations.

    Returns
    -------
    theta : ndarray, shape (p, n)
    d2 : ndarray, shape (n, m, m)
    """
    x, eps = _steps(x, eps)
    p = x.size
    slots = control_slots(n_d, m)
    k = len(slots)
    h = eps[slots]
    E = np.diag(eps)
    pts = [x[None, :], x + E, x - E]
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    cross = []
    for a, b in pairs:
        for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            pt = x.copy()
            pt[slots[a]] += si * h[a]
            pt[slots[b]] += sj * h[b]
            cross.append(pt)
    if cross:
        pts.append(np.array(cross))
    points = np.concatenate(pts)
    labels = (["center"] + [(i, "+") for i in range(p)] + [(i, "-") for i in range(p)]
              + [(a, b, si, sj) for a, b in pairs for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1))])
    vals = _evaluate(g, points, vectorized, labels)
    f0, fp, fm = vals[0], vals[1:1 + p], vals[1 + p:1 + 2 * p]
    shape = (p,) + (1,) * (vals.ndim - 1)
    theta = (fp - fm) / (2.0 * eps.reshape(shape))
    # rebuild the value layout expected by _second_from_values
    second_vals = [f0]
    for a in range(k):
        second_vals += [fp[slots[a]], fm[slots[a]]]
    second_vals = np.concatenate([np.array(second_vals), vals[1 + 2 * p:]])
    H = _second_from_values(second_vals, h, k, pairs)
    return theta, fold_second(H, n_d, m)
