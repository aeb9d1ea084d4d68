"""Closed-loop experiments, RMSE statistics, disturbance runs, timing and log export."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .derivatives import assemble_dy_du, central_jacobian, central_second, control_slots, \
    fold_second, shared_derivatives
from .plant import SoftActuatorPlant
from .predictor import QueueState, build_input_vector, first_input, roll_queues, rollout, \
    step_evaluator, with_control
from .recnn import ChildModel
from .solver import SolverFailure, control_step
from .tasks import reference

# path-tracking RMSE (mean, std) in mm over 10 runs on the physical actuator
REFERENCE_RMSE = {
    "fc": {"eight": (1.36, 0.21), "pringle": (1.93, 0.48), "line": (2.02, 1.24)},
    "gru": {"eight": (1.29, 0.28), "pringle": (1.56, 0.58), "line": (2.01, 1.19)},
    "lstm": {"eight": (1.42, 0.39), "pringle": (2.35, 0.23), "line": (2.56, 1.44)},
}
# on-target timings for N = 3 with the FC model, ms
REFERENCE_TIMING_MS = {"prediction": 0.25, "jacobian": 5.86, "full": 9.07, "shared": 11.35}


@dataclass
class RunLog:
    """Per-step record of a closed-loop run.

    Row ``k`` holds the time ``t_k``, the control applied from ``t_k``, the
    true and predicted pose at ``t_k`` (the prediction was made one step
    earlier), the reference at ``t_k``, the sensor reading at ``t_k`` and the
    optimized cost.
    """

    t: np.ndarray
    u: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    y_ref: np.ndarray
    l: np.ndarray
    J: np.ndarray
    timings: np.ndarray = field(default=None)  # (T, 3) predict/derivatives/solve, us
    failures: int = 0

    def __len__(self):
        return len(self.t)

    @classmethod
    def empty(cls, m=2, n=3, w=11) -> "RunLog":
        return cls(np.zeros(0), np.zeros((0, m)), np.zeros((0, n)), np.zeros((0, n)),
                   np.zeros((0, n)), np.zeros((0, w)), np.zeros(0), np.zeros((0, 3)))


TIMING_COLUMNS = ("predict_us", "derivatives_us", "solve_us")


def log_header(m=2, n=3, w=11, timings=False) -> list[str]:
    cols = (["t"] + [f"u{i}" for i in range(m)] + [f"y{i}" for i in range(n)]
            + [f"yhat{i}" for i in range(n)] + [f"yref{i}" for i in range(n)]
            + [f"l{i}" for i in range(w)] + ["J"])
    return cols + list(TIMING_COLUMNS) if timings else cols


def _initial_queue(plant: SoftActuatorPlant, cfg: ExperimentConfig):
    u_rest = plant.params.u_rest
    return u_rest, QueueState.filled(u_rest, plant.y, plant.l, cfg.horizon)


def closed_loop(model: ChildModel, cfg: ExperimentConfig, ref_fn, steps: int,
                plant: SoftActuatorPlant | None = None, events=None, freeze_after=None):
    """Run the sense-predict-optimize-act loop for ``steps`` periods.

    ``ref_fn(times)`` returns references for an array of times. ``events``
    maps a step index to a callable applied to the plant before that step.
    From step ``freeze_after`` on, the last applied control is held instead
    of optimizing.
    """
    plant = plant or SoftActuatorPlant(cfg.plant)
    hz, dt = cfg.horizon, cfg.run.dt
    spec = cfg.cost_spec()
    m, n, w = plant.m, plant.n, plant.w
    if steps <= 0:
        return RunLog.empty(m, n, w)
    u_prev, q = _initial_queue(plant, cfg)
    U = np.tile(u_prev, (hz.Nc, 1))
    y_est = plant.y.copy()
    g_model = step_evaluator(model)
    rows = {k: np.empty((steps,) + s) for k, s in
            (("u", (m,)), ("y_true", (n,)), ("y_pred", (n,)), ("y_ref", (n,)), ("l", (w,)),
             ("J", ()), ("timings", (3,)))}
    failures = 0
    events = events or {}
    for k in range(steps):
        if k in events:
            events[k](plant)
        t = k * dt
        y_meas, l_meas = plant.y.copy(), plant.l.copy()
        q.l = l_meas
        refs = ref_fn(t + dt * np.arange(hz.N + 1))
        win_ref = refs[hz.N1:hz.N2 + 1]
        if freeze_after is not None and k >= freeze_after:
            u = u_prev.copy()
            J = np.nan
            tim = (0.0, 0.0, 0.0)
        else:
            try:
                u, U, diag = control_step(model, q, U, win_ref, spec, hz, cfg.solver,
                                          u_prev=u_prev, y_now=y_est)
                J = diag.J_after
                tim = tuple(diag.timings[key] for key in ("predict", "derivatives", "solve"))
            except SolverFailure:
                if cfg.run.failure_policy == "abort":
                    raise
                failures += 1
                u, J, tim = u_prev.copy(), np.nan, (0.0, 0.0, 0.0)
        rows["u"][k], rows["y_true"][k], rows["y_pred"][k] = u, y_meas, y_est
        rows["y_ref"][k], rows["l"][k], rows["J"][k] = refs[0], l_meas, J
        rows["timings"][k] = tim
        q_applied = with_control(q, u)
        y_next_est = g_model(build_input_vector(q_applied))
        plant.step(u, dt)
        q = roll_queues(q_applied, u, y_next_est)
        y_est, u_prev = y_next_est, u
    return RunLog(np.arange(steps) * dt, failures=failures, **rows)


def waypoint_reference(path):
    """Reference from a CSV of ``t,y0,y1,y2`` rows, linearly interpolated.

    Times before the first or after the last waypoint hold the end values.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] != 4:
        raise ValueError(f"{path}: expected columns t,y0,y1,y2, got {header}")
    t_w = data[:, 0]
    if np.any(np.diff(t_w) <= 0):
        raise ValueError(f"{path}: waypoint times must increase")

    def ref(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return np.stack([np.interp(ts, t_w, data[:, i + 1]) for i in range(3)], axis=-1)
    return ref


def _reference_fn(cfg: ExperimentConfig, name: str):
    if name == "waypoints":
        if not cfg.task.waypoints:
            raise ConfigError("task 'waypoints' needs task.waypoints = <csv>")
        return waypoint_reference(cfg.task.waypoints)
    params = cfg.task.params(name)
    return lambda ts: reference(name, ts, params)


def run_experiment(cfg: ExperimentConfig, model: ChildModel, task: str | None = None,
                   noise_seed: int | None = None) -> RunLog:
    """Track a reference from rest for ``cfg.run.duration`` seconds."""
    name = task or cfg.task.name
    ref_fn = _reference_fn(cfg, name)
    plant_params = cfg.plant
    if noise_seed is not None:
        plant_params = replace(plant_params, noise_seed=noise_seed)
    plant = SoftActuatorPlant(plant_params)
    steps = int(round(cfg.run.duration / cfg.run.dt))
    return closed_loop(model, cfg, ref_fn, steps, plant)


def disturbance_scenario(cfg: ExperimentConfig, model: ChildModel, freeze_input=False) -> RunLog:
    """Hold ``cfg.disturbance.target`` and hang the load at ``t0``.

    With ``freeze_input`` the control is held at its pre-load value from
    ``t0`` on, which gives the open-loop offset the controller is compared to.
    """
    d = cfg.disturbance
    dt = cfg.run.dt
    target = np.asarray(d.target, dtype=float)
    steps = int(round(d.duration / dt))
    k0 = int(round(d.t0 / dt))
    events = {k0: lambda plant: plant.apply_disturbance(d.mass, d.em_amp)}
    ref_fn = lambda ts: np.tile(target, (len(ts), 1))  # noqa: E731
    return closed_loop(model, cfg, ref_fn, steps, SoftActuatorPlant(cfg.plant), events,
                       freeze_after=k0 if freeze_input else None)


@dataclass
class DisturbanceSummary:
    closed_loop_error: float      # steady-state |y2 - target| with the controller active
    open_loop_offset: float       # same with the input frozen at t0
    sensor_shift: float           # largest channel mean shift / pre-load noise std
    ratio: float


def summarize_disturbance(active: RunLog, frozen: RunLog, cfg: ExperimentConfig,
                          settle: float = 2.0, baseline: float = 1.0,
                          window: float = 0.05) -> DisturbanceSummary:
    """Steady-state errors over the last ``settle`` seconds and the sensor step.

    The sensor shift compares the channel means over ``window`` seconds from
    ``t0`` with the ``baseline`` seconds before it, in units of the pre-load
    noise std; the window is short because the controller starts pulling the
    pose back right away.
    """
    d, dt = cfg.disturbance, cfg.run.dt
    k0 = int(round(d.t0 / dt))
    tail = slice(len(active) - int(round(settle / dt)), None)
    target = d.target[2]
    err = abs(float(np.mean(active.y_true[tail, 2])) - target)
    off = abs(float(np.mean(frozen.y_true[tail, 2])) - target)
    kb, kw = int(round(baseline / dt)), max(1, int(round(window / dt)))
    pre = active.l[max(0, k0 - kb):k0]
    post = active.l[k0:k0 + kw]
    sigma = np.maximum(pre.std(axis=0), 1e-12)
    shift = float(np.max(np.abs(post.mean(axis=0) - pre.mean(axis=0)) / sigma))
    return DisturbanceSummary(err, off, shift, err / off if off > 0 else np.inf)


@dataclass
class RmseStats:
    mean: float
    std: float
    runs: int
    per_run: np.ndarray = field(default=None)


def compute_rmse(log: RunLog) -> float:
    """Root mean squared Euclidean distance between true pose and reference."""
    if len(log) == 0:
        raise ValueError("empty log")
    d = log.y_true - log.y_ref
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def aggregate_stats(logs) -> RmseStats:
    logs = list(logs)
    if not logs:
        raise ValueError("no logs to aggregate")
    r = np.array([compute_rmse(lg) for lg in logs])
    return RmseStats(float(r.mean()), float(r.std()), len(r), r)


def _fmt(v) -> str:
    return repr(float(v))


def export_logs(log: RunLog, path, timings: bool = False):
    """Write ``log`` as CSV; timing columns only when ``timings`` is set."""
    m, n, w = log.u.shape[1], log.y_true.shape[1], log.l.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(log_header(m, n, w, timings))
        for k in range(len(log)):
            row = [log.t[k], *log.u[k], *log.y_true[k], *log.y_pred[k], *log.y_ref[k],
                   *log.l[k], log.J[k]]
            if timings:
                row += list(log.timings[k])
            writer.writerow([_fmt(v) for v in row])


def read_log(path) -> RunLog:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(header))

    def cols(prefix):
        return [i for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit()]

    timing = [header.index(c) for c in TIMING_COLUMNS if c in header]
    return RunLog(data[:, 0], data[:, cols("u")], data[:, cols("y")], data[:, cols("yhat")],
                  data[:, cols("yref")], data[:, cols("l")], data[:, header.index("J")],
                  data[:, timing] if timing else np.zeros((len(data), 3)))


def export_stats(stats: RmseStats, task: str, path, arch: str | None = None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "run", "rmse_mm"])
        for k, r in enumerate(stats.per_run):
            writer.writerow([task, k, _fmt(r)])
        writer.writerow([task, "mean", _fmt(stats.mean)])
        writer.writerow([task, "std", _fmt(stats.std)])
        ref = REFERENCE_RMSE.get(arch or "", {}).get(task)
        if ref:
            writer.writerow([task, "reference_mean", _fmt(ref[0])])
            writer.writerow([task, "reference_std", _fmt(ref[1])])


def run_batch(cfg: ExperimentConfig, model: ChildModel, task: str, runs: int, out_dir,
              arch: str | None = None, timings=False) -> RmseStats:
    """``runs`` closed-loop runs with consecutive noise seeds, one CSV each plus ``stats.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logs = []
    for k in range(runs):
        log = run_experiment(cfg, model, task, noise_seed=cfg.plant.noise_seed + k)
        export_logs(log, out / f"{task}_run{k:02d}.csv", timings)
        logs.append(log)
    stats = aggregate_stats(logs)
    export_stats(stats, task, out / "stats.csv", arch)
    return stats


# --- timing ---------------------------------------------------------------

@dataclass
class TimingReport:
    prediction_us: float
    jacobian_us: float
    full_us: float
    shared_us: float
    first_us: float
    second_us: float
    steps: int

    def rows(self):
        return [("prediction", self.prediction_us), ("jacobian", self.jacobian_us),
                ("full", self.full_us), ("shared", self.shared_us),
                ("first_only", self.first_us), ("second_only", self.second_us)]


def benchmark_timing(model: ChildModel, cfg: ExperimentConfig, steps: int = 5000,
                     seed: int = 0) -> TimingReport:
    """Mean wall time per control step of each derivative phase.

    * prediction: one ``N``-step rollout;
    * jacobian: rollout plus the central-difference Jacobian;
    * full: rollout, Jacobian and second derivative computed separately;
    * shared: rollout plus both derivatives from one shared stencil.

    ``first_us`` and ``second_us`` time the two derivatives alone, so
    ``shared_us`` can be compared with their sum.
    """
    hz = cfg.horizon
    plant = SoftActuatorPlant(cfg.plant)
    u_rest, q = _initial_queue(plant, cfg)
    rng = np.random.default_rng(seed)
    g = step_evaluator(model)
    m = plant.m
    slots = control_slots(hz.n_d, m)
    acc = np.zeros(6)
    lo, hi = plant.params.u_min, plant.params.u_max
    for _ in range(steps):
        U = rng.uniform(lo, hi, size=(hz.Nc, m))
        x = first_input(q, U)
        t0 = time.perf_counter()
        rollout(model, q, U, hz)
        t1 = time.perf_counter()
        assemble_dy_du(central_jacobian(g, x, vectorized=True), hz.n_d, m)
        t2 = time.perf_counter()
        fold_second(central_second(g, x, slots=slots, vectorized=True), hz.n_d, m)
        t3 = time.perf_counter()
        rollout(model, q, U, hz)
        theta, _ = shared_derivatives(g, x, hz.n_d, m, vectorized=True)
        assemble_dy_du(theta, hz.n_d, m)
        t4 = time.perf_counter()
        pred, first, second, shared = t1 - t0, t2 - t1, t3 - t2, t4 - t3
        acc += [pred, pred + first, pred + first + second, shared, first, second]
    acc *= 1e6 / steps
    return TimingReport(*acc, steps=steps)
