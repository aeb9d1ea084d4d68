"""Data collection, one-step training and forward-chaining evaluation.

Training is teacher-forced: the output queue is filled with measured poses,
and each target is the pose one control period later. Recurrent layers are
trained over short chunks of consecutive samples, starting from the reset
carry and treating the incoming carry as a constant (truncated
backpropagation of depth one).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import TimeSeriesSplit

from .plant import DT, SoftActuatorPlant
from .predictor import HorizonConfig
from .recnn import ARCHITECTURES, ChildModel, Scaling, activate

logger = logging.getLogger(__name__)

STAGES = ("sweep", "sine", "steps")


class DivergenceError(FloatingPointError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


class DatasetTooShortError(ValueError):
    pass


@dataclass
class Dataset:
    """Time-ordered ``(u, y, l)`` records sampled every ``dt`` seconds.

    ``y[k]`` and ``l[k]`` are measured before ``u[k]`` is applied.
    """

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    l: np.ndarray
    dt: float = DT
    seed: int | None = None
    stages: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u, self.y, self.l = (np.atleast_2d(np.asarray(a, dtype=float))
                                  for a in (self.u, self.y, self.l))
        L = len(self.t)
        if not (len(self.u) == len(self.y) == len(self.l) == L):
            raise ValueError("t, u, y and l must have the same length")
        if L > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("time stamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def slice(self, start, stop) -> "Dataset":
        st = None if self.stages is None else self.stages[start:stop]
        return Dataset(self.t[start:stop], self.u[start:stop], self.y[start:stop],
                       self.l[start:stop], self.dt, self.seed, st)


@dataclass
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.05
    batch_size: int = 64
    folds: int = 10
    teacher_forcing: bool = True
    momentum: float = 0.9
    chunk: int = 3
    seed: int = 0
    history_noise: float = 0.0    # std of noise added to the output-history inputs

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.history_noise < 0:
            raise ValueError("history_noise must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.chunk < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and chunk >= 1 are required")


# --- excitation and data collection ---------------------------------------

def generate_excitation(stage_duration: float, dt: float = DT, seed: int = 0,
                        u_min: float = 0.0, u_max: float = 3.0, m: int = 2,
                        cycles: int = 1, dither: float = 0.0):
    """Three-stage command sequence, repeated ``cycles`` times.

    Stages: a slow sweep, a faster multi-tone sinusoid, and low-pass filtered
    random steps. Each stage lasts ``round(stage_duration / dt)`` samples.
    ``dither`` adds independent uniform noise of that half-width to every
    sample, which decorrelates consecutive commands so a one-step model can
    tell the newest input apart from its history.

    Returns
    -------
    u : ndarray, shape (3 * cycles * samples, m)
    stages : ndarray of int, index into :data:`STAGES`
    """
    if stage_duration <= 0:
        raise ValueError("stage_duration must be > 0")
    rng = np.random.default_rng(seed)
    k = int(round(stage_duration / dt))
    mid, amp = 0.5 * (u_min + u_max), 0.5 * (u_max - u_min)
    t = np.arange(k) * dt
    blocks, labels = [], []
    for _ in range(cycles):
        f_slow = rng.uniform(0.5, 1.5, size=m) / stage_duration
        ph = rng.uniform(0, 2 * np.pi, size=m)
        sweep = mid + 0.95 * amp * np.sin(2 * np.pi * f_slow * t[:, None] + ph)

        f1, f2 = rng.uniform(0.2, 1.5, size=m), rng.uniform(1.0, 3.0, size=m)
        ph1, ph2 = rng.uniform(0, 2 * np.pi, size=(2, m))
        sine = mid + amp * (0.6 * np.sin(2 * np.pi * f1 * t[:, None] + ph1)
                            + 0.35 * np.sin(2 * np.pi * f2 * t[:, None] + ph2))

        steps = np.empty((k, m))
        level = rng.uniform(u_min, u_max, size=m)
        hold = np.zeros(m, dtype=int)
        alpha = 1.0 - np.exp(-dt / 0.05)
        state = np.full(m, mid)
        for j in range(k):
            for i in range(m):
                if hold[i] <= 0:
                    level[i] = rng.uniform(u_min, u_max)
                    hold[i] = int(rng.uniform(0.1, 1.2) / dt)
                hold[i] -= 1
            state = state + alpha * (level - state)
            steps[j] = state
        blocks += [sweep, sine, steps]
        labels += [np.full(k, s) for s in range(3)]
    u = np.concatenate(blocks)
    if dither > 0:
        u = u + rng.uniform(-dither, dither, size=u.shape)
    u = np.clip(u, u_min, u_max)
    return u, np.concatenate(labels)


def collect_dataset(plant: SoftActuatorPlant, u_seq, dt: float = DT, seed=None) -> Dataset:
    """Drive ``plant`` with ``u_seq`` and record every sample."""
    u_seq = np.asarray(u_seq, dtype=float)
    L = len(u_seq)
    ys = np.empty((L, plant.n))
    ls = np.empty((L, plant.w))
    for k in range(L):
        ys[k], ls[k] = plant.y, plant.l
        plant.step(u_seq[k], dt)
    return Dataset(np.arange(L) * dt, u_seq, ys, ls, dt, seed)


def save_dataset(ds: Dataset, path):
    m, n, w = ds.u.shape[1], ds.y.shape[1], ds.l.shape[1]
    header = (["t"] + [f"u{i}" for i in range(m)] + [f"y{i}" for i in range(n)]
              + [f"l{i}" for i in range(w)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in np.column_stack([ds.t, ds.u, ds.y, ds.l]):
            writer.writerow([repr(float(v)) for v in row])


def load_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    cols = {p: [i for i, h in enumerate(header) if h.startswith(p) and h[1:].isdigit()]
            for p in "uyl"}
    if header[0] != "t" or not all(cols.values()):
        raise ValueError(f"unexpected dataset header {header}")
    t = data[:, 0]
    dt = float(np.mean(np.diff(t))) if len(t) > 1 else DT
    return Dataset(t, data[:, cols["u"]], data[:, cols["y"]], data[:, cols["l"]], dt)


# --- training pairs -------------------------------------------------------

def required_history(cfg: HorizonConfig) -> int:
    """Index of the first sample that has a full input history."""
    return max(cfg.n_d, cfg.d_d - 1, 0)


def build_training_pairs(ds: Dataset, cfg: HorizonConfig, y_history=None):
    """Teacher-forced ``(x, target)`` pairs in time order.

    The input at sample ``k`` is ``[u_k .. u_{k-n_d}, y_k .. y_{k-d_d+1}, l_k]``
    and the target ``y_{k+1}``. ``y_history`` replaces the measured poses in
    the output queue (used for free-running training).

    Returns
    -------
    X : ndarray, shape (L - 1 - required_history, p)
    Y : ndarray, shape (L - 1 - required_history, n)
    """
    start = required_history(cfg)
    L = len(ds)
    if L < start + 2:
        raise DatasetTooShortError(f"need at least {start + 2} samples, got {L}")
    k = np.arange(start, L - 1)
    yh = ds.y if y_history is None else np.asarray(y_history, dtype=float)
    parts = [ds.u[k - j] for j in range(cfg.n_d + 1)]
    parts += [yh[k - j] for j in range(cfg.d_d)]
    parts.append(ds.l[k])
    return np.concatenate(parts, axis=1), ds.y[k + 1]


def fit_scaling(model: ChildModel, X, Y, margin: float = 1.25):
    """Set the model's input standardization and output range mapping from data."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    xs = X.std(axis=0)
    xs[xs < 1e-9] = 1.0
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    ys = 0.5 * (hi - lo) * margin
    ys[ys < 1e-9] = 1.0
    model.scaling = Scaling(X.mean(axis=0), xs, 0.5 * (lo + hi), ys)
    model.round_to_float32()
    return model


# --- backpropagation ------------------------------------------------------

def _act_grad(z, a, act):
    if act == "linear":
        return np.ones_like(z)
    if act == "relu":
        return (z > 0).astype(float)
    if act == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _forward_cached(model: ChildModel, X, state):
    """Batched forward pass keeping what backprop needs."""
    sc = model.scaling
    a = (X - sc.x_offset) / sc.x_scale
    caches, new_state = [], []
    for spec, w, s in zip(model.layers, model.weights, state):
        if spec.kind == "dense":
            z = a @ w["W"].T + w["b"]
            out = activate(z, spec.activation)
            caches.append((a, z, out))
            new_state.append(None)
        elif spec.kind == "gru":
            h = s
            zg = _sig(a @ w["Wz"].T + h @ w["Uz"].T + w["bz"])
            rg = _sig(a @ w["Wr"].T + h @ w["Ur"].T + w["br"])
            cg = np.tanh(a @ w["Wc"].T + (rg * h) @ w["Uc"].T + w["bc"])
            out = (1 - zg) * h + zg * cg
            caches.append((a, h, zg, rg, cg))
            new_state.append(out)
        else:
            h, c = s
            f = _sig(a @ w["Wf"].T + h @ w["Uf"].T + w["bf"])
            i = _sig(a @ w["Wi"].T + h @ w["Ui"].T + w["bi"])
            o = _sig(a @ w["Wo"].T + h @ w["Uo"].T + w["bo"])
            g = np.tanh(a @ w["Wg"].T + h @ w["Ug"].T + w["bg"])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            out = o * tc
            caches.append((a, h, c, f, i, o, g, tc))
            new_state.append((out, c_new))
        a = out
    return a, caches, new_state


def _backward(model: ChildModel, caches, d_out):
    grads = [None] * len(model.layers)
    d = d_out
    for idx in range(len(model.layers) - 1, -1, -1):
        spec, w, cache = model.layers[idx], model.weights[idx], caches[idx]
        if spec.kind == "dense":
            a, z, out = cache
            dz = d * _act_grad(z, out, spec.activation)
            grads[idx] = {"W": dz.T @ a, "b": dz.sum(axis=0)}
            d = dz @ w["W"]
        elif spec.kind == "gru":
            a, h, zg, rg, cg = cache
            gc = d * zg * (1 - cg * cg)
            gz = d * (cg - h) * zg * (1 - zg)
            drh = gc @ w["Uc"]
            gr = drh * h * rg * (1 - rg)
            grads[idx] = {
                "Wz": gz.T @ a, "Wr": gr.T @ a, "Wc": gc.T @ a,
                "Uz": gz.T @ h, "Ur": gr.T @ h, "Uc": gc.T @ (rg * h),
                "bz": gz.sum(0), "br": gr.sum(0), "bc": gc.sum(0),
            }
            d = gz @ w["Wz"] + gr @ w["Wr"] + gc @ w["Wc"]
        else:
            a, h, c, f, i, o, g, tc = cache
            go = d * tc * o * (1 - o)
            dc = d * o * (1 - tc * tc)
            gf = dc * c * f * (1 - f)
            gi = dc * g * i * (1 - i)
            gg = dc * i * (1 - g * g)
            gate = {"f": gf, "i": gi, "o": go, "g": gg}
            grads[idx] = {}
            for k, gk in gate.items():
                grads[idx]["W" + k] = gk.T @ a
                grads[idx]["U" + k] = gk.T @ h
                grads[idx]["b" + k] = gk.sum(0)
            d = sum(gk @ w["W" + k] for k, gk in gate.items())
    return grads


def _chunked(X, Y, chunk):
    n_chunks = len(X) // chunk
    if n_chunks == 0:
        return X[None], Y[None]
    cut = n_chunks * chunk
    return (X[:cut].reshape(n_chunks, chunk, -1), Y[:cut].reshape(n_chunks, chunk, -1))


def loss_and_grad(model: ChildModel, Xc, Yc, with_grad=True, state=None):
    """Mean squared normalized one-step error over chunked samples ``(B, L, .)``.

    ``state`` is the carry entering the first position of every chunk
    (default: reset). Carries are treated as constants by the gradient.

    Returns ``(loss, grads)``; ``grads`` mirrors ``model.weights``.
    """
    B, L, _ = Xc.shape
    n = model.output_size
    sc = model.scaling
    if state is None:
        state = model.initial_state(B)
    total = 0.0
    grads = None
    norm = 1.0 / (B * L * n)
    for k in range(L):
        out, caches, state = _forward_cached(model, Xc[:, k], state)
        err = out - (Yc[:, k] - sc.y_offset) / sc.y_scale
        total += float(np.sum(err * err))
        if with_grad:
            g = _backward(model, caches, 2.0 * norm * err)
            if grads is None:
                grads = g
            else:
                for acc, gk in zip(grads, g):
                    for name in acc:
                        acc[name] += gk[name]
    return total * norm, grads


def predict_pairs(model: ChildModel, X, chunk: int = 1) -> np.ndarray:
    """One-step predictions (physical units) with carry over ``chunk`` samples."""
    X = np.asarray(X, dtype=float)
    out = np.empty((len(X), model.output_size))
    for start in range(0, len(X), chunk):
        state = model.initial_state(None)
        for k in range(start, min(start + chunk, len(X))):
            out[k], state = model.step(X[k], state)
    return out


def history_columns(cfg: HorizonConfig, m: int = 2, n: int = 3) -> slice:
    """Columns of a pair input holding the output history."""
    start = (cfg.n_d + 1) * m
    return slice(start, start + cfg.d_d * n)


def train_model(model: ChildModel, pairs, tc: TrainConfig, inputs_fn=None, noise_cols=None):
    """Fit ``model`` in place by minibatch gradient descent with momentum.

    Parameters
    ----------
    pairs : tuple (X, Y)
    inputs_fn : callable, optional
        ``inputs_fn(model) -> X`` rebuilding the inputs with the model's own
        output estimates; required when ``tc.teacher_forcing`` is False and
        called once per epoch.
    noise_cols : slice, optional
        Input columns perturbed with fresh Gaussian noise of std
        ``tc.history_noise`` every epoch. Training on corrupted histories
        keeps the model stable when it is later fed its own estimates.

    Returns
    -------
    model, loss_history
        ``loss_history[e]`` is the full-data loss after epoch ``e``;
        ``loss_history[0]`` is the loss before training.
    """
    X, Y = (np.asarray(a, dtype=float) for a in pairs)
    if len(X) == 0:
        raise ValueError("no training pairs")
    if not tc.teacher_forcing and inputs_fn is None:
        raise ValueError("free-running training needs inputs_fn")
    recurrent = any(s.kind != "dense" for s in model.layers)
    chunk = tc.chunk if recurrent else 1
    rng = np.random.default_rng(tc.seed)
    velocity = [{k: np.zeros_like(v) for k, v in w.items()} for w in model.weights]
    Xc, Yc = _chunked(X, Y, chunk)
    history = [loss_and_grad(model, Xc, Yc, with_grad=False)[0]]
    per_batch = max(1, tc.batch_size // chunk)
    for epoch in range(1, tc.epochs + 1):
        X_ep = inputs_fn(model) if not tc.teacher_forcing else X
        if tc.history_noise > 0 and noise_cols is not None:
            X_ep = X_ep.copy()
            cols = X_ep[:, noise_cols]
            X_ep[:, noise_cols] = cols + rng.normal(0.0, tc.history_noise, size=cols.shape)
        if X_ep is not X:
            Xc, Yc = _chunked(X_ep, Y, chunk)
        order = rng.permutation(len(Xc))
        for start in range(0, len(order), per_batch):
            idx = order[start:start + per_batch]
            _, grads = loss_and_grad(model, Xc[idx], Yc[idx])
            for w, v, g in zip(model.weights, velocity, grads):
                for name in w:
                    v[name] = tc.momentum * v[name] - tc.learning_rate * g[name]
                    w[name] = w[name] + v[name]
        if X_ep is not X:
            Xc, Yc = _chunked(X, Y, chunk)
        loss = loss_and_grad(model, Xc, Yc, with_grad=False)[0]
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        history.append(loss)
        logger.debug("epoch %d loss %.3e", epoch, loss)
    model.round_to_float32()
    return model, np.array(history)


def free_running_inputs(model: ChildModel, ds: Dataset, cfg: HorizonConfig):
    """Inputs whose output queue holds the model's own one-step estimates."""
    start = required_history(cfg)
    y_est = ds.y.copy()
    X = []
    for k in range(start, len(ds) - 1):
        parts = [ds.u[k - j] for j in range(cfg.n_d + 1)]
        parts += [y_est[k - j] for j in range(cfg.d_d)]
        parts.append(ds.l[k])
        x = np.concatenate(parts)
        X.append(x)
        y_est[k + 1] = model.step(x, model.initial_state())[0]
    return np.array(X)


# --- evaluation -----------------------------------------------------------

@dataclass
class FoldReport:
    errors: np.ndarray                 # mean L2 error per fold (output units)
    reference: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std(self) -> float:
        return float(np.std(self.errors))


# held-out one-step L2 errors quoted for the physical system (mm)
REFERENCE_FOLD_ERRORS = {"fc": (2.52, 1.52), "gru": (0.26, 0.04), "lstm": (0.26, 0.04)}


def l2_error(pred, target) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(pred) - np.asarray(target), axis=1)))


def kfold_evaluate(model_factory, ds: Dataset, cfg: HorizonConfig, tc: TrainConfig,
                   scale=True) -> FoldReport:
    """Forward-chaining evaluation: fold ``k`` trains on blocks ``0..k`` and
    tests on block ``k + 1``."""
    X, Y = build_training_pairs(ds, cfg)
    if len(X) < tc.folds + 1:
        raise DatasetTooShortError(f"{len(X)} pairs cannot be split into {tc.folds} folds")
    errors = []
    for train_idx, test_idx in TimeSeriesSplit(n_splits=tc.folds).split(X):
        model = model_factory()
        if scale:
            fit_scaling(model, X[train_idx], Y[train_idx])
        train_model(model, (X[train_idx], Y[train_idx]), tc, noise_cols=history_columns(cfg))
        recurrent = any(s.kind != "dense" for s in model.layers)
        pred = predict_pairs(model, X[test_idx], tc.chunk if recurrent else 1)
        errors.append(l2_error(pred, Y[test_idx]))
    return FoldReport(np.array(errors))


def fit_child(arch: str, ds: Dataset, cfg: HorizonConfig, tc: TrainConfig):
    """Build, scale and train one of the reference architectures on ``ds``."""
    X, Y = build_training_pairs(ds, cfg)
    model = ChildModel.build(ARCHITECTURES[arch], X.shape[1], seed=tc.seed)
    fit_scaling(model, X, Y)
    return train_model(model, (X, Y), tc, noise_cols=history_columns(cfg))
