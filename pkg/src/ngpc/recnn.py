"""Inference-side child networks: dense, GRU and LSTM layers written in numpy.

The child structure ``h`` is reapplied at every prediction step, so a model
here is a stateful callable: recurrent layers keep their carry between calls
until :meth:`ChildModel.reset_state` is invoked.

All forward routines accept either a single vector ``(in,)`` or a batch
``(B, in)``; batching is used by the finite-difference code to evaluate all
stencil points in one call.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("dense", "gru", "lstm")
ACTIVATIONS = ("linear", "relu", "tanh", "sigmoid")

# parameter names per layer kind, in weight-file order
PARAM_ORDER = {
    "dense": ("W", "b"),
    "gru": ("Wz", "Wr", "Wc", "Uz", "Ur", "Uc", "bz", "br", "bc"),
    "lstm": ("Wf", "Wi", "Wo", "Wg", "Uf", "Ui", "Uo", "Ug", "bf", "bi", "bo", "bg"),
}


class DimensionError(ValueError):
    """Raised when array shapes do not line up with a layer or model."""


class WeightFileError(ValueError):
    """Base class for weight-file decoding failures."""


class MalformedHeaderError(WeightFileError):
    pass


class TruncatedPayloadError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def activate(z, activation: str):
    if activation == "linear":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {activation!r}")


@dataclass(frozen=True)
class Dims:
    """Channel counts: ``m`` actuators, ``n`` pose outputs, ``w`` sensors."""

    m: int = 2
    n: int = 3
    w: int = 11

    def __post_init__(self):
        if min(self.m, self.n, self.w) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {self}")

    def input_length(self, n_d: int, d_d: int) -> int:
        """Length of the flattened network input.

        The control queue holds ``n_d + 1`` taps (``u(t-n_d) ... u(t)``), the
        output queue ``d_d`` taps, followed by the ``w`` sensor channels.
        """
        return (n_d + 1) * self.m + d_d * self.n + self.w


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.units < 1:
            raise ValueError("units must be >= 1")


def dense(units: int, activation: str = "linear") -> LayerSpec:
    return LayerSpec("dense", units, activation)


def gru(units: int) -> LayerSpec:
    return LayerSpec("gru", units)


def lstm(units: int) -> LayerSpec:
    return LayerSpec("lstm", units)


ARCHITECTURES = {
    "fc": (dense(5, "relu"), dense(3, "tanh")),
    "gru": (gru(5), dense(5, "relu"), dense(3, "linear")),
    "lstm": (lstm(5), dense(5, "tanh"), dense(3, "tanh")),
}

# reference values quoted for the three child structures; not reproduced by
# any particular input width (see README)
REFERENCE_PARAMETER_COUNTS = {"fc": 243, "gru": 435, "lstm": 570}


def param_shapes(spec: LayerSpec, n_in: int) -> dict[str, tuple[int, ...]]:
    u = spec.units
    shapes = {}
    for name in PARAM_ORDER[spec.kind]:
        if name.startswith("W"):
            shapes[name] = (u, n_in)
        elif name.startswith("U"):
            shapes[name] = (u, u)
        else:
            shapes[name] = (u,)
    return shapes


def count_parameters(layers: Sequence[LayerSpec], p: int) -> int:
    """Total number of weights and biases for a layer chain fed ``p`` inputs."""
    total = 0
    n_in = p
    for spec in layers:
        u = spec.units
        if spec.kind == "dense":
            total += u * n_in + u
        elif spec.kind == "gru":
            total += 3 * (u * n_in + u * u + u)
        else:
            total += 4 * (u * n_in + u * u + u)
        n_in = u
    return total


def flash_bytes(count: int) -> int:
    """Storage needed for ``count`` float32 scalars."""
    if count < 0:
        raise ValueError("count must be >= 0")
    return 4 * count


def _check_vec(x, n_in, what):
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != n_in:
        raise DimensionError(f"{what}: expected trailing dimension {n_in}, got shape {x.shape}")
    return x


def dense_forward(W, b, act: str, x):
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise DimensionError(f"dense: W {W.shape} and b {b.shape} are inconsistent")
    x = _check_vec(x, W.shape[1], "dense input")
    return activate(x @ W.T + b, act)


def gru_step(params, x, h):
    """One GRU update, ``h' = (1 - z) * h + z * c``."""
    Wz = np.asarray(params["Wz"], dtype=float)
    units, n_in = Wz.shape
    x = _check_vec(x, n_in, "gru input")
    h = _check_vec(h, units, "gru state")
    z = sigmoid(x @ Wz.T + h @ params["Uz"].T + params["bz"])
    r = sigmoid(x @ params["Wr"].T + h @ params["Ur"].T + params["br"])
    c = np.tanh(x @ params["Wc"].T + (r * h) @ params["Uc"].T + params["bc"])
    return (1.0 - z) * h + z * c


def lstm_step(params, x, h, c):
    """One LSTM update without peepholes; returns ``(h', c')``."""
    Wf = np.asarray(params["Wf"], dtype=float)
    units, n_in = Wf.shape
    x = _check_vec(x, n_in, "lstm input")
    h = _check_vec(h, units, "lstm hidden state")
    c = _check_vec(c, units, "lstm cell state")
    f = sigmoid(x @ Wf.T + h @ params["Uf"].T + params["bf"])
    i = sigmoid(x @ params["Wi"].T + h @ params["Ui"].T + params["bi"])
    o = sigmoid(x @ params["Wo"].T + h @ params["Uo"].T + params["bo"])
    g = np.tanh(x @ params["Wg"].T + h @ params["Ug"].T + params["bg"])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


@dataclass
class Scaling:
    """Fixed affine normalization wrapped around the network.

    The network sees ``(x - x_offset) / x_scale`` and its raw output ``o`` is
    mapped back to physical units as ``y_offset + y_scale * o``.
    """

    x_offset: np.ndarray
    x_scale: np.ndarray
    y_offset: np.ndarray
    y_scale: np.ndarray

    @classmethod
    def identity(cls, p: int, n: int) -> "Scaling":
        return cls(np.zeros(p), np.ones(p), np.zeros(n), np.ones(n))

    def arrays(self):
        return (self.x_offset, self.x_scale, self.y_offset, self.y_scale)


@dataclass
class ChildModel:
    """Architecture, weights and recurrent carry of one child structure."""

    layers: list[LayerSpec]
    input_size: int
    weights: list[dict[str, np.ndarray]]
    scaling: Scaling | None = None
    hidden_state: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.layers = list(self.layers)
        if not self.layers:
            raise DimensionError("a child model needs at least one layer")
        n_in = self.input_size
        if len(self.weights) != len(self.layers):
            raise DimensionError("one weight dict per layer is required")
        for k, (spec, w) in enumerate(zip(self.layers, self.weights)):
            expected = param_shapes(spec, n_in)
            if set(w) != set(expected):
                raise DimensionError(f"layer {k}: expected parameters {sorted(expected)}")
            for name, shape in expected.items():
                w[name] = np.asarray(w[name], dtype=float)
                if w[name].shape != shape:
                    raise DimensionError(
                        f"layer {k} {name}: expected shape {shape}, got {w[name].shape}")
            n_in = spec.units
        if self.scaling is None:
            self.scaling = Scaling.identity(self.input_size, self.output_size)
        if self.scaling.x_offset.shape != (self.input_size,) or \
                self.scaling.y_offset.shape != (self.output_size,):
            raise DimensionError("scaling does not match the model input/output widths")
        self.reset_state()

    @classmethod
    def build(cls, layers: Sequence[LayerSpec], input_size: int, seed=0) -> "ChildModel":
        """Allocate a model with weights uniform in ``[-0.5, 0.5] / sqrt(fan_in)``.

        Weights are rounded to float32 so the model survives a weight-file
        round trip unchanged.
        """
        rng = np.random.default_rng(seed)
        weights = []
        n_in = input_size
        for spec in layers:
            w = {}
            for name, shape in param_shapes(spec, n_in).items():
                fan_in = spec.units if name.startswith("U") else n_in
                w[name] = rng.uniform(-0.5, 0.5, size=shape) / np.sqrt(fan_in)
            weights.append(w)
            n_in = spec.units
        model = cls(list(layers), input_size, weights)
        model.round_to_float32()
        return model

    @property
    def output_size(self) -> int:
        return self.layers[-1].units

    def parameter_count(self) -> int:
        return sum(a.size for w in self.weights for a in w.values())

    def round_to_float32(self):
        for w in self.weights:
            for name in w:
                w[name] = w[name].astype(np.float32).astype(float)
        self.scaling = Scaling(*(a.astype(np.float32).astype(float) for a in self.scaling.arrays()))

    def copy(self) -> "ChildModel":
        return ChildModel(
            self.layers,
            self.input_size,
            [{k: v.copy() for k, v in w.items()} for w in self.weights],
            Scaling(*(a.copy() for a in self.scaling.arrays())),
        )

    def initial_state(self, batch: int | None = None) -> list:
        shape = lambda u: (u,) if batch is None else (batch, u)  # noqa: E731
        state = []
        for spec in self.layers:
            if spec.kind == "dense":
                state.append(None)
            elif spec.kind == "gru":
                state.append(np.zeros(shape(spec.units)))
            else:
                state.append((np.zeros(shape(spec.units)), np.zeros(shape(spec.units))))
        return state

    def reset_state(self, batch: int | None = None):
        self.hidden_state = self.initial_state(batch)

    def step(self, x, state):
        """Pure forward pass: returns ``(y, new_state)`` without touching the model."""
        x = _check_vec(x, self.input_size, "model input")
        sc = self.scaling
        a = (x - sc.x_offset) / sc.x_scale
        new_state = []
        for spec, w, s in zip(self.layers, self.weights, state):
            if spec.kind == "dense":
                a = dense_forward(w["W"], w["b"], spec.activation, a)
                new_state.append(None)
            elif spec.kind == "gru":
                if s.ndim < a.ndim:
                    s = np.broadcast_to(s, a.shape[:-1] + s.shape)
                a = gru_step(w, a, s)
                new_state.append(a)
            else:
                h, c = s
                if h.ndim < a.ndim:
                    h = np.broadcast_to(h, a.shape[:-1] + h.shape)
                    c = np.broadcast_to(c, a.shape[:-1] + c.shape)
                a, c = lstm_step(w, a, h, c)
                new_state.append((a, c))
        return sc.y_offset + sc.y_scale * a, new_state

    def __call__(self, x):
        y, self.hidden_state = self.step(x, self.hidden_state)
        return y


def child_forward(model: ChildModel, x):
    """Apply the child structure once, advancing its recurrent carry."""
    return model(x)


# --- weight file -----------------------------------------------------------

MAGIC = b"RNMC"
FORMAT_VERSION = 1
# layer kind byte: dense layers carry their activation in the code
_KIND_CODES = {
    ("dense", "linear"): 0,
    ("dense", "relu"): 1,
    ("dense", "tanh"): 2,
    ("dense", "sigmoid"): 3,
    ("gru", None): 16,
    ("lstm", None): 17,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def _kind_code(spec: LayerSpec) -> int:
    if spec.kind == "dense":
        return _KIND_CODES[("dense", spec.activation)]
    return _KIND_CODES[(spec.kind, None)]


def serialize_weights(model: ChildModel) -> bytes:
    """Encode a model as a little-endian ``RNMC`` weight file.

    Layout: magic, version u16, layer count u16, per layer (kind u8, units
    u16, in u16), the float32 weights in layer order, the float32 scaling
    block (x_offset, x_scale, y_offset, y_scale) and a trailing CRC32 over
    every preceding byte.
    """
    parts = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(model.layers))]
    n_in = model.input_size
    for spec in model.layers:
        parts.append(struct.pack("<BHH", _kind_code(spec), spec.units, n_in))
        n_in = spec.units
    scalars = [w[name].ravel() for spec, w in zip(model.layers, model.weights)
               for name in PARAM_ORDER[spec.kind]]
    scalars += [a.ravel() for a in model.scaling.arrays()]
    parts.append(np.concatenate(scalars).astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_weights(data: bytes) -> ChildModel:
    data = bytes(data)
    if len(data) < 8:
        raise TruncatedPayloadError("stream shorter than the fixed header")
    if data[:4] != MAGIC:
        raise MalformedHeaderError(f"bad magic {data[:4]!r}")
    version, n_layers = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise MalformedHeaderError(f"unsupported format version {version}")
    if n_layers == 0:
        raise MalformedHeaderError("layer count is zero")
    offset = 8
    if len(data) < offset + 5 * n_layers:
        raise TruncatedPayloadError("stream ends inside the layer table")
    layers, widths = [], []
    for k in range(n_layers):
        code, units, n_in = struct.unpack_from("<BHH", data, offset)
        offset += 5
        if code not in _CODE_KINDS:
            raise MalformedHeaderError(f"layer {k}: unknown kind code {code}")
        kind, act = _CODE_KINDS[code]
        if units == 0 or n_in == 0:
            raise MalformedHeaderError(f"layer {k}: zero width")
        if widths and n_in != widths[-1][1]:
            raise MalformedHeaderError(f"layer {k}: input width {n_in} != previous units")
        layers.append(LayerSpec(kind, units, act or "linear"))
        widths.append((n_in, units))
    p, n = widths[0][0], widths[-1][1]
    n_scalars = count_parameters(layers, p) + 2 * p + 2 * n
    end = offset + 4 * n_scalars
    if len(data) < end + 4:
        raise TruncatedPayloadError(f"expected {end + 4} bytes, got {len(data)}")
    if len(data) > end + 4:
        raise MalformedHeaderError("trailing bytes after checksum")
    (crc,) = struct.unpack_from("<I", data, end)
    if zlib.crc32(data[:end]) != crc:
        raise ChecksumError("CRC32 mismatch")
    flat = np.frombuffer(data, dtype="<f4", count=n_scalars, offset=offset).astype(float)
    weights, pos = [], 0
    for spec, (n_in, _) in zip(layers, widths):
        w = {}
        shapes = param_shapes(spec, n_in)
        for name in PARAM_ORDER[spec.kind]:
            size = int(np.prod(shapes[name]))
            w[name] = flat[pos:pos + size].reshape(shapes[name]).copy()
            pos += size
        weights.append(w)
    sc = []
    for size in (p, p, n, n):
        sc.append(flat[pos:pos + size].copy())
        pos += size
    return ChildModel(layers, p, weights, Scaling(*sc))


def save_model(model: ChildModel, path):
    with open(path, "wb") as fh:
        fh.write(serialize_weights(model))


def load_model(path) -> ChildModel:
    with open(path, "rb") as fh:
        return deserialize_weights(fh.read())
