"""
Child models and their footprint
================================

Builds the three default child networks, counts their parameters and the
float32 flash they would occupy, then stores one and reads it back.
"""
import tempfile
from pathlib import Path

import numpy as np

from ngpc.recnn import ARCHITECTURES, ChildModel, Dims, load_model, save_model

p = 20
print(f"input length p = {p} (2 controls x 3 taps, 3 outputs x 2 taps, {Dims().w} sensors)")
for arch, layers in ARCHITECTURES.items():
    model = ChildModel.build(layers, p, seed=0)
    kinds = " -> ".join(f"{s.kind}({s.units})" for s in layers)
    print(f"{arch:5s} {kinds:32s} params {model.parameter_count():4d}  flash {4 * model.parameter_count():5d} B")

###############################################################################
# A forward pass keeps the recurrent carry between calls

model = ChildModel.build(ARCHITECTURES["gru"], p, seed=0)
x = np.linspace(0, 1, p)
state = model.initial_state()
for k in range(3):
    y, state = model.step(x, state)
    print(f"step {k}: y = {np.round(y, 4)}")

###############################################################################
# Weight files are little-endian float32 with a CRC32 trailer

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "gru.rnmc"
    model.round_to_float32()
    save_model(model, path)
    back = load_model(path)
    same = all(np.array_equal(a[k], b[k]) for a, b in zip(model.weights, back.weights) for k in a)
    print(f"{path.stat().st_size} bytes on disk, round trip exact: {same}")
