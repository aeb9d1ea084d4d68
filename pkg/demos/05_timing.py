"""
Where the time goes
===================

Mean wall time per control step of prediction and the derivative phases,
for each child type.  The shared stencil reuses the first-derivative
evaluations for the second derivative.
"""
import numpy as np

from ngpc.config import ExperimentConfig
from ngpc.harness import benchmark_timing
from ngpc.recnn import ARCHITECTURES, ChildModel

cfg = ExperimentConfig()
for arch in ARCHITECTURES:
    model = ChildModel.build(ARCHITECTURES[arch], 20, seed=0)
    rep = benchmark_timing(model, cfg, steps=300)
    cells = "  ".join(f"{name} {us:7.1f}" for name, us in rep.rows())
    print(f"{arch:5s} {cells}  (us)")
