"""
Load rejection
==============

Holds the rest pose, hangs a mass on the tip at t0 and compares the
closed loop against the same run with the command frozen at t0.
"""
import numpy as np

from ngpc.config import ExperimentConfig
from ngpc.harness import disturbance_scenario, summarize_disturbance
from ngpc.plant import SoftActuatorPlant
from ngpc.trainer import collect_dataset, fit_child, generate_excitation

cfg = ExperimentConfig()
ex = cfg.excitation
u, _ = generate_excitation(ex.stage_duration, cfg.run.dt, seed=ex.seed, dither=ex.dither)
model, _ = fit_child("fc", collect_dataset(SoftActuatorPlant(cfg.plant), u, seed=ex.seed),
                     cfg.horizon, cfg.train)

active = disturbance_scenario(cfg, model)
frozen = disturbance_scenario(cfg, model, freeze_input=True)
s = summarize_disturbance(active, frozen, cfg)
print(f"frozen-input offset on y2  {s.open_loop_offset:.3f} mm")
print(f"closed-loop error on y2    {s.closed_loop_error:.3f} mm  (ratio {s.ratio:.2f})")
print(f"sensor shift at the load   {s.sensor_shift:.1f} noise sigmas")

k0 = int(round(cfg.disturbance.t0 / cfg.run.dt))
for t in (k0 - 1, k0 + 12, k0 + 120, len(active) - 1):
    print(f"t={active.t[t]:5.2f}s  u={np.round(active.u[t], 3)}  y2={active.y_true[t, 2]:+.3f}"
          f"  frozen y2={frozen.y_true[t, 2]:+.3f}")
