"""
Training a child model and tracking the Eight
=============================================

Excites the simulated actuator, fits the dense child and runs the
closed loop for 30 s of simulated time.  Takes a few seconds.
"""
import sys
import time

import numpy as np

from ngpc.config import ExperimentConfig, load_config
from ngpc.harness import compute_rmse, export_logs, run_experiment
from ngpc.plant import SoftActuatorPlant
from ngpc.tasks import largest_semi_axis
from ngpc.trainer import collect_dataset, fit_child, generate_excitation

cfg = load_config(sys.argv[1]) if len(sys.argv) > 1 else ExperimentConfig()
arch = sys.argv[2] if len(sys.argv) > 2 else "fc"

t0 = time.perf_counter()
ex = cfg.excitation
u, stages = generate_excitation(ex.stage_duration, cfg.run.dt, seed=ex.seed, u_min=cfg.plant.u_min,
                                u_max=cfg.plant.u_max, cycles=ex.cycles, dither=ex.dither)
ds = collect_dataset(SoftActuatorPlant(cfg.plant), u, cfg.run.dt, seed=ex.seed)
print(f"dataset: {len(ds)} samples over {ds.t[-1]:.0f} s")
model, history = fit_child(arch, ds, cfg.horizon, cfg.train)
print(f"{arch}: {model.parameter_count()} params, loss {history[0]:.4f} -> {history[-1]:.4f}"
      f" ({time.perf_counter() - t0:.1f} s)")

###############################################################################
# Closed loop; the model's own estimates fill the output history

t0 = time.perf_counter()
log = run_experiment(cfg, model, "eight")
rmse = compute_rmse(log)
print(f"eight: RMSE {rmse:.3f} mm over {len(log)} steps, {log.failures} solver failures"
      f" ({time.perf_counter() - t0:.1f} s)")
print(f"5% of the largest semi-axis: {0.05 * largest_semi_axis('eight', cfg.task.params('eight')):.3f} mm")

err = np.abs(log.y_true - log.y_ref)
print("mean |error| per axis (mm):", np.round(err.mean(axis=0), 3))
export_logs(log, "eight_demo.csv")
print("log written to eight_demo.csv")
