import numpy as np
import pytest

from ngpc.predictor import HorizonConfig, QueueState
from ngpc.recnn import ARCHITECTURES, ChildModel, Dims


def random_model(arch, p, seed, scale=1.0):
    model = ChildModel.build(ARCHITECTURES[arch], p, seed=seed)
    if scale != 1.0:
        for w in model.weights:
            for k in w:
                w[k] = w[k] * scale
    return model


def random_queue(cfg: HorizonConfig, rng, dims=Dims()):
    return QueueState(rng.uniform(0.2, 2.8, size=(cfg.n_d + 1, dims.m)),
                      rng.normal(0.0, 5.0, size=(cfg.d_d, dims.n)),
                      rng.uniform(0.0, 1.0, size=dims.w))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def train_for(cfg, arch, stage_duration=None):
    from ngpc.plant import SoftActuatorPlant
    from ngpc.trainer import collect_dataset, fit_child, generate_excitation

    ex = cfg.excitation
    u, _ = generate_excitation(stage_duration or ex.stage_duration, cfg.run.dt, seed=ex.seed,
                               u_min=cfg.plant.u_min, u_max=cfg.plant.u_max, cycles=ex.cycles,
                               dither=ex.dither)
    ds = collect_dataset(SoftActuatorPlant(cfg.plant), u, cfg.run.dt, seed=ex.seed)
    return fit_child(arch, ds, cfg.horizon, cfg.train)[0]


@pytest.fixture(scope="session")
def fc_model():
    from ngpc.config import ExperimentConfig
    return train_for(ExperimentConfig(), "fc")


@pytest.fixture(scope="session")
def quick_model():
    """Cheap FC model for plumbing tests; not tuned for tracking quality."""
    from ngpc.config import ExperimentConfig
    return train_for(ExperimentConfig(), "fc", stage_duration=8.0)


def pytest_terminal_summary(terminalreporter):
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid and rep.when == "call":
                name = nodeid.split("::")[-1][len("test_criterion_"):]
                rows.append((name, "PASS" if status == "passed" else "FAIL"))
    if rows:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(rows):
            number, _, label = name.partition("_")
            terminalreporter.write_line(f"criterion {int(number):2d} {verdict}  {label.replace('_', ' ')}")
