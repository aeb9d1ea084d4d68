"""Neural generalized predictive control with recursive child networks."""

from .recnn import ARCHITECTURES, ChildModel, Dims, LayerSpec, count_parameters, flash_bytes
from .predictor import HorizonConfig, QueueState, build_input_vector, roll_queues, rollout
from .cost import CostSpec, cost_hessian, cost_jacobian, cost_value
from .solver import SolverConfig, control_step, newton_step
from .plant import PlantParams, SoftActuatorPlant

__all__ = [
    "ARCHITECTURES", "ChildModel", "Dims", "LayerSpec", "count_parameters", "flash_bytes",
    "HorizonConfig", "QueueState", "build_input_vector", "roll_queues", "rollout",
    "CostSpec", "cost_hessian", "cost_jacobian", "cost_value",
    "SolverConfig", "control_step", "newton_step",
    "PlantParams", "SoftActuatorPlant",
]
__version__ = "0.1.0"
