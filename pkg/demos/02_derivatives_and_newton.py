"""
Finite differences and the Newton update
========================================

Shows the central stencil's second-order error, the control Jacobian of
a random child model, and a single receding-horizon step.
"""
import numpy as np

from ngpc.cost import CostSpec
from ngpc.derivatives import assemble_dy_du, central_jacobian, shared_derivatives
from ngpc.predictor import HorizonConfig, QueueState, first_input, step_evaluator
from ngpc.recnn import ARCHITECTURES, ChildModel
from ngpc.solver import SolverConfig, control_step

spec = CostSpec.from_limits(0.0, 3.0, s=1e-3, Q=np.diag([1e-3, 1, 1]), Lambda=10 * np.eye(2))

x = np.linspace(-1, 1, 5)
for eps in (1e-2, 5e-3, 2.5e-3):
    err = np.abs(np.diag(central_jacobian(np.sin, x, eps=eps)) - np.cos(x)).max()
    print(f"eps {eps:.4f}  max error {err:.3e}")
# halving eps divides the error by about four

###############################################################################
# Derivatives of the child output with respect to the two controls.
# Every tap of the control queue holds the same candidate, so the per-tap
# sensitivities are summed.

hz = HorizonConfig()
model = ChildModel.build(ARCHITECTURES["fc"], 20, seed=3)
rng = np.random.default_rng(0)
q = QueueState(np.full((hz.n_d + 1, 2), 1.5), rng.normal(0, 3, (hz.d_d, 3)), rng.uniform(0, 1, 11))
U = np.full((hz.Nc, 2), 1.5)
g = step_evaluator(model)
theta, d2 = shared_derivatives(g, first_input(q, U), hz.n_d, 2, vectorized=True)
print("dy/du =\n", np.round(assemble_dy_du(theta, hz.n_d, 2), 5))
print("d2y/du2 shape", d2.shape)

###############################################################################
# One control step towards a reference 2 mm away.  A hand-made linear child
# (y2 rises with both tendons, y1 with their difference) makes the answer
# easy to read.

from ngpc.recnn import dense

W = np.zeros((3, 20))
W[1, [0, 1]] = 3.0, -3.0
W[2, [0, 1]] = 4.0, 4.0
linear = ChildModel([dense(3, "linear")], 20, [{"W": W, "b": np.array([0.0, 0.0, -12.0])}])
y_now = linear.step(first_input(q, U), linear.initial_state())[0]
ref = np.tile(y_now + [0, 2, 0], (hz.N2 - hz.N1 + 1, 1))
Uk = U  # later solves start from the shifted warm start and stay put
for k in range(4):
    u, Uk, diag = control_step(linear, q, Uk, ref, spec, hz, SolverConfig(), y_now=y_now)
    print(f"iteration {k}: J {diag.J_before:8.4f} -> {diag.J_after:8.4f}, u = {np.round(u, 4)}")
