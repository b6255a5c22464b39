"""Balance equilibrium manifolds of the triple pendulum, level by level.

At the scenario's initial state, each level's BEM is found by Newton's
method and confirmed against a brute-force scan of the residual.  The
cart-pole BEM is compared with its closed form atan(-a/g).

    python3 demos/bem_walkthrough.py
"""

import numpy as np

from ceic.bem import gamma_residual, solve_bem
from ceic.cascade import build_chain
from ceic.controllers import REFERENCE_GAINS, CEICController, SineReference
from ceic.dynamics import StateVector
from ceic.systems import cart_pole_balance_angle, cart_pole_model, triple_pendulum_model

model = triple_pendulum_model()
ctrl = CEICController(model, SineReference(), REFERENCE_GAINS)
s = StateVector([2.0, -0.1, 0.1, 0.35], np.zeros(4))
_, recs = ctrl.forward_pass(s)
grid = np.linspace(-0.5, 0.5, 10001)
for i in range(3):
    drive = recs[i].v_ext
    vals = np.abs([gamma_residual(ctrl.chain, i, [c], s, drive)[0] for c in grid])
    rec = recs[i + 1]
    print(f"level {i} drive v_ext = {drive[0]:+8.3f}  ->  BEM of theta{i + 1}: "
          f"Newton {rec.q_e[0]:+.6f} ({rec.bem_iterations} iterations), "
          f"grid {grid[np.argmin(vals)]:+.4f}")

cp = cart_pole_model()
chain = build_chain(cp)
print()
for accel in (-4.0, -1.0, 0.5, 3.0):
    sol = solve_bem(chain, 0, StateVector([0.0, 0.0], [0.0, 0.0]), np.array([accel]))
    print(f"cart-pole, cart acceleration {accel:+.1f}: Newton {sol.q_e[0]:+.10f}, "
          f"closed form {cart_pole_balance_angle(accel):+.10f}")
