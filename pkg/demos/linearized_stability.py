"""Eigenvalues of the CEIC closed loop linearized about the upright rest.

First the BEM derivative feed-forward is switched off (``method="none"``),
so the controller is a static state feedback u(q, qdot) and the closed loop
is an ordinary ODE.  Then the feed-forward is estimated by the
state-variable filter used by default, whose states ``(y, y')`` per level
are appended to the ODE state.  A finite-difference Jacobian at the upright
rest gives the local stability picture for the cart-pole and the triple
pendulum with the gain set shipped in the default scenario.

    python3 demos/linearized_stability.py
"""

import numpy as np

from ceic.controllers import (
    REFERENCE_GAINS,
    CEICController,
    ConstantReference,
    DerivativeSettings,
    GainSchedule,
)
from ceic.dynamics import StateVector, forward_dynamics
from ceic.systems import cart_pole_model, triple_pendulum_model


class FilterStates:
    """Stands in for a level's BEM tracker: derivatives come from given filter states."""

    def __init__(self, y, yd, bandwidth):
        self.y, self.yd, self.w = y, yd, bandwidth
        self.last = np.zeros_like(y)
        self.rates = None

    def update(self, sol, t):
        self.last = sol.q_e.copy()
        ydd = self.w ** 2 * (self.last - self.y) - 2 * self.w * self.yd
        self.rates = (self.yd, ydd)
        return self.last.copy(), self.yd, ydd


def closed_loop_jacobian(model, gains, bandwidth=None, eps=1e-6):
    method = "none" if bandwidth is None else "filter"
    ctrl = CEICController(model, ConstantReference((0.0,)), gains,
                          derivatives=DerivativeSettings(method=method))
    n = model.dim
    levels = len(ctrl.chain.blocks) - 1 if bandwidth else 0
    size = 2 * n + 2 * levels

    def f(x):
        ctrl.reset()
        if levels:
            ctrl.trackers = [FilterStates(x[2 * n + 2 * i:2 * n + 2 * i + 1],
                                          x[2 * n + 2 * i + 1:2 * n + 2 * i + 2], bandwidth)
                             for i in range(levels)]
        s = StateVector(x[:n], x[n:2 * n])
        qdd = forward_dynamics(model, s, ctrl(s).u)
        parts = [x[n:2 * n], qdd]
        for tr in ctrl.trackers[:levels]:
            parts.extend(tr.rates)
        return np.concatenate(parts)

    x0 = np.zeros(size)
    J = np.empty((size, size))
    for j in range(size):
        dx = np.zeros(size)
        dx[j] = eps
        J[:, j] = (f(x0 + dx) - f(x0 - dx)) / (2 * eps)
    return J


def show(title, model, gains, bandwidth=None, verbose=True):
    eig = np.linalg.eigvals(closed_loop_jacobian(model, gains, bandwidth))
    eig = eig[np.argsort(-eig.real)]
    verdict = "unstable" if eig.real.max() > 1e-9 else "stable"
    if verbose:
        print(title)
        for lam in eig:
            print(f"    {lam.real:+9.4f} {lam.imag:+9.4f}j")
        print(f"    max real part {eig.real.max():+.4f} -> {verdict}\n")
    else:
        print(f"    {title:<32} max real part {eig.real.max():+9.4f} -> {verdict}")


if __name__ == "__main__":
    cp_gains = GainSchedule.from_scalars((0.8, 35.0), (2.5, 3.5))
    show("cart-pole, levels (0.8, 2.5) / (35, 3.5), no feed-forward", cart_pole_model(), cp_gains)
    show("triple pendulum, default gains, no feed-forward", triple_pendulum_model(), REFERENCE_GAINS)
    print("feed-forward from the state-variable filter:")
    for w in (5.0, 20.0, 100.0, 1000.0):
        show(f"cart-pole, bandwidth {w:g}", cart_pole_model(), cp_gains, w, verbose=False)
        show(f"triple pendulum, bandwidth {w:g}", triple_pendulum_model(), REFERENCE_GAINS, w,
             verbose=False)
