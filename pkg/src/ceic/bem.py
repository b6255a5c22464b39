"""Balance equilibrium manifolds (BEMs) of cascade levels.

The BEM of level ``i`` is the configuration of the next level's actuated
block ``q_a^(i+1)`` at which that block stays at rest (zero velocity and
acceleration) while level ``i`` executes its designed acceleration
``v_i``.  It is the root of

    Gamma(c) = D_aa' * 0 + D_au' qdd_u' + H_a' - B_a' u

where primes denote level ``i + 1`` matrices evaluated with ``q_a^(i+1) = c``
and ``qdot_a^(i+1) = 0``, and ``u`` realizes ``qdd_a^(i) = v_i`` at that
same configuration.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cascade import realize_input
from .dynamics import ContractViolation, NumericError, SingularityError, lu_solve


class BemSolverError(ArithmeticError):
    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-10
    max_iter: int = 50
    fd_step: float = 1e-6
    guess_policy: str = "previous"   # or "zero"
    freeze_rest: bool = False
    input_mode: str = "designed"     # or "held"
    bound: float = math.pi / 2       # roots with |q_e| >= bound are other branches

    def __post_init__(self):
        if not self.tol > 0:
            raise ContractViolation(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ContractViolation(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.fd_step > 0:
            raise ContractViolation(f"fd_step must be positive, got {self.fd_step}")
        if self.guess_policy not in ("previous", "zero"):
            raise ContractViolation(f"unknown guess_policy {self.guess_policy!r}")
        if not self.bound > 0:
            raise ContractViolation(f"bound must be positive, got {self.bound}")
        if self.input_mode not in ("designed", "held"):
            raise ContractViolation(f"unknown input_mode {self.input_mode!r}")


@dataclass(frozen=True)
class BemSolution:
    level: int
    q_e: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


def candidate_state(chain, level, candidate, state, freeze_rest=False):
    """``state`` with ``q_a^(level+1)`` set to ``candidate`` and its velocity zeroed."""
    idx = list(chain.block_indices(level + 1))
    s = state.substitute(idx, candidate)
    if freeze_rest:
        rest = list(chain.order[chain.offsets()[level + 2]:])
        if rest:
            s = s.substitute(rest, s.q[rest])
    return s


def gamma_residual(chain, level, candidate, state, drive, freeze_rest=False, held_input=None):
    """BEM residual of level ``level`` at ``candidate``.

    ``drive`` is the designed acceleration of level ``level``'s actuated block;
    the input realizing it is recomputed at the candidate configuration.
    When ``held_input`` is given that input is used as-is instead.
    With ``freeze_rest`` the coordinates below the next block are also held
    at zero velocity and acceleration; otherwise they keep their current
    velocities and accelerate as the dynamics dictate.
    """
    candidate = np.atleast_1d(np.asarray(candidate, dtype=float))
    if candidate.size != chain.blocks[level + 1]:
        raise ContractViolation(
            f"level {level}: candidate has {candidate.size} entries, "
            f"expected {chain.blocks[level + 1]}")
    s_c = candidate_state(chain, level, candidate, state, freeze_rest)
    mats = chain.evaluate(s_c, upto=level + 1)
    parent, child = mats[level], mats[level + 1]
    if held_input is None:
        u, _ = realize_input(parent, drive)
    else:
        u = np.atleast_1d(np.asarray(held_input, dtype=float))
    if child.is_last:
        gamma = child.H - child.B @ u
    else:
        if freeze_rest:
            qdd_u = np.zeros(child.size - child.n_a)
        else:
            qdd_u = lu_solve(child.D_uu, child.B_u @ u - child.H_u,
                             what=f"D_uu at level {child.index}", level=child.index)
        gamma = child.D_au @ qdd_u + child.H_a - child.B_a @ u
    if not np.all(np.isfinite(gamma)):
        raise NumericError(f"non-finite BEM residual at level {level}", state=s_c)
    return gamma


def solve_bem(chain, level, state, drive, settings=None, guess=None, history=None,
              held_input=None):
    """Newton iteration with a forward-difference Jacobian on :func:`gamma_residual`.

    Returns a :class:`BemSolution`; on non-convergence the best iterate is
    returned with ``converged=False``.  Roots outside ``|q_e| < settings.bound``
    belong to non-balancing branches and are reported as not converged.  A
    converged solution is appended to ``history`` when one is given.
    """
    settings = settings or SolverSettings()
    dim = chain.blocks[level + 1]
    if guess is None or settings.guess_policy == "zero":
        x = np.zeros(dim)
    else:
        x = np.array(guess, dtype=float).reshape(dim)

    def f(c):
        return gamma_residual(chain, level, c, state, drive, settings.freeze_rest, held_input)

    r = f(x)
    rn = float(np.linalg.norm(r))
    best = (rn, x.copy())
    it = 0
    while rn > settings.tol and it < settings.max_iter:
        J = np.empty((r.size, dim))
        for j in range(dim):
            h = settings.fd_step * max(1.0, abs(x[j]))
            xp = x.copy()
            xp[j] += h
            J[:, j] = (f(xp) - r) / h
        try:
            step = lu_solve(J, r, what=f"BEM Jacobian at level {level}", level=level)
        except SingularityError as exc:
            raise BemSolverError(f"singular BEM Jacobian at level {level}", level=level) from exc
        x = x - step
        r = f(x)
        rn = float(np.linalg.norm(r))
        it += 1
        if rn < best[0]:
            best = (rn, x.copy())
    converged = rn <= settings.tol and bool(np.all(np.abs(x) < settings.bound))
    if not converged:
        rn, x = best
    sol = BemSolution(level=level, q_e=x, residual_norm=rn, iterations=it, converged=converged)
    if converged and history is not None:
        history.push(state.t, x)
    return sol


class BemHistory:
    """Recent ``(t, q_e)`` samples of one level.

    Derivatives use the samples ``stride`` steps apart; ``stride = 1`` is
    the plain three-point stencil.
    """

    def __init__(self, stride=1):
        if stride < 1:
            raise ContractViolation(f"stride must be >= 1, got {stride}")
        self.stride = int(stride)
        self._buf = deque(maxlen=2 * self.stride + 1)

    def __len__(self):
        return len(self._buf)

    @property
    def depth(self):
        return self._buf.maxlen

    def push(self, t, q_e):
        q_e = np.array(q_e, dtype=float).reshape(-1)
        if self._buf:
            last_t = self._buf[-1][0]
            if t == last_t:
                self._buf[-1] = (t, q_e)
                return
            if t < last_t:
                raise ContractViolation(f"BEM history time went backwards: {t} < {last_t}")
        self._buf.append((float(t), q_e))

    def latest(self):
        return self._buf[-1][1] if self._buf else None

    def samples(self):
        """The three samples used by the stencil, oldest first (or fewer)."""
        if len(self._buf) < self.depth:
            return list(self._buf)[-1:] if self._buf else []
        return [self._buf[0], self._buf[self.stride], self._buf[-1]]


def bem_derivatives(history):
    """``(qdot_e, qddot_e)`` from backward differences of the history.

    Velocity uses the second-order stencil ``(3 q0 - 4 q1 + q2) / 2h``,
    acceleration ``(q0 - 2 q1 + q2) / h^2``.  Zeros until the buffer fills.
    """
    smp = history.samples()
    if len(smp) < 3:
        dim = smp[0][1].size if smp else 0
        return np.zeros(dim), np.zeros(dim)
    (t2, q2), (t1, q1), (t0, q0) = smp
    h = t0 - t1
    if abs((t1 - t2) - h) > 1e-9 or h <= 0:
        raise ContractViolation(f"non-uniform BEM history spacing: {t1 - t2} vs {h}")
    qd = (3.0 * q0 - 4.0 * q1 + q2) / (2.0 * h)
    qdd = (q0 - 2.0 * q1 + q2) / (h * h)
    return qd, qdd


class BemFilter:
    """Band-limited BEM derivatives from a state-variable filter.

    A critically damped second-order filter ``y'' = w^2 (q_e - y) - 2 w y'``
    follows the BEM samples; ``(y', y'')`` estimate ``(qdot_e, qddot_e)``.
    Between samples the input is interpolated linearly and the filter is
    advanced with its exact discretization, so a ramp is followed without
    acceleration bias whatever the step size.  As ``bandwidth`` grows the
    estimates approach the exact derivatives.
    """

    def __init__(self, bandwidth=20.0):
        if not bandwidth > 0:
            raise ContractViolation(f"bandwidth must be positive, got {bandwidth}")
        self.bandwidth = float(bandwidth)
        self._t = None
        self._u = None
        self._y = None
        self._yd = None
        self._cache = {}

    def _transition(self, h):
        # augmented state (y, y', u, u') with u' constant over the interval
        key = round(h, 15)
        if key not in self._cache:
            w = self.bandwidth
            M = np.zeros((4, 4))
            M[0, 1] = 1.0
            M[1, 0] = -w * w
            M[1, 1] = -2.0 * w
            M[1, 2] = w * w
            M[2, 3] = 1.0
            self._cache[key] = scipy.linalg.expm(M * h)[:2]
        return self._cache[key]

    def update(self, t, q_e):
        """Feed the sample at ``t`` and return ``(qdot_e, qddot_e)``."""
        q_e = np.array(q_e, dtype=float).reshape(-1)
        if self._t is None:
            self._t, self._u = float(t), q_e
            self._y, self._yd = q_e.copy(), np.zeros_like(q_e)
        elif t != self._t:
            h = t - self._t
            if h < 0:
                raise ContractViolation(f"BEM filter time went backwards: {t} < {self._t}")
            P = self._transition(h)
            slope = (q_e - self._u) / h
            y = P[0, 0] * self._y + P[0, 1] * self._yd + P[0, 2] * self._u + P[0, 3] * slope
            yd = P[1, 0] * self._y + P[1, 1] * self._yd + P[1, 2] * self._u + P[1, 3] * slope
            self._t, self._y, self._yd = float(t), y, yd
        self._u = q_e
        w = self.bandwidth
        return self._yd.copy(), w * w * (q_e - self._y) - 2.0 * w * self._yd


__all__ = [
    "BemSolverError", "SolverSettings", "BemSolution", "candidate_state", "gamma_residual",
    "solve_bem", "BemHistory", "bem_derivatives", "BemFilter",
]
