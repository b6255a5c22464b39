"""Tracking-and-balance controllers for underactuated balance robots.

Two designs share the cascade machinery:

* :class:`EICController`, the classic external/internal convertible design:
  one BEM over all unactuated coordinates and a least-squares internal
  correction through ``D_ua^+``.  With more unactuated than actuated
  coordinates this correction cannot act on every balance direction.
* :class:`CEICController`, the cascaded design: a forward pass computes the
  external control and BEM of each level in turn, then a backward pass
  rebuilds the internal control from the last level up to the real input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bem import BemFilter, BemHistory, SolverSettings, bem_derivatives, solve_bem
from .cascade import build_chain, nondegeneracy_matrix, realize_input
from .dynamics import (
    ContractViolation,
    SingularityError,
    eval_terms,
    lu_solve,
    numerical_rank,
    pinv,
)


# ---------------------------------------------------------------- references

@dataclass(frozen=True)
class SineReference:
    """``q_d(t) = offset + amplitude * sin(omega t)`` for every actuated coordinate."""

    amplitude: float = 2.0
    omega: float = 0.8
    offset: float = 0.0

    def __call__(self, t):
        s, c = np.sin(self.omega * t), np.cos(self.omega * t)
        w = self.omega
        return (np.array([self.offset + self.amplitude * s]),
                np.array([self.amplitude * w * c]),
                np.array([-self.amplitude * w * w * s]))


@dataclass(frozen=True)
class ConstantReference:
    value: tuple = (0.0,)

    def __call__(self, t):
        v = np.asarray(self.value, dtype=float)
        return v.copy(), np.zeros_like(v), np.zeros_like(v)


# --------------------------------------------------------------------- gains

@dataclass(frozen=True)
class GainSchedule:
    """Position gains ``a_i`` and velocity gains ``b_i``, one pair per level."""

    a: tuple
    b: tuple

    def __post_init__(self):
        a = tuple(np.atleast_2d(np.asarray(x, dtype=float)) for x in self.a)
        b = tuple(np.atleast_2d(np.asarray(x, dtype=float)) for x in self.b)
        if len(a) != len(b):
            raise ContractViolation(f"{len(a)} position gains but {len(b)} velocity gains")
        for i, (ai, bi) in enumerate(zip(a, b)):
            if ai.shape != bi.shape or ai.shape[0] != ai.shape[1]:
                raise ContractViolation(f"level {i}: gains must be square and equal-shaped")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_scalars(cls, a, b, blocks=None):
        """Scalar gains per level, expanded to ``a_i I`` when ``blocks`` is given."""
        blocks = blocks or [1] * len(a)
        return cls(tuple(ai * np.eye(d) for ai, d in zip(a, blocks)),
                   tuple(bi * np.eye(d) for bi, d in zip(b, blocks)))

    @property
    def dims(self):
        return tuple(ai.shape[0] for ai in self.a)

    def check(self, blocks):
        if tuple(blocks) != self.dims:
            raise ContractViolation(f"gain dimensions {self.dims} do not match levels {tuple(blocks)}")


# Default triple-pendulum gains, level 0 (cart) to level 3 (top link)
REFERENCE_GAINS = GainSchedule.from_scalars((0.8, 35.0, 38.0, 50.0), (2.5, 3.5, 4.85, 15.0))


@dataclass(frozen=True)
class GainReport:
    A: np.ndarray
    eigenvalues: np.ndarray
    passed: bool

    @property
    def max_real(self):
        return float(np.max(self.eigenvalues.real))


def error_dynamics_matrix(gains):
    """Block-diagonal companion matrix of the per-level error dynamics.

    The state is ``[e_0, edot_0, ..., e_{k+1}, edot_{k+1}]`` and each level
    obeys ``eddot = -a e - b edot``.
    """
    blocks = []
    for a, b in zip(gains.a, gains.b):
        d = a.shape[0]
        blocks.append(np.block([[np.zeros((d, d)), np.eye(d)], [-a, -b]]))
    size = sum(bl.shape[0] for bl in blocks)
    A = np.zeros((size, size))
    off = 0
    for bl in blocks:
        k = bl.shape[0]
        A[off:off + k, off:off + k] = bl
        off += k
    return A


def validate_gains(gains, level_dims=None):
    """Hurwitz check of :func:`error_dynamics_matrix`."""
    if level_dims is not None:
        gains.check(level_dims)
    A = error_dynamics_matrix(gains)
    eig = np.linalg.eigvals(A)
    return GainReport(A=A, eigenvalues=eig, passed=bool(np.max(eig.real) < 0.0))


# ----------------------------------------------------------------- outputs

@dataclass
class LevelRecord:
    level: int
    v_ext: np.ndarray = None
    u_ext: np.ndarray = None
    v_int: np.ndarray = None
    u_int: np.ndarray = None
    q_e: np.ndarray = None
    qd_e: np.ndarray = None
    qdd_e: np.ndarray = None
    e: np.ndarray = None
    ed: np.ndarray = None
    bem_residual: float = 0.0
    bem_iterations: int = 0
    bem_converged: bool = True


@dataclass
class ControlOutput:
    u: np.ndarray
    levels: list
    diagnostics: dict = field(default_factory=dict)

    @property
    def bem_converged(self):
        return all(r.bem_converged for r in self.levels)


@dataclass(frozen=True)
class RankDiagnostic:
    rank: int
    deficiency: int
    singular_values: np.ndarray


def eic_rank_diagnostic(model, s):
    """``rank(D_ua D_ua^+)`` and the number of balance directions it misses."""
    mats = eval_terms(model, s)
    P = mats.D_ua @ pinv(mats.D_ua)
    rank, sv = numerical_rank(P)
    return RankDiagnostic(rank=rank, deficiency=model.partition.m - rank, singular_values=sv)


# ---------------------------------------------------------------- controllers

@dataclass(frozen=True)
class DerivativeSettings:
    """How BEM velocities and accelerations are estimated.

    ``method`` is ``"filter"`` (state-variable filter of ``bandwidth``
    rad/s), ``"difference"`` (backward differences over ``stride`` steps)
    or ``"none"`` (feed-forward terms dropped).
    """

    method: str = "filter"
    bandwidth: float = 20.0
    stride: int = 1

    def __post_init__(self):
        if self.method not in ("filter", "difference", "none"):
            raise ContractViolation(f"unknown derivative method {self.method!r}")
        if not self.bandwidth > 0:
            raise ContractViolation(f"bandwidth must be positive, got {self.bandwidth}")
        if self.stride < 1:
            raise ContractViolation(f"stride must be >= 1, got {self.stride}")


class _BemTracker:
    """Warm start, held value and derivative estimator of one level's BEM."""

    def __init__(self, dim, derivatives):
        self.derivatives = derivatives
        self.history = BemHistory(derivatives.stride)
        self.filter = BemFilter(derivatives.bandwidth)
        self.last = np.zeros(dim)

    def update(self, sol, t):
        """Hold the last converged BEM and return ``(q_e, qdot_e, qddot_e)``."""
        if sol.converged:
            self.last = sol.q_e.copy()
        method = self.derivatives.method
        if method == "filter":
            qd, qdd = self.filter.update(t, self.last)
        elif method == "difference":
            self.history.push(t, self.last)
            qd, qdd = bem_derivatives(self.history)
        else:
            qd, qdd = np.zeros_like(self.last), np.zeros_like(self.last)
        return self.last.copy(), qd, qdd


class CEICController:
    """Cascaded controller: forward external pass, backward internal pass.

    ``derivatives`` selects how BEM velocities and accelerations are
    estimated (see :class:`DerivativeSettings`).
    """

    kind = "ceic"

    def __init__(self, model, reference, gains, settings=None, plan=None,
                 derivatives=None, check_nondegeneracy=True):
        self.model = model
        self.chain = build_chain(model, plan=plan)
        self.reference = reference
        gains.check(self.chain.blocks)
        self.gains = gains
        self.settings = settings or SolverSettings()
        self.check_nondegeneracy = check_nondegeneracy
        self.derivatives = derivatives or DerivativeSettings()
        self.reset()

    def reset(self):
        self.trackers = [_BemTracker(b, self.derivatives) for b in self.chain.blocks[1:]]

    def _coords(self, s, i):
        idx = list(self.chain.block_indices(i))
        return s.q[idx], s.qdot[idx]

    def forward_pass(self, s):
        """External controls ``u_i^ext`` and BEMs of every level at ``s``."""
        chain, gains = self.chain, self.gains
        mats = chain.evaluate(s)
        K = chain.depth - 1
        recs = [LevelRecord(level=i) for i in range(K + 1)]
        q_d, qd_d, qdd_d = self.reference(s.t)
        q0, w0 = self._coords(s, 0)
        r0 = recs[0]
        r0.q_e, r0.qd_e, r0.qdd_e = q_d, qd_d, qdd_d
        r0.e, r0.ed = q0 - q_d, w0 - qd_d
        r0.v_ext = qdd_d - gains.a[0] @ r0.e - gains.b[0] @ r0.ed
        r0.u_ext, _ = realize_input(mats[0], r0.v_ext)
        for i in range(K):
            tr = self.trackers[i]
            held = recs[i].u_ext if self.settings.input_mode == "held" else None
            sol = solve_bem(chain, i, s, recs[i].v_ext, self.settings, guess=tr.last,
                            held_input=held)
            q_e, qd_e, qdd_e = tr.update(sol, s.t)
            q, w = self._coords(s, i + 1)
            rec = recs[i + 1]
            rec.q_e, rec.qd_e, rec.qdd_e = q_e, qd_e, qdd_e
            rec.e, rec.ed = q - q_e, w - qd_e
            rec.bem_residual, rec.bem_iterations = sol.residual_norm, sol.iterations
            rec.bem_converged = sol.converged
            v = qdd_e - gains.a[i + 1] @ rec.e - gains.b[i + 1] @ rec.ed
            if i + 1 < K:
                rec.v_ext = v
                rec.u_ext, _ = realize_input(mats[i + 1], v)
            else:
                rec.v_int = v
        return mats, recs

    def backward_pass(self, mats, recs):
        """Internal controls from the last level back to the physical input."""
        K = len(mats) - 1
        tail = mats[K]
        recs[K].u_int = pinv(tail.B) @ (tail.D @ recs[K].v_int + tail.H)
        nondeg = []
        for i in range(K - 1, -1, -1):
            L = mats[i]
            qdd_u = np.concatenate([recs[j].v_int for j in range(i + 1, K + 1)])
            rhs = L.B_a @ recs[i + 1].u_int - L.D_au @ qdd_u - L.H_a
            recs[i].v_int = lu_solve(L.D_aa, rhs, what=f"D_aa at level {i}", level=i)
            recs[i].u_int = lu_solve(L.B_a, L.D_aa @ recs[i].v_int + L.D_au @ qdd_u + L.H_a,
                                     what=f"B_a at level {i}", level=i)
            if self.check_nondegeneracy:
                nd = float(np.linalg.norm(nondegeneracy_matrix(L, mats[i + 1], mats[i + 1].n_a)))
                nondeg.append(nd)
                if nd < 1e-12:
                    raise SingularityError(
                        f"level {i + 1}: non-degeneracy term vanished ({nd:.3e})",
                        sigma_min=nd, level=i + 1)
        return recs[0].u_int, nondeg

    def __call__(self, s):
        mats, recs = self.forward_pass(s)
        u, nondeg = self.backward_pass(mats, recs)
        return ControlOutput(u=u, levels=recs, diagnostics={"nondegeneracy": nondeg})


class EICController:
    """Classic EIC baseline.

    ``gains`` has two levels: ``(k_p1, k_d1)`` for the actuated coordinates
    and ``(k_p2, k_d2)`` (``m x m``) for the unactuated ones.
    """

    kind = "eic"

    def __init__(self, model, reference, gains, settings=None, derivatives=None):
        self.model = model
        n, m = model.partition.n, model.partition.m
        # two-level split: the BEM covers every unactuated coordinate at once
        self.chain = build_chain(model, blocks=(n, m))
        gains.check(self.chain.blocks)
        self.reference = reference
        self.gains = gains
        self.settings = settings or SolverSettings()
        self.derivatives = derivatives or DerivativeSettings()
        self.reset()

    def reset(self):
        self.tracker = _BemTracker(self.model.partition.m, self.derivatives)

    def __call__(self, s):
        chain, gains = self.chain, self.gains
        mats = chain.evaluate(s)
        L0 = mats[0]
        q_d, qd_d, qdd_d = self.reference(s.t)
        ia = list(chain.block_indices(0))
        iu = list(chain.block_indices(1))
        ext = LevelRecord(level=0, q_e=q_d, qd_e=qd_d, qdd_e=qdd_d)
        ext.e, ext.ed = s.q[ia] - q_d, s.qdot[ia] - qd_d
        ext.v_ext = qdd_d - gains.a[0] @ ext.e - gains.b[0] @ ext.ed
        ext.u_ext, _ = realize_input(L0, ext.v_ext)

        held = ext.u_ext if self.settings.input_mode == "held" else None
        sol = solve_bem(chain, 0, s, ext.v_ext, self.settings, guess=self.tracker.last,
                        held_input=held)
        q_e, qd_e, qdd_e = self.tracker.update(sol, s.t)
        intl = LevelRecord(level=1, q_e=q_e, qd_e=qd_e, qdd_e=qdd_e,
                           bem_residual=sol.residual_norm, bem_iterations=sol.iterations,
                           bem_converged=sol.converged)
        intl.e, intl.ed = s.q[iu] - q_e, s.qdot[iu] - qd_e
        intl.v_int = qdd_e - gains.a[1] @ intl.e - gains.b[1] @ intl.ed
        v_a = -pinv(L0.D_ua) @ (L0.H_u + L0.D_uu @ intl.v_int)
        ext.v_int = v_a
        u, _ = realize_input(L0, v_a)
        ext.u_int = u
        return ControlOutput(u=u, levels=[ext, intl], diagnostics={})


def make_controller(kind, model, reference, gains, settings=None, derivatives=None, plan=None):
    if kind == "ceic":
        return CEICController(model, reference, gains, settings, plan=plan,
                              derivatives=derivatives)
    if kind == "eic":
        return EICController(model, reference, gains, settings, derivatives=derivatives)
    raise ContractViolation(f"unknown controller type {kind!r}")


def eic_gains_from_levels(gains):
    """Collapse per-level CEIC gains into the EIC pair (level 0, diag of the rest)."""
    a_u = [np.diag(a) for a in gains.a[1:]]
    b_u = [np.diag(b) for b in gains.b[1:]]
    return GainSchedule((gains.a[0], np.diag(np.concatenate(a_u))),
                        (gains.b[0], np.diag(np.concatenate(b_u))))


__all__ = [
    "SineReference", "ConstantReference", "GainSchedule", "REFERENCE_GAINS", "GainReport",
    "error_dynamics_matrix", "validate_gains", "LevelRecord", "ControlOutput",
    "RankDiagnostic", "eic_rank_diagnostic", "DerivativeSettings", "CEICController",
    "EICController",
    "make_controller", "eic_gains_from_levels",
]
