"""Manipulator-form rigid-body dynamics with an actuated/unactuated split.

Models are authored in their natural coordinate order and return
``D(q)``, ``C(q, qdot)``, ``G(q)`` and ``B``.  :func:`eval_terms` permutes
everything into ``[actuated | unactuated]`` order so downstream code can
use the block views ``D_aa``, ``D_au``, ``D_ua``, ``D_uu``, ``H_a``, ``H_u``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

# singular values below PINV_RTOL * sigma_max are dropped by pinv
PINV_RTOL = 1e-10
# numerical rank convention used by the condition checks: singular values
# must exceed both RANK_RTOL * sigma_max and RANK_ATOL
RANK_RTOL = 1e-8
RANK_ATOL = 1e-12


class ContractViolation(ValueError):
    """Raised when a caller breaks a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class SingularityError(NumericError):
    """A matrix that must be inverted is numerically singular."""

    def __init__(self, message, sigma_min=None, level=None, state=None):
        super().__init__(message, state=state)
        self.sigma_min = sigma_min
        self.level = level


def pinv(A):
    """SVD pseudo-inverse with the package-wide cutoff ``1e-10 * sigma_max``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((A.shape[1], A.shape[0]))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cutoff = PINV_RTOL * (s[0] if s.size else 0.0)
    s_inv = np.zeros_like(s)
    keep = s > cutoff
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def numerical_rank(A, rtol=RANK_RTOL, atol=RANK_ATOL):
    """Return ``(rank, singular_values)``.

    A singular value counts when it exceeds ``max(rtol * sigma_max, atol)``;
    the absolute floor keeps a vanishing 1x1 block from looking full rank.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > max(rtol * s[0], atol))), s


def lu_solve(A, b, what="matrix", level=None):
    """Dense solve by LU with partial pivoting; raises SingularityError."""
    A = np.atleast_2d(A)
    if A.shape[0] == 1:
        a = A[0, 0]
        if a == 0.0 or not np.isfinite(a):
            raise SingularityError(f"{what} is singular", sigma_min=abs(a), level=level)
        return np.asarray(b, dtype=float) / a
    with warnings.catch_warnings():
        # singularity is reported below with more context than scipy's warning
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-14 * max(diag.max(), 1e-300):
        smin = np.linalg.svd(A, compute_uv=False)[-1]
        raise SingularityError(f"{what} is singular (sigma_min={smin:.3e})",
                               sigma_min=smin, level=level)
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


@dataclass(frozen=True)
class StateVector:
    """Generalized positions and velocities (model coordinate order) at time ``t``."""

    q: np.ndarray
    qdot: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        qdot = np.array(self.qdot, dtype=float).reshape(-1)
        if q.shape != qdot.shape:
            raise ContractViolation(
                f"q has {q.size} entries but qdot has {qdot.size}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise NumericError("state contains non-finite entries", state=(q, qdot))
        q.flags.writeable = False
        qdot.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self):
        return self.q.size

    def substitute(self, index, q_values, qdot_values=None):
        """Copy with coordinates ``index`` replaced (velocities zeroed by default)."""
        q = self.q.copy()
        qdot = self.qdot.copy()
        q[index] = q_values
        qdot[index] = 0.0 if qdot_values is None else qdot_values
        return StateVector(q, qdot, self.t)


@dataclass(frozen=True)
class Partition:
    """Actuated/unactuated split.

    ``ordering[k]`` is the model index of the k-th coordinate in
    ``[actuated | unactuated]`` order.
    """

    n: int
    m: int
    ordering: tuple = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ContractViolation(f"need n >= 1 and m >= 1, got n={self.n}, m={self.m}")
        ordering = tuple(range(self.n + self.m)) if self.ordering is None else tuple(
            int(i) for i in self.ordering)
        if sorted(ordering) != list(range(self.n + self.m)):
            raise ContractViolation(f"ordering {ordering} is not a permutation of 0..{self.n + self.m - 1}")
        object.__setattr__(self, "ordering", ordering)

    @property
    def dim(self):
        return self.n + self.m

    @property
    def highly_underactuated(self):
        return self.n < self.m

    @property
    def actuated(self):
        return self.ordering[:self.n]

    @property
    def unactuated(self):
        return self.ordering[self.n:]


@dataclass(frozen=True)
class ManipulatorMatrices:
    """``D``, ``C``, ``G``, ``B`` and ``H = C qdot + G`` in partitioned order."""

    D: np.ndarray
    C: np.ndarray
    G: np.ndarray
    B: np.ndarray
    H: np.ndarray
    n: int

    @property
    def D_aa(self):
        return self.D[:self.n, :self.n]

    @property
    def D_au(self):
        return self.D[:self.n, self.n:]

    @property
    def D_ua(self):
        return self.D[self.n:, :self.n]

    @property
    def D_uu(self):
        return self.D[self.n:, self.n:]

    @property
    def H_a(self):
        return self.H[:self.n]

    @property
    def H_u(self):
        return self.H[self.n:]

    @property
    def B_a(self):
        return self.B[:self.n]

    @property
    def B_u(self):
        return self.B[self.n:]


@dataclass(frozen=True)
class RobotModel:
    """A hand-coded manipulator-form model.

    ``terms(q, qdot)`` returns ``(D, C, G, B)`` in natural coordinate order.
    ``potential(q)``, when given, lets tests check energy conservation.
    ``metadata`` records physical parameters and per-coordinate units.
    """

    name: str
    partition: Partition
    terms: Callable
    metadata: dict = field(default_factory=dict)
    potential: Optional[Callable] = None

    @property
    def dim(self):
        return self.partition.dim

    @property
    def n_inputs(self):
        return self.partition.n

    def relabel(self, permutation):
        """Same physics with model coordinates reordered.

        New coordinate ``k`` is old coordinate ``permutation[k]``.
        """
        perm = np.asarray(permutation, dtype=int)
        inv = np.argsort(perm)
        terms = self.terms

        def permuted_terms(q, qdot):
            q_old = np.asarray(q)[inv]
            qdot_old = np.asarray(qdot)[inv]
            D, C, G, B = terms(q_old, qdot_old)
            return D[np.ix_(perm, perm)], C[np.ix_(perm, perm)], G[perm], B[perm]

        potential = None
        if self.potential is not None:
            old_potential = self.potential
            potential = lambda q: old_potential(np.asarray(q)[inv])  # noqa: E731
        ordering = tuple(int(inv[i]) for i in self.partition.ordering)
        return replace(self, terms=permuted_terms, potential=potential,
                       partition=Partition(self.partition.n, self.partition.m, ordering))


def eval_terms(model, s):
    """Evaluate the model at ``s`` and return partitioned :class:`ManipulatorMatrices`."""
    if s.dim != model.dim:
        raise ContractViolation(f"state has {s.dim} coordinates, model {model.name!r} has {model.dim}")
    D, C, G, B = model.terms(s.q, s.qdot)
    D = np.asarray(D, dtype=float)
    C = np.asarray(C, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1)
    B = np.asarray(B, dtype=float).reshape(model.dim, -1)
    o = list(model.partition.ordering)
    D = D[np.ix_(o, o)]
    C = C[np.ix_(o, o)]
    G = G[o]
    B = B[o]
    H = C @ s.qdot[o] + G
    if not (np.all(np.isfinite(D)) and np.all(np.isfinite(H)) and np.all(np.isfinite(B))):
        raise NumericError(f"non-finite dynamics terms for {model.name!r}", state=s)
    return ManipulatorMatrices(D=D, C=C, G=G, B=B, H=H, n=model.partition.n)


def forward_dynamics(model, s, u):
    """Solve ``D qddot + H = B u`` for ``qddot`` (returned in model order)."""
    mats = eval_terms(model, s)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.size != mats.B.shape[1]:
        raise ContractViolation(f"input has {u.size} entries, model expects {mats.B.shape[1]}")
    qdd_p = lu_solve(mats.D, mats.B @ u - mats.H, what="inertia matrix D")
    qdd = np.empty_like(qdd_p)
    qdd[list(model.partition.ordering)] = qdd_p
    return qdd


def total_energy(model, s):
    """Kinetic plus potential energy; requires ``model.potential``."""
    if model.potential is None:
        raise ContractViolation(f"model {model.name!r} has no potential energy function")
    D, _, _, _ = model.terms(s.q, s.qdot)
    return 0.5 * s.qdot @ np.asarray(D) @ s.qdot + model.potential(s.q)
