"""Cascaded decomposition of an underactuated model into virtually actuated levels.

Level 0 is the model itself in ``[actuated | unactuated]`` order.  Level
``i + 1`` is obtained from level ``i`` by eliminating the accelerations of
its first ``n`` coordinates (a Schur complement), which turns the remaining
coordinates into a smaller underactuated system driven by the same input::

    D' = D_uu - D_ua D_aa^{-1} D_au
    H' = H_u  - D_ua D_aa^{-1} H_a
    B' = B_u  - D_ua D_aa^{-1} B_a

Levels ``0..k`` expose ``n`` virtually actuated coordinates each; the last
level ``k + 1`` holds the remaining ``z`` coordinates, ``m = k n + z`` with
``1 <= z <= n``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    RANK_RTOL,
    ContractViolation,
    SingularityError,
    eval_terms,
    lu_solve,
    numerical_rank,
    pinv,
)


class CascadeConstructionError(ValueError):
    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


@dataclass(frozen=True)
class LevelMatrices:
    """``D``, ``H``, ``B`` of one cascade level at one state.

    The first ``n_a`` coordinates are the virtually actuated ones; when
    ``n_a`` equals the level size the level is the fully actuated tail.
    """

    index: int
    D: np.ndarray
    H: np.ndarray
    B: np.ndarray
    n_a: int

    @property
    def size(self):
        return self.D.shape[0]

    @property
    def is_last(self):
        return self.n_a == self.size

    @property
    def D_aa(self):
        return self.D[:self.n_a, :self.n_a]

    @property
    def D_au(self):
        return self.D[:self.n_a, self.n_a:]

    @property
    def D_ua(self):
        return self.D[self.n_a:, :self.n_a]

    @property
    def D_uu(self):
        return self.D[self.n_a:, self.n_a:]

    @property
    def H_a(self):
        return self.H[:self.n_a]

    @property
    def H_u(self):
        return self.H[self.n_a:]

    @property
    def B_a(self):
        return self.B[:self.n_a]

    @property
    def B_u(self):
        return self.B[self.n_a:]


def reduce(level, next_size=None):
    """Eliminate the actuated accelerations of ``level``; returns level ``index + 1``.

    ``next_size`` is the actuated block size of the returned level (defaults
    to ``level.n_a`` capped at the remaining dimension).
    """
    if level.is_last:
        raise ContractViolation(f"level {level.index} is the last level and cannot be reduced")
    Daa = level.D_aa
    rhs = np.column_stack([level.D_au, level.H_a, level.B_a])
    sol = lu_solve(Daa, rhs, what=f"D_aa at level {level.index}", level=level.index)
    Dua = level.D_ua
    n_u = level.size - level.n_a
    X = Dua @ sol
    D = level.D_uu - X[:, :n_u]
    H = level.H_u - X[:, n_u]
    B = level.B_u - X[:, n_u + 1:]
    n_next = min(level.n_a if next_size is None else next_size, n_u)
    return LevelMatrices(index=level.index + 1, D=D, H=H, B=B, n_a=n_next)


def realize_input(level, v):
    """Input ``u`` under which the actuated block of ``level`` accelerates at ``v``.

    The remaining accelerations are eliminated exactly: the level's full
    dynamics ``D qdd + H = B u`` is solved jointly for ``(qdd_u, u)`` with
    ``qdd_a = v`` imposed.  On the last level (no unactuated part) this is
    ``u = B^+ (D v + H)``.  Returns ``(u, qdd_u)``.
    """
    v = np.atleast_1d(v)
    if level.is_last:
        return pinv(level.B) @ (level.D @ v + level.H), np.zeros(0)
    n_u = level.size - level.n_a
    A = np.hstack([level.D[:, level.n_a:], -level.B])
    if A.shape[0] != A.shape[1]:
        raise ContractViolation(
            f"level {level.index}: {level.n_a} actuated coordinates but {level.B.shape[1]} inputs")
    x = lu_solve(A, -level.D[:, :level.n_a] @ v - level.H,
                 what=f"input map at level {level.index}", level=level.index)
    return x[n_u:], x[:n_u]


@dataclass(frozen=True)
class CascadeLevel:
    """Static description of level ``index``: which model coordinates it owns."""

    index: int
    n_a: int
    n_u: int
    coords: tuple          # model indices of all level coordinates
    actuated: tuple        # model indices of its virtually actuated block


@dataclass(frozen=True)
class CascadeChain:
    """The ordered levels ``S^0 .. S^{k+1}`` of a model.

    ``order`` lists model indices in chain order: actuated coordinates, then
    the unactuated ones in the order they are handed to successive levels.
    """

    model: object
    order: tuple
    blocks: tuple
    levels: tuple = field(default=())

    @property
    def n(self):
        return self.model.partition.n

    @property
    def depth(self):
        """Number of levels (``k + 2``)."""
        return len(self.blocks)

    @property
    def k(self):
        return len(self.blocks) - 2

    @property
    def z(self):
        return self.blocks[-1]

    def offsets(self):
        return np.concatenate(([0], np.cumsum(self.blocks))).astype(int)

    def block_indices(self, i):
        """Model indices of level ``i``'s actuated block."""
        off = self.offsets()
        return self.order[off[i]:off[i + 1]]

    def evaluate(self, s, upto=None):
        """All level matrices at state ``s`` (levels ``0..upto`` inclusive)."""
        last = self.depth - 1 if upto is None else upto
        mats = eval_terms(self.model, s)
        perm = _chain_permutation(self.model.partition.ordering, self.order)
        D = mats.D[np.ix_(perm, perm)]
        level = LevelMatrices(0, D, mats.H[perm], mats.B[perm], self.blocks[0])
        out = [level]
        for i in range(1, last + 1):
            level = reduce(level, self.blocks[i])
            out.append(level)
        return out

    def accelerations(self, s, u):
        """Reconstruct ``qddot`` (model order) level by level from the tail up."""
        levels = self.evaluate(s)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        tail = levels[-1]
        qdd_chain = lu_solve(tail.D, tail.B @ u - tail.H, what="D at last level",
                             level=tail.index)
        for L in reversed(levels[:-1]):
            qdd_a = lu_solve(L.D_aa, L.B_a @ u - L.D_au @ qdd_chain - L.H_a,
                             what=f"D_aa at level {L.index}", level=L.index)
            qdd_chain = np.concatenate((qdd_a, qdd_chain))
        qdd = np.empty(self.model.dim)
        qdd[list(self.order)] = qdd_chain
        return qdd

    def chain_vector(self, vec):
        """Model-order vector rearranged into chain order."""
        return np.asarray(vec)[list(self.order)]


def _chain_permutation(partition_ordering, chain_order):
    # positions of chain-ordered model indices inside the partitioned matrices
    pos = {model_idx: k for k, model_idx in enumerate(partition_ordering)}
    return [pos[i] for i in chain_order]


def level_sizes(n, m):
    """Block sizes ``[n, n, ..., n, z]`` with ``m = k n + z``, ``1 <= z <= n``."""
    k = -(-m // n) - 1
    z = m - k * n
    return (n,) + (n,) * k + (z,)


def build_chain(model, plan=None, reference_state=None, blocks=None):
    """Build the cascade of ``model``.

    ``plan`` is a permutation of the unactuated coordinates (model indices)
    giving the order in which they become virtually actuated; by default
    they follow the partition ordering, so relabeling a model's coordinates
    (:meth:`RobotModel.relabel`) leaves its cascade unchanged.  ``blocks`` overrides the per-level block
    sizes (e.g. ``(n, m)`` gives the two-level split used by the classic
    controller).  With ``reference_state`` the input matrices of all levels
    are rank-checked there.
    """
    part = model.partition
    n, m = part.n, part.m
    unact = list(part.unactuated) if plan is None else [int(i) for i in plan]
    if sorted(unact) != sorted(part.unactuated):
        raise CascadeConstructionError(
            f"plan {tuple(unact)} is not a permutation of the unactuated coordinates "
            f"{tuple(sorted(part.unactuated))}")
    order = tuple(part.actuated) + tuple(unact)
    blocks = level_sizes(n, m) if blocks is None else tuple(int(b) for b in blocks)
    if sum(blocks) != n + m or blocks[0] != n or min(blocks) < 1:
        raise CascadeConstructionError(f"invalid block sizes {blocks} for n={n}, m={m}")
    if any(b != n for b in blocks[:-1]) or blocks[-1] > max(n, m):
        raise CascadeConstructionError(
            f"intermediate levels must expose exactly n={n} coordinates, got {blocks}")
    levels = []
    off = 0
    for i, b in enumerate(blocks):
        coords = order[off:]
        levels.append(CascadeLevel(index=i, n_a=b, n_u=len(coords) - b,
                                   coords=tuple(coords), actuated=tuple(order[off:off + b])))
        off += b
    chain = CascadeChain(model=model, order=order, blocks=blocks, levels=tuple(levels))
    if reference_state is not None:
        try:
            mats = chain.evaluate(reference_state)
        except SingularityError as exc:
            raise CascadeConstructionError(f"level {exc.level}: {exc}", level=exc.level) from exc
        for L in mats:
            Ba = L.B if L.is_last else L.B_a
            need = min(Ba.shape)
            rank, _ = numerical_rank(Ba)
            if rank < need:
                raise CascadeConstructionError(
                    f"level {L.index}: input matrix B_a has rank {rank} < {need} at the "
                    f"reference state", level=L.index)
    return chain


@dataclass(frozen=True)
class LevelCondition:
    state_index: int
    level: int
    rank_D_aa: int
    rank_D_au: int
    rank_B_a: int
    required_rank: int
    sv_D_aa: tuple
    sv_D_au: tuple
    sv_B_a: tuple
    nondegeneracy: float      # NaN on level 0 (no parent level)
    passed: bool


@dataclass
class ConditionReport:
    """Per-state, per-level rank and non-degeneracy checks.

    ``eic_rank`` holds ``rank(D_ua D_ua^+)`` of the full model at each state.
    """

    chain_name: str
    n: int
    m: int
    records: list
    eic_rank: list
    nondegeneracy_tol: float = 1e-9

    @property
    def passed(self):
        return all(r.passed for r in self.records)

    def failed_levels(self):
        return sorted({r.level for r in self.records if not r.passed})

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "level", "rank_D_aa", "rank_D_au", "rank_B_a", "required_rank",
                    "sigma_min_D_aa", "sigma_min_D_au", "sigma_min_B_a", "nondegeneracy",
                    "passed"])
        for r in self.records:
            w.writerow([r.state_index, r.level, r.rank_D_aa, r.rank_D_au, r.rank_B_a,
                        r.required_rank, _smin(r.sv_D_aa), _smin(r.sv_D_au), _smin(r.sv_B_a),
                        repr(r.nondegeneracy), int(r.passed)])
        return buf.getvalue()

    def summary(self):
        lines = [f"cascade conditions for {self.chain_name} (n={self.n}, m={self.m})",
                 f"states checked: {len(self.eic_rank)}",
                 "level  min-rank(D_aa,D_au,B_a)  required  min-nondegeneracy  status"]
        for lvl in sorted({r.level for r in self.records}):
            rs = [r for r in self.records if r.level == lvl]
            ranks = (min(r.rank_D_aa for r in rs), min(r.rank_D_au for r in rs),
                     min(r.rank_B_a for r in rs))
            nd = [r.nondegeneracy for r in rs if np.isfinite(r.nondegeneracy)]
            nd_s = f"{min(nd):.3e}" if nd else "n/a"
            status = "ok" if all(r.passed for r in rs) else "FAIL"
            lines.append(f"{lvl:5d}  {str(ranks):>23}  {rs[0].required_rank:8d}  {nd_s:>17}  {status}")
        er = min(self.eic_rank) if self.eic_rank else 0
        lines.append(f"classic EIC: rank(D_ua D_ua^+) = {er} of m = {self.m} "
                     f"(deficiency {self.m - er})")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def _smin(sv):
    return repr(float(min(sv))) if len(sv) else "nan"


def nondegeneracy_matrix(parent, child, n_next):
    """``D_aa^(i+1) - B_a^(i+1) (B_a^(i))^{-1} D_au^(i)[:, :n_next]``.

    Uses the columns of ``D_au^(i)`` belonging to the next level's actuated block.
    """
    Ba_child = child.B if child.is_last else child.B_a
    Daa_child = child.D if child.is_last else child.D_aa
    X = Ba_child @ lu_solve(parent.B_a, parent.D_au[:, :n_next],
                            what=f"B_a at level {parent.index}", level=parent.index)
    return Daa_child - X


def verify_conditions(chain, states, nondegeneracy_tol=1e-9):
    """Rank and non-degeneracy checks of every level at every state in ``states``."""
    states = list(states)
    if not states:
        raise ContractViolation("verify_conditions needs at least one state")
    records = []
    eic_rank = []
    for si, s in enumerate(states):
        mats0 = eval_terms(chain.model, s)
        Dua = mats0.D_ua
        r, _ = numerical_rank(Dua @ pinv(Dua))
        eic_rank.append(r)
        try:
            levels = chain.evaluate(s)
        except SingularityError as exc:
            lvl = exc.level if exc.level is not None else 0
            records.append(LevelCondition(si, lvl + 1, 0, 0, 0, chain.blocks[min(lvl + 1, chain.depth - 1)],
                                          (), (), (), float("nan"), False))
            continue
        for i, L in enumerate(levels):
            if L.is_last:
                Daa, Dau, Ba = L.D, np.zeros((L.size, 0)), L.B
            else:
                Daa, Dau, Ba = L.D_aa, L.D_au, L.B_a
            ra, sa = numerical_rank(Daa)
            ru, su = numerical_rank(Dau)
            rb, sb = numerical_rank(Ba)
            need = L.n_a
            ok = ra == need and rb == min(Ba.shape) and (Dau.size == 0 or ru == min(Dau.shape))
            nd = float("nan")
            if i > 0:
                parent = levels[i - 1]
                try:
                    nd = float(np.linalg.norm(nondegeneracy_matrix(parent, L, L.n_a)))
                except SingularityError:
                    nd = 0.0
                ok = ok and nd > nondegeneracy_tol
            records.append(LevelCondition(si, i, ra, ru, rb, need, tuple(sa), tuple(su),
                                          tuple(sb), nd, bool(ok)))
    return ConditionReport(chain_name=chain.model.name, n=chain.model.partition.n,
                           m=chain.model.partition.m, records=records, eic_rank=eic_rank,
                           nondegeneracy_tol=nondegeneracy_tol)


__all__ = [
    "CascadeConstructionError", "LevelMatrices", "reduce", "CascadeLevel", "CascadeChain",
    "level_sizes", "build_chain", "LevelCondition", "ConditionReport", "verify_conditions",
    "nondegeneracy_matrix", "realize_input", "RANK_RTOL",
]
