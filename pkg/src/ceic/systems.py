"""Inverted pendulums on a cart.

All models use the cart position ``x`` (m) followed by absolute link angles
``theta_i`` (rad, zero upright, positive in the direction that moves the link
COM towards negative ``x``).  The cart is the only actuated coordinate.

Derived constants for link ``i`` of an ``N``-link stack::

    M_t = m_c + sum(m)
    M_i = m_i a_i + (m_{i+1} + ... + m_N) l_i
    I_i = J_i + m_i a_i^2 + (m_{i+1} + ... + m_N) l_i^2
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ContractViolation, Partition, RobotModel, StateVector, eval_terms

GRAVITY = 9.81


@dataclass(frozen=True)
class CartPendulumParams:
    """Physical parameters of an ``N``-link pendulum on a cart.

    ``J`` defaults to ``m l^2 / 12`` (uniform slender rod about its COM).
    """

    m_c: float = 1.0
    m: tuple = (0.3, 0.3, 0.3)
    l: tuple = (0.4, 0.4, 0.4)
    a: tuple = (0.2, 0.2, 0.2)
    J: tuple = None
    g: float = GRAVITY

    def __post_init__(self):
        m = tuple(float(v) for v in np.atleast_1d(self.m))
        l = tuple(float(v) for v in np.atleast_1d(self.l))
        a = tuple(float(v) for v in np.atleast_1d(self.a))
        if self.J is None:
            J = tuple(mi * li ** 2 / 12.0 for mi, li in zip(m, l))
        else:
            J = tuple(float(v) for v in np.atleast_1d(self.J))
        if not (len(m) == len(l) == len(a) == len(J)) or len(m) == 0:
            raise ContractViolation("m, l, a, J must have the same nonzero length")
        if self.m_c <= 0 or min(m) <= 0 or min(l) <= 0:
            raise ContractViolation("masses and lengths must be positive")
        if any(not (0 < ai <= li) for ai, li in zip(a, l)):
            raise ContractViolation("need 0 < a_i <= l_i for every link")
        if min(J) < 0 or self.g <= 0:
            raise ContractViolation("J_i must be non-negative and g positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "m_c", float(self.m_c))
        object.__setattr__(self, "g", float(self.g))

    @property
    def links(self):
        return len(self.m)

    @property
    def M_t(self):
        return self.m_c + sum(self.m)

    def _above(self, i):
        return sum(self.m[i + 1:])

    @property
    def M(self):
        return tuple(self.m[i] * self.a[i] + self._above(i) * self.l[i] for i in range(self.links))

    @property
    def I(self):  # noqa: E743
        return tuple(self.J[i] + self.m[i] * self.a[i] ** 2 + self._above(i) * self.l[i] ** 2
                     for i in range(self.links))

    def as_dict(self):
        return {"m_c": self.m_c, "m": self.m, "l": self.l, "a": self.a, "J": self.J, "g": self.g}


def _units(links):
    return {"x": "m", **{f"theta{i + 1}": "rad" for i in range(links)}}


def _potential(params):
    M = np.array(params.M)
    g = params.g
    return lambda q: g * float(M @ np.cos(np.asarray(q)[1:]))


def triple_pendulum_model(params=None):
    """Triple inverted pendulum on a cart, coordinates ``(x, th1, th2, th3)``."""
    p = CartPendulumParams() if params is None else params
    if p.links != 3:
        raise ContractViolation(f"triple pendulum needs 3 links, got {p.links}")
    Mt = p.M_t
    M1, M2, M3 = p.M
    I1, I2, I3 = p.I
    l1, l2 = p.l[0], p.l[1]
    g = p.g
    B = np.array([[1.0], [0.0], [0.0], [0.0]])

    def terms(q, qdot):
        _, t1, t2, t3 = q
        _, w1, w2, w3 = qdot
        s1, s2, s3 = np.sin(t1), np.sin(t2), np.sin(t3)
        c1, c2, c3 = np.cos(t1), np.cos(t2), np.cos(t3)
        c21, c31, c32 = np.cos(t2 - t1), np.cos(t3 - t1), np.cos(t3 - t2)
        s21, s31, s32 = np.sin(t2 - t1), np.sin(t3 - t1), np.sin(t3 - t2)
        D = np.array([
            [Mt, -M1 * c1, -M2 * c2, -M3 * c3],
            [-M1 * c1, I1, M2 * l1 * c21, M3 * l1 * c31],
            [-M2 * c2, M2 * l1 * c21, I2, M3 * l2 * c32],
            [-M3 * c3, M3 * l1 * c31, M3 * l2 * c32, I3],
        ])
        # entry (3, 2) uses s21; a printed s31 there breaks the skew property of Ddot - 2C
        C = np.array([
            [0.0, M1 * w1 * s1, M2 * w2 * s2, M3 * w3 * s3],
            [0.0, 0.0, -M2 * l1 * w2 * s21, -M3 * l1 * w3 * s31],
            [0.0, M2 * l1 * w1 * s21, 0.0, -M3 * l2 * w3 * s32],
            [0.0, M3 * l1 * w1 * s31, M3 * l2 * w2 * s32, 0.0],
        ])
        G = np.array([0.0, -M1 * g * s1, -M2 * g * s2, -M3 * g * s3])
        return D, C, G, B

    return RobotModel(
        name="triple_pendulum_cart",
        partition=Partition(n=1, m=3),
        terms=terms,
        metadata={"params": p.as_dict(), "units": _units(3)},
        potential=_potential(p),
    )


def cart_pendulum_model(params, name=None):
    """Generic ``N``-link inverted pendulum on a cart.

    Written independently of :func:`triple_pendulum_model`; for ``N = 3`` the
    two agree, which the test suite uses as a cross-check.
    """
    p = params
    N = p.links
    Mt = p.M_t
    M = np.array(p.M)
    I = np.array(p.I)
    l = np.array(p.l)
    g = p.g
    # coupling between links i < j is M_j l_i
    K = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i != j:
                K[i, j] = M[max(i, j)] * l[min(i, j)]
    B = np.zeros((N + 1, 1))
    B[0, 0] = 1.0

    def terms(q, qdot):
        th = np.asarray(q[1:], dtype=float)
        w = np.asarray(qdot[1:], dtype=float)
        diff = th[:, None] - th[None, :]
        D = np.empty((N + 1, N + 1))
        D[0, 0] = Mt
        D[0, 1:] = -M * np.cos(th)
        D[1:, 0] = D[0, 1:]
        D[1:, 1:] = K * np.cos(diff)
        D[1:, 1:][np.diag_indices(N)] = I
        C = np.zeros((N + 1, N + 1))
        C[0, 1:] = M * w * np.sin(th)
        C[1:, 1:] = K * np.sin(diff) * w[None, :]
        G = np.concatenate(([0.0], -M * g * np.sin(th)))
        return D, C, G, B

    default_name = {1: "cart_pole", 2: "double_pendulum_cart", 3: "triple_pendulum_cart_generic"}
    return RobotModel(
        name=name or default_name.get(N, f"{N}_link_pendulum_cart"),
        partition=Partition(n=1, m=N),
        terms=terms,
        metadata={"params": p.as_dict(), "units": _units(N)},
        potential=_potential(p),
    )


def cart_pole_model(params=None):
    """Single inverted pendulum on a cart, coordinates ``(x, th)``."""
    p = params or CartPendulumParams(m_c=1.0, m=(0.3,), l=(0.4,), a=(0.2,))
    if p.links != 1:
        raise ContractViolation(f"cart-pole needs 1 link, got {p.links}")
    return cart_pendulum_model(p)


def double_pendulum_cart_model(params=None):
    """Double inverted pendulum on a cart, coordinates ``(x, th1, th2)``."""
    p = params or CartPendulumParams(m_c=1.0, m=(0.3, 0.3), l=(0.4, 0.4), a=(0.2, 0.2))
    if p.links != 2:
        raise ContractViolation(f"double pendulum needs 2 links, got {p.links}")
    return cart_pendulum_model(p)


def cart_pole_balance_angle(accel, g=GRAVITY):
    """Angle at which a cart-pole link rests while the cart accelerates at ``accel``.

    From the link row of the dynamics with zero link velocity and
    acceleration: ``-M_1 cos(th) accel - M_1 g sin(th) = 0``.
    """
    return float(np.arctan2(-accel, g))


@dataclass
class OracleResult:
    residual: float = 0.0
    skipped: bool = False
    reason: str = ""
    extra: dict = field(default_factory=dict)


def s1_closed_form_oracle(params, s, u, qddot, guard=1e-6):
    """Residual of the explicit first-link equation of the triple pendulum.

    The cart acceleration is eliminated by hand, giving a scalar relation
    between ``thddot_1..3`` and ``u``.  ``qddot`` is an acceleration vector
    in model order (only the link entries are used).  The equation is the
    level-1 actuated row multiplied through by ``M_t``:

        (I1 Mt - M1^2 c1^2) th1'' + M2 (l1 Mt c21 - M1 c1 c2) th2''
          + M3 (l1 Mt c31 - M1 c1 c3) th3''
          + Mt (M2 l1 s12 w2^2 + M3 l1 s13 w3^2 - M1 g s1)
          + M1 c1 (M1 s1 w1^2 + M2 s2 w2^2 + M3 s3 w3^2) = M1 c1 u
    """
    p = params
    _, t1, t2, t3 = s.q
    _, w1, w2, w3 = s.qdot
    Mt = p.M_t
    M1, M2, M3 = p.M
    I1 = p.I[0]
    l1 = p.l[0]
    g = p.g
    c1, c2, c3 = np.cos(t1), np.cos(t2), np.cos(t3)
    s1, s2, s3 = np.sin(t1), np.sin(t2), np.sin(t3)
    inertia = I1 * Mt - M1 ** 2 * c1 ** 2
    gain = M1 * c1
    if abs(gain) < guard or abs(inertia) < guard:
        return OracleResult(skipped=True, reason="M1 cos(th1) or I1 Mt - M1^2 cos^2(th1) near zero")
    _, a1, a2, a3 = qddot
    u = float(np.atleast_1d(u)[0])
    lhs = (inertia * a1
           + M2 * (l1 * Mt * np.cos(t2 - t1) - M1 * c1 * c2) * a2
           + M3 * (l1 * Mt * np.cos(t3 - t1) - M1 * c1 * c3) * a3
           + Mt * (M2 * l1 * np.sin(t1 - t2) * w2 ** 2 + M3 * l1 * np.sin(t1 - t3) * w3 ** 2
                   - M1 * g * s1)
           + M1 * c1 * (M1 * s1 * w1 ** 2 + M2 * s2 * w2 ** 2 + M3 * s3 * w3 ** 2))
    return OracleResult(residual=float(lhs - gain * u), extra={"inertia": inertia, "gain": gain})


def upright_rest(model):
    return StateVector(np.zeros(model.dim), np.zeros(model.dim))


def passivity_residual(model, s, qddot=None, h=1e-6):
    """``qdot^T (Ddot - 2 C) qdot`` with ``Ddot`` by central differences along ``qdot``."""
    D_plus, _, _, _ = model.terms(s.q + h * s.qdot, s.qdot)
    D_minus, _, _, _ = model.terms(s.q - h * s.qdot, s.qdot)
    Ddot = (np.asarray(D_plus) - np.asarray(D_minus)) / (2 * h)
    _, C, _, _ = model.terms(s.q, s.qdot)
    return float(s.qdot @ (Ddot - 2 * np.asarray(C)) @ s.qdot)


def random_state(model, rng, angle=0.6, speed=1.0, cart=2.0):
    """Sample a state with link angles in ``[-angle, angle]``."""
    q = rng.uniform(-angle, angle, model.dim)
    q[0] = rng.uniform(-cart, cart)
    qdot = rng.uniform(-speed, speed, model.dim)
    return StateVector(q, qdot, 0.0)


__all__ = [
    "CartPendulumParams", "GRAVITY", "triple_pendulum_model", "cart_pendulum_model",
    "cart_pole_model", "double_pendulum_cart_model", "cart_pole_balance_angle",
    "s1_closed_form_oracle", "OracleResult", "upright_rest", "passivity_residual",
    "random_state",
]
