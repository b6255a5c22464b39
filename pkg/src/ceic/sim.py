"""Fixed-step closed-loop simulation, trajectory logging and error metrics.

The control is evaluated once at the start of every step and held constant
through the four RK4 stages.  Every step also records the largest mismatch
between the accelerations the controller designed and the accelerations the
model actually produces under the emitted input.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ContractViolation, NumericError, StateVector, forward_dynamics


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    duration: float = 30.0
    steady_window: tuple = (10.0, 30.0)
    log_decimation: int = 1
    divergence_angle: float = math.pi / 2

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractViolation(f"dt must be positive, got {self.dt}")
        lo, hi = self.steady_window
        if not 0 <= lo < hi:
            raise ContractViolation(f"bad steady window {self.steady_window}")
        if self.duration < hi:
            raise ContractViolation(
                f"duration {self.duration} ends before the steady window {self.steady_window}")
        if self.log_decimation < 1:
            raise ContractViolation("log_decimation must be >= 1")

    @property
    def steps(self):
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class DivergenceEvent:
    t: float
    reason: str


def _rk4(model, s, u, dt, t_next=None):
    def f(q, qd):
        return qd, forward_dynamics(model, StateVector(q, qd, s.t), u)

    q, qd = s.q, s.qdot
    k1q, k1v = f(q, qd)
    k2q, k2v = f(q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, qd + dt * k3v)
    q_next = q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    qd_next = qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    if not (np.all(np.isfinite(q_next)) and np.all(np.isfinite(qd_next))):
        raise NumericError(f"non-finite state after RK4 step at t={s.t}", state=s)
    return StateVector(q_next, qd_next, s.t + dt if t_next is None else t_next)


def rk4_step(model, controller, s, dt):
    """One RK4 step with the input held at its start-of-step value.

    ``controller`` is either a callable ``s -> ControlOutput`` (or array) or a
    constant input; ``None`` means zero input.
    """
    if not dt > 0:
        raise ContractViolation(f"dt must be positive, got {dt}")
    if controller is None:
        u = np.zeros(model.n_inputs)
    elif callable(controller):
        out = controller(s)
        u = getattr(out, "u", out)
    else:
        u = controller
    return _rk4(model, s, np.atleast_1d(np.asarray(u, dtype=float)), dt)


def lemma1_residual(model, controller, s, out):
    """max_j ||qdd of level block j - v_j^int|| under the emitted input.

    Only meaningful for cascaded controllers; returns NaN otherwise.
    """
    if getattr(controller, "kind", None) != "ceic":
        return float("nan")
    qdd = forward_dynamics(model, s, out.u)
    chain = controller.chain
    worst = 0.0
    for j, rec in enumerate(out.levels):
        idx = list(chain.block_indices(j))
        worst = max(worst, float(np.linalg.norm(qdd[idx] - rec.v_int)))
    return worst


class TrajectoryLog:
    """Column store of one simulation run.

    ``columns`` maps a column name to a 1-D array; ``events`` holds
    divergence or solver events; ``meta`` carries the run description.
    """

    def __init__(self, columns=None, events=None, meta=None):
        self.columns = {k: np.asarray(v, dtype=float) for k, v in (columns or {}).items()}
        self.events = list(events or [])
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.columns["t"]) if "t" in self.columns else 0

    def __getitem__(self, name):
        return self.columns[name]

    @property
    def names(self):
        return list(self.columns)

    @property
    def diverged(self):
        return any(ev.reason.startswith("divergence") for ev in self.events)

    @property
    def divergence_time(self):
        for ev in self.events:
            if ev.reason.startswith("divergence"):
                return ev.t
        return None

    def window(self, lo, hi):
        t = self["t"]
        return (t >= lo - 1e-12) & (t <= hi + 1e-12)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.names
        w.writerow(names)
        data = np.column_stack([self.columns[n] for n in names]) if names else np.zeros((0, 0))
        for row in data:
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0]
        data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(names))
        return cls({n: data[:, k] for k, n in enumerate(names)})


def _coordinate_labels(model):
    units = model.metadata.get("units")
    if units and len(units) == model.dim:
        return [str(c) for c in units]
    return [f"q{i}" for i in range(model.dim)]


def run_simulation(model, controller, cfg, initial_state):
    """Simulate ``controller`` on ``model`` from ``initial_state``.

    Stops early on divergence (any unactuated angle beyond
    ``cfg.divergence_angle``, or a non-finite state) or when the controller
    raises a numeric error; the reason is recorded in ``log.events``.
    """
    if hasattr(controller, "reset"):
        controller.reset()
    labels = _coordinate_labels(model)
    unact = list(model.partition.unactuated)
    cols = {}

    def put(name, value):
        cols.setdefault(name, []).append(float(value))

    events = []
    s = StateVector(initial_state.q, initial_state.qdot, initial_state.t)
    steps = cfg.steps
    for k in range(steps + 1):
        try:
            out = controller(s)
        except (NumericError, ArithmeticError) as exc:
            events.append(DivergenceEvent(s.t, f"divergence: controller error ({exc})"))
            break
        u = np.atleast_1d(out.u)
        if k % cfg.log_decimation == 0:
            put("t", s.t)
            for name, v in zip(labels, s.q):
                put(f"q_{name}", v)
            for name, v in zip(labels, s.qdot):
                put(f"qd_{name}", v)
            for j, v in enumerate(u):
                put(f"u{j}", v)
            for rec in out.levels:
                i = rec.level
                for name, arr in (("qe", rec.q_e), ("e", rec.e), ("ed", rec.ed),
                                  ("vext", rec.v_ext), ("vint", rec.v_int)):
                    if arr is None:
                        continue
                    for c, v in enumerate(np.atleast_1d(arr)):
                        put(f"{name}{i}_{c}", v)
                if i > 0:
                    put(f"bem_res{i}", rec.bem_residual)
                    put(f"bem_iter{i}", rec.bem_iterations)
                    put(f"bem_ok{i}", 1.0 if rec.bem_converged else 0.0)
            put("lemma1", lemma1_residual(model, controller, s, out))
        for rec in out.levels:
            if rec.level > 0 and not rec.bem_converged:
                events.append(DivergenceEvent(s.t, f"bem: level {rec.level} did not converge"))
        if k == steps:
            break
        try:
            # time from the step count, so long runs do not accumulate rounding
            s = _rk4(model, s, u, cfg.dt, t_next=initial_state.t + (k + 1) * cfg.dt)
        except NumericError:
            events.append(DivergenceEvent(s.t + cfg.dt, "divergence: non-finite state"))
            break
        if np.any(np.abs(s.q[unact]) > cfg.divergence_angle):
            events.append(DivergenceEvent(s.t, "divergence: angle beyond limit"))
            break
    n = min(len(v) for v in cols.values()) if cols else 0
    cols = {k: v[:n] for k, v in cols.items()}
    return TrajectoryLog(cols, events, meta={"model": model.name,
                                            "controller": getattr(controller, "kind", "?"),
                                            "labels": labels})


@dataclass
class ErrorMetrics:
    """Steady-window statistics of ``|e|`` per coordinate."""

    names: list
    mean: np.ndarray
    std: np.ndarray
    relative_mean: np.ndarray
    relative_std: np.ndarray
    amplitude: np.ndarray
    window: tuple = field(default=(10.0, 30.0))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["coordinate", "mean_abs", "std_abs", "amplitude", "relative_mean_pct",
                    "relative_std_pct"])
        for k, n in enumerate(self.names):
            w.writerow([n, repr(float(self.mean[k])), repr(float(self.std[k])),
                        repr(float(self.amplitude[k])), repr(float(self.relative_mean[k])),
                        repr(float(self.relative_std[k]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda key: np.array([float(r[key]) for r in rows])  # noqa: E731
        return cls(names=[r["coordinate"] for r in rows], mean=col("mean_abs"),
                   std=col("std_abs"), relative_mean=col("relative_mean_pct"),
                   relative_std=col("relative_std_pct"), amplitude=col("amplitude"))

    def table(self):
        """Aligned text table: one column per coordinate, absolute and relative rows."""
        head = f"{'':>14}" + "".join(f"{n:>20}" for n in self.names)
        absr = f"{'Absolute':>14}" + "".join(
            f"{f'{m:.4f} ± {s:.4f}':>20}" for m, s in zip(self.mean, self.std))
        rel = f"{'Relative (%)':>14}" + "".join(
            f"{f'{m:.1f} ± {s:.1f}':>20}" for m, s in zip(self.relative_mean, self.relative_std))
        return "\n".join([head, absr, rel])


def steady_state_errors(log, cfg):
    """Mean and std of ``|e|`` over the steady window, per cascade coordinate.

    The cart error is normalized by the reference amplitude and every link
    error by the amplitude of its own BEM profile over the same window.
    """
    lo, hi = cfg.steady_window
    if len(log) == 0:
        raise ContractViolation("empty trajectory log")
    mask = log.window(lo, hi)
    if not np.any(mask):
        raise ContractViolation(f"log has no samples in the steady window {cfg.steady_window}")
    names, means, stds, amps = [], [], [], []
    level = 0
    while f"e{level}_0" in log.columns:
        c = 0
        while f"e{level}_{c}" in log.columns:
            e = np.abs(log[f"e{level}_{c}"][mask])
            target = log[f"qe{level}_{c}"][mask]
            names.append(f"e{level}" if f"e{level}_1" not in log.columns else f"e{level}_{c}")
            means.append(float(e.mean()))
            stds.append(float(e.std()))
            amps.append(float(np.max(np.abs(target))))
            c += 1
        level += 1
    mean, std, amp = np.array(means), np.array(stds), np.array(amps)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_mean = np.where(amp > 0, 100.0 * mean / amp, np.nan)
        rel_std = np.where(amp > 0, 100.0 * std / amp, np.nan)
    return ErrorMetrics(names, mean, std, rel_mean, rel_std, amp, window=(lo, hi))


__all__ = [
    "SimConfig", "DivergenceEvent", "rk4_step", "lemma1_residual", "TrajectoryLog",
    "run_simulation", "ErrorMetrics", "steady_state_errors",
]
