"""Scenario files: a small INI grammar parsed with :mod:`configparser`.

Every section is required and unknown keys are rejected.  Lists are
comma-separated; floats are written with ``repr`` so that serializing a
parsed scenario reproduces the file byte for byte.  ``docs/formats.md``
documents every key.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .bem import SolverSettings
from .controllers import (
    ConstantReference,
    DerivativeSettings,
    GainSchedule,
    SineReference,
    eic_gains_from_levels,
    make_controller,
)
from .dynamics import ContractViolation, StateVector
from .sim import SimConfig
from .systems import (
    CartPendulumParams,
    cart_pendulum_model,
    cart_pole_model,
    double_pendulum_cart_model,
    triple_pendulum_model,
)

MODELS = {
    "triple_pendulum": (triple_pendulum_model, 3),
    "double_pendulum": (double_pendulum_cart_model, 2),
    "cart_pole": (cart_pole_model, 1),
    "generic_pendulum": (cart_pendulum_model, None),
}


class ConfigError(ValueError):
    """A scenario file is malformed; the message names the offending key."""


def _floats(text, key):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from exc


def _fmt(values):
    if isinstance(values, (tuple, list, np.ndarray)):
        return ", ".join(repr(float(v)) for v in values)
    if isinstance(values, bool):
        return "true" if values else "false"
    if isinstance(values, float):
        return repr(values)
    return str(values)


@dataclass(frozen=True)
class SystemSection:
    model: str = "triple_pendulum"
    m_c: float = 1.0
    m: tuple = (0.3, 0.3, 0.3)
    l: tuple = (0.4, 0.4, 0.4)
    a: tuple = (0.2, 0.2, 0.2)
    J: tuple = ()
    g: float = 9.81


@dataclass(frozen=True)
class ControllerSection:
    type: str = "ceic"
    a: tuple = (0.8, 35.0, 38.0, 50.0)
    b: tuple = (2.5, 3.5, 4.85, 15.0)
    derivative: str = "filter"
    bandwidth: float = 20.0
    stride: int = 1


@dataclass(frozen=True)
class BemSection:
    tol: float = 1e-10
    max_iter: int = 50
    fd_step: float = 1e-6
    guess_policy: str = "previous"
    freeze_rest: bool = False
    input_mode: str = "designed"
    bound: float = math.pi / 2


@dataclass(frozen=True)
class SimulationSection:
    dt: float = 1e-3
    duration: float = 30.0
    steady_start: float = 10.0
    steady_end: float = 30.0
    q0: tuple = (2.0, -0.1, 0.1, 0.35)
    qdot0: tuple = (0.0, 0.0, 0.0, 0.0)
    divergence_angle: float = math.pi / 2


@dataclass(frozen=True)
class ReferenceSection:
    kind: str = "sine"
    amplitude: float = 2.0
    omega: float = 0.8
    offset: float = 0.0


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    decimation: int = 10


SECTIONS = {
    "system": SystemSection,
    "controller": ControllerSection,
    "bem": BemSection,
    "simulation": SimulationSection,
    "reference": ReferenceSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class Scenario:
    system: SystemSection = field(default_factory=SystemSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    bem: BemSection = field(default_factory=BemSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    output: OutputSection = field(default_factory=OutputSection)

    # ------------------------------------------------------------ building
    def params(self):
        s = self.system
        return CartPendulumParams(m_c=s.m_c, m=s.m, l=s.l, a=s.a, J=s.J or None, g=s.g)

    def model(self):
        if self.system.model not in MODELS:
            raise ConfigError(f"system.model: unknown model {self.system.model!r} "
                              f"(choose from {', '.join(MODELS)})")
        builder, links = MODELS[self.system.model]
        params = self.params()
        if links is not None and params.links != links:
            raise ConfigError(f"system.m: model {self.system.model!r} needs {links} links, "
                              f"got {params.links}")
        return builder(params)

    def reference_signal(self):
        r = self.reference
        if r.kind == "sine":
            return SineReference(r.amplitude, r.omega, r.offset)
        if r.kind == "constant":
            return ConstantReference((r.offset,))
        raise ConfigError(f"reference.kind: expected sine or constant, got {r.kind!r}")

    def gains(self):
        c = self.controller
        g = GainSchedule.from_scalars(c.a, c.b)
        return eic_gains_from_levels(g) if c.type == "eic" and len(c.a) > 2 else g

    def solver_settings(self):
        b = self.bem
        return SolverSettings(tol=b.tol, max_iter=b.max_iter, fd_step=b.fd_step,
                              guess_policy=b.guess_policy, freeze_rest=b.freeze_rest,
                              input_mode=b.input_mode, bound=b.bound)

    def derivative_settings(self):
        c = self.controller
        return DerivativeSettings(c.derivative, c.bandwidth, c.stride)

    def controller_instance(self, model=None):
        model = model or self.model()
        return make_controller(self.controller.type, model, self.reference_signal(),
                               self.gains(), self.solver_settings(),
                               derivatives=self.derivative_settings())

    def sim_config(self):
        s = self.simulation
        return SimConfig(dt=s.dt, duration=s.duration,
                         steady_window=(s.steady_start, s.steady_end),
                         log_decimation=self.output.decimation,
                         divergence_angle=s.divergence_angle)

    def initial_state(self):
        s = self.simulation
        return StateVector(s.q0, s.qdot0, 0.0)

    def with_dt(self, dt):
        return replace(self, simulation=replace(self.simulation, dt=float(dt)))

    def validate(self):
        """Build every runtime object once so errors surface before a run."""
        try:
            model = self.model()
            if len(self.simulation.q0) != model.dim or len(self.simulation.qdot0) != model.dim:
                raise ConfigError(f"simulation.q0/qdot0: need {model.dim} entries")
            self.controller_instance(model)
            self.sim_config()
        except ConfigError:
            raise
        except (ContractViolation, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _coerce(section, name, ftype, default, text):
    key = f"{section}.{name}"
    if isinstance(default, tuple):
        return _floats(text, key)
    if isinstance(default, bool):
        low = text.strip().lower()
        if low not in ("true", "false"):
            raise ConfigError(f"{key}: expected true or false, got {text!r}")
        return low == "true"
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from exc
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from exc
    return text.strip()


def parse_scenario(text):
    """Parse scenario text; every section and key must be present."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable scenario: {exc}") from exc
    extra = set(cp.sections()) - set(SECTIONS)
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    parts = {}
    for sec, cls in SECTIONS.items():
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")
        known = {f.name: f for f in fields(cls)}
        unknown = set(cp[sec]) - set(known)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(unknown))}")
        defaults = cls()
        values = {}
        for name, f in known.items():
            if name not in cp[sec]:
                raise ConfigError(f"missing key {sec}.{name}")
            values[name] = _coerce(sec, name, f.type, getattr(defaults, name), cp[sec][name])
        parts[sec] = cls(**values)
    return Scenario(**parts)


def load_scenario(path):
    with open(path) as fh:
        return parse_scenario(fh.read())


def serialize_scenario(scenario):
    buf = io.StringIO()
    for k, sec in enumerate(SECTIONS):
        if k:
            buf.write("\n")
        buf.write(f"[{sec}]\n")
        part = getattr(scenario, sec)
        for f in fields(part):
            buf.write(f"{f.name} = {_fmt(getattr(part, f.name))}\n")
    return buf.getvalue()


__all__ = [
    "ConfigError", "Scenario", "SystemSection", "ControllerSection", "BemSection",
    "SimulationSection", "ReferenceSection", "OutputSection", "parse_scenario",
    "load_scenario", "serialize_scenario", "MODELS",
]
