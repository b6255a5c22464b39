import numpy as np
import pytest
import scipy.linalg

from ceic.controllers import ControlOutput, LevelRecord
from ceic.dynamics import ContractViolation, Partition, RobotModel, StateVector
from ceic.sim import (
    DivergenceEvent,
    ErrorMetrics,
    SimConfig,
    TrajectoryLog,
    rk4_step,
    run_simulation,
    steady_state_errors,
)

MASS = np.diag([1.0, 0.5])
STIFF = np.array([[3.0, -1.0], [-1.0, 1.0]])


def spring_model():
    """Two masses coupled by springs, force on the first: linear test system."""
    B = np.array([[1.0], [0.0]])
    return RobotModel(name="springs", partition=Partition(1, 1),
                      terms=lambda q, qd: (MASS, np.zeros((2, 2)), STIFF @ np.asarray(q), B),
                      potential=lambda q: 0.5 * q @ STIFF @ q)


def exact_spring(s0, t, u):
    Minv = np.linalg.inv(MASS)
    A = np.block([[np.zeros((2, 2)), np.eye(2)], [-Minv @ STIFF, np.zeros((2, 2))]])
    b = np.concatenate([np.zeros(2), Minv @ np.array([u, 0.0])])
    x0 = np.concatenate([s0.q, s0.qdot])
    # constant input: x(t) = e^{At} x0 + A^{-1} (e^{At} - I) b
    E = scipy.linalg.expm(A * t)
    return E @ x0 + np.linalg.solve(A, (E - np.eye(4)) @ b)


def test_rk4_is_fourth_order():
    model = spring_model()
    s0 = StateVector([0.3, -0.2], [0.1, 0.4])
    errs = []
    for h in (0.04, 0.02, 0.01):
        s = s0
        for _ in range(int(round(2.0 / h))):
            s = rk4_step(model, np.array([0.5]), s, h)
        errs.append(np.linalg.norm(np.concatenate([s.q, s.qdot]) - exact_spring(s0, 2.0, 0.5)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.8) and np.all(orders < 4.2)


def test_rk4_step_input_forms():
    model = spring_model()
    s = StateVector([0.1, 0.0], [0.0, 0.0])
    zero = rk4_step(model, None, s, 0.01)
    assert np.allclose(zero.q, rk4_step(model, np.zeros(1), s, 0.01).q)
    called = rk4_step(model, lambda st: ControlOutput(u=np.array([1.0]), levels=[]), s, 0.01)
    assert np.allclose(called.q, rk4_step(model, [1.0], s, 0.01).q)
    with pytest.raises(ContractViolation):
        rk4_step(model, None, s, 0.0)


@pytest.mark.parametrize("kwargs", [{"dt": 0}, {"steady_window": (5, 2)},
                                    {"duration": 5.0}, {"log_decimation": 0}])
def test_sim_config_validation(kwargs):
    with pytest.raises(ContractViolation):
        SimConfig(**kwargs)


class SineError:
    """Stub controller whose level-0 error is 0.1 sin(t) and target 2 sin(t)."""

    kind = "stub"

    def __call__(self, s):
        rec = LevelRecord(level=0, q_e=np.array([2 * np.sin(s.t)]),
                          e=np.array([0.1 * np.sin(s.t)]), ed=np.array([0.0]))
        return ControlOutput(u=np.zeros(1), levels=[rec])


def test_steady_state_metrics_of_known_error():
    cfg = SimConfig(dt=1e-3, duration=2 * np.pi * 4, steady_window=(2 * np.pi, 2 * np.pi * 4))
    log = run_simulation(spring_model(), SineError(), cfg, StateVector([0, 0], [0, 0]))
    m = steady_state_errors(log, cfg)
    assert m.names == ["e0"]
    # mean |0.1 sin t| over whole periods is 0.2 / pi
    assert m.mean[0] == pytest.approx(0.2 / np.pi, rel=1e-4)
    assert m.std[0] == pytest.approx(np.sqrt(0.005 - (0.2 / np.pi) ** 2), rel=1e-3)
    assert m.amplitude[0] == pytest.approx(2.0, rel=1e-6)
    assert m.relative_mean[0] == pytest.approx(100 * 0.1 / np.pi, rel=1e-4)
    assert "Relative (%)" in m.table()


def test_metrics_need_window_samples():
    cfg = SimConfig(duration=1.0, steady_window=(0.5, 1.0))
    log = TrajectoryLog({"t": [0.0, 0.1], "e0_0": [1, 1], "qe0_0": [1, 1]})
    with pytest.raises(ContractViolation):
        steady_state_errors(log, cfg)


def test_metrics_csv_round_trip(tmp_path):
    m = ErrorMetrics(["e0", "e1"], np.array([0.1, 0.2]), np.array([0.01, 0.02]),
                     np.array([5.0, 2.0]), np.array([0.5, 0.2]), np.array([2.0, 10.0]))
    path = tmp_path / "m.csv"
    m.to_csv(path)
    back = ErrorMetrics.from_csv(path)
    assert back.names == m.names
    for attr in ("mean", "std", "relative_mean", "relative_std", "amplitude"):
        assert np.array_equal(getattr(back, attr), getattr(m, attr))


def test_trajectory_csv_round_trip_and_determinism(tmp_path, cart_pole):
    from ceic.controllers import GainSchedule, SineReference, make_controller
    gains = GainSchedule.from_scalars((0.8, 35.0), (2.5, 3.5))
    cfg = SimConfig(duration=0.3, steady_window=(0.1, 0.3), log_decimation=3)
    s0 = StateVector([0.5, 0.1], [0.0, 0.0])
    runs = [run_simulation(cart_pole, make_controller("ceic", cart_pole, SineReference(), gains),
                           cfg, s0) for _ in range(2)]
    assert runs[0].to_csv() == runs[1].to_csv()
    log = runs[0]
    assert len(log) == 101
    for col in ("t", "q_x", "q_theta1", "qd_x", "u0", "qe1_0", "e0_0", "bem_res1", "bem_ok1",
                "lemma1"):
        assert col in log.columns
    path = tmp_path / "traj.csv"
    log.to_csv(path)
    back = TrajectoryLog.from_csv(path)
    assert back.names == log.names
    assert all(np.array_equal(back[c], log[c], equal_nan=True) for c in log.names)


def test_divergence_is_detected(triple):
    # no control: the stack falls over
    class Zero:
        kind = "none"

        def __call__(self, s):
            return ControlOutput(u=np.zeros(1), levels=[])

    cfg = SimConfig(duration=10.0, steady_window=(5.0, 10.0))
    log = run_simulation(triple, Zero(), cfg, StateVector([0, 0.05, 0.0, 0.0], np.zeros(4)))
    assert log.diverged and 0 < log.divergence_time < 10.0
    assert log.events[-1].reason == "divergence: angle beyond limit"


def test_controller_errors_end_the_run(triple):
    class Broken:
        kind = "none"

        def __call__(self, s):
            raise ArithmeticError("boom")

    cfg = SimConfig(duration=1.0, steady_window=(0.5, 1.0))
    log = run_simulation(triple, Broken(), cfg, StateVector(np.zeros(4), np.zeros(4)))
    assert log.diverged and "boom" in log.events[0].reason
    assert isinstance(log.events[0], DivergenceEvent)


def test_rest_with_zero_reference_stays_at_rest(triple):
    from ceic.controllers import REFERENCE_GAINS, CEICController, ConstantReference
    ctrl = CEICController(triple, ConstantReference((0.0,)), REFERENCE_GAINS)
    cfg = SimConfig(duration=1.0, steady_window=(0.5, 1.0))
    log = run_simulation(triple, ctrl, cfg, StateVector(np.zeros(4), np.zeros(4)))
    assert not log.diverged and not log.events
    for name in log.names:
        if name == "t" or name.startswith("bem_iter") or name.startswith("bem_ok"):
            continue
        assert np.max(np.abs(log[name])) <= 1e-9, name


def test_perfect_tracking_gives_zero_metrics():
    t = np.arange(0, 3.001, 0.01)
    log = TrajectoryLog({"t": t, "e0_0": np.zeros_like(t), "qe0_0": np.sin(t),
                         "e1_0": np.zeros_like(t), "qe1_0": 0.1 * np.cos(t)})
    m = steady_state_errors(log, SimConfig(duration=3.0, steady_window=(1.0, 3.0)))
    assert m.names == ["e0", "e1"]
    assert np.all(m.mean == 0) and np.all(m.std == 0) and np.all(m.relative_mean == 0)


def test_log_sampling_is_uniform(cart_pole):
    from ceic.controllers import GainSchedule, SineReference, make_controller
    gains = GainSchedule.from_scalars((0.8, 35.0), (2.5, 3.5))
    cfg = SimConfig(dt=2e-3, duration=0.5, steady_window=(0.25, 0.5), log_decimation=5)
    log = run_simulation(cart_pole, make_controller("ceic", cart_pole, SineReference(), gains),
                         cfg, StateVector([0.5, 0.1], [0.0, 0.0]))
    assert np.allclose(np.diff(log["t"]), 0.01, rtol=0, atol=1e-12)
    assert log["t"][-1] == 0.5


@pytest.mark.slow
def test_halving_dt_barely_changes_metrics(cart_pole):
    from ceic.controllers import GainSchedule, SineReference, make_controller
    gains = GainSchedule.from_scalars((0.8, 35.0), (2.5, 3.5))
    means = []
    for dt in (1e-3, 5e-4):
        cfg = SimConfig(dt=dt, duration=6.0, steady_window=(3.0, 6.0),
                        log_decimation=int(round(1e-2 / dt)))
        log = run_simulation(cart_pole, make_controller("ceic", cart_pole, SineReference(), gains),
                             cfg, StateVector([0.5, 0.1], [0.0, 0.0]))
        means.append(steady_state_errors(log, cfg).mean)
    assert np.all(np.abs(means[0] - means[1]) < 0.05 * means[1])
