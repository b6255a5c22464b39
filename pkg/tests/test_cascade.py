import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ceic.cascade import (
    CascadeConstructionError,
    build_chain,
    level_sizes,
    realize_input,
    reduce,
    verify_conditions,
)
from ceic.dynamics import ContractViolation, StateVector, eval_terms, forward_dynamics
from ceic.systems import random_state, upright_rest


@given(st.integers(1, 4), st.integers(1, 12))
def test_level_sizes_partition(n, m):
    blocks = level_sizes(n, m)
    k = len(blocks) - 2
    z = blocks[-1]
    assert sum(blocks) == n + m
    assert all(b == n for b in blocks[:-1])
    assert 1 <= z <= n and m == k * n + z


def test_triple_pendulum_chain_shape(triple):
    chain = build_chain(triple)
    assert chain.blocks == (1, 1, 1, 1)
    assert chain.k == 2 and chain.z == 1 and chain.depth == 4
    assert [chain.block_indices(i) for i in range(4)] == [(0,), (1,), (2,), (3,)]


def test_chain_accelerations_match_forward_dynamics(any_model, rng):
    chain = build_chain(any_model)
    for _ in range(30):
        s = random_state(any_model, rng)
        u = rng.normal(size=1) * 5
        ref = forward_dynamics(any_model, s, u)
        got = chain.accelerations(s, u)
        assert np.linalg.norm(got - ref) <= 1e-9 * max(1.0, np.linalg.norm(ref))


@pytest.mark.parametrize("plan", [(3, 2, 1), (2, 1, 3), (1, 3, 2)])
def test_plan_permutation_is_exact(triple, rng, plan):
    chain = build_chain(triple, plan=plan)
    assert chain.order == (0,) + plan
    s = random_state(triple, rng)
    u = np.array([1.7])
    assert np.allclose(chain.accelerations(s, u), forward_dynamics(triple, s, u), atol=1e-10)


def test_bad_plan_rejected(triple):
    with pytest.raises(CascadeConstructionError):
        build_chain(triple, plan=(1, 2, 2))
    with pytest.raises(CascadeConstructionError):
        build_chain(triple, blocks=(1, 2, 1))


def test_schur_complement_level(triple, rng):
    s = random_state(triple, rng)
    L0 = build_chain(triple).evaluate(s, upto=0)[0]
    L1 = reduce(L0, 1)
    Dinv = np.linalg.inv(L0.D_aa)
    assert np.allclose(L1.D, L0.D_uu - L0.D_ua @ Dinv @ L0.D_au)
    assert np.allclose(L1.H, L0.H_u - L0.D_ua @ Dinv @ L0.H_a)
    assert np.allclose(L1.B, L0.B_u - L0.D_ua @ Dinv @ L0.B_a)
    # reduced inertia stays symmetric positive definite
    assert np.allclose(L1.D, L1.D.T) and np.linalg.eigvalsh(L1.D).min() > 0


def test_last_level_cannot_reduce(triple, rng):
    mats = build_chain(triple).evaluate(random_state(triple, rng))
    assert mats[-1].is_last
    with pytest.raises(ContractViolation):
        reduce(mats[-1])


def test_realize_input_produces_requested_acceleration(triple, rng):
    chain = build_chain(triple)
    for _ in range(10):
        s = random_state(triple, rng)
        mats = chain.evaluate(s)
        for i, L in enumerate(mats[:-1]):
            v = rng.normal(size=1)
            u, _ = realize_input(L, v)
            qdd = chain.accelerations(s, u)
            assert qdd[chain.block_indices(i)[0]] == pytest.approx(v[0], abs=1e-9)


def test_conditions_hold_near_upright(triple, rng):
    states = [upright_rest(triple)] + [random_state(triple, rng, angle=0.3) for _ in range(8)]
    report = verify_conditions(build_chain(triple), states)
    assert report.passed, report.summary()
    assert set(report.eic_rank) == {1}
    text = report.to_csv()
    assert text.splitlines()[0].startswith("state,level")
    assert len(text.strip().splitlines()) == 1 + len(states) * 4
    assert "deficiency 2" in report.summary()


def test_conditions_flag_degenerate_coupling(triple):
    # first link horizontal: the cart no longer couples to it
    s = StateVector([0.0, np.pi / 2, 0.0, 0.0], np.zeros(4))
    report = verify_conditions(build_chain(triple), [s])
    assert not report.passed
    assert report.failed_levels()


def test_verify_conditions_needs_states(triple):
    with pytest.raises(ContractViolation):
        verify_conditions(build_chain(triple), [])


def test_reference_state_rank_check(triple):
    build_chain(triple, reference_state=upright_rest(triple))
    with pytest.raises(CascadeConstructionError):
        build_chain(triple, reference_state=StateVector([0, np.pi / 2, 0, 0], np.zeros(4)))
