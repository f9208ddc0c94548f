import numpy as np
import pytest
from hypothesis import given, strategies as st

from parax.economics import (
    Correction,
    CycleMetrics,
    CycleObservation,
    FrictionState,
    charge_friction,
    check_resource_balance,
    conservation_ok,
    declared_fee,
    distribute_rewards,
    friction_fee,
    measure_cycle,
    mint_inflation,
    release_payload,
    steer_friction,
    update_friction,
)
from parax.errors import InsufficientBalance
from parax.ledger import HEARTBIT, SignedTransaction


def metrics(demand, supply):
    return CycleMetrics(0, (0, 0, 0, 0), 0, 0, 0, 0.0, float(supply), float(demand))


def obs(cycle, nodes=(), demand=0, transferred=0, circulating=0, txs=0):
    return CycleObservation(cycle, tuple(nodes), demand, txs, demand, transferred, circulating)


def test_measure_cycle():
    idle = measure_cycle([obs(1, [(10, 1.0)] * 8)])
    assert (idle.demand, idle.tx_count, idle.supply) == (0.0, 0, 80.0)
    hist = [obs(c, [(1, 1.0)], transferred=10, circulating=100) for c in range(5)]
    assert measure_cycle(hist, window=5).velocity == pytest.approx(0.5)


def test_controller_examples():
    s = FrictionState(F=1.0, alpha=1.0)
    assert update_friction(s, metrics(120, 100)).F == pytest.approx(1.2)
    assert update_friction(FrictionState(F=5.0), metrics(7, 7)).F == 5.0
    assert update_friction(FrictionState(F=5.0, alpha=1.0), metrics(1e6, 1)).F == 1e6
    assert update_friction(FrictionState(F=5.0), metrics(0, 10)).F == 1.0


@given(st.floats(1.0, 1e6), st.floats(0.05, 4.0), st.floats(0.1, 1e5))
def test_fixed_point_property(F, alpha, supply):
    s = FrictionState(F=F, alpha=alpha)
    assert update_friction(s, metrics(supply, supply)).F == F
    assert steer_friction(s, metrics(supply, supply)) == (s, Correction.NO_ACTION)


def test_fixed_point_thousand_random_states():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        F = float(rng.uniform(1.0, 1e6))
        s = FrictionState(F=F, alpha=float(rng.uniform(0.01, 3.0)))
        S = float(rng.uniform(0.5, 1e5))
        assert update_friction(s, metrics(S, S)).F == F


@given(st.floats(1.0, 1e3), st.floats(0.01, 100), st.floats(0.01, 100))
def test_friction_monotone_in_demand(F, d1, d2):
    s = FrictionState(F=F)
    lo, hi = sorted((d1, d2))
    assert update_friction(s, metrics(lo, 10)).F <= update_friction(s, metrics(hi, 10)).F


def test_band_check():
    assert check_resource_balance(metrics(105, 100)) is Correction.NO_ACTION
    assert check_resource_balance(metrics(120, 100)) is Correction.RAISE
    assert check_resource_balance(metrics(50, 100)) is Correction.EASE
    s, action = steer_friction(FrictionState(F=1.0, alpha=0.5), metrics(121, 100))
    assert action is Correction.RAISE and s.F == pytest.approx(1.21)


def test_fees():
    assert friction_fee(1.0, 3) == 3
    assert friction_fee(0.5, 3) == 2
    tx = SignedTransaction(b"a", b"b", 10, 0)
    with pytest.raises(InsufficientBalance):
        charge_friction(tx, 1.0, balance=10)
    assert charge_friction(tx, 1.0, balance=11).fee == 1
    p = release_payload(42, b"swap")
    assert declared_fee(p) == 42 and declared_fee(b"") == 0
    assert charge_friction(SignedTransaction(b"a", b"b", 10, 0, p), 9.0, 52, scripted=True).fee == 42


def test_rewards():
    pool = 10 * HEARTBIT
    d = distribute_rewards(pool, {"a": 1, "b": 1, "c": 1, "d": 1})
    assert {a for _, a in d.payouts} == {2_500_000} and d.remainder == 0
    d = distribute_rewards(pool, {"a": 3, "b": 1})
    assert dict(d.payouts) == {"a": 7_500_000, "b": 2_500_000}
    d = distribute_rewards(pool, {})
    assert d.payouts == () and d.remainder == pool


@given(st.integers(0, 10**12), st.dictionaries(st.text(max_size=3), st.integers(0, 50), max_size=8))
def test_rewards_conserve_pool(pool, weights):
    d = distribute_rewards(pool, weights)
    assert d.total + d.remainder == pool and d.remainder >= 0


def test_inflation():
    assert mint_inflation(0, 10**9) == 0
    assert mint_inflation(1, 10**9) == 10**5
    supply = 10**9
    for _ in range(2):
        supply += mint_inflation(1, supply)
    # closed form in exact integers: S (1 + r)^2, r = 1 bps
    assert supply == 10**9 * 10_001**2 // 10_000**2 == 1_000_200_010


def test_conservation_ok():
    assert conservation_ok([5, 4], 1, 10, 0)
    assert not conservation_ok([5, 4], 2, 10, 0)
