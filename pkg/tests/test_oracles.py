import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skysim.policy import AlwaysEvict, AlwaysStore, Clairvoyant, FixedTtl, TevenTtl
from skysim.pricing import SECONDS_PER_DAY, SECONDS_PER_MONTH, bundled_pricing
from skysim.sim import (
    MAX_BRUTE_FORCE_GETS,
    OracleError,
    SimConfig,
    adversarial_ratio,
    adversary,
    brute_force_optimal,
    replay_fixed_ttl,
    run,
    stream_from_trace,
)
from skysim.trace import GET, PUT, Request, Trace
from skysim.workloads import random_base_cache

GB = 10**9
DAY = SECONDS_PER_DAY


def T(*reqs, horizon=0.0):
    return Trace(tuple(Request(*r) for r in reqs), horizon)


def test_brute_force_single_get(pricing2):
    tr = T((0.0, PUT, "k", GB, "A"), (DAY, GET, "k", GB, "B"), horizon=DAY)
    assert brute_force_optimal(tr, pricing2) == pytest.approx(0.02)


def test_brute_force_short_and_long_gap(pricing2, teven2):
    gap = 0.5 * teven2
    tr = T((0.0, PUT, "k", GB, "A"), (0.0, GET, "k", GB, "B"), (gap, GET, "k", GB, "B"), horizon=gap)
    assert brute_force_optimal(tr, pricing2) == pytest.approx(0.02 + gap / SECONDS_PER_MONTH * 0.026)
    gap = 1.5 * teven2
    tr = T((0.0, PUT, "k", GB, "A"), (0.0, GET, "k", GB, "B"), (gap, GET, "k", GB, "B"), horizon=gap)
    assert brute_force_optimal(tr, pricing2) == pytest.approx(0.04)


def test_brute_force_overwrite_breaks_chain(pricing2):
    tr = T(
        (0.0, PUT, "k", GB, "A"),
        (0.0, GET, "k", GB, "B"),
        (1.0, PUT, "k", GB, "A"),
        (2.0, GET, "k", GB, "B"),
        horizon=2.0,
    )
    assert brute_force_optimal(tr, pricing2) == pytest.approx(0.04)


def test_brute_force_limits(pricing2, pricing3):
    reqs = [(0.0, PUT, "k", 1, "A")] + [(float(i), GET, "k", 1, "B") for i in range(MAX_BRUTE_FORCE_GETS + 1)]
    with pytest.raises(OracleError):
        brute_force_optimal(T(*reqs), pricing2)
    three = T((0.0, PUT, "k", 1, "A"), (1.0, GET, "k", 1, "B"), (2.0, GET, "k", 1, "C"))
    with pytest.raises(OracleError):
        brute_force_optimal(three, pricing3)
    assert brute_force_optimal(T((0.0, PUT, "k", 1, "A")), pricing2) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_brute_force_not_above_simple_policies(seed):
    pricing = bundled_pricing("pricing-2region")
    base, cache = pricing.regions
    tr = random_base_cache(seed, 20 * DAY, max_objects=3, max_gets=10, base=base, cache=cache)
    opt = brute_force_optimal(tr, pricing)
    for pol in (AlwaysEvict(), AlwaysStore(), TevenTtl(), FixedTtl(DAY)):
        assert opt <= run(tr, pricing, pol).total_usd * (1 + 1e-12)


def test_replay_extremes():
    stream = [(0.0, "a", GB), (10.0, "a", GB), (20.0, "b", 2 * GB)]
    assert replay_fixed_ttl(stream, 0.0, 0.02, 0.026) == pytest.approx(4 * 0.02)
    inf = replay_fixed_ttl(stream, math.inf, 0.02, 0.026, horizon=30.0)
    want = 0.02 + 2 * 0.02 + (10 * 1 + 20 * 1 + 10 * 2) / SECONDS_PER_MONTH * 0.026
    assert inf == pytest.approx(want)
    with pytest.raises(OracleError):
        replay_fixed_ttl(stream[::-1], 1.0, 0.02, 0.026)


def test_replay_matches_engine(pricing2):
    tr = random_base_cache(7, 20 * DAY, max_objects=5, max_gets=60, overwrite_p=0.0)
    ttl = 3 * DAY
    stream = stream_from_trace(tr, "B")
    eng = run(tr, pricing2, FixedTtl(ttl)).total_usd
    assert replay_fixed_ttl(stream, ttl, 0.02, 0.026, horizon=tr.horizon) == pytest.approx(eng, rel=1e-9)


def test_adversary_against_teven(pricing2):
    tr = adversary(TevenTtl, pricing2, rounds=1)
    assert [r.op for r in tr.requests] == [PUT, GET]
    tr, ratio = adversarial_ratio(TevenTtl, pricing2, rounds=5)
    assert ratio == pytest.approx(2.0)


def test_adversary_against_short_ttl(pricing2, teven2):
    tr, ratio = adversarial_ratio(lambda: FixedTtl(teven2 / 10), pricing2, rounds=10)
    gets = [r for r in tr.requests if r.op == GET]
    assert len(gets) == 11
    assert ratio > 1.05
    # opt can never cost more than the policy
    assert ratio >= 1.0


def test_always_store_ratio_grows_with_horizon(pricing2):
    ratios = [adversarial_ratio(AlwaysStore, pricing2, rounds=3, horizon_factor=f)[1] for f in (2.0, 8.0)]
    assert ratios[1] > ratios[0] > 1.0


def test_adversary_needs_two_regions(pricing3):
    with pytest.raises(OracleError):
        adversary(TevenTtl, pricing3, rounds=1)
    with pytest.raises(OracleError):
        adversary(TevenTtl, bundled_pricing("pricing-2region"), rounds=0)


def test_clairvoyant_matches_brute_force_sample(pricing2):
    for seed in range(20):
        tr = random_base_cache(seed, 20 * DAY, max_objects=3, max_gets=12)
        cfg = SimConfig(record_events=False)
        assert run(tr, pricing2, Clairvoyant(), cfg).total_usd == brute_force_optimal(tr, pricing2)
