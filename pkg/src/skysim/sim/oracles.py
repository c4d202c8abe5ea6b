"""Reference computations the engine is checked against."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from typing import Callable, Iterable, Sequence

from ..policy import Clairvoyant, Policy
from ..pricing import PricingTable, break_even, network_charge, storage_charge
from ..trace import DELETE, GET, PUT, Request, Trace, as_base_cache
from .engine import SimConfig, run

MAX_BRUTE_FORCE_GETS = 12


class OracleError(ValueError):
    pass


def _cache_gets(trace: Trace):
    """(request, version size, (key, version no.)) for every GET that finds an object."""
    size: dict[str, int] = {}
    version: dict[str, int] = defaultdict(int)
    for r in trace.requests:
        if r.op == PUT:
            size[r.key] = r.size
            version[r.key] += 1
        elif r.op == DELETE:
            size.pop(r.key, None)
            version[r.key] += 1
        elif r.op == GET and r.key in size:
            yield r, size[r.key], (r.key, version[r.key])


def brute_force_optimal(trace: Trace, pricing: PricingTable) -> float:
    """Cheapest possible bill for a two-region base/cache trace.

    After every cache GET the replica is either kept until the next GET of
    the same version (or the horizon) or dropped; all 2^n choices are priced.
    Base storage is left out, as in a default Fixed Base run.
    """
    pair = as_base_cache(trace)
    if pair is None and any(r.op == GET for r in trace.requests):
        raise OracleError("brute force needs a two-region base/cache trace")
    gets = list(_cache_gets(trace))
    n = len(gets)
    if n == 0:
        return 0.0
    if n > MAX_BRUTE_FORCE_GETS:
        raise OracleError(f"{n} cache GETs; brute force is limited to {MAX_BRUTE_FORCE_GETS}")
    n_rate = pricing.network(pair.base, pair.cache)
    s_rate = pricing.storage(pair.cache)

    nxt: list[int | None] = [None] * n
    prv: list[int | None] = [None] * n
    seen: dict[tuple, int] = {}
    for i, (_, _, stamp) in enumerate(gets):
        if stamp in seen:
            nxt[seen[stamp]] = i
            prv[i] = seen[stamp]
        seen[stamp] = i
    fetch = [network_charge(size, n_rate) for _, size, _ in gets]
    hold = [
        storage_charge(size, s_rate, (gets[nxt[i]][0].t if nxt[i] is not None else trace.horizon) - req.t)
        for i, (req, size, _) in enumerate(gets)
    ]

    best = math.inf
    for keep in itertools.product((False, True), repeat=n):
        network = [fetch[i] for i in range(n) if prv[i] is None or not keep[prv[i]]]
        storage = [hold[i] for i in range(n) if keep[i]]
        total = math.fsum(storage) + math.fsum(network)
        if total < best:
            best = total
    return best


def replay_fixed_ttl(
    stream: Iterable[tuple[float, str, int]],
    ttl: float,
    network: float,
    storage: float,
    horizon: float | None = None,
) -> float:
    """Exact bill of a TTL-reset cache for one scope.

    ``stream`` holds (t, key, size) reads. The first read of a key is a
    remote fetch; every later read is a hit if the gap is at most ``ttl``,
    otherwise the copy has sat for ``ttl`` and the read fetches again. After
    its last read a copy is stored for ``ttl`` (cut at ``horizon``).
    """
    stream = list(stream)
    for a, b in zip(stream, stream[1:]):
        if b[0] < a[0]:
            raise OracleError("stream must be sorted by time")
    if horizon is None:
        horizon = stream[-1][0] + ttl if stream else 0.0
    last: dict[str, tuple[float, int]] = {}
    items = []
    for t, key, size in stream:
        prev = last.get(key)
        if prev is None:
            items.append(network_charge(size, network))
        else:
            gap = t - prev[0]
            if gap <= ttl:
                items.append(storage_charge(size, storage, gap))
            else:
                items.append(storage_charge(size, storage, ttl))
                items.append(network_charge(size, network))
        last[key] = (t, size)
    for t, size in last.values():
        items.append(storage_charge(size, storage, min(ttl, horizon - t)))
    return math.fsum(items)


# -- adversary ------------------------------------------------------------------

def _probe_hits(trace: Trace, pricing: PricingTable, factory: Callable[[], Policy], config: SimConfig) -> int:
    return run(trace, pricing, factory(), config).requests["hits"]


def adversary(
    policy_factory: Callable[[], Policy],
    pricing: PricingTable,
    rounds: int,
    eps_frac: float = 1e-3,
    horizon_factor: float = 2.0,
    size: int = 1_000_000_000,
    config: SimConfig | None = None,
) -> Trace:
    """Trace that makes a TTL policy pay close to twice the clairvoyant bill.

    After each GET the policy's eviction time is found by binary search on
    whether a probe GET hits. If the copy outlives the break-even time the
    workload goes quiet, otherwise the next GET lands just after the eviction.
    """
    if len(pricing.regions) != 2:
        raise OracleError("adversary works on two-region pricing")
    if rounds < 1:
        raise OracleError("rounds must be >= 1")
    base, cache = pricing.regions
    teven = break_even(pricing, base, cache)
    eps = teven * eps_frac
    config = config or SimConfig(record_events=False)
    reqs = [Request(0.0, PUT, "obj", size, base), Request(0.0, GET, "obj", size, cache)]

    def hits_with(extra_t: float | None) -> int:
        body = list(reqs)
        if extra_t is not None:
            body.append(Request(extra_t, GET, "obj", size, cache))
        return _probe_hits(Trace(tuple(body)), pricing, policy_factory, config)

    for _ in range(rounds):
        t0 = reqs[-1].t
        base_hits = hits_with(None)
        if hits_with(t0 + teven) > base_hits:
            break  # still cached at break-even: stop, the tail storage is the loss
        lo, hi = 0.0, teven  # lo: hit (or 0), hi: miss
        if hits_with(t0) == base_hits:
            lo = None
        if lo is not None:
            for _ in range(60):
                mid = (lo + hi) / 2
                if mid in (lo, hi):
                    break
                if hits_with(t0 + mid) > base_hits:
                    lo = mid
                else:
                    hi = mid
        evict_at = hi if lo is not None else 0.0
        reqs.append(Request(t0 + evict_at + eps, GET, "obj", size, cache))
    return Trace(tuple(reqs), reqs[-1].t + horizon_factor * teven)


def adversarial_ratio(
    policy_factory: Callable[[], Policy],
    pricing: PricingTable,
    rounds: int,
    **kwargs,
) -> tuple[Trace, float]:
    trace = adversary(policy_factory, pricing, rounds, **kwargs)
    cfg = SimConfig(record_events=False)
    alg = run(trace, pricing, policy_factory(), cfg).total_usd
    opt = run(trace, pricing, Clairvoyant(), cfg).total_usd
    return trace, alg / opt


def stream_from_trace(trace: Trace, region: str) -> list[tuple[float, str, int]]:
    return [(r.t, r.key, r.size) for r in trace.requests if r.op == GET and r.region == region]


__all__: Sequence[str] = (
    "MAX_BRUTE_FORCE_GETS",
    "OracleError",
    "adversarial_ratio",
    "adversary",
    "brute_force_optimal",
    "replay_fixed_ttl",
    "stream_from_trace",
)
