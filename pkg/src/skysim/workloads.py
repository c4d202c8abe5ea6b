"""Small synthetic base/cache workloads used by tests, acceptance runs and ``skysim gen``."""

from __future__ import annotations

import random

from .pricing import SECONDS_PER_DAY, Region
from .trace import GET, PUT, Request, Trace

GB = 1_000_000_000


def hot_repeat(
    n_objects: int = 10,
    days: int = 90,
    size: int = GB,
    base: Region = "A",
    cache: Region = "B",
    seed: int = 0,
) -> Trace:
    """Every object is written once, then read at the cache region once a day."""
    rng = random.Random(seed)
    reqs = [Request(0.0, PUT, f"obj{i}", size, base) for i in range(n_objects)]
    for d in range(days):
        for i in range(n_objects):
            t = d * SECONDS_PER_DAY + rng.uniform(0, 3600)
            reqs.append(Request(t, GET, f"obj{i}", size, cache))
    reqs.sort(key=lambda r: r.t)
    return Trace(tuple(reqs), days * SECONDS_PER_DAY)


def one_hit(
    n_objects: int = 50,
    teven: float = 0.77 * 30 * SECONDS_PER_DAY,
    size: int = GB,
    base: Region = "A",
    cache: Region = "B",
    seed: int = 0,
    spread_days: int = 30,
) -> Trace:
    """Each object is read exactly once during the first month; the trace runs
    on until three break-even times after that month."""
    rng = random.Random(seed)
    spread = spread_days * SECONDS_PER_DAY
    reqs = [Request(0.0, PUT, f"obj{i}", size, base) for i in range(n_objects)]
    reads = sorted(rng.uniform(0, spread) for _ in range(n_objects))
    order = list(range(n_objects))
    rng.shuffle(order)
    reqs += [Request(t, GET, f"obj{i}", size, cache) for t, i in zip(reads, order)]
    return Trace(tuple(reqs), spread + 3 * teven)


def random_base_cache(
    seed: int,
    teven: float,
    max_objects: int = 50,
    max_gets: int = 500,
    base: Region = "A",
    cache: Region = "B",
    overwrite_p: float = 0.02,
) -> Trace:
    """Random two-region workload with re-read gaps mixed around the break-even time.

    Each object gets a gap scale drawn across two orders of magnitude around
    ``teven``; a small share of reads are replaced by overwrites at the base.
    """
    rng = random.Random(seed)
    n_obj = rng.randint(1, max_objects)
    n_gets = rng.randint(1, max_gets)
    sizes = [int(10 ** rng.uniform(5, 10)) for _ in range(n_obj)]
    scale = [teven * 10 ** rng.uniform(-1.5, 0.7) for _ in range(n_obj)]
    per_obj = [0] * n_obj
    for _ in range(n_gets):
        per_obj[rng.randrange(n_obj)] += 1
    reqs = []
    for i in range(n_obj):
        key = f"k{i}"
        t = rng.uniform(0, teven)
        reqs.append(Request(t, PUT, key, sizes[i], base))
        for _ in range(per_obj[i]):
            t += rng.expovariate(1.0 / scale[i])
            if rng.random() < overwrite_p:
                reqs.append(Request(t, PUT, key, sizes[i], base))
            else:
                reqs.append(Request(t, GET, key, sizes[i], cache))
    reqs.sort(key=lambda r: r.t)
    last = reqs[-1].t
    return Trace(tuple(reqs), last + rng.uniform(0, 2 * teven))


WORKLOADS = ("hot-repeat", "one-hit", "random")
