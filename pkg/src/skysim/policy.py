"""Placement and eviction policies.

A policy instance is owned by one simulation run at a time: ``start`` wipes
its state. The engine asks it three things:

* ``on_write``: extra regions to push a freshly written version to
* ``write_ttl``: TTL for a write-local replica that is not a pinned base copy
* ``on_read``: after a read at a region, keep (or create) the local replica
  with a TTL, or drop it
"""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

from .histogram import (
    HistogramSnapshot,
    ScopeHistogram,
    best_ttl,
    latency_adjusted_ttl,
)
from .pricing import (
    SECONDS_PER_DAY,
    SECONDS_PER_MONTH,
    PricingTable,
    Region,
    break_even,
    max_incoming_break_even,
)
from .trace import DELETE, GET, HEAD, PUT, Trace, as_base_cache

if TYPE_CHECKING:
    from .catalog import Replica, Version
    from .sim.engine import SimConfig


class PolicyError(ValueError):
    pass


@dataclass
class ReadContext:
    bucket: str
    key: str
    size: int
    reader: Region
    hit: bool
    source: Region | None  # set iff miss
    now: float
    version: "Version"
    replica: "Replica | None" = None  # the local replica on a hit

    def __post_init__(self):
        if self.hit == (self.source is not None):
            raise ValueError("source region is defined exactly when the read misses")


@dataclass(frozen=True)
class ReadDecision:
    store: bool
    ttl: float = math.inf


DROP = ReadDecision(False, 0.0)
KEEP_FOREVER = ReadDecision(True, math.inf)


@dataclass
class PolicyEnv:
    pricing: PricingTable
    config: "SimConfig"
    trace: Trace | None = None
    diagnostics: Counter = field(default_factory=Counter)


def holder_deadlines(version: "Version", exclude: Region) -> dict[Region, float]:
    """Eviction deadline of every live replica of ``version`` outside ``exclude``."""
    out = {}
    for r in version.live_replicas():
        if r.region != exclude:
            out[r.region] = math.inf if r.is_base else r.deadline
    return out


class Policy:
    name = "policy"
    tick_interval: float | None = None

    def start(self, env: PolicyEnv) -> None:
        self.env = env
        self.pricing = env.pricing

    def on_write(self, key: str, size: int, region: Region, t: float) -> list[Region]:
        return []

    def write_ttl(self, bucket: str, key: str, region: Region, t: float) -> float:
        return math.inf

    def on_read(self, ctx: ReadContext) -> ReadDecision:
        raise NotImplementedError

    def tick(self, now: float) -> None:
        pass

    def __str__(self) -> str:
        return self.name


class AlwaysEvict(Policy):
    name = "always-evict"

    def write_ttl(self, bucket, key, region, t):
        return 0.0

    def on_read(self, ctx):
        return DROP


class AlwaysStore(Policy):
    name = "always-store"

    def on_read(self, ctx):
        return KEEP_FOREVER


class FixedTtl(Policy):
    def __init__(self, ttl: float):
        if ttl < 0:
            raise PolicyError("ttl must be >= 0")
        self.ttl = float(ttl)
        self.name = f"fixed-ttl:{format_duration(ttl)}"

    def write_ttl(self, bucket, key, region, t):
        return self.ttl

    def on_read(self, ctx):
        return ReadDecision(True, self.ttl)


def _cheapest_break_even(pricing: PricingTable, dst: Region) -> float:
    vals = [break_even(pricing, s, dst) for s in pricing.regions if s != dst]
    return min(vals) if vals else math.inf


class TevenTtl(Policy):
    """TTL = break-even time of the edge the replica was fetched over."""

    name = "teven"

    def write_ttl(self, bucket, key, region, t):
        return _cheapest_break_even(self.pricing, region)

    def on_read(self, ctx):
        if ctx.hit:
            return ReadDecision(True, ctx.replica.ttl)
        return ReadDecision(True, break_even(self.pricing, ctx.source, ctx.reader))


class ReplicateOnWrite(Policy):
    """Push every write to a fixed set of regions (all others by default)."""

    def __init__(self, targets: Sequence[Region] | None = None):
        self.targets = tuple(targets) if targets else None
        self.name = "replicate-on-write" + (":" + ",".join(self.targets) if self.targets else "")

    def start(self, env):
        super().start(env)
        if self.targets:
            unknown = [r for r in self.targets if r not in env.pricing]
            if unknown:
                raise PolicyError(f"unknown replication target(s): {unknown}")

    def on_write(self, key, size, region, t):
        targets = self.targets or self.pricing.regions
        return [r for r in targets if r != region]

    def on_read(self, ctx):
        return KEEP_FOREVER if ctx.hit else DROP


# -- EWMA ---------------------------------------------------------------------

@dataclass
class EwmaState:
    last_access: float | None = None
    gaps: int = 0
    prediction: float | None = None


def ewma_predict(state: EwmaState, gap: float, alpha: float, cold_start: float) -> float:
    """Fold one observed gap into ``state`` and return the predicted next gap.

    The first gap only seeds the average; until a second one arrives the
    prediction is ``cold_start``.
    """
    if not 0 < alpha <= 1:
        raise PolicyError("alpha must be in (0, 1]")
    state.gaps += 1
    if state.gaps == 1:
        state.prediction = gap
        return cold_start
    state.prediction = alpha * gap + (1 - alpha) * state.prediction
    return state.prediction


class Ewma(Policy):
    """Per-object moving average of re-read gaps.

    Keeps the replica for its edge's break-even time while the predicted gap
    is within it, drops it as soon as the prediction exceeds it.
    """

    def __init__(self, alpha: float = 0.5):
        if not 0 < alpha <= 1:
            raise PolicyError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.name = f"ewma:alpha={alpha:g}"

    def start(self, env):
        super().start(env)
        self.state: dict = defaultdict(EwmaState)

    def write_ttl(self, bucket, key, region, t):
        return _cheapest_break_even(self.pricing, region)

    def on_read(self, ctx):
        if ctx.hit:
            src = ctx.replica.source
            teven = break_even(self.pricing, src, ctx.reader) if src else _cheapest_break_even(self.pricing, ctx.reader)
        else:
            teven = break_even(self.pricing, ctx.source, ctx.reader)
        st = self.state[(ctx.bucket, ctx.key, ctx.reader)]
        pred = teven
        if st.last_access is not None:
            pred = ewma_predict(st, ctx.now - st.last_access, self.alpha, teven)
        st.last_access = ctx.now
        if pred > teven:
            return DROP
        return ReadDecision(True, teven)


# -- Clairvoyant ----------------------------------------------------------------

def cgp_precompute(trace: Trace) -> dict[tuple[str, int], float]:
    """Exact gap to the next cache-region GET, keyed by (key, per-key GET index).

    A GET with no later GET of the same version maps to ``inf``. GETs of a
    key that does not exist at that moment are skipped.
    """
    pair = as_base_cache(trace)
    if pair is None:
        raise PolicyError("clairvoyant policy needs a two-region base/cache trace")
    out: dict[tuple[str, int], float] = {}
    pending: dict[str, tuple[int, float]] = {}
    count: Counter = Counter()
    live: set[str] = set()
    for r in trace.requests:
        if r.op == PUT:
            live.add(r.key)
        elif r.op == DELETE:
            live.discard(r.key)
        if r.op == GET:
            if r.key not in live:
                continue  # not found: nothing is read, nothing decided
            prev = pending.get(r.key)
            if prev is not None:
                out[(r.key, prev[0])] = r.t - prev[1]
            pending[r.key] = (count[r.key], r.t)
            count[r.key] += 1
        elif r.op != HEAD:
            # a new version (or a delete) makes the cached copy useless
            prev = pending.pop(r.key, None)
            if prev is not None:
                out[(r.key, prev[0])] = math.inf
    for key, (idx, _) in pending.items():
        out[(key, idx)] = math.inf
    return out


def _write_only(trace: Trace) -> bool:
    writers = {r.region for r in trace.requests if r.op in (PUT, DELETE)}
    return len(writers) <= 1 and not any(r.op in (GET, HEAD) for r in trace.requests)


class Clairvoyant(Policy):
    """Keep a replica exactly until its next read iff that read comes within
    the break-even time; otherwise drop it right away."""

    name = "cgp"

    def start(self, env):
        super().start(env)
        if env.trace is None:
            raise PolicyError("clairvoyant policy needs the trace up front")
        self.seen: Counter = Counter()
        self.pair = as_base_cache(env.trace)
        if self.pair is None and _write_only(env.trace):
            self.next_gap, self.teven = {}, 0.0  # nothing will ever be read
            return
        if self.pair is None:
            raise PolicyError("clairvoyant policy needs a two-region base/cache trace")
        self.next_gap = cgp_precompute(env.trace)
        self.teven = break_even(env.pricing, self.pair.base, self.pair.cache)

    def on_read(self, ctx):
        idx = self.seen[ctx.key]
        self.seen[ctx.key] += 1
        gap = self.next_gap.get((ctx.key, idx))
        if gap is None:
            raise PolicyError(f"no precomputed next access for {ctx.key!r} #{idx}")
        if gap <= self.teven:
            return ReadDecision(True, gap)
        return DROP


# -- Adaptive ---------------------------------------------------------------------

@dataclass
class EdgeTtlTable:
    ttl: dict[tuple[Region, Region], float]
    computed_at: float = 0.0

    def __getitem__(self, edge: tuple[Region, Region]) -> float:
        return self.ttl[edge]


def cold_start_table(pricing: PricingTable, now: float = 0.0) -> EdgeTtlTable:
    return EdgeTtlTable({(s, d): break_even(pricing, s, d) for s, d in pricing.edges()}, now)


def recompute_edge_ttls(
    histograms: Mapping[Region, HistogramSnapshot | None],
    pricing: PricingTable,
    u: float | None = None,
    now: float = 0.0,
) -> EdgeTtlTable:
    """Per directed edge (src, dst): the TTL minimizing dst's expected cost
    under N(src, dst) and S(dst). Regions without statistics fall back to the
    edge's break-even time."""
    out = {}
    for src, dst in pricing.edges():
        snap = histograms.get(dst)
        if snap is None or snap.empty:
            out[(src, dst)] = break_even(pricing, src, dst)
            continue
        n, s = pricing.network(src, dst), pricing.storage(dst)
        out[(src, dst)] = best_ttl(snap, n, s) if u is None else latency_adjusted_ttl(snap, n, s, u)
    return EdgeTtlTable(out, now)


def assign_object_ttl(
    table: EdgeTtlTable,
    key: str,
    dst: Region,
    holders: Mapping[Region, float],
    now: float = 0.0,
    diagnostics: Counter | None = None,
) -> float:
    """TTL for ``key``'s replica at ``dst``: the smallest edge TTL over the
    regions that hold it, ignoring holders whose replica would be gone before
    the local copy expires.

    ``holders`` maps holder region -> eviction deadline (inf if pinned).
    """
    others = {r: d for r, d in holders.items() if r != dst}
    if not others:
        return math.inf
    usable = [table[(r, dst)] for r, d in others.items() if d >= now + table[(r, dst)]]
    if usable:
        return min(usable)
    if diagnostics is not None:
        diagnostics["ttl_fallbacks"] += 1
    pinned = [table[(r, dst)] for r, d in others.items() if math.isinf(d)]
    return min(pinned) if pinned else min(table[(r, dst)] for r in others)


class Adaptive(Policy):
    """Learned per-edge TTLs from bucket-level inter-arrival histograms."""

    def __init__(self, u: float | None = None):
        if u is not None and u < 0:
            raise PolicyError("u must be >= 0")
        self.u = u
        self.name = "adaptive" + (f":u={u:g}" if u is not None else "")

    def start(self, env):
        super().start(env)
        cfg = env.config
        self.tick_interval = cfg.recompute_interval
        self.rotation_interval = cfg.rotation_interval
        self.scopes: dict[tuple[str, Region], ScopeHistogram] = {}
        self.tables: dict[str, EdgeTtlTable] = {}
        self._cold = cold_start_table(env.pricing)
        self._retention = {r: max_incoming_break_even(env.pricing, r) for r in env.pricing.regions}
        self._due: float | None = None

    def scope(self, bucket: str, region: Region) -> ScopeHistogram:
        sc = self.scopes.get((bucket, region))
        if sc is None:
            sc = self.scopes[(bucket, region)] = ScopeHistogram((bucket, region))
        return sc

    def table(self, bucket: str) -> EdgeTtlTable:
        if self._due is not None:
            self._recompute(self._due)
            self._due = None
        return self.tables.get(bucket, self._cold)

    def _sole_holder_ttl(self, bucket: str, region: Region) -> float:
        tbl = self.table(bucket)
        vals = [tbl[(s, region)] for s in self.pricing.regions if s != region]
        return min(vals) if vals else math.inf

    def write_ttl(self, bucket, key, region, t):
        return self._sole_holder_ttl(bucket, region)

    def on_read(self, ctx):
        table = self.table(ctx.bucket)  # before recording: a pending rebuild uses the tick's clock
        self.scope(ctx.bucket, ctx.reader).observe_get(ctx.key, ctx.size, ctx.now, remote=not ctx.hit)
        holders = holder_deadlines(ctx.version, ctx.reader)
        if holders:
            ttl = assign_object_ttl(table, ctx.key, ctx.reader, holders, ctx.now, self.env.diagnostics)
        else:
            ttl = self._sole_holder_ttl(ctx.bucket, ctx.reader)
        if ttl <= 0:
            return DROP
        return ReadDecision(True, ttl)

    def tick(self, now):
        for (bucket, region), sc in self.scopes.items():
            if now - sc.active.started_at >= self.rotation_interval:
                sc.rotate(now)
                self.env.diagnostics["histogram_rotations"] += 1
            sc.prune(now, self._retention[region])
        # statistics only change on reads, so the table is rebuilt lazily with
        # the latest tick's clock right before it is next needed
        self._due = now

    def _recompute(self, now):
        buckets = sorted({b for b, _ in self.scopes})
        for bucket in buckets:
            snaps = {
                region: sc.snapshot(now)
                for (b, region), sc in self.scopes.items()
                if b == bucket and sc.has_mass()
            }
            self.tables[bucket] = recompute_edge_ttls(snaps, self.pricing, self.u, now)
        self.env.diagnostics["edge_ttl_recomputes"] += 1


# -- parsing ------------------------------------------------------------------------

_UNITS = {
    "s": 1.0,
    "m": 60.0,
    "min": 60.0,
    "h": 3600.0,
    "d": SECONDS_PER_DAY,
    "w": 7 * SECONDS_PER_DAY,
    "mo": SECONDS_PER_MONTH,
}
_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:e[+-]?\d+)?)\s*(s|min|m|h|d|w|mo)?\s*$", re.I)


def parse_duration(text: str) -> float:
    """``90``, ``45s``, ``30m``, ``12h``, ``7d``, ``2w``, ``1.5mo`` -> seconds."""
    m = _DURATION.match(text)
    if not m:
        raise PolicyError(f"bad duration {text!r}")
    unit = (m.group(2) or "s").lower()
    return float(m.group(1)) * _UNITS[unit]


def format_duration(seconds: float) -> str:
    if math.isinf(seconds):
        return "inf"
    for unit in ("mo", "w", "d", "h", "m"):
        q = seconds / _UNITS[unit]
        if q >= 1 and abs(q - round(q)) < 1e-9:
            return f"{round(q)}{unit}"
    return f"{seconds:g}s"


def _kv(arg: str, name: str) -> float:
    k, sep, v = arg.partition("=")
    if not sep or k.strip() != name:
        raise PolicyError(f"expected {name}=<value>, got {arg!r}")
    try:
        return float(v)
    except ValueError:
        raise PolicyError(f"bad number {v!r}") from None


def parse_policy(text: str) -> Policy:
    """Build a fresh policy from its CLI spelling.

    always-evict | always-store | fixed-ttl:<dur> | teven | adaptive[:u=<usd_per_gb>]
    | ewma[:alpha=<f>] | replicate-on-write[:<regions|all>] | cgp
    """
    name, _, arg = text.strip().partition(":")
    name = name.lower()
    if name == "always-evict" and not arg:
        return AlwaysEvict()
    if name == "always-store" and not arg:
        return AlwaysStore()
    if name == "teven" and not arg:
        return TevenTtl()
    if name in ("cgp", "clairvoyant") and not arg:
        return Clairvoyant()
    if name == "fixed-ttl":
        if not arg:
            raise PolicyError("fixed-ttl needs a duration, e.g. fixed-ttl:7d")
        return FixedTtl(parse_duration(arg))
    if name == "adaptive":
        return Adaptive(_kv(arg, "u") if arg else None)
    if name == "ewma":
        return Ewma(_kv(arg, "alpha") if arg else 0.5)
    if name == "replicate-on-write":
        if not arg or arg == "all":
            return ReplicateOnWrite()
        return ReplicateOnWrite([r for r in arg.split(",") if r])
    raise PolicyError(f"unknown policy {text!r}")


# Other systems' methods: named in comparison tables, not simulated.
PLACEHOLDER_POLICIES = ("spanstore", "ttl-cc")

__all__ = [
    "Adaptive", "AlwaysEvict", "AlwaysStore", "Clairvoyant", "EdgeTtlTable", "Ewma",
    "EwmaState", "FixedTtl", "Policy", "PolicyEnv", "PolicyError", "ReadContext",
    "ReadDecision", "ReplicateOnWrite", "TevenTtl", "assign_object_ttl", "cgp_precompute",
    "cold_start_table", "ewma_predict", "parse_duration", "parse_policy", "recompute_edge_ttls",
]
