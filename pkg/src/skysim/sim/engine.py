"""Trace replay: drives the catalog and a policy through a request trace and bills every dollar."""

from __future__ import annotations

import heapq
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

from ..catalog import (
    FB,
    Catalog,
    CatalogError,
    Consistency,
    Mode,
    NoSuchObject,
    Replica,
    Version,
)
from ..policy import Policy, PolicyEnv, ReadContext
from ..pricing import SECONDS_PER_DAY, PricingTable
from ..trace import DELETE, GET, HEAD, PUT, Trace
from .ledger import CostLedger

logger = logging.getLogger(__name__)

DEFAULT_ROTATION = 60 * SECONDS_PER_DAY


class SimError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    mode: Mode = FB
    consistency: Consistency = Consistency.READ_AFTER_WRITE
    scan_interval: float | None = None  # None: exact eviction, else periodic scans
    recompute_interval: float = SECONDS_PER_DAY
    rotation_interval: float = DEFAULT_ROTATION
    include_base_storage: bool = False
    charge_ops: bool = False
    seed: int = 0
    versioning: bool = True
    head_resets_ttl: bool = False
    bucket: str = "default"
    record_events: bool = True

    def __post_init__(self):
        for name in ("recompute_interval", "rotation_interval"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.scan_interval is not None and not self.scan_interval > 0:
            raise ValueError("scan_interval must be > 0")

    @property
    def eviction(self) -> str:
        if self.scan_interval is None:
            return "exact"
        return f"periodic:{self.scan_interval:g}s"


@dataclass
class SimReport:
    policy: str
    config: SimConfig
    ledger: CostLedger
    horizon: float
    requests: Counter
    get_bytes: int = 0
    hit_bytes: int = 0
    diagnostics: Counter = field(default_factory=Counter)
    events: list | None = None

    @property
    def byte_hit_ratio(self) -> float:
        return self.hit_bytes / self.get_bytes if self.get_bytes else 0.0

    @property
    def total_usd(self) -> float:
        return self.ledger.total_usd

    def to_json(self) -> dict:
        cfg = self.config
        return {
            "policy": self.policy,
            "mode": str(cfg.mode),
            "consistency": cfg.consistency.value,
            "eviction": cfg.eviction,
            "include_base_storage": cfg.include_base_storage,
            "charge_ops": cfg.charge_ops,
            "seed": cfg.seed,
            "horizon_s": self.horizon,
            "cost": self.ledger.to_json(),
            "byte_hit_ratio": self.byte_hit_ratio,
            "get_bytes": self.get_bytes,
            "hit_bytes": self.hit_bytes,
            "requests": {k: self.requests[k] for k in sorted(self.requests)},
            "diagnostics": {k: self.diagnostics[k] for k in sorted(self.diagnostics)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


class Simulator:
    """One run. Doubles as the catalog listener so storage is billed the
    moment a replica's interval (or a piece of it) closes."""

    def __init__(self, trace: Trace, pricing: PricingTable, policy: Policy, config: SimConfig):
        bad = sorted(r for r in trace.regions() if r not in pricing)
        if bad:
            raise SimError(f"trace region(s) not in pricing table: {bad}")
        if any(r.region is None for r in trace.requests):
            raise SimError("every request needs a region; synthesize regions first")
        self.trace = trace
        self.pricing = pricing
        self.policy = policy
        self.config = config
        self.ledger = CostLedger()
        self.events: list | None = [] if config.record_events else None
        self.counts: Counter = Counter()
        self.diag: Counter = Counter()
        self.get_bytes = 0
        self.hit_bytes = 0
        self.catalog = Catalog(config.mode, pricing, versioning=config.versioning, listener=self)
        self._seg: dict[int, float] = {}
        self._heap: list = []
        policy.start(PolicyEnv(pricing, config, trace, self.diag))
        self._tick_every = policy.tick_interval
        self._next_tick = self._tick_every if self._tick_every else math.inf
        self._next_scan = config.scan_interval or math.inf

    # -- listener ------------------------------------------------------------

    def _bill_storage(self, rep: Replica, t: float) -> None:
        start = self._seg[rep.rid]
        if rep.is_base and not self.config.include_base_storage:
            return
        self.ledger.charge_storage(rep.region, rep.size, self.pricing.storage(rep.region), t - start)

    def replica_started(self, rep: Replica, t: float) -> None:
        self._seg[rep.rid] = t
        if self.events is not None:
            self.events.append(("start", t, rep.rid, rep.region, rep.size, rep.is_base))

    def replica_touched(self, rep: Replica, t: float) -> None:
        self._bill_storage(rep, t)
        self._seg[rep.rid] = t

    def replica_ended(self, rep: Replica, t: float, reason: str) -> None:
        self._bill_storage(rep, t)
        del self._seg[rep.rid]
        self.diag[f"ended_{reason}"] += 1
        if self.events is not None:
            self.events.append(("end", t, rep.rid, reason))

    # -- helpers -------------------------------------------------------------

    def _transfer(self, src: str, dst: str, size: int, t: float) -> None:
        self.ledger.charge_network(src, dst, size, self.pricing.network(src, dst))
        if self.events is not None:
            self.events.append(("transfer", t, src, dst, size))

    def _schedule(self, rep: Replica) -> None:
        if self.config.scan_interval is None and not rep.is_base and not math.isinf(rep.ttl):
            heapq.heappush(self._heap, (rep.deadline, rep.rid, rep.token, rep))

    def _expire_due(self, t: float) -> None:
        """Exact mode: evict, at their deadlines, replicas whose deadline is before ``t``."""
        heap = self._heap
        while heap and heap[0][0] < t:
            _, rid, token, rep = heapq.heappop(heap)
            if not rep.live or token != rep.token or rep.protected:
                continue
            if not rep.expired(t):
                # deadline rounding put it a hair early; look again later
                heapq.heappush(heap, (t, rid, token, rep))
                continue
            _, kept = self.catalog.expire([rep], lambda r: r.deadline)
            if kept:
                self.diag["floor_protected"] += 1

    def _release_protected(self, version: Version, t: float) -> None:
        """A new copy may free replicas that were only kept for the copy floor."""
        stuck = [r for r in version.live_replicas() if r.protected]
        if stuck:
            self.catalog.expire(stuck, lambda r: t)

    def _advance(self, t: float) -> None:
        while True:
            nxt = min(self._next_tick, self._next_scan)
            if nxt > t:
                break
            self._expire_due(nxt)
            if self._next_scan <= nxt:
                self.catalog.evict_scan(nxt, exact=False)
                self._next_scan += self.config.scan_interval
            if self._next_tick <= nxt:
                self.policy.tick(nxt)
                self._next_tick += self._tick_every
        self._expire_due(t)

    # -- requests ------------------------------------------------------------

    def _put(self, req) -> None:
        cfg, pol = self.config, self.policy
        bucket = cfg.bucket
        ttl = pol.write_ttl(bucket, req.key, req.region, req.t)
        ver = self.catalog.put(bucket, req.key, req.size, req.region, req.t, ttl)
        for rep in ver.replicas[1:]:
            if rep.source is not None:
                self._transfer(rep.source, rep.region, rep.size, req.t)
        for rep in ver.replicas:
            self._schedule(rep)
        targets = [r for r in pol.on_write(req.key, req.size, req.region, req.t) if r != req.region]
        for region in targets:
            if region not in self.pricing:
                raise SimError(f"replication target {region!r} not in pricing table")
            self._place_copy(ver, region, req.region, req.t, math.inf)
        # free placement: top up to k copies on the cheapest storage
        need = cfg.mode.min_copies - len(ver.live_replicas())
        if need > 0:
            spare = sorted(
                (r for r in self.pricing.regions if ver.replica_at(r) is None),
                key=lambda r: (self.pricing.storage(r), r),
            )
            for region in spare[:need]:
                self._place_copy(ver, region, req.region, req.t, pol.write_ttl(bucket, req.key, region, req.t))

    def _place_copy(self, ver: Version, region: str, src: str, t: float, ttl: float) -> None:
        if ver.replica_at(region) is not None:
            return
        rep = self.catalog.admit_replica(ver, region, t, ttl, src)
        self._transfer(src, region, ver.size, t)
        self._schedule(rep)

    def _get(self, req) -> None:
        cfg = self.config
        try:
            plan = self.catalog.locate(cfg.bucket, req.key, req.region, cfg.consistency, self.pricing)
        except NoSuchObject:
            self.counts["not_found"] += 1
            return
        ver = plan.version
        size = ver.size
        self.get_bytes += size
        if plan.hit:
            self.counts["hits"] += 1
            self.hit_bytes += size
            rep = plan.replica
            if rep.is_base:
                self.catalog.touch(rep, req.t)
                return
            ctx = ReadContext(cfg.bucket, req.key, size, req.region, True, None, req.t, ver, rep)
            dec = self.policy.on_read(ctx)
            self.catalog.touch(rep, req.t, dec.ttl if dec.store else 0.0)
            self._schedule(rep)
            return
        self.counts["misses"] += 1
        src = plan.replica.region
        self._transfer(src, req.region, size, req.t)
        ctx = ReadContext(cfg.bucket, req.key, size, req.region, False, src, req.t, ver)
        dec = self.policy.on_read(ctx)
        if dec.store and dec.ttl > 0:
            self.diag["admissions"] += 1
            rep = self.catalog.admit_replica(ver, req.region, req.t, dec.ttl, src)
            self._schedule(rep)
            self._release_protected(ver, req.t)

    def _head(self, req) -> None:
        obj = self.catalog.get(self.config.bucket, req.key)
        if obj is None:
            self.counts["not_found"] += 1
            return
        if self.config.head_resets_ttl:
            rep = obj.latest.replica_at(req.region)
            if rep is not None:
                self.catalog.touch(rep, req.t)
                self._schedule(rep)

    def run(self) -> SimReport:
        handlers = {PUT: self._put, GET: self._get, HEAD: self._head}
        op_usd = self.pricing.op_rate / 1000.0
        for req in self.trace.requests:
            self._advance(req.t)
            self.counts[req.op] += 1
            if self.events is not None:
                self.events.append(("op", req.t, req.op))
            if self.config.charge_ops:
                self.ledger.charge_ops(req.region, op_usd)
            if req.op == DELETE:
                self.catalog.delete(self.config.bucket, req.key, req.t)
            else:
                try:
                    handlers[req.op](req)
                except CatalogError as exc:
                    raise SimError(f"{req.op} {req.key} at t={req.t}: {exc}") from exc
        horizon = self.trace.horizon
        self._advance(horizon)
        for obj in list(self.catalog.objects()):
            for rep in obj.live_replicas():
                self.catalog._end(rep, horizon, "horizon")
        if self.config.mode.fixed_base is False:
            self.diag["fp_k"] = self.config.mode.k
        return SimReport(
            policy=str(self.policy),
            config=self.config,
            ledger=self.ledger,
            horizon=horizon,
            requests=self.counts,
            get_bytes=self.get_bytes,
            hit_bytes=self.hit_bytes,
            diagnostics=self.diag,
            events=self.events,
        )


def run(trace: Trace, pricing: PricingTable, policy: Policy, config: SimConfig | None = None) -> SimReport:
    """Replay ``trace``; the result depends only on the arguments."""
    return Simulator(trace, pricing, policy, config or SimConfig()).run()
