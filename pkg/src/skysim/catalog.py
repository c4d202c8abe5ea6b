"""Control-plane state: virtual buckets/objects, versions and physical replicas."""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

from .pricing import PricingTable, Region


class ReplicaStatus(enum.IntEnum):
    PENDING = 0
    COMMITTED = 1
    EVICTED = 2


class Consistency(enum.Enum):
    READ_AFTER_WRITE = "raw"
    EVENTUAL = "eventual"


@dataclass(frozen=True)
class Mode:
    """Fixed Base (``k`` ignored) or Free Placement keeping ``k`` copies."""

    fixed_base: bool = True
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def min_copies(self) -> int:
        return 1 if self.fixed_base else self.k

    def __str__(self) -> str:
        return "fb" if self.fixed_base else f"fp:{self.k}"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        text = text.strip().lower()
        if text == "fb":
            return cls(True)
        if text.startswith("fp"):
            _, _, k = text.partition(":")
            return cls(False, int(k) if k else 1)
        raise ValueError(f"unknown mode {text!r}; expected fb or fp:<k>")


FB = Mode(True)


class CatalogError(RuntimeError):
    pass


class ObjectLost(CatalogError):
    """No committed replica of an existing object anywhere."""


class NoSuchObject(CatalogError):
    pass


@dataclass(eq=False)
class Replica:
    region: Region
    size: int
    stored_since: float
    last_access: float
    ttl: float = math.inf
    is_base: bool = False
    source: Region | None = None  # where the data came from, None for a local write
    status: ReplicaStatus = ReplicaStatus.PENDING
    version: "Version" = field(default=None, repr=False)
    rid: int = 0
    ended_at: float | None = None
    protected: bool = False  # expired but kept to honour the copy floor
    token: int = 0  # bumped whenever the eviction deadline moves

    @property
    def live(self) -> bool:
        return self.status == ReplicaStatus.COMMITTED

    @property
    def deadline(self) -> float:
        """Time after which the replica is considered idle past its TTL."""
        if self.is_base:
            return math.inf
        return self.last_access + self.ttl

    def expired(self, now: float) -> bool:
        return not self.is_base and now - self.last_access > self.ttl

    def _advance(self, status: ReplicaStatus) -> None:
        if status <= self.status:
            raise CatalogError(f"illegal replica transition {self.status.name} -> {status.name}")
        self.status = status


@dataclass(eq=False)
class Version:
    id: int
    size: int
    created_at: float
    obj: "VirtualObject" = field(repr=False)
    replicas: list[Replica] = field(default_factory=list)

    def live_replicas(self) -> list[Replica]:
        return [r for r in self.replicas if r.live]

    def replica_at(self, region: Region) -> Replica | None:
        for r in self.replicas:
            if r.region == region and r.live:
                return r
        return None


@dataclass(eq=False)
class VirtualObject:
    bucket: str
    key: str
    base_region: Region | None = None
    versions: list[Version] = field(default_factory=list)

    @property
    def latest(self) -> Version:
        return self.versions[-1]

    def live_replicas(self) -> list[Replica]:
        return [r for v in self.versions for r in v.replicas if r.live]


@dataclass(frozen=True)
class ReadPlan:
    hit: bool
    replica: Replica  # local replica on a hit, the chosen source on a miss
    version: Version

    @property
    def source(self) -> Region | None:
        return None if self.hit else self.replica.region


@dataclass(frozen=True)
class Eviction:
    replica: Replica
    at: float


class CatalogListener(Protocol):
    def replica_started(self, replica: Replica, t: float) -> None: ...
    def replica_touched(self, replica: Replica, t: float) -> None: ...
    def replica_ended(self, replica: Replica, t: float, reason: str) -> None: ...


class _NullListener:
    def replica_started(self, replica, t):
        pass

    def replica_touched(self, replica, t):
        pass

    def replica_ended(self, replica, t, reason):
        pass


class Catalog:
    """Single-writer catalog for one simulation run.

    ``versioning=False`` switches to last-writer-wins: a PUT retires every
    replica of the previous version.
    """

    def __init__(
        self,
        mode: Mode = FB,
        pricing: PricingTable | None = None,
        versioning: bool = True,
        auto_create_buckets: bool = True,
        listener: CatalogListener | None = None,
    ):
        self.mode = mode
        self.pricing = pricing
        self.versioning = versioning
        self.auto_create_buckets = auto_create_buckets
        self.listener = listener or _NullListener()
        self.buckets: dict[str, dict[str, VirtualObject]] = {}
        self._ids = itertools.count(1)

    # -- namespace ---------------------------------------------------------

    def create_bucket(self, bucket: str) -> None:
        self.buckets.setdefault(bucket, {})

    def _bucket(self, bucket: str) -> dict[str, VirtualObject]:
        if bucket not in self.buckets:
            if not self.auto_create_buckets:
                raise CatalogError(f"unknown bucket {bucket!r}")
            self.create_bucket(bucket)
        return self.buckets[bucket]

    def get(self, bucket: str, key: str) -> VirtualObject | None:
        return self.buckets.get(bucket, {}).get(key)

    def objects(self) -> Iterable[VirtualObject]:
        for b in self.buckets.values():
            yield from b.values()

    def _check_region(self, region: Region) -> None:
        if self.pricing is not None and region not in self.pricing:
            raise CatalogError(f"region {region!r} is not in the pricing table")

    def _commit(self, rep: Replica, t: float) -> Replica:
        rep.rid = next(self._ids)
        rep.version.replicas.append(rep)
        rep._advance(ReplicaStatus.COMMITTED)  # two-phase commit collapses to an instant
        self.listener.replica_started(rep, t)
        return rep

    def _end(self, rep: Replica, t: float, reason: str) -> None:
        rep._advance(ReplicaStatus.EVICTED)
        rep.ended_at = t
        rep.protected = False
        self.listener.replica_ended(rep, t, reason)

    # -- operations --------------------------------------------------------

    def put(self, bucket: str, key: str, size: int, region: Region, t: float, ttl: float = math.inf) -> Version:
        """Write-local: append a version whose only replica sits at ``region``."""
        self._check_region(region)
        objs = self._bucket(bucket)
        obj = objs.get(key)
        if obj is None:
            obj = objs[key] = VirtualObject(bucket, key, base_region=region)
        prev = obj.latest if obj.versions else None
        ver = Version(id=(prev.id + 1 if prev else 1), size=size, created_at=t, obj=obj)
        obj.versions.append(ver)
        is_base = self.mode.fixed_base and region == obj.base_region
        self._commit(Replica(region, size, t, t, math.inf if is_base else ttl, is_base, None, version=ver), t)

        if prev is not None and not self.versioning:
            for rep in prev.live_replicas():
                self._end(rep, t, "overwritten")
            if self.mode.fixed_base and region != obj.base_region:
                # keep a pinned copy of the current version at the object's base
                self._commit(
                    Replica(obj.base_region, size, t, t, math.inf, True, region, version=ver), t
                )
        return ver

    def delete(self, bucket: str, key: str, t: float) -> list[Replica]:
        obj = self.buckets.get(bucket, {}).pop(key, None)
        if obj is None:
            return []
        ended = obj.live_replicas()
        for rep in ended:
            self._end(rep, t, "deleted")
        return ended

    def locate(
        self,
        bucket: str,
        key: str,
        reader: Region,
        consistency: Consistency = Consistency.READ_AFTER_WRITE,
        pricing: PricingTable | None = None,
    ) -> ReadPlan:
        """Where a read at ``reader`` is served from.

        Local replicas of the latest version are hits; under eventual
        consistency a local replica of any version is. Otherwise the latest
        version's replica with the cheapest egress to ``reader`` is used,
        ties broken by region id.
        """
        obj = self.get(bucket, key)
        if obj is None:
            raise NoSuchObject(f"{bucket}/{key}")
        pricing = pricing or self.pricing
        latest = obj.latest
        local = latest.replica_at(reader)
        if local is not None:
            return ReadPlan(True, local, latest)
        if consistency is Consistency.EVENTUAL:
            for ver in reversed(obj.versions[:-1]):
                stale = ver.replica_at(reader)
                if stale is not None:
                    return ReadPlan(True, stale, ver)
        candidates = latest.live_replicas()
        if not candidates:
            raise ObjectLost(f"{bucket}/{key} v{latest.id} has no committed replica")
        if pricing is None:
            src = min(candidates, key=lambda r: r.region)
        else:
            src = min(candidates, key=lambda r: (pricing.network(r.region, reader), r.region))
        return ReadPlan(False, src, latest)

    def admit_replica(
        self, version: Version, region: Region, t: float, ttl: float, source: Region | None = None
    ) -> Replica:
        """Create (and immediately commit) a replica of ``version`` at ``region``."""
        self._check_region(region)
        existing = version.replica_at(region)
        if existing is not None:
            return existing
        rep = Replica(region, version.size, t, t, ttl, False, source, version=version)
        return self._commit(rep, t)

    def touch(self, rep: Replica, t: float, ttl: float | None = None) -> None:
        """Record an access: the TTL clock restarts (and optionally the TTL changes)."""
        if not rep.live:
            raise CatalogError("touching a replica that is not committed")
        self.listener.replica_touched(rep, t)
        rep.last_access = t
        if ttl is not None and not rep.is_base:
            rep.ttl = ttl
        rep.protected = False
        rep.token += 1

    # -- eviction ----------------------------------------------------------

    def _survivor_order(self, rep: Replica):
        s = self.pricing.storage(rep.region) if self.pricing is not None else 0.0
        return (s, rep.region)

    def expire(self, candidates: Iterable[Replica], at: Callable[[Replica], float]) -> tuple[list[Eviction], list[Replica]]:
        """Evict expired ``candidates`` unless that breaks the copy floor.

        Per version, if evicting every candidate would leave fewer than the
        mode's minimum number of committed replicas, the cheapest-storage
        candidates (ties by region id) survive and are flagged ``protected``.
        Base replicas are never candidates.
        """
        by_version: dict[int, tuple[Version, list[Replica]]] = {}
        for rep in candidates:
            if not rep.live or rep.is_base:
                continue
            by_version.setdefault(id(rep.version), (rep.version, []))[1].append(rep)

        evicted: list[Eviction] = []
        kept: list[Replica] = []
        for ver, reps in by_version.values():
            live = ver.live_replicas()
            staying = len(live) - len(reps)
            need = max(0, self.mode.min_copies - staying)
            reps.sort(key=self._survivor_order)
            for rep in reps[:need]:
                rep.protected = True
                kept.append(rep)
            for rep in reps[need:]:
                when = at(rep)
                self._end(rep, when, "ttl")
                evicted.append(Eviction(rep, when))
        return evicted, kept

    def evict_scan(self, now: float, exact: bool = True) -> list[Eviction]:
        """Evict every replica idle longer than its TTL.

        With ``exact`` the eviction is dated at last_access + ttl (never before
        a protected replica lost its protection); otherwise at ``now``.
        """
        expired = [
            rep for obj in self.objects() for rep in obj.live_replicas() if rep.expired(now)
        ]

        def when(rep: Replica) -> float:
            if exact and not rep.protected:
                return min(now, rep.deadline)
            return now

        evicted, _ = self.expire(expired, when)
        return evicted

    # -- debugging ---------------------------------------------------------

    def snapshot_lines(self) -> Iterable[str]:
        """JSON lines, one object per line, for debugging dumps."""
        for obj in self.objects():
            doc = {
                "bucket": obj.bucket,
                "key": obj.key,
                "base": obj.base_region,
                "versions": [
                    {
                        "id": v.id,
                        "size": v.size,
                        "created_at": v.created_at,
                        "replicas": [
                            {
                                "region": r.region,
                                "status": r.status.name.lower(),
                                "stored_since": r.stored_since,
                                "last_access": r.last_access,
                                "ttl": None if math.isinf(r.ttl) else r.ttl,
                                "is_base": r.is_base,
                            }
                            for r in v.replicas
                        ],
                    }
                    for v in obj.versions
                ],
            }
            yield json.dumps(doc)
