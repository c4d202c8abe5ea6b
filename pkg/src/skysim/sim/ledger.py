"""Dollar accounting for one run, plus an independent re-derivation from the event log."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

from ..pricing import PricingTable, network_charge, storage_charge

STORAGE, NETWORK, OPS = "storage", "network", "ops"


@dataclass
class CostLedger:
    """Every charge is kept as an item and summed with ``math.fsum`` so the
    totals do not depend on the order charges were posted in."""

    _items: dict = field(default_factory=lambda: {STORAGE: [], NETWORK: [], OPS: []})
    _by_region: dict = field(default_factory=lambda: defaultdict(list))

    def charge_storage(self, region: str, size: float, rate: float, seconds: float) -> float:
        if seconds < 0:
            raise ValueError(f"negative storage interval {seconds}")
        usd = storage_charge(size, rate, seconds)
        self._post(STORAGE, region, usd)
        return usd

    def charge_network(self, src: str, dst: str, size: float, rate: float) -> float:
        usd = network_charge(size, rate)
        self._post(NETWORK, src, usd)
        return usd

    def charge_ops(self, region: str, usd: float) -> None:
        self._post(OPS, region, usd)

    def _post(self, category: str, region: str, usd: float) -> None:
        if usd < 0 or math.isnan(usd):
            raise ValueError(f"bad {category} charge {usd}")
        self._items[category].append(usd)
        self._by_region[(category, region)].append(usd)

    @property
    def storage_usd(self) -> float:
        return math.fsum(self._items[STORAGE])

    @property
    def network_usd(self) -> float:
        return math.fsum(self._items[NETWORK])

    @property
    def ops_usd(self) -> float:
        return math.fsum(self._items[OPS])

    @property
    def total_usd(self) -> float:
        return self.storage_usd + self.network_usd + self.ops_usd

    def by_region(self) -> dict[str, dict[str, float]]:
        """region -> {storage, network, ops}; network is attributed to the sending region."""
        out: dict[str, dict[str, float]] = {}
        for (cat, region), items in self._by_region.items():
            out.setdefault(region, {STORAGE: 0.0, NETWORK: 0.0, OPS: 0.0})[cat] = math.fsum(items)
        return {r: out[r] for r in sorted(out)}

    def to_json(self) -> dict:
        return {
            "total_usd": self.total_usd,
            "storage_usd": self.storage_usd,
            "network_usd": self.network_usd,
            "ops_usd": self.ops_usd,
            "by_region": self.by_region(),
        }


@dataclass(frozen=True)
class AuditResult:
    storage_usd: float
    network_usd: float
    ops_usd: float

    @property
    def total_usd(self) -> float:
        return self.storage_usd + self.network_usd + self.ops_usd


def audit(events, pricing: PricingTable, include_base_storage: bool = False, charge_ops: bool = False) -> AuditResult:
    """Recompute a run's bill from its event log alone.

    Unlike the engine, which bills storage in pieces between accesses, this
    charges each replica once for its whole lifetime.
    """
    open_: dict[int, tuple] = {}
    storage, network, ops = [], [], []
    for ev in events:
        kind = ev[0]
        if kind == "start":
            _, t, rid, region, size, is_base = ev
            if rid in open_:
                raise ValueError(f"replica {rid} started twice")
            open_[rid] = (t, region, size, is_base)
        elif kind == "end":
            _, t, rid, _reason = ev
            start, region, size, is_base = open_.pop(rid)
            if t < start:
                raise ValueError(f"replica {rid} ends before it starts")
            if include_base_storage or not is_base:
                storage.append(storage_charge(size, pricing.storage(region), t - start))
        elif kind == "transfer":
            _, _t, src, dst, size = ev
            network.append(network_charge(size, pricing.network(src, dst)))
        elif kind == "op":
            if charge_ops:
                ops.append(pricing.op_rate / 1000.0)
        else:
            raise ValueError(f"unknown event {kind!r}")
    if open_:
        raise ValueError(f"{len(open_)} replica(s) never closed")
    return AuditResult(math.fsum(storage), math.fsum(network), math.fsum(ops))
