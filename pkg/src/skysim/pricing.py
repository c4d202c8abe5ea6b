"""Cloud cost model: per-region storage rates, directed network rates, break-even times.

Rates are USD. Storage is billed per GB per month, network per GB moved.
Internally every duration is in seconds and a month is fixed at 30 days.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import IO, Mapping

SECONDS_PER_DAY = 86_400.0
SECONDS_PER_MONTH = 30 * SECONDS_PER_DAY  # 2,592,000 s
BYTES_PER_GB = 1e9

# break_even() result when the destination stores for free.
NEVER_EVICT = math.inf

Region = str


class PricingError(ValueError):
    """Base class for pricing file problems."""


class PricingParseError(PricingError):
    pass


class PricingValidationError(PricingError):
    pass


def months_to_seconds(months: float) -> float:
    return months * SECONDS_PER_MONTH


def seconds_to_months(seconds: float) -> float:
    return seconds / SECONDS_PER_MONTH


def network_charge(size_bytes: float, rate: float) -> float:
    """Dollars to move ``size_bytes`` over an edge priced at ``rate`` $/GB."""
    return size_bytes / BYTES_PER_GB * rate


def storage_charge(size_bytes: float, rate: float, seconds: float) -> float:
    """Dollars to keep ``size_bytes`` for ``seconds`` at ``rate`` $/GB-month."""
    return size_bytes / BYTES_PER_GB * rate * (seconds / SECONDS_PER_MONTH)


@dataclass(frozen=True)
class PricingTable:
    regions: tuple[Region, ...]
    storage_rate: Mapping[Region, float]
    network_rate: Mapping[tuple[Region, Region], float]
    op_rate: float = 0.0  # $ per 1000 requests
    _index: frozenset = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self):
        regions = tuple(self.regions)
        if len(set(regions)) != len(regions):
            dup = sorted({r for r in regions if regions.count(r) > 1})
            raise PricingValidationError(f"duplicate region(s): {dup}")
        for r in regions:
            if not isinstance(r, str) or not r:
                raise PricingValidationError(f"invalid region id {r!r}")
        storage = dict(self.storage_rate)
        for r in regions:
            if r not in storage:
                raise PricingValidationError(f"missing storage rate for {r}")
        extra = set(storage) - set(regions)
        if extra:
            raise PricingValidationError(f"storage rate for unknown region(s): {sorted(extra)}")

        network = {}
        for (src, dst), rate in dict(self.network_rate).items():
            if src not in regions or dst not in regions:
                raise PricingValidationError(f"network rate for unknown edge {src}->{dst}")
            if src == dst:
                raise PricingValidationError(f"intra-region rate {src}->{dst} may not be set")
            network[(src, dst)] = rate
        for src in regions:
            for dst in regions:
                if src != dst and (src, dst) not in network:
                    raise PricingValidationError(f"missing network rate {src}->{dst}")
        for r in regions:
            network[(r, r)] = 0.0

        rates = list(storage.values()) + list(network.values()) + [self.op_rate]
        for v in rates:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or math.isnan(v) or v < 0:
                raise PricingValidationError(f"rates must be non-negative numbers, got {v!r}")

        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "storage_rate", MappingProxyType({r: float(storage[r]) for r in regions}))
        object.__setattr__(self, "network_rate", MappingProxyType({k: float(v) for k, v in network.items()}))
        object.__setattr__(self, "op_rate", float(self.op_rate))
        object.__setattr__(self, "_index", frozenset(regions))

    def __contains__(self, region: object) -> bool:
        return region in self._index

    def storage(self, region: Region) -> float:
        return self.storage_rate[region]

    def network(self, src: Region, dst: Region) -> float:
        return self.network_rate[(src, dst)]

    def edges(self) -> list[tuple[Region, Region]]:
        return [(s, d) for s in self.regions for d in self.regions if s != d]

    def scaled(self, factor: float) -> "PricingTable":
        """Copy with every rate multiplied by ``factor``."""
        return PricingTable(
            regions=self.regions,
            storage_rate={r: v * factor for r, v in self.storage_rate.items()},
            network_rate={k: v * factor for k, v in self.network_rate.items() if k[0] != k[1]},
            op_rate=self.op_rate * factor,
        )

    def to_json(self) -> dict:
        doc = {
            "regions": list(self.regions),
            "storage": dict(self.storage_rate),
            "network": {f"{s}->{d}": v for (s, d), v in self.network_rate.items() if s != d},
        }
        if self.op_rate:
            doc["op_per_1000"] = self.op_rate
        return doc


def two_region(
    base: Region = "A",
    cache: Region = "B",
    storage: float = 0.026,
    network: float = 0.02,
) -> PricingTable:
    """Symmetric two-region table, handy for base/cache experiments."""
    return PricingTable(
        regions=(base, cache),
        storage_rate={base: storage, cache: storage},
        network_rate={(base, cache): network, (cache, base): network},
    )


def load_pricing(source: str | bytes | IO) -> PricingTable:
    """Parse a pricing JSON document (text, bytes, or a readable stream)."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = json.loads(source)
    except json.JSONDecodeError as exc:
        raise PricingParseError(f"pricing file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PricingParseError("pricing file must be a JSON object")
    for key in ("regions", "storage", "network"):
        if key not in doc:
            raise PricingParseError(f"pricing file missing {key!r}")
    if not isinstance(doc["regions"], list):
        raise PricingParseError("'regions' must be a list")
    if not isinstance(doc["storage"], dict) or not isinstance(doc["network"], dict):
        raise PricingParseError("'storage' and 'network' must be objects")

    network = {}
    for edge, rate in doc["network"].items():
        src, sep, dst = edge.partition("->")
        if not sep or not src or not dst:
            raise PricingParseError(f"bad network key {edge!r}; expected 'src->dst'")
        if (src, dst) in network:
            raise PricingValidationError(f"duplicate network rate {edge}")
        network[(src, dst)] = rate

    return PricingTable(
        regions=tuple(doc["regions"]),
        storage_rate=doc["storage"],
        network_rate=network,
        op_rate=doc.get("op_per_1000", 0.0),
    )


def load_pricing_file(path) -> PricingTable:
    with open(path, "rb") as fh:
        return load_pricing(fh)


def bundled_pricing(name: str) -> PricingTable:
    """Load one of the illustrative tables shipped in ``skysim/data``."""
    from importlib import resources

    data = resources.files("skysim").joinpath("data", f"{name}.json").read_bytes()
    return load_pricing(data)


def break_even(table: PricingTable, src: Region, dst: Region) -> float:
    """Seconds a replica at ``dst`` can be stored before it costs as much as
    re-fetching it from ``src``: N(src, dst) / S(dst).

    Returns :data:`NEVER_EVICT` when storage at ``dst`` is free.
    """
    if src == dst:
        raise ValueError("break-even is undefined for an intra-region edge")
    s = table.storage(dst)
    if s == 0:
        return NEVER_EVICT
    return months_to_seconds(table.network(src, dst) / s)


def break_even_months(table: PricingTable, src: Region, dst: Region) -> float:
    return seconds_to_months(break_even(table, src, dst))


def max_incoming_break_even(table: PricingTable, dst: Region) -> float:
    values = [break_even(table, s, dst) for s in table.regions if s != dst]
    return max(values) if values else 0.0

