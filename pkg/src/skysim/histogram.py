"""Inter-arrival statistics behind the adaptive TTL.

Each scope (bucket, destination region) keeps two weighted histograms over
the same cell layout:

* ``hist[j]``: bytes re-read after an idle gap falling in cell ``j``
* ``last[j]``: bytes whose most recent read is now aged into cell ``j``

plus the bytes whose first read had to be fetched remotely. From these,
``expected_cost(ttl)`` predicts what a TTL-reset replica cache would have
paid, and ``best_ttl`` scans every cell boundary for the cheapest TTL.

Cells: 60 one-second cells over [0, 60 s], then 740 cells growing by 2%
each, cell k covering (60 * 1.02**(k-1), 60 * 1.02**k], then one overflow
cell for anything longer (about 4.4 years).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .pricing import BYTES_PER_GB, SECONDS_PER_MONTH

LINEAR_CELLS = 60
LOG_CELLS = 740
LOG_BASE = 1.02
LOG_ANCHOR = 60.0

# relative slack used when comparing candidate costs for ties
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class CellScheme:
    linear_cells: int = LINEAR_CELLS
    log_cells: int = LOG_CELLS
    base: float = LOG_BASE
    anchor: float = LOG_ANCHOR
    lower: np.ndarray = field(init=False, repr=False, compare=False)
    upper: np.ndarray = field(init=False, repr=False, compare=False)
    mid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.anchor != self.linear_cells:
            raise ValueError("log cells must start where the one-second cells end")
        lin_lo = np.arange(self.linear_cells, dtype=float)
        lin_hi = lin_lo + 1.0
        # repeated multiplication keeps every consecutive bound ratio at exactly `base`
        steps = np.full(self.log_cells + 1, self.base)
        steps[0] = self.anchor
        log_hi = np.multiply.accumulate(steps)[1:]
        log_lo = np.concatenate(([self.anchor], log_hi[:-1]))
        lower = np.concatenate((lin_lo, log_lo, [log_hi[-1]]))
        upper = np.concatenate((lin_hi, log_hi, [np.inf]))
        # representative time of a cell; the open-ended overflow cell uses its lower bound
        mid = np.concatenate(((lower[:-1] + upper[:-1]) / 2.0, [lower[-1]]))
        for name, arr in (("lower", lower), ("upper", upper), ("mid", mid)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def data_cells(self) -> int:
        return self.linear_cells + self.log_cells

    @property
    def n_cells(self) -> int:
        return self.data_cells + 1

    @property
    def overflow(self) -> int:
        return self.data_cells

    @property
    def coverage(self) -> float:
        """Largest gap (seconds) that still lands in a data cell."""
        return float(self.upper[self.data_cells - 1])

    def candidates(self) -> np.ndarray:
        """TTL candidates: 0 and the closing bound of every data cell."""
        return np.concatenate(([0.0], self.upper[: self.data_cells]))


DEFAULT_SCHEME = CellScheme()


def cell_index(scheme: CellScheme, gap: float) -> int:
    """Cell holding ``gap`` seconds.

    One-second cells are [k, k+1) (the last one closed at 60 s); log cells are
    left-open, so a gap equal to a log bound belongs to the cell it closes.
    """
    if gap < 0:
        raise ValueError(f"gap must be >= 0, got {gap}")
    if gap < scheme.linear_cells:
        return int(gap)
    if gap == scheme.linear_cells:
        return scheme.linear_cells - 1
    log_upper = scheme.upper[scheme.linear_cells : scheme.data_cells]
    j = int(np.searchsorted(log_upper, gap, side="left"))
    return scheme.linear_cells + j  # == overflow when past the last bound


def cell_indices(scheme: CellScheme, gaps: np.ndarray) -> np.ndarray:
    gaps = np.asarray(gaps, dtype=float)
    out = np.floor(gaps).astype(np.int64)
    big = gaps >= scheme.linear_cells
    if big.any():
        log_upper = scheme.upper[scheme.linear_cells : scheme.data_cells]
        out[big] = scheme.linear_cells + np.searchsorted(log_upper, gaps[big], side="left")
        out[gaps == scheme.linear_cells] = scheme.linear_cells - 1
    return out


# -- one generation of statistics ---------------------------------------------

LastAccessTable = dict  # key -> (last access time, size)


@dataclass
class TtlHistogram:
    scheme: CellScheme = DEFAULT_SCHEME
    started_at: float = 0.0
    scope: tuple | None = None
    hist: np.ndarray = None
    remote_bytes: float = 0.0
    last_access: LastAccessTable = field(default_factory=dict)

    def __post_init__(self):
        if self.hist is None:
            self.hist = np.zeros(self.scheme.n_cells)

    def record_interarrival(self, size: float, gap: float) -> None:
        if size < 0:
            raise ValueError("size must be >= 0")
        if size:
            self.hist[cell_index(self.scheme, gap)] += size

    def total_mass(self) -> float:
        return float(self.hist.sum())


def build_last(scheme: CellScheme, table: Mapping, now: float) -> np.ndarray:
    """Histogram of bytes by time since their last access."""
    last = np.zeros(scheme.n_cells)
    if not table:
        return last
    times = np.fromiter((v[0] for v in table.values()), float, len(table))
    sizes = np.fromiter((v[1] for v in table.values()), float, len(table))
    ages = now - times
    if (ages < 0).any():
        raise ValueError("last-access table holds timestamps after 'now'")
    np.add.at(last, cell_indices(scheme, ages), sizes)
    return last


@dataclass(frozen=True)
class HistogramSnapshot:
    """Frozen view used for cost queries."""

    hist: np.ndarray
    last: np.ndarray
    remote_bytes: float
    scheme: CellScheme = DEFAULT_SCHEME

    @property
    def empty(self) -> bool:
        return not self.hist.any() and not self.last.any()

    @classmethod
    def of(cls, h: TtlHistogram, now: float) -> "HistogramSnapshot":
        return cls(h.hist.copy(), build_last(h.scheme, h.last_access, now), h.remote_bytes, h.scheme)


# -- cost model ---------------------------------------------------------------

class CostCurve:
    """ExpectedCost evaluated at every TTL candidate for one (N, S) pair.

    Masses are in GB and times in months so each term comes out in dollars.
    """

    def __init__(self, snap: HistogramSnapshot, network: float, storage: float):
        sch = snap.scheme
        self.snap = snap
        self.network = network
        self.storage = storage
        self.candidates = sch.candidates()
        hist_gb = snap.hist / BYTES_PER_GB
        d = sch.data_cells
        self.remote_term = snap.remote_bytes / BYTES_PER_GB * network
        # candidate i keeps cells 0..i-1 as hits
        hit_storage = np.concatenate(([0.0], np.cumsum(hist_gb[:d] * sch.mid[:d])))
        hit_bytes = np.concatenate(([0.0], np.cumsum(hist_gb[:d])))
        miss_mass = hist_gb.sum() - hit_bytes
        last_mass = snap.last.sum() / BYTES_PER_GB
        ttl_months = self.candidates / SECONDS_PER_MONTH
        self.hit_bytes = hit_bytes
        self.storage_term = storage * (hit_storage / SECONDS_PER_MONTH + ttl_months * (miss_mass + last_mass))
        self.network_term = self.remote_term + miss_mass * network
        self.costs = self.network_term + self.storage_term

    def argmin(self) -> int:
        best = self.costs.min()
        tol = abs(best) * _TIE_RTOL + 1e-18
        return int(np.flatnonzero(self.costs <= best + tol)[0])


def expected_cost(h: HistogramSnapshot, ttl: float, network: float, storage: float) -> float:
    """Predicted cost of running the scope with a TTL-reset policy.

    remote-fetch + hit storage + (re-fetch plus storage until expiry) for
    misses + storage for the tail after every final access.
    """
    return sum(expected_cost_terms(h, ttl, network, storage))


def expected_cost_terms(h: HistogramSnapshot, ttl: float, network: float, storage: float):
    """(remote, hit storage, miss, tail storage) parts of :func:`expected_cost`."""
    if ttl < 0:
        raise ValueError("ttl must be >= 0")
    sch = h.scheme
    d = sch.data_cells
    hist_gb = h.hist / BYTES_PER_GB
    k = int(np.searchsorted(sch.upper[:d], ttl, side="right"))  # cells with t(j) <= ttl
    ttl_months = ttl / SECONDS_PER_MONTH
    remote = h.remote_bytes / BYTES_PER_GB * network
    hits = float(np.dot(hist_gb[:k], sch.mid[:k])) / SECONDS_PER_MONTH * storage
    miss_mass = float(hist_gb[k:].sum())
    misses = miss_mass * (network + ttl_months * storage) if miss_mass else 0.0
    tail_mass = float(h.last.sum()) / BYTES_PER_GB
    tail = tail_mass * ttl_months * storage if tail_mass else 0.0
    return remote, hits, misses, tail


def best_ttl(h: HistogramSnapshot, network: float, storage: float) -> float:
    """Cheapest TTL over the candidate set; ties go to the smallest TTL."""
    curve = CostCurve(h, network, storage)
    return float(curve.candidates[curve.argmin()])


def latency_adjusted_ttl(h: HistogramSnapshot, network: float, storage: float, u: float) -> float:
    """Stretch the cost-optimal TTL while each extra hit byte costs at most ``u`` $/GB.

    With ttl' the cheapest TTL, return the largest candidate ttl >= ttl' for
    which (cost(ttl) - cost(ttl')) / (GB re-read with ttl' < t(j) <= ttl) <= u,
    considering only candidates that close a cell with re-read bytes.
    """
    if u < 0:
        raise ValueError("u must be >= 0")
    curve = CostCurve(h, network, storage)
    i0 = curve.argmin()
    extra_gb = curve.hit_bytes - curve.hit_bytes[i0]
    extra_cost = curve.costs - curve.costs[i0]
    idx = np.arange(len(curve.costs))
    # only stop at bounds that close a cell holding re-reads; past the last
    # such cell a longer TTL buys no further hits
    closes_mass = np.concatenate(([False], h.hist[: h.scheme.data_cells] > 0))
    ok = (idx > i0) & (extra_gb > 0) & closes_mass
    ok &= extra_cost <= u * extra_gb * (1 + _TIE_RTOL) + 1e-18
    if not ok.any():
        return float(curve.candidates[i0])
    return float(curve.candidates[np.flatnonzero(ok)[-1]])


def marginal_cost_per_gb(h: HistogramSnapshot, network: float, storage: float, ttl: float) -> float:
    """Extra dollars per extra hit GB when moving from the best TTL up to ``ttl``."""
    curve = CostCurve(h, network, storage)
    i0 = curve.argmin()
    t0 = float(curve.candidates[i0])
    k = int(np.searchsorted(h.scheme.upper[: h.scheme.data_cells], ttl, side="right"))
    gained = float(curve.hit_bytes[k] - curve.hit_bytes[i0])
    if gained <= 0:
        return math.inf
    return (expected_cost(h, ttl, network, storage) - expected_cost(h, t0, network, storage)) / gained


# -- generations ----------------------------------------------------------------

class ScopeHistogram:
    """Statistics for one (bucket, region) scope with generation rotation.

    A rotation opens a fresh generation and keeps the previous one queryable
    (queries merge both) until the fresh one is older than ``retention``.
    """

    def __init__(self, scope=None, scheme: CellScheme = DEFAULT_SCHEME, started_at: float = 0.0):
        self.scope = scope
        self.scheme = scheme
        self.generations: list[TtlHistogram] = [TtlHistogram(scheme, started_at, scope)]

    @property
    def active(self) -> TtlHistogram:
        return self.generations[-1]

    def last_seen(self, key) -> tuple[float, float] | None:
        for gen in reversed(self.generations):
            if key in gen.last_access:
                return gen.last_access[key]
        return None

    def observe_get(self, key, size: float, t: float, remote: bool) -> float | None:
        """Fold one read into the active generation; returns the gap if it was a re-read."""
        prev = self.last_seen(key)
        gap = None
        if prev is not None:
            gap = t - prev[0]
            self.active.record_interarrival(size, gap)
        elif remote:
            self.active.remote_bytes += size
        self.active.last_access[key] = (t, size)
        return gap

    def rotate(self, now: float) -> tuple[TtlHistogram, TtlHistogram]:
        retiring = self.active
        self.generations = [retiring, TtlHistogram(self.scheme, now, self.scope)]
        return self.generations[-1], retiring

    def prune(self, now: float, retention: float) -> bool:
        """Drop the retiring generation once the active one has outlived ``retention``."""
        if len(self.generations) > 1 and now - self.active.started_at > retention:
            self.generations = [self.active]
            return True
        return False

    def merged_last(self) -> dict:
        out: dict = {}
        for gen in self.generations:
            out.update(gen.last_access)
        return out

    def snapshot(self, now: float) -> HistogramSnapshot:
        hist = sum((g.hist for g in self.generations), np.zeros(self.scheme.n_cells))
        remote = sum(g.remote_bytes for g in self.generations)
        return HistogramSnapshot(hist, build_last(self.scheme, self.merged_last(), now), remote, self.scheme)

    def has_mass(self) -> bool:
        return any(g.hist.any() or g.last_access for g in self.generations)


def dump_cells(snap: HistogramSnapshot):
    """Rows of ``cell_id, lower_s, upper_s, hist_bytes, last_bytes``."""
    sch = snap.scheme
    for j in range(sch.n_cells):
        yield j, float(sch.lower[j]), float(sch.upper[j]), float(snap.hist[j]), float(snap.last[j])
