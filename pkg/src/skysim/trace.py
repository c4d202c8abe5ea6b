"""Object-store request traces: CSV ingestion, time dilation, multi-region
synthesis and workload characterization."""

from __future__ import annotations

import csv
import io
import logging
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence

import numpy as np

from .pricing import SECONDS_PER_DAY, Region

logger = logging.getLogger(__name__)

GET, PUT, DELETE, HEAD = "GET", "PUT", "DELETE", "HEAD"
OPS = (GET, PUT, DELETE, HEAD)
CSV_HEADER = ("t_ms", "op", "key", "size_bytes", "region")


class TraceError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Request:
    t: float  # seconds
    op: str
    key: str
    size: int
    region: Region | None = None


@dataclass(frozen=True)
class Trace:
    requests: tuple[Request, ...]
    horizon: float = 0.0

    def __post_init__(self):
        reqs = tuple(self.requests)
        object.__setattr__(self, "requests", reqs)
        last = reqs[-1].t if reqs else 0.0
        if self.horizon < last:
            object.__setattr__(self, "horizon", last)
        for a, b in zip(reqs, reqs[1:]):
            if b.t < a.t:
                raise TraceError("trace requests must be sorted by time")

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def regions(self) -> set[Region]:
        return {r.region for r in self.requests if r.region is not None}

    def with_horizon(self, horizon: float) -> "Trace":
        return Trace(self.requests, max(horizon, self.horizon))


@dataclass
class ImportReport:
    rows: int = 0
    repairs: int = 0
    reordered: bool = False
    size_mismatches: int = 0
    repaired_keys: list[str] = field(default_factory=list)


# -- ingestion ---------------------------------------------------------------

def import_trace(source: str | bytes | IO, report: ImportReport | None = None) -> Trace:
    """Parse the canonical ``t_ms,op,key,size_bytes,region`` CSV.

    GET/HEAD of a key with no earlier PUT gets a synthetic PUT at t=0 carrying
    the read's size; the count lands in ``report.repairs``.
    """
    if report is None:
        report = ImportReport()
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")

    reader = csv.reader(io.StringIO(source))
    rows = []
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if not header_seen:
            header_seen = True
            if [c.strip() for c in row[:4]] == list(CSV_HEADER[:4]):
                continue
            raise TraceError(f"line {lineno}: expected header {','.join(CSV_HEADER)}")
        if len(row) not in (4, 5):
            raise TraceError(f"line {lineno}: expected 4 or 5 fields, got {len(row)}")
        t_ms, op, key, size = (c.strip() for c in row[:4])
        region = row[4].strip() if len(row) == 5 else ""
        op = op.upper()
        if op not in OPS:
            raise TraceError(f"line {lineno}: unknown op {op!r}")
        if not key:
            raise TraceError(f"line {lineno}: empty key")
        try:
            t = float(t_ms) / 1000.0
            nbytes = int(size) if size else 0
        except ValueError as exc:
            raise TraceError(f"line {lineno}: {exc}") from None
        if t < 0 or nbytes < 0:
            raise TraceError(f"line {lineno}: negative time or size")
        rows.append(Request(t, op, key, nbytes, region or None))

    report.rows = len(rows)
    if any(b.t < a.t for a, b in zip(rows, rows[1:])):
        logger.warning("trace timestamps are not monotone; stably sorting %d rows", len(rows))
        report.reordered = True
        rows.sort(key=lambda r: r.t)

    put_size: dict[str, int] = {}
    synthetic: list[Request] = []
    for r in rows:
        if r.op == PUT:
            put_size[r.key] = r.size
        elif r.op in (GET, HEAD) and r.key not in put_size:
            # week-long windows truncate lifetimes; assume the object predates the trace
            synthetic.append(Request(0.0, PUT, r.key, r.size, r.region))
            put_size[r.key] = r.size
            report.repairs += 1
            report.repaired_keys.append(r.key)
        elif r.op == GET and put_size[r.key] != r.size:
            report.size_mismatches += 1
    return Trace(tuple(synthetic) + tuple(rows))


def read_trace_file(path, report: ImportReport | None = None) -> Trace:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return import_trace(fh, report)


def _fmt_ms(t: float) -> str:
    ms = t * 1000.0
    r = round(ms)
    return str(int(r)) if abs(ms - r) < 1e-6 else repr(ms)


def write_trace(trace: Trace, out: IO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in trace.requests:
        w.writerow((_fmt_ms(r.t), r.op, r.key, r.size, r.region or ""))


def trace_to_csv(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


# -- time expansion ----------------------------------------------------------

def expand_trace(trace: Trace, dilation: float) -> Trace:
    """Stretch the time axis by ``dilation`` (30 maps a day onto a month)."""
    if not dilation >= 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if dilation == 1:
        return trace
    return Trace(
        tuple(replace(r, t=r.t * dilation) for r in trace.requests),
        trace.horizon * dilation,
    )


# -- multi-region synthesis --------------------------------------------------

@dataclass(frozen=True)
class BaseCache:
    base: Region
    cache: Region


@dataclass(frozen=True)
class TypeA:
    """Uniform: every request lands in a uniformly random region."""


@dataclass(frozen=True)
class TypeB:
    """Region-aware: one PUT region and a different GET region per object."""


@dataclass(frozen=True)
class TypeC:
    """Aggregation: PUTs spread across regions, all GETs at ``get_region``."""

    get_region: Region


@dataclass(frozen=True)
class TypeD:
    """Replication: one PUT region per object, GETs spread over the others."""


Scheme = BaseCache | TypeA | TypeB | TypeC | TypeD


def synthesize(trace: Trace, scheme: Scheme, regions: Sequence[Region], seed: int) -> Trace:
    """Assign a region to every request according to ``scheme``.

    Times, ops, keys and sizes are left untouched. Random draws come from a
    private ``random.Random(seed)`` and are taken in request order, so the
    output is a pure function of the arguments.
    """
    regions = list(regions)
    if len(regions) < 2:
        raise TraceError("synthesis needs at least two regions")
    if len(set(regions)) != len(regions):
        raise TraceError("duplicate regions")
    if isinstance(scheme, BaseCache):
        for r in (scheme.base, scheme.cache):
            if r not in regions:
                raise TraceError(f"unknown region {r!r} in scheme")
        if scheme.base == scheme.cache:
            raise TraceError("base and cache regions must differ")
    if isinstance(scheme, TypeC) and scheme.get_region not in regions:
        raise TraceError(f"unknown region {scheme.get_region!r} in scheme")

    rng = random.Random(seed)
    put_region: dict[str, Region] = {}
    get_region: dict[str, Region] = {}

    def home(key: str) -> Region:
        if key not in put_region:
            put_region[key] = rng.choice(regions)
        return put_region[key]

    out = []
    for r in trace.requests:
        write = r.op in (PUT, DELETE)
        if isinstance(scheme, BaseCache):
            region = scheme.base if write else scheme.cache
        elif isinstance(scheme, TypeA):
            region = rng.choice(regions)
        elif isinstance(scheme, TypeB):
            p = home(r.key)
            if r.key not in get_region:
                get_region[r.key] = rng.choice([x for x in regions if x != p])
            region = p if write else get_region[r.key]
        elif isinstance(scheme, TypeC):
            region = home(r.key) if write else scheme.get_region
        elif isinstance(scheme, TypeD):
            p = home(r.key)
            region = p if write else rng.choice([x for x in regions if x != p])
        else:
            raise TraceError(f"unknown scheme {scheme!r}")
        out.append(replace(r, region=region))
    return Trace(tuple(out), trace.horizon)


# Region sets used for the multi-cloud experiments: 1, 2 or 3 regions per provider.
REGION_PRESETS = {
    "1of-each": ("aws:us-east-1", "azure:eastus", "gcp:us-east1-b"),
    "2of-each": (
        "aws:us-east-1", "aws:us-west-2",
        "azure:eastus", "azure:westus",
        "gcp:us-east1-b", "gcp:us-west1-a",
    ),
    "3of-each": (
        "aws:us-east-1", "aws:us-west-2", "aws:eu-west-1",
        "azure:eastus", "azure:westus", "azure:westeurope",
        "gcp:us-east1-b", "gcp:us-west1-a", "gcp:europe-west1-b",
    ),
}


def parse_scheme(text: str) -> Scheme:
    """``base-cache:A,B`` | ``type-a`` | ``type-b`` | ``type-c:<region>`` | ``type-d``."""
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    if name == "base-cache":
        parts = [p for p in arg.split(",") if p]
        if len(parts) != 2:
            raise TraceError("base-cache needs two regions: base-cache:<base>,<cache>")
        return BaseCache(parts[0], parts[1])
    if name == "type-c":
        if not arg:
            raise TraceError("type-c needs a GET region: type-c:<region>")
        return TypeC(arg)
    if arg:
        raise TraceError(f"scheme {name!r} takes no argument")
    simple = {"type-a": TypeA, "type-b": TypeB, "type-d": TypeD}
    if name not in simple:
        raise TraceError(f"unknown scheme {text!r}")
    return simple[name]()


def scheme_label(scheme: Scheme) -> str:
    if isinstance(scheme, BaseCache):
        return f"base-cache:{scheme.base},{scheme.cache}"
    if isinstance(scheme, TypeC):
        return f"type-c:{scheme.get_region}"
    return {TypeA: "type-a", TypeB: "type-b", TypeD: "type-d"}[type(scheme)]


def as_base_cache(trace: Trace) -> BaseCache | None:
    """The (base, cache) pair if the trace is a two-region base/cache workload."""
    puts = {r.region for r in trace.requests if r.op in (PUT, DELETE)}
    reads = {r.region for r in trace.requests if r.op in (GET, HEAD)}
    if len(puts) > 1 or len(reads) > 1 or None in puts | reads:
        return None
    if not puts or not reads:
        return None
    base, cache = next(iter(puts)), next(iter(reads))
    return BaseCache(base, cache) if base != cache else None


# -- characterization --------------------------------------------------------

KB, MB, GB = 1_000, 1_000_000, 1_000_000_000
SIZE_CLASSES = ("tiny", "small", "medium", "large")
FREQ_CLASSES = ("one-hit", "cold", "warm", "hot", "super-hot")


def size_class(nbytes: int) -> str:
    if nbytes < KB:
        return "tiny"
    if nbytes < MB:
        return "small"
    if nbytes <= GB:
        return "medium"
    return "large"


def freq_class(gets: int) -> str | None:
    if gets <= 0:
        return None
    if gets == 1:
        return "one-hit"
    if gets <= 10:
        return "cold"
    if gets <= 100:
        return "warm"
    if gets <= 1000:
        return "hot"
    return "super-hot"


@dataclass
class TraceStats:
    size_classes: dict[str, float]
    freq_classes: dict[str, float]
    recency: dict[str, float]
    gets: int
    puts: int
    deletes: int
    heads: int
    burstiness: list[float]
    bucket_seconds: float
    objects: int

    def to_json(self) -> dict:
        return {
            "objects": self.objects,
            "requests": {"get": self.gets, "put": self.puts, "delete": self.deletes, "head": self.heads},
            "size_classes": self.size_classes,
            "freq_classes": self.freq_classes,
            "recency_s": self.recency,
            "burstiness": {"bucket_seconds": self.bucket_seconds, "get_fraction": self.burstiness},
        }


def _fractions(counter: Counter, classes: Iterable[str]) -> dict[str, float]:
    total = sum(counter.values())
    return {c: (counter[c] / total if total else 0.0) for c in classes}


def analyze(trace: Trace, bucket_seconds: float = 30 * SECONDS_PER_DAY) -> TraceStats:
    first_size: dict[str, int] = {}
    get_count: Counter = Counter()
    last_get: dict[str, float] = {}
    gaps: list[float] = []
    ops = Counter(r.op for r in trace.requests)
    get_times = []
    for r in trace.requests:
        if r.op == PUT and r.key not in first_size:
            first_size[r.key] = r.size
        if r.op == GET:
            first_size.setdefault(r.key, r.size)
            get_count[r.key] += 1
            get_times.append(r.t)
            if r.key in last_get:
                gaps.append(r.t - last_get[r.key])
            last_get[r.key] = r.t

    sizes = Counter(size_class(s) for s in first_size.values())
    freqs = Counter(freq_class(n) for n in get_count.values())

    if gaps:
        g = np.asarray(gaps)
        recency = {
            "count": float(len(g)),
            "mean": float(g.mean()),
            "p50": float(np.percentile(g, 50)),
            "p90": float(np.percentile(g, 90)),
            "max": float(g.max()),
            "within_day": float((g <= SECONDS_PER_DAY).mean()),
            "within_month": float((g <= 30 * SECONDS_PER_DAY).mean()),
        }
    else:
        recency = {"count": 0.0}

    burst: list[float] = []
    if get_times:
        nb = max(1, int(np.ceil(max(trace.horizon, 1e-9) / bucket_seconds)))
        idx = np.minimum((np.asarray(get_times) // bucket_seconds).astype(int), nb - 1)
        counts = np.bincount(idx, minlength=nb)
        burst = (counts / counts.sum()).tolist()

    return TraceStats(
        size_classes=_fractions(sizes, SIZE_CLASSES),
        freq_classes=_fractions(freqs, FREQ_CLASSES),
        recency=recency,
        gets=ops[GET],
        puts=ops[PUT],
        deletes=ops[DELETE],
        heads=ops[HEAD],
        burstiness=burst,
        bucket_seconds=bucket_seconds,
        objects=len(first_size),
    )

