"""Command line entry point: ``skysim {gen,analyze,simulate,compare,ttl-curve}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .catalog import Consistency, Mode
from .histogram import CostCurve, ScopeHistogram, dump_cells
from .policy import PLACEHOLDER_POLICIES, PolicyError, parse_duration, parse_policy
from .pricing import (
    PricingError,
    PricingTable,
    SECONDS_PER_MONTH,
    bundled_pricing,
    load_pricing_file,
    two_region,
)
from .sim import SimConfig, SimError, audit, run
from .trace import (
    GET,
    REGION_PRESETS,
    BaseCache,
    Trace,
    TraceError,
    analyze,
    expand_trace,
    parse_scheme,
    read_trace_file,
    scheme_label,
    synthesize,
    trace_to_csv,
)
from . import workloads

logger = logging.getLogger("skysim")

DEFAULT_PRICING = "pricing-9region"
COMPARE_HEADER = ("trace", "policy", "mode", "total_usd", "storage_usd", "network_usd", "byte_hit_ratio")


class UsageError(Exception):
    pass


# -- shared helpers -------------------------------------------------------------

def _setup_logging() -> None:
    level = os.environ.get("SKYSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _emit(doc: dict, stream=None) -> None:
    stream = stream or sys.stdout
    stream.write(json.dumps(doc, sort_keys=False) + "\n")


def _write_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _load_trace(path: str, horizon: str | None = None) -> Trace:
    if not Path(path).exists():
        raise UsageError(f"trace file not found: {path}")
    trace = read_trace_file(path)
    if horizon:
        trace = trace.with_horizon(parse_duration(horizon))
    return trace


def _load_pricing(source: str | None, trace: Trace | None = None) -> tuple[PricingTable, str]:
    """A file path, a bundled table name, or (when omitted) the bundled
    9-region table; a two-region trace outside it gets the default two-region rates."""
    if source:
        if Path(source).exists():
            return load_pricing_file(source), source
        try:
            return bundled_pricing(source), f"bundled:{source}"
        except FileNotFoundError:
            raise UsageError(f"pricing file not found: {source}") from None
    table = bundled_pricing(DEFAULT_PRICING)
    regions = sorted(trace.regions()) if trace is not None else []
    if all(r in table for r in regions):
        return table, f"bundled:{DEFAULT_PRICING}"
    if len(regions) == 2:
        return two_region(*regions), "two-region-default"
    if set(regions) <= {"A", "B"}:
        return two_region(), "two-region-default"
    raise UsageError(f"trace regions {regions} need an explicit --pricing file")


def _parse_eviction(text: str) -> float | None:
    if text == "exact":
        return None
    name, _, dur = text.partition(":")
    if name != "periodic" or not dur:
        raise UsageError(f"bad --eviction {text!r}; expected exact or periodic:<dur>")
    return parse_duration(dur)


def _sim_config(args) -> SimConfig:
    try:
        mode = Mode.parse(args.mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return SimConfig(
        mode=mode,
        consistency=Consistency(args.consistency),
        scan_interval=_parse_eviction(args.eviction),
        include_base_storage=args.include_base_storage,
        charge_ops=args.charge_ops,
        seed=args.seed,
        record_events=getattr(args, "audit", False),
    )


def _manifest(command: str, **fields) -> dict:
    return {"manifest": command, "version": __version__, **fields}


# -- gen ----------------------------------------------------------------------------

def _regions(text: str | None, scheme) -> list[str]:
    if text is None:
        if isinstance(scheme, BaseCache):
            return [scheme.base, scheme.cache]
        return list(REGION_PRESETS["1of-each"])
    if text in REGION_PRESETS:
        return list(REGION_PRESETS[text])
    return [r for r in text.split(",") if r]


def _source_trace(args) -> Trace:
    if args.trace:
        return _load_trace(args.trace)
    if args.workload == "hot-repeat":
        return workloads.hot_repeat(n_objects=args.objects, seed=args.seed)
    if args.workload == "one-hit":
        return workloads.one_hit(n_objects=args.objects, seed=args.seed)
    return workloads.random_base_cache(args.seed, 0.77 * SECONDS_PER_MONTH, max_objects=args.objects)


def cmd_gen(args) -> int:
    scheme = parse_scheme(args.scheme)
    regions = _regions(args.regions, scheme)
    source = _source_trace(args)
    trace = synthesize(expand_trace(source, args.dilation), scheme, regions, args.seed)
    text = trace_to_csv(trace)
    _write_text(args.out, text)
    if args.out not in (None, "-"):
        _emit(
            _manifest(
                "gen",
                scheme=scheme_label(scheme),
                regions=regions,
                seed=args.seed,
                dilation=args.dilation,
                source=args.trace or f"workload:{args.workload}",
                objects=None if args.trace else args.objects,
                requests=len(trace),
                horizon_s=trace.horizon,
                out=args.out,
                sha256=_sha256(text),
            )
        )
    return 0


# -- analyze --------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    trace = _load_trace(args.trace)
    doc = analyze(trace, parse_duration(args.bucket)).to_json()
    _write_text(args.out, json.dumps(doc, indent=2) + "\n")
    return 0


# -- simulate -------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    trace = _load_trace(args.trace, args.horizon)
    pricing, pricing_src = _load_pricing(args.pricing, trace)
    policy = parse_policy(args.policy)
    config = _sim_config(args)
    report = run(trace, pricing, policy, config)
    text = report.dumps()
    if args.audit:
        res = audit(report.events, pricing, config.include_base_storage, config.charge_ops)
        total = report.total_usd
        rel = abs(res.total_usd - total) / total if total else abs(res.total_usd)
        if rel > 1e-9:
            raise SimError(f"ledger audit mismatch: engine {total!r} vs audit {res.total_usd!r}")
    manifest = _manifest(
        "simulate",
        trace=args.trace,
        trace_sha256=_sha256(Path(args.trace).read_text()),
        pricing=pricing_src,
        policy=str(policy),
        mode=str(config.mode),
        consistency=config.consistency.value,
        eviction=config.eviction,
        include_base_storage=config.include_base_storage,
        seed=config.seed,
        horizon=args.horizon,
        out=args.out,
    )
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        _write_text(args.out, text)
        _emit(manifest)
        _emit({"total_usd": report.total_usd, "byte_hit_ratio": report.byte_hit_ratio})
    return 0


# -- compare ----------------------------------------------------------------------------

def _compare_one(job):
    trace_path, horizon, pricing_source, policy_text, config = job
    trace = _load_trace(trace_path, horizon)
    pricing, _ = _load_pricing(pricing_source, trace)
    report = run(trace, pricing, parse_policy(policy_text), config)
    led = report.ledger
    return (
        Path(trace_path).stem,
        str(parse_policy(policy_text)),
        str(config.mode),
        led.total_usd,
        led.storage_usd,
        led.network_usd,
        report.byte_hit_ratio,
    )


def _split(values: list[str]) -> list[str]:
    out = []
    for v in values:
        out.extend(x for x in v.split(";") if x)
    return out


def cmd_compare(args) -> int:
    traces = args.trace
    policies = _split(args.policy)
    for p in policies:
        parse_policy(p)
    ref = str(parse_policy(args.reference))
    config = _sim_config(args)
    jobs = [(t, args.horizon, args.pricing, p, config) for t in traces for p in policies]

    rows, failure = [], None
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_compare_one, j) for j in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    rows.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported below
                    failure = failure or (job, exc)
    else:
        for job in jobs:
            try:
                rows.append(_compare_one(job))
            except Exception as exc:  # noqa: BLE001
                failure = (job, exc)
                break

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_HEADER)
    for r in rows:
        w.writerow([r[0], r[1], r[2], repr(r[3]), repr(r[4]), repr(r[5]), repr(r[6])])
    _write_text(args.out, buf.getvalue())

    ratio_text = _ratio_table(rows, ref)
    if args.ratio_out:
        _write_text(args.ratio_out, ratio_text)
    elif args.out not in (None, "-"):
        sys.stdout.write(ratio_text)

    if failure is not None:
        (tpath, _, _, pol, _), exc = failure
        _emit(
            {"error": type(exc).__name__, "message": str(exc), "trace": tpath, "policy": pol,
             "partial": True, "rows_written": len(rows)},
            sys.stderr,
        )
        return 1
    return 0


def _ratio_table(rows, reference: str) -> str:
    """Cost of each policy divided by the reference policy's cost, per trace.

    Methods that are named for comparison but not simulated get empty columns.
    """
    policies = []
    for r in rows:
        if r[1] not in policies:
            policies.append(r[1])
    cost = {(r[0], r[1]): r[3] for r in rows}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace", *policies, *PLACEHOLDER_POLICIES])
    traces = []
    for r in rows:
        if r[0] not in traces:
            traces.append(r[0])
    for t in traces:
        base = cost.get((t, reference))
        cells = []
        for p in policies:
            c = cost.get((t, p))
            if c is None or base is None:
                cells.append("")
            elif base == 0:
                cells.append("1.0" if c == 0 else "inf")
            else:
                cells.append(repr(c / base))
        w.writerow([t, *cells, *([""] * len(PLACEHOLDER_POLICIES))])
    return buf.getvalue()


# -- ttl-curve ------------------------------------------------------------------------

def cmd_ttl_curve(args) -> int:
    trace = _load_trace(args.trace, args.horizon)
    pricing, _ = _load_pricing(args.pricing, trace)
    readers = sorted({r.region for r in trace.requests if r.op == GET})
    region = args.region or (readers[0] if len(readers) == 1 else None)
    if region is None:
        raise UsageError(f"pick a scope with --region (GET regions: {readers})")
    if region not in pricing:
        raise UsageError(f"region {region!r} is not in the pricing table")
    others = [r for r in pricing.regions if r != region]
    src = args.src or (min(others, key=lambda r: (pricing.network(r, region), r)) if others else None)
    if src is None or src not in pricing or src == region:
        raise UsageError("need a source region different from --region")
    network, storage = pricing.network(src, region), pricing.storage(region)

    scope = ScopeHistogram((args.bucket, region))
    for r in trace.requests:
        if r.op == GET and r.region == region:
            scope.observe_get(r.key, r.size, r.t, remote=True)
    snap = scope.snapshot(trace.horizon)
    curve = CostCurve(snap, network, storage)
    best = curve.argmin()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ttl_s", "ttl_months", "expected_cost_usd", "is_min"])
    for i, (ttl, c) in enumerate(zip(curve.candidates, curve.costs)):
        w.writerow([repr(float(ttl)), repr(float(ttl) / SECONDS_PER_MONTH), repr(float(c)), int(i == best)])
    _write_text(args.out, buf.getvalue())

    if args.hist_out:
        hb = io.StringIO()
        hw = csv.writer(hb, lineterminator="\n")
        hw.writerow(["cell", "lower_s", "upper_s", "hist_bytes", "last_bytes"])
        for row in dump_cells(snap):
            hw.writerow([row[0], *(repr(v) for v in row[1:])])
        _write_text(args.hist_out, hb.getvalue())
    if args.out not in (None, "-"):
        _emit(
            _manifest(
                "ttl-curve", trace=args.trace, region=region, src=src, network=network, storage=storage,
                best_ttl_s=float(curve.candidates[best]), best_cost_usd=float(curve.costs[best]),
            )
        )
    return 0


# -- parser ---------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pricing", help="pricing JSON file or bundled table name (default: pricing-9region)")
    p.add_argument("--mode", default="fb", help="fb or fp:<k> (default: fb)")
    p.add_argument("--consistency", choices=["raw", "eventual"], default="raw")
    p.add_argument("--eviction", default="exact", help="exact or periodic:<dur>")
    p.add_argument("--include-base-storage", action="store_true")
    p.add_argument("--charge-ops", action="store_true", help="bill per-request operation fees")
    p.add_argument("--horizon", help="extend the trace end to this duration, e.g. 90d")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skysim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"skysim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="synthesize a multi-region workload CSV")
    g.add_argument("--trace", help="source trace CSV (default: a built-in synthetic workload)")
    g.add_argument("--workload", choices=workloads.WORKLOADS, default="random")
    g.add_argument("--objects", type=int, default=20)
    g.add_argument("--scheme", required=True, help="base-cache:<b>,<c> | type-a | type-b | type-c:<r> | type-d")
    g.add_argument("--regions", help="comma list or preset: " + ", ".join(REGION_PRESETS))
    g.add_argument("--dilation", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output CSV (default: stdout)")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analyze", help="workload characterization as JSON")
    a.add_argument("--trace", required=True)
    a.add_argument("--bucket", default="30d", help="time bucket for burstiness (default: 30d)")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run one policy over one trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--policy", required=True)
    s.add_argument("--out", help="report JSON (default: stdout)")
    s.add_argument("--audit", action="store_true", help="re-derive the bill from the event log and check it")
    _add_run_flags(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run every (trace, policy) pair")
    c.add_argument("--trace", required=True, action="append", help="repeatable")
    c.add_argument("--policy", required=True, action="append", help="repeatable; ';' also separates")
    c.add_argument("--reference", default="adaptive", help="policy the ratio table is normalized by")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--out", help="comparison CSV (default: stdout)")
    c.add_argument("--ratio-out", help="ratio table CSV (default: stdout after the summary)")
    _add_run_flags(c)
    c.set_defaults(func=cmd_compare)

    t = sub.add_parser("ttl-curve", help="expected cost at every TTL candidate for one scope")
    t.add_argument("--trace", required=True)
    t.add_argument("--pricing")
    t.add_argument("--region", help="scope region (default: the trace's only GET region)")
    t.add_argument("--src", help="source region for the network rate (default: cheapest into --region)")
    t.add_argument("--bucket", default="default")
    t.add_argument("--horizon")
    t.add_argument("--out")
    t.add_argument("--hist-out", help="also dump the histogram cells as CSV")
    t.set_defaults(func=cmd_ttl_curve)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, TraceError, PricingError, PolicyError, SimError, ValueError, OSError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc), "command": args.command}, sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
