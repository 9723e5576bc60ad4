"""Command-line driver: generate traces, replay them, compare policies,
sweep crash points and inspect committed metadata.

Exit codes: 0 success, 1 verification or consistency failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .device import ZonedDevice
from .errors import CorruptMetadata, InvalidConfig, InvalidParams, ValetError, VerificationFailure
from .fsck import fsck
from .metadata import MetadataStore
from .vfs import Mode
from .workload.generators import GENERATORS
from .workload.policies import POLICIES
from .workload.replay import (
    DEFAULT_GEOMETRY,
    Testbed,
    crash_sweep,
    parse_geometry,
    random_crash_points,
    replay,
)
from .workload.trace import census, read_trace, write_trace

REPORT_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

TABLE_COLUMNS = (
    ("policy", "policy"),
    ("waf", "WAF"),
    ("gc_calls", "gc_calls"),
    ("gc_bytes_moved", "bytes_moved"),
    ("zones_reset_without_move", "free_resets"),
    ("end_free_zones", "free_zones_end"),
    ("class_purity", "purity"),
    ("interleaving_violations", "violations"),
)


GEN_OPTIONS = ("key_size", "value_size", "fifo_retention", "compaction_fanin", "wal_segment_bytes",
               "sst_bytes", "set_fraction")


class UsageError(Exception):
    pass


def default_seed():
    try:
        return int(os.environ.get("VALET_SEED", "0"))
    except ValueError:
        raise UsageError("VALET_SEED must be an integer") from None


def dump_json(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def format_table(rows, columns=TABLE_COLUMNS):
    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)

    header = [title for _, title in columns]
    body = [[cell(row[key]) for key, _ in columns] for row in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def _trace_info(path, ops):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return {"name": Path(path).name, "ops": len(ops), "sha256": digest.hexdigest()}


def _testbed(args, policy) -> Testbed:
    try:
        geometry = parse_geometry(args.device_geometry)
    except (ValueError, InvalidConfig) as exc:
        raise UsageError(str(exc)) from None
    return Testbed(policy=policy, device=geometry, mode=Mode(args.mode), stream_budget=args.stream_budget,
                   gc_free_zone_threshold=args.gc_threshold, seed=args.seed)


def _testbed_json(tb: Testbed):
    doc = {f.name: getattr(tb, f.name) for f in fields(tb) if f.name not in ("rules", "device", "mode")}
    doc["device"] = asdict(tb.device)
    doc["mode"] = tb.mode.value
    return doc


def _load_trace(path):
    try:
        return read_trace(path)
    except FileNotFoundError:
        raise UsageError(f"no such trace: {path}") from None
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"{path}: not a trace file ({exc})") from None


# commands

def cmd_gen(args):
    params_cls, gen = GENERATORS[args.kind]
    overrides = {}
    known = {f.name for f in fields(params_cls)}
    for name in GEN_OPTIONS:
        value = getattr(args, name)
        if value is None:
            continue
        if name not in known:
            raise UsageError(f"--{name.replace('_', '-')} does not apply to {args.kind} traces")
        overrides[name] = value
    if args.ops is not None:
        overrides["op_count"] = args.ops
    try:
        ops = gen(params_cls(**overrides), seed=args.seed)
    except InvalidParams as exc:
        raise UsageError(str(exc)) from None
    out = args.out or f"{args.kind}-{args.seed}.jsonl"
    write_trace(out, ops)
    summary = census(ops)
    print(f"wrote {len(ops)} ops to {out}")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_replay(args):
    ops = _load_trace(args.trace)
    tb = _testbed(args, args.policy)
    if args.state_dir:
        Path(args.state_dir).mkdir(parents=True, exist_ok=True)
    try:
        metrics = replay(ops, tb, crash_at=args.crash_at, workdir=args.state_dir)
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = {
        "report_version": REPORT_VERSION,
        "command": "replay",
        "trace": _trace_info(args.trace, ops),
        "testbed": _testbed_json(tb),
        "crash_at": args.crash_at,
        "metrics": metrics.to_json(),
    }
    if args.report:
        dump_json(report, args.report)
    print(format_table([metrics.to_json()]))
    if args.crash_at is not None:
        check = metrics.crash_checks[-1]
        print(f"crash at op {args.crash_at}: recovered {check['files']} durable files, verified")
    return EXIT_OK


def cmd_compare(args):
    ops = _load_trace(args.trace)
    rows = []
    for policy in args.policies:
        tb = _testbed(args, policy)
        try:
            rows.append(replay(ops, tb).to_json())
        except VerificationFailure as exc:
            print(f"verification failure under {policy}: {exc}", file=sys.stderr)
            return EXIT_FAIL
    report = {
        "report_version": REPORT_VERSION,
        "command": "compare",
        "trace": _trace_info(args.trace, ops),
        "testbed": _testbed_json(_testbed(args, args.policies[0])),
        "rows": rows,
    }
    if args.out:
        dump_json(report, args.out)
    print(format_table(rows))
    return EXIT_OK


def cmd_sweep(args):
    ops = _load_trace(args.trace)
    tb = _testbed(args, args.policy)
    points = random_crash_points(len(ops), args.points, seed=args.seed)
    try:
        checks = crash_sweep(ops, points, tb)
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    report = {
        "report_version": REPORT_VERSION,
        "command": "sweep",
        "trace": _trace_info(args.trace, ops),
        "testbed": _testbed_json(tb),
        "checks": [asdict(c) for c in checks],
    }
    if args.report:
        dump_json(report, args.report)
    print(f"{len(checks)} crash points recovered and verified")
    return EXIT_OK


def cmd_dumpmeta(args):
    try:
        doc = MetadataStore(args.meta_dir).load()
    except CorruptMetadata as exc:
        print(f"corrupt metadata: {exc}", file=sys.stderr)
        return EXIT_FAIL
    dump_json(doc if doc is not None else {})
    return EXIT_OK


def cmd_fsck(args):
    device = None
    if args.device_snapshot:
        try:
            device = ZonedDevice.load(args.device_snapshot)
        except FileNotFoundError:
            raise UsageError(f"no such device image: {args.device_snapshot}") from None
    report = fsck(args.meta_dir, device)
    dump_json(report.to_json())
    return EXIT_OK if report.clean else EXIT_FAIL


# parser

def _add_testbed_args(p, policy=True):
    if policy:
        p.add_argument("--policy", choices=POLICIES, default="valet")
    p.add_argument("--device-geometry", default=DEFAULT_GEOMETRY,
                   help="zones x capacity[/max open zones], e.g. 64x1MiB/14")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.HOST_MANAGED.value)
    p.add_argument("--stream-budget", type=int, default=8)
    p.add_argument("--gc-threshold", type=int, default=4, help="free zones below which GC runs")
    p.add_argument("--seed", type=int, default=None, help="defaults to $VALET_SEED or 0")


def build_parser():
    parser = argparse.ArgumentParser(prog="valet", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a trace")
    p.add_argument("kind", choices=sorted(GENERATORS))
    p.add_argument("--ops", type=int, help="operation count (puts / cache ops / journal records)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output path (.jsonl or .jsonl.gz)")
    p.add_argument("--key-size", type=int)
    p.add_argument("--value-size", type=int)
    p.add_argument("--fifo-retention", type=int)
    p.add_argument("--compaction-fanin", type=int)
    p.add_argument("--wal-segment-bytes", type=int)
    p.add_argument("--sst-bytes", type=int)
    p.add_argument("--set-fraction", type=float)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("replay", help="replay a trace and report metrics")
    p.add_argument("--trace", required=True)
    _add_testbed_args(p)
    p.add_argument("--crash-at", type=int, help="cut power before this op and verify recovery")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--state-dir", help="keep metadata and a device image here for dumpmeta/fsck")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compare", help="replay one trace under several policies")
    p.add_argument("--trace", required=True)
    p.add_argument("--policies", nargs="+", choices=POLICIES, default=["valet", "valet-learn", "single"])
    _add_testbed_args(p, policy=False)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="verify recovery at random crash points")
    p.add_argument("--trace", required=True)
    p.add_argument("--points", type=int, default=100)
    _add_testbed_args(p)
    p.add_argument("--report")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dumpmeta", help="print committed metadata")
    p.add_argument("--meta-dir", required=True)
    p.set_defaults(func=cmd_dumpmeta)

    p = sub.add_parser("fsck", help="check committed metadata against a device image")
    p.add_argument("--meta-dir", required=True)
    p.add_argument("--device-snapshot")
    p.set_defaults(func=cmd_fsck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = default_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidConfig, InvalidParams) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValetError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
