"""fixpool command line: check, stress, capacity, bench.

Every metric is one JSON object per line (``{metric, value, unit,
config_hash}``) or one CSV row with that header. Exit status is 0 when all
checks pass, 1 on a property violation and 2 on an invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from typing import Iterable, TextIO

from .allocator import ConfigError, PoolConfig
from .checker import AllocatorSubject, Bounds, StackSubject, explore, read_schedule, write_schedule
from .checker.explore import execute
from .workloads import bench, capacity, stress

log = logging.getLogger("fixpool")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
FIELDS = ("metric", "value", "unit", "config_hash")


class Emitter:
    def __init__(self, fh: TextIO, fmt: str, config_hash: str) -> None:
        self.fh, self.fmt, self.hash = fh, fmt, config_hash
        self._csv = None
        if fmt == "csv":
            self._csv = csv.writer(fh, lineterminator="\n")
            self._csv.writerow(FIELDS)

    def __call__(self, metric: str, value, unit: str = "") -> None:
        if self._csv is not None:
            self._csv.writerow((metric, value, unit, self.hash))
        else:
            row = dict(zip(FIELDS, (metric, value, unit, self.hash)))
            self.fh.write(json.dumps(row) + "\n")
        self.fh.flush()


def config_hash(args: argparse.Namespace) -> str:
    skip = {"out", "format", "func"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:12]


def pool_config(args: argparse.Namespace) -> PoolConfig:
    cfg = PoolConfig(args.p, k=args.k, ell=args.ell, m=args.m)
    cfg.validate()
    return cfg


def default_scripts(kind: str, p: int, ops: int) -> list[str]:
    """Alternating op scripts; even processes start with push/allocate."""
    first, second = ("u", "o") if kind == "stack" else ("a", "f")
    return [
        "".join((first, second)[(i + pid) % 2] for i in range(ops))
        for pid in range(p)
    ]


def _subject_factory(kind: str, scripts: list[str], mutant: bool, ell: int | None):
    cls = StackSubject if kind == "stack" else AllocatorSubject
    guard = not mutant

    def make():
        return cls(scripts, guard_reads=guard, ell=ell)

    return make


def cmd_check(args: argparse.Namespace, emit: Emitter) -> int:
    if args.replay:
        with open(args.replay) as fh:
            schedule, meta = read_schedule(fh)
        kind = meta.get("subject", args.subject)
        scripts = meta["scripts"].split(",") if "scripts" in meta else None
        mutant = meta.get("mutant", str(args.mutant)) == "True"
        ell = int(meta["ell"]) if meta.get("ell", "None") != "None" else args.ell
    else:
        kind, scripts, mutant, ell = args.subject, None, args.mutant, args.ell
    if scripts is None:
        scripts = args.scripts.split(",") if args.scripts else default_scripts(kind, args.p, args.ops)
    PoolConfig(len(scripts), k=args.k, ell=ell, m=10**9).validate()
    make = _subject_factory(kind, scripts, mutant, ell)

    if args.replay:
        subject, run = execute(make, schedule, args.budget)
        problems = subject.check(run)
        for msg in problems:
            log.error("violation: %s", msg)
        emit("replay_decisions", len(run.choices), "decisions")
        emit("violations", len(problems), "count")
        return EXIT_VIOLATION if problems else EXIT_OK

    bounds = Bounds(
        preemptions=None if args.preemptions < 0 else args.preemptions,
        max_schedules=args.max_schedules,
        samples=args.samples,
        seed=args.seed,
        budget=args.budget,
    )
    log.info("exploring %s subject, scripts %s, bounds %s", kind, scripts, bounds)
    report = explore(make, bounds, stop_on_first=args.stop_on_first)
    emit("schedules_explored", report.explored, "schedules")
    emit("exhaustive", report.exhaustive, "bool")
    emit("schedules_sampled", report.sampled, "schedules")
    emit("max_schedule_length", report.max_length, "decisions")
    emit("violations", len(report.violations), "schedules")
    if report.violations:
        bad = report.violations[0]
        for msg in bad.messages:
            log.error("schedule %d: %s", bad.index, msg)
        if args.dump:
            meta = {"subject": kind, "scripts": ",".join(scripts), "mutant": mutant, "ell": ell}
            if bad.seed is not None:
                meta["seed"] = bad.seed
            with open(args.dump, "w") as fh:
                write_schedule(fh, bad.schedule, meta)
            log.info("failing schedule written to %s", args.dump)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_stress(args: argparse.Namespace, emit: Emitter) -> int:
    cfg = pool_config(args)
    rep = stress(cfg, args.ops, args.seed, guard_reads=not args.mutant)
    for msg in rep.violations[:20]:
        log.error("violation: %s", msg)
    emit("violations", len(rep.violations), "count")
    emit("throughput", round(rep.throughput, 1), "ops/s")
    emit("seconds", round(rep.seconds, 3), "s")
    emit("max_delayed_steps", rep.max_steps, "steps")
    emit("max_stack_op_node_allocs", rep.max_op_allocs, "calls")
    emit("max_stack_op_node_frees", rep.max_op_frees, "calls")
    emit("max_stack_op_units", rep.max_op_units, "accesses")
    emit("private_min", rep.private_range[0], "blocks")
    emit("private_max", rep.private_range[1], "blocks")
    emit("node_surplus", rep.node_surplus, "nodes")
    emit("exhausted", rep.exhausted, "count")
    return EXIT_VIOLATION if rep.violations else EXIT_OK


def cmd_capacity(args: argparse.Namespace, emit: Emitter) -> int:
    cfg = pool_config(args)
    rep = capacity(cfg, args.seed)
    emit("live_blocks", rep.live, "blocks")
    emit("bound", rep.bound, "blocks")
    emit("node_overhead", rep.node_overhead, "blocks")
    emit("stranded", rep.stranded, "blocks")
    emit("leftover", rep.leftover, "blocks")
    return EXIT_OK if rep.ok else EXIT_VIOLATION


def cmd_bench(args: argparse.Namespace, emit: Emitter) -> int:
    ps = args.ps or [args.p]
    for p in ps:
        cfg = PoolConfig(p, k=args.k, ell=args.ell, m=args.m)
        cfg.validate()
        row = bench(cfg, args.ops, args.seed)
        emit(f"p{p}.throughput", round(row.throughput, 1), "ops/s")
        emit(f"p{p}.seconds", round(row.seconds, 3), "s")
        for bucket, count in sorted(row.latency_ns.items()):
            emit(f"p{p}.latency_le_{bucket}ns", count, "samples")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--p", type=int, default=2, help="number of processes")
    common.add_argument("--k", type=int, default=2, help="words per block")
    common.add_argument("--ell", type=int, default=None, help="batch size (default 3p)")
    common.add_argument("--m", type=int, default=4096, help="arena size in blocks")
    common.add_argument("--ops", type=int, default=None, help="operations per process")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--budget", type=int, default=100_000, help="scheduling decisions per execution")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--out", default=None, help="write metrics here instead of stdout")
    common.add_argument("--mutant", action="store_true", help="drop the validation after reading a node")

    parser = argparse.ArgumentParser(prog="fixpool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", parents=[common], help="enumerate schedules on the simulated backend")
    check.add_argument("--subject", choices=("stack", "allocator"), default="stack")
    check.add_argument("--scripts", default=None, help="comma-separated per-process scripts, e.g. uo,oo")
    check.add_argument("--preemptions", type=int, default=2, help="preemption bound; negative = unbounded")
    check.add_argument("--max-schedules", type=int, default=None)
    check.add_argument("--samples", type=int, default=200, help="random schedules if the search is cut off")
    check.add_argument("--stop-on-first", action="store_true")
    check.add_argument("--replay", default=None, help="re-run one schedule file")
    check.add_argument("--dump", default=None, help="write the first failing schedule here")
    check.set_defaults(func=cmd_check, ops_default=2)

    st = sub.add_parser("stress", parents=[common], help="threaded native run with occupancy checks")
    st.set_defaults(func=cmd_stress, ops_default=100_000)

    cap = sub.add_parser("capacity", parents=[common], help="live blocks reachable under a hoarding adversary")
    cap.set_defaults(func=cmd_capacity, ops_default=0)

    be = sub.add_parser("bench", parents=[common], help="throughput and latency histogram")
    be.add_argument("--ps", type=int, nargs="*", default=None, help="process counts to sweep")
    be.set_defaults(func=cmd_bench, ops_default=100_000)
    return parser


def main(argv: Iterable[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("FIXPOOL_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    args = parser.parse_args(None if argv is None else list(argv))
    if args.ops is None:
        args.ops = args.ops_default
    del args.ops_default
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        emit = Emitter(out, args.format, config_hash(args))
        return args.func(args, emit)
    except ConfigError as exc:
        print(f"fixpool: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if out is not sys.stdout:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
