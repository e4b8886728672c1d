"""Batch-oriented command line front end.

Subcommands: gen (synthesize datasets), run (build, update, verify,
report), bench (per-batch turnaround timing), oracle-check (seeded
differential suite against brute force), dump-ecs (print the class
dump).  Long-form flags only; an optional key=value config file
supplies defaults that explicit flags override.

Exit codes: 0 success, 1 usage or parse error, 2 ill-behaved dataset,
3 internal invariant violation, 4 oracle mismatch.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

import numpy as np

from .action import MerkleVectors, PlainVectors, mean_pairwise_agreement
from .engine import InvariantError, ModelManager, Strategy
from .model import model_equals
from .oracle import compare, random_batch, random_tables, reference_model
from .predicate import PredicateStore
from .rules import IllBehavedError, apply_to_tables, load_rules, load_trace
from .topogen import gen_example, gen_failure_trace, gen_fat_tree, install_workload
from .verify import Topology, Verifier, load_props

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ILL_BEHAVED = 2
EXIT_INVARIANT = 3
EXIT_ORACLE = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _read_config(path: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _build_parser() -> _Parser:
    parser = _Parser(prog="dpverify", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key=value file with flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="synthesize a dataset into a directory")
    gen.add_argument("--topo", choices=["example", "fattree"], default="example")
    gen.add_argument("--k", type=int, default=4, help="fat-tree pod parameter")
    gen.add_argument("--bits", type=int, default=None, help="header width (8, 16 or 32)")
    gen.add_argument("--prefixes", type=int, default=10, help="prefixes per example subnet")
    gen.add_argument("--fail", default=None, metavar="A,B", help="also emit a link-failure trace")
    gen.add_argument("--out", required=True, help="output directory")

    def io_flags(p, with_trace=True, with_props=True):
        p.add_argument("--topo", required=True, help="topology JSON file")
        p.add_argument("--rules", required=True, help="rule file")
        if with_trace:
            p.add_argument("--trace", default=None, help="update trace file")
        if with_props:
            p.add_argument("--props", default=None, help="property spec JSON file")
        p.add_argument("--strategy", choices=[s.value for s in Strategy], default="mr2")
        p.add_argument("--subspaces", type=int, default=1)
        p.add_argument("--vectors", choices=["plain", "merkle"], default="plain")
        p.add_argument("--check-invariants", action="store_true")

    run = sub.add_parser("run", help="build the model, apply the trace, verify per batch")
    io_flags(run)
    run.add_argument("--report", default=None, help="write verification report (JSON lines)")
    run.add_argument("--dump", default=None, help="write the final class dump")
    run.add_argument("--emit-changes", action="store_true", help="print per-batch change records")

    bench = sub.add_parser("bench", help="measure per-batch turnaround")
    io_flags(bench, with_props=False)
    bench.add_argument("--csv", default=None, help="write per-batch timings as CSV")

    oc = sub.add_parser("oracle-check", help="differential suite against brute force")
    oc.add_argument("--seed", type=int, default=0)
    oc.add_argument("--trials", type=int, default=25)
    oc.add_argument("--bits", type=int, default=8)
    oc.add_argument("--devices", type=int, default=3)

    dump = sub.add_parser("dump-ecs", help="print the equivalence-class dump")
    io_flags(dump, with_props=False)
    dump.add_argument("--out", default=None, help="write the dump here instead of stdout")
    dump.add_argument("--stats", action="store_true", help="also print class count and agreement")
    return parser


def _apply_config(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    probe = _Parser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    args = parser.parse_args(argv)
    if known.config:
        defaults = _read_config(known.config)
        fresh = _build_parser()
        valid = {
            action.dest
            for group in fresh._subparsers._group_actions
            for sub in group.choices.values()
            for action in sub._actions
        }
        bad = set(defaults) - valid
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        explicit = set()
        for token in argv:
            if token.startswith("--"):
                explicit.add(token[2:].split("=", 1)[0].replace("-", "_"))
        for key, value in defaults.items():
            if key in explicit or not hasattr(args, key):
                continue
            current = getattr(args, key)
            if isinstance(current, bool):
                setattr(args, key, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(args, key, int(value))
            else:
                setattr(args, key, value)
    return args


def _load_setting(args):
    topo = Topology.from_json(Path(args.topo).read_text())
    store = PredicateStore(topo.num_bits)
    factory = (PlainVectors if args.vectors == "plain" else MerkleVectors)(topo.n)
    tables, next_id = load_rules(Path(args.rules).read_text(), store, topo.device_names)
    manager = ModelManager(
        store,
        factory,
        tables,
        strategy=Strategy(args.strategy),
        subspaces=args.subspaces,
        check_invariants=args.check_invariants,
    )
    batches = []
    if getattr(args, "trace", None):
        batches, next_id = load_trace(
            Path(args.trace).read_text(), store, topo.device_names, next_id
        )
    return topo, store, manager, batches


def _cmd_gen(args) -> int:
    if args.topo == "example":
        bits = args.bits if args.bits is not None else 32
        dataset = gen_example(num_bits=bits, n_prefixes=args.prefixes)
    else:
        bits = args.bits if args.bits is not None else 16
        dataset = gen_fat_tree(args.k, num_bits=bits)
    if args.fail:
        a, _, b = args.fail.partition(",")
        if not b:
            raise ValueError("--fail expects two node names: A,B")
        trace, disconnected = gen_failure_trace(dataset, a.strip(), b.strip())
        dataset.trace_text = trace
        dataset.metadata["failed_link"] = [a.strip(), b.strip()]
        dataset.metadata["disconnects"] = disconnected
    paths = dataset.write(args.out)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    return EXIT_OK


def _cmd_run(args) -> int:
    topo, store, manager, batches = _load_setting(args)
    checks = (
        load_props(Path(args.props).read_text(), store, topo) if args.props else []
    )
    verifier = Verifier(topo, checks)
    report = verifier.verify_model(manager.model)
    print(f"built initial model: {len(manager.model)} classes")
    for idx, batch in enumerate(batches):
        summary = manager.apply_batch(batch)
        if args.emit_changes:
            print(summary.to_json())
        report = verifier.recheck(report, manager.model, summary)
        print(
            f"batch {idx}: {len(batch.inserts)} inserts, {len(batch.deletes)} deletes, "
            f"{len(manager.model)} classes, {len(report.rechecked)} classes rechecked"
        )
    if checks:
        print(report.summary())
        fails = report.failures()
        if fails:
            print(f"{len(fails)} failing (class, check) pairs; witnesses in the report")
    if args.report:
        Path(args.report).write_text(report.to_json_lines() + "\n")
    if args.dump:
        Path(args.dump).write_text(manager.model.dump() + "\n")
    return EXIT_OK


def _cmd_bench(args) -> int:
    topo, store, manager, batches = _load_setting(args)
    rows = []
    for idx, batch in enumerate(batches):
        summary = manager.apply_batch(batch)
        t = summary.timing
        rows.append((idx, t["total"], t["mr1"], t["r2"], t["apply"]))
    header = "batch,turnaround_s,mr1_s,r2_s,apply_s"
    csv_lines = [header] + [
        f"{i},{total:.6f},{mr1:.6f},{r2:.6f},{apply:.6f}" for i, total, mr1, r2, apply in rows
    ]
    if args.csv:
        Path(args.csv).write_text("\n".join(csv_lines) + "\n")
    if rows:
        totals = [r[1] for r in rows]
        print(f"batches:        {len(rows)}")
        print(f"mean turnaround: {np.mean(totals):.6f} s")
        print(f"p99 turnaround:  {np.percentile(totals, 99):.6f} s")
        print(
            "phase means:     mr1 {:.6f} s, r2 {:.6f} s, apply {:.6f} s".format(
                float(np.mean([r[2] for r in rows])),
                float(np.mean([r[3] for r in rows])),
                float(np.mean([r[4] for r in rows])),
            )
        )
    else:
        print("no batches")
    try:
        import resource

        peak_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        print(f"peak memory:     {peak_kb / 1024:.1f} MB")
    except ImportError:
        pass
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    rng = random.Random(args.seed)
    for trial in range(args.trials):
        store = PredicateStore(args.bits)
        factory = PlainVectors(args.devices)
        tables, next_id = random_tables(rng, store, args.devices)
        managers = {
            s: ModelManager(store, factory, [t.clone() for t in tables], strategy=s)
            for s in Strategy
        }
        current = tables
        for _ in range(2):
            batch, next_id = random_batch(rng, store, current, next_id)
            current = apply_to_tables(current, batch)
            ref = reference_model(current, factory)
            for strategy, manager in managers.items():
                manager.apply_batch(batch)
                ok, diff = compare(manager.model, ref)
                if not ok:
                    print(f"oracle mismatch: seed={args.seed} trial={trial} strategy={strategy.value}")
                    print(json.dumps(diff, indent=2))
                    return EXIT_ORACLE
            first = next(iter(managers.values())).model
            for manager in managers.values():
                if not model_equals(manager.model, first):
                    print(f"strategy divergence: seed={args.seed} trial={trial}")
                    return EXIT_ORACLE
    print(f"oracle-check: {args.trials} trials clean (seed={args.seed})")
    return EXIT_OK


def _cmd_dump_ecs(args) -> int:
    topo, store, manager, batches = _load_setting(args)
    for batch in batches:
        manager.apply_batch(batch)
    text = manager.model.dump() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.stats:
        print(f"classes: {len(manager.model)}")
        vectors = manager.model.vectors()
        if len(vectors) >= 2:
            ratio = mean_pairwise_agreement(vectors)
            print(f"mean action agreement (fraction of equal components): {ratio}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "oracle-check":
            return _cmd_oracle_check(args)
        return _cmd_dump_ecs(args)
    except IllBehavedError as exc:
        print(f"ill-behaved dataset: {exc}", file=sys.stderr)
        return EXIT_ILL_BEHAVED
    except InvariantError as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
