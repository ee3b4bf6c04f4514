"""Command-line entry points.

    granular check-graph SCENARIO
    granular run SCENARIO [--trace-out FILE] [--horizon-override T]
    granular fuzz FAMILY [--count N] [--seed S]
    granular library [--write DIR]
    granular replay TARGET [--seed S] [--index I] [--trace-out FILE] [--horizon-override T]

FAMILY is ``cft``, ``bft`` or a protocol name. TARGET is a protocol name
(replaying fuzz item ``(seed, index)``), a named library scenario, or a
scenario file.
"""

from __future__ import annotations

import argparse
import os
import sys
from itertools import combinations

from .adversary import fuzz_one
from .graph import (
    GraphError,
    check_bft_gas,
    check_bft_gps,
    check_cft_gas,
    check_cft_gps,
    check_diamond_f_source,
)
from .scenario import PROTOCOLS, Scenario, ScenarioFormatError, dumps, load, run_scenario
from .simnet import SimulationError
from .verifier import evaluate, fuzz_sweep, library_by_name, meets_expectations, render_verdicts

EXIT_OK, EXIT_MISMATCH, EXIT_ERROR = 0, 1, 2


def _fmt_set(nodes) -> str:
    return "{" + ",".join(str(x) for x in sorted(nodes)) + "}"


def _fmt_witness(witness) -> str:
    names = ("F", "A")
    return " ".join(f"{names[i]}={_fmt_set(part)}" for i, part in enumerate(witness))


def graph_report(s: Scenario) -> list[str]:
    g, f = s.graph, s.f
    checks = [("cft-gps", check_cft_gps), ("cft-gas", check_cft_gas)]
    if s.n >= 2 * f + 1:
        checks += [("bft-gps", check_bft_gps), ("bft-gas", check_bft_gas)]
    lines = []
    for name, fn in checks:
        v = fn(g, f)
        lines.append(f"{name}\tholds" if v.holds else f"{name}\tfails\t{_fmt_witness(v.witness)}")
    d, d_prime = s.diameters()
    lines.append(f"d\t{d}")
    lines.append(f"d'\t{d_prime}")
    for F in combinations(range(s.n), f):
        present = check_diamond_f_source(g, f, set(F))
        lines.append(f"diamond-f-source F={_fmt_set(F)}\t{'present' if present else 'absent'}")
    return lines


def cmd_check_graph(args) -> int:
    s = load(args.scenario)
    print("\n".join(graph_report(s)))
    return EXIT_OK


def _execute(s: Scenario, args) -> int:
    trace = run_scenario(s, args.horizon_override)
    if args.trace_out:
        with open(args.trace_out, "w", encoding="utf-8") as fh:
            fh.write(trace.dumps())
    verdicts = evaluate(s, trace)
    sys.stdout.write(render_verdicts(verdicts))
    print(f"digest\t{trace.digest()}")
    return EXIT_OK if meets_expectations(verdicts, s.expected) else EXIT_MISMATCH


def cmd_run(args) -> int:
    return _execute(load(args.scenario), args)


def _family(name: str) -> list[str]:
    if name in PROTOCOLS:
        return [name]
    members = [p for p in PROTOCOLS if p.startswith(name + "-")]
    if not members:
        raise ValueError(f"unknown protocol family {name!r}")
    return members


def cmd_fuzz(args) -> int:
    if args.count < 0:
        raise ValueError("--count must be non-negative")
    total = 0
    for protocol in _family(args.family):
        found = fuzz_sweep(args.seed, protocol, args.count)
        total += len(found)
        print(f"{protocol}\truns={args.count}\tviolations={len(found)}")
        for v in found:
            print(f"{protocol}\t{v.render()}")
    return EXIT_OK if total == 0 else EXIT_MISMATCH


def cmd_library(args) -> int:
    for name, named in library_by_name().items():
        expected = " ".join(f"{k}={v}" for k, v in sorted(named.expected.items()))
        print(f"{name}\t{named.scenario.protocol}\t{expected}")
        if args.write:
            os.makedirs(args.write, exist_ok=True)
            with open(os.path.join(args.write, f"{name}.scenario"), "w", encoding="utf-8") as fh:
                fh.write(dumps(named.scenario))
    return EXIT_OK


def cmd_replay(args) -> int:
    target = args.target
    if target in PROTOCOLS:
        s = fuzz_one(args.seed, args.index, target)
    elif target in library_by_name():
        s = library_by_name()[target].scenario
    else:
        s = load(target)
    return _execute(s, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="granular", description="Consensus under granular synchrony: "
                                     "graph conditions, simulation and trace verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-graph", help="report graph conditions and diameters")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_check_graph)

    def run_flags(p):
        p.add_argument("--trace-out", help="write the trace to this file")
        p.add_argument("--horizon-override", type=int, help="replace the scenario horizon")

    p = sub.add_parser("run", help="simulate a scenario file and verify the trace")
    p.add_argument("scenario")
    run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fuzz", help="run seeded random scenarios and report safety violations")
    p.add_argument("family", help="cft, bft or a protocol name")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("library", help="list the named scenarios")
    p.add_argument("--write", metavar="DIR", help="also write each one as a scenario file")
    p.set_defaults(func=cmd_library)

    p = sub.add_parser("replay", help="rerun a fuzz item, named scenario or scenario file")
    p.add_argument("target")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    run_flags(p)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (SimulationError, GraphError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
