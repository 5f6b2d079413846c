"""Command-line front end: stats, select, secure-baseline, secure-improved, bench.

All reports are JSON on stdout (or --output); the bench subcommand also
renders an aligned text table on stderr.  Exit codes: 0 success, 1 input or
usage error, 2 protocol abort.
"""

from __future__ import annotations

import argparse
import json
import sys

from .dataset import DatasetError, load_dataset, mutual_information, normalize
from .cwc import InconsistentDatasetError, cwc_select
from .bitcircuit import CostModel
from .baseline import default_b_max, run_baseline
from .mixnet import ProtocolError, run_improved
from .bench import DEFAULT_BUDGET, DEFAULT_GRID, BenchConfig, run_bench


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we want exit 1
        raise _UsageError(message)


def _add_io_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--class-col", default="C", help="class column name (default C)")
    p.add_argument("--dummy-col", default=None, help="dummy-flag column name")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip contradiction/duplicate removal")
    p.add_argument("--output", default=None, help="write the JSON report here")


def build_parser() -> _Parser:
    parser = _Parser(prog="cwcselect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="per-feature mutual information")
    p.add_argument("--input", required=True)
    _add_io_flags(p)

    p = sub.add_parser("select", help="plaintext minimal consistent subset")
    p.add_argument("--input", required=True)
    _add_io_flags(p)

    p = sub.add_parser("secure-baseline", help="oblivious pipeline on one backend")
    p.add_argument("--input", required=True)
    _add_io_flags(p)
    p.add_argument("--bmax", type=int, default=None,
                   help="count register width (default ceil(log2(nm+1)))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cost-model", default=None, help="JSON file of gate weights")

    p = sub.add_parser("secure-improved", help="two-party mix-and-sort protocol")
    p.add_argument("--input-a", required=True)
    p.add_argument("--input-b", required=True)
    _add_io_flags(p)
    p.add_argument("--bmax", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cost-model", default=None)
    p.add_argument("--transcript", default=None,
                   help="write the session transcript (JSON lines) here")

    p = sub.add_parser("bench", help="gate-count grid benchmark")
    p.add_argument("--grid", default=None,
                   help="comma list of KxNM cells, e.g. 10x100,50x500")
    p.add_argument("--bmax", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                   help="simulate a cell only if k*nm <= budget")
    p.add_argument("--cost-model", default=None)
    p.add_argument("--output", default=None)
    return parser


def _emit(report: dict, output: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if output:
        with open(output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load(args, path):
    data = load_dataset(path, class_col=args.class_col, dummy_col=args.dummy_col)
    if args.no_normalize:
        return data, {"removed_contradictions": 0, "removed_duplicates": 0}
    result = normalize(data)
    return result.dataset, result.summary()


def _cost_model(path: str | None) -> CostModel:
    return CostModel.load(path) if path else CostModel.default()


def _parse_grid(text: str) -> tuple[tuple[int, int], ...]:
    cells = []
    for part in text.split(","):
        k, _, nm = part.strip().partition("x")
        if not nm:
            raise _UsageError(f"bad grid cell {part!r}; expected KxNM")
        cells.append((int(k), int(nm)))
    return tuple(cells)


def _cmd_stats(args) -> int:
    data, summary = _load(args, args.input)
    report = dict(summary)
    report["mi"] = mutual_information(data).as_json()
    _emit(report, args.output)
    return 0


def _cmd_select(args) -> int:
    data, _ = _load(args, args.input)
    _emit(cwc_select(data).as_json(), args.output)
    return 0


def _cmd_secure_baseline(args) -> int:
    data, _ = _load(args, args.input)
    cost = _cost_model(args.cost_model)
    result = run_baseline(data, b_max=args.bmax, seed=args.seed)
    steps = result.paper_steps()
    report = {
        "selected": list(result.selected),
        "b_max": result.b_max,
        "comparators": len(result.schedule.comparators),
        "comparators_pruned": len(result.schedule.pruned),
        "gates": {name: s.as_dict() for name, s in sorted(result.step_stats.items())},
        "paper_steps": {
            name: {
                "gates": s.as_dict(),
                "estimated_seconds": round(cost.estimate_seconds(s), 6),
            }
            for name, s in steps.items()
        },
        "total_gates": result.total_stats.as_dict(),
        "estimated_seconds": round(cost.estimate_seconds(result.total_stats), 6),
    }
    _emit(report, args.output)
    return 0


def _cmd_secure_improved(args) -> int:
    data_a, _ = _load(args, args.input_a)
    data_b, _ = _load(args, args.input_b)
    cost = _cost_model(args.cost_model)
    result = run_improved(
        data_a, data_b, b_max=args.bmax, seed=args.seed, transcript_path=args.transcript
    )
    report = {
        "selected": list(result.selected),
        "b_max": result.params.b_max,
        "comparators_executed": result.comparators_executed,
        "handle_moves": result.handle_moves,
        "messages": result.message_count,
        "message_bytes": result.message_bytes,
        "gates": {
            name: s.as_dict() for name, s in sorted(result.phase_stats.items())
        },
        "sort_bitstring_gate_ops": result.phase_stats["sort"].mux,
        "total_gates": result.total_stats.as_dict(),
        "estimated_seconds": round(cost.estimate_seconds(result.total_stats), 6),
    }
    _emit(report, args.output)
    return 0


def _cmd_bench(args) -> int:
    cfg = BenchConfig(
        grid=_parse_grid(args.grid) if args.grid else DEFAULT_GRID,
        b_max=args.bmax,
        budget=args.budget,
        seed=args.seed,
        cost_model=_cost_model(args.cost_model),
    )
    report = run_bench(cfg)
    print(report.render_table(), file=sys.stderr)
    _emit(report.as_json(), args.output)
    return 0


_COMMANDS = {
    "stats": _cmd_stats,
    "select": _cmd_select,
    "secure-baseline": _cmd_secure_baseline,
    "secure-improved": _cmd_secure_improved,
    "bench": _cmd_bench,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (DatasetError, InconsistentDatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ProtocolError as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
