"""Command-line interface.

Verbs:
  run <config>              simulate a scenario and write a run directory
  optimize <config>         choose an allocation for the config's objective
  report <run-dir>          re-emit text/CSV views and render figures
  inspect-timetags <file>   decode a binary timetag record

Exit codes: 0 success, 2 validation/configuration error, 1 runtime error.
A single --seed flag overrides the scenario seed, which controls all
randomness in a run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import QlanError, ValidationError
from .timing import BIN_NS, read_timetags

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2


def _cmd_run(args: argparse.Namespace) -> int:
    from .harness import report_text, run_scenario, write_run_dir
    from .scenario import load_scenario

    config = load_scenario(args.config, seed=args.seed, integration_s=args.integration)
    out = Path(args.out or f"runs/{config.name}-seed{config.seed}")
    timetags = out / "timetags" if args.keep_timetags else None
    report = run_scenario(config, keep_timetags=timetags)
    paths = write_run_dir(report, out)
    sys.stdout.write(report_text(report))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def _cmd_optimize(args: argparse.Namespace) -> int:
    from .allocator import optimize, score
    from .scenario import load_scenario
    from .spectrum import wss_route

    config = load_scenario(args.config, seed=args.seed)
    if config.objective is None:
        raise ValidationError("config has a fixed allocation; optimize needs an objective")
    model = config.score_model()
    alloc = optimize(config.objective, model)
    print(f"objective: {config.objective.kind}")
    for link, chans in sorted(alloc.to_dict().items()):
        print(f"  {link}: channels {chans}")
    print("predicted metrics:")
    for link, m in score(alloc, model).items():
        print(
            f"  {link[0]}-{link[1]}: F={m.fidelity:.3f} E_N={m.log_negativity:.3f} "
            f"rate={m.coincidence_rate:.1f}/s R_E={m.ebit_rate:.1f}"
        )
    if args.routing_table:
        table = wss_route(config.plan, alloc).to_table_text()
        Path(args.routing_table).write_text(table)
        print(f"routing table written to {args.routing_table}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    from .harness import load_report, write_run_dir
    from .plotting import render_figures

    run_dir = Path(args.run_dir)
    report = load_report(run_dir)
    paths = write_run_dir(report, run_dir)
    written = [str(p) for p in paths.values()]
    if not args.no_figures:
        written += [str(p) for p in render_figures(report, run_dir)]
    print("\n".join(written))
    return EXIT_OK


def _cmd_inspect_timetags(args: argparse.Namespace) -> int:
    path = Path(args.file)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    stream = read_timetags(path.read_bytes())
    print(f"node id:     {stream.node_id}")
    print(f"basis:       {stream.basis_label}")
    print(f"epoch start: {stream.epoch_start:.0f} s")
    print(f"events:      {len(stream)}")
    if len(stream):
        span_s = (stream.bins[-1] - stream.bins[0]) * BIN_NS * 1e-9
        print(f"first bin:   {int(stream.bins[0])}")
        print(f"last bin:    {int(stream.bins[-1])}")
        print(f"span:        {span_s:.3f} s")
        if span_s > 0:
            print(f"mean rate:   {len(stream) / span_s:.1f} /s")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlansim",
        description="Desk-scale simulator for a wavelength-routed entanglement LAN",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario")
    p_run.add_argument("config", help="scenario file or bundled name (allocation1/allocation2)")
    p_run.add_argument("--out", default=None, help="run directory (default runs/<name>-seed<seed>)")
    p_run.add_argument("--integration", type=float, default=None, help="override integration seconds per setting")
    p_run.add_argument("--keep-timetags", action="store_true", help="also store raw timetag records")
    p_run.set_defaults(fn=_cmd_run)

    p_opt = sub.add_parser("optimize", help="choose an allocation for an objective")
    p_opt.add_argument("config")
    p_opt.add_argument("--routing-table", default=None, help="write the switch table here")
    p_opt.set_defaults(fn=_cmd_optimize)

    p_rep = sub.add_parser("report", help="re-emit report views and render figures")
    p_rep.add_argument("run_dir")
    p_rep.add_argument("--no-figures", action="store_true")
    p_rep.set_defaults(fn=_cmd_report)

    p_tags = sub.add_parser("inspect-timetags", help="decode a binary timetag record")
    p_tags.add_argument("file")
    p_tags.set_defaults(fn=_cmd_inspect_timetags)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except QlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
