"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical failure.
"""
import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, NumericError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _floats(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from exc


def _values(text):
    """Comma-separated values; numbers stay numeric, everything else is a string."""
    out = []
    for v in (s.strip() for s in text.split(",") if s.strip()):
        try:
            out.append(int(v))
        except ValueError:
            try:
                out.append(float(v))
            except ValueError:
                out.append(v)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    from .suites import SUITES
    p = _Parser(prog="qfilter", description="Continuous-measurement filtering scenarios and checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("--scenario", required=True, type=Path)
    r.add_argument("--seed", type=int, help="override the master seed")
    r.add_argument("--out", required=True, type=Path)

    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("--suite", required=True, choices=sorted(SUITES) + ["all"])
    v.add_argument("--json", type=Path, help="write the JSON report here")
    v.add_argument("--seed", type=int)

    c = sub.add_parser("convergence", help="strong error against the finest step")
    c.add_argument("--scenario", required=True, type=Path)
    c.add_argument("--dt-list", required=True, type=_floats)
    c.add_argument("--paths", type=int, help="number of shared noise paths")
    c.add_argument("--json", type=Path)

    s = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    s.add_argument("--scenario", required=True, type=Path)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, type=_values)
    s.add_argument("--out", required=True, type=Path)
    return p


def _run(args):
    from .scenario import load_config, run_scenario
    cfg = load_config(args.scenario)
    if args.seed is not None:
        cfg = cfg.with_param("seed", args.seed)
    m = run_scenario(cfg, args.out)
    print(f"wrote {len(m.outputs)} files to {args.out} (config {m.config_digest[:12]})")
    return EXIT_OK


def _verify(args):
    from .suites import SUITES, verify_suite
    names = sorted(SUITES, key=lambda n: SUITES[n][2]) if args.suite == "all" else [args.suite]
    reports = [verify_suite(n, args.seed) for n in names]
    for rep in reports:
        for chk in rep.checks:
            print(f"[{rep.suite}] {chk.line()}")
    payload = reports[0].to_dict() if len(reports) == 1 else \
        {"passed": all(r.passed for r in reports), "suites": [r.to_dict() for r in reports]}
    if args.json:
        args.json.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VERIFY


def _convergence(args):
    from .scenario import load_config, run_convergence
    res = run_convergence(load_config(args.scenario), args.dt_list, args.paths)
    text = json.dumps(res, indent=2, sort_keys=True)
    print(text)
    if args.json:
        args.json.write_text(text + "\n")
    return EXIT_OK


def _sweep(args):
    from .scenario import load_config, run_sweep
    runs = run_sweep(load_config(args.scenario), args.param, args.values, args.out)
    print(f"swept {args.param} over {len(runs)} values into {args.out}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"run": _run, "verify": _verify, "convergence": _convergence, "sweep": _sweep}
    try:
        return handler[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
