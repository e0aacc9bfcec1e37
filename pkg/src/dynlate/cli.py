"""Command-line front end: ``dynlate {simulate,estimate,verify,mc}``.

Exit codes: 0 ok, 2 configuration or I/O error, 3 data validation failure,
4 non-estimable target, 5 internal error. ``verify`` exits 1 when an
identity fails. Only JSON goes to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .config import CliConfig
from .data import read_panel, validate_dataset, write_panel
from .discrete import load_scm
from .errors import ConfigError, DataValidationError, EstimabilityError, OverlapError
from .estimators import estimate_all
from .montecarlo import run_mc
from .sim import simulate
from .verify import run_verify_suite

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMABILITY, EXIT_INTERNAL = 0, 2, 3, 4, 5
VERIFY_FAILED = 1


def _diag(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(payload) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, default=str) + "\n")


def _load(args) -> CliConfig:
    return CliConfig.load(args.config) if args.config else CliConfig()


def cmd_simulate(args) -> int:
    cfg = _load(args)
    scm, n, seed = cfg.scm({"n": args.n, "seed": args.seed})
    out = args.out or cfg.simulate.get("out")
    if not out:
        raise ConfigError("simulate needs an output path (--out or simulate.out)")
    ds = simulate(scm, n, seed)
    write_panel(ds, out)
    report = validate_dataset(ds, require_one_sided=True, require_staggered=scm.variant == "staggered_dgp")
    _diag(f"wrote {ds.n} rows to {out}; {report.summary()}")
    _emit({"out": str(out), "rows": ds.n, "T": ds.T, "p": ds.p, "validation": report.counts})
    return EXIT_OK


def _table(reports) -> str:
    lines = [f"{'estimand':<28}{'point':>10}{'se':>10}{'ci_lo':>10}{'ci_hi':>10}  flags"]
    for r in reports:
        lines.append(
            f"{r.estimand:<28}{r.point:>10.4f}{r.std_error:>10.4f}{r.ci[0]:>10.4f}{r.ci[1]:>10.4f}  {','.join(r.flags)}"
        )
    return "\n".join(lines)


def cmd_estimate(args) -> int:
    cfg = _load(args)
    data = args.data or cfg.estimate.get("data")
    if not data:
        raise ConfigError("estimate needs a data path (--data or estimate.data)")
    ds = read_panel(data)
    specs = cfg.estimands(ds.T)
    ecfg = cfg.estimate_config(args.seed)
    reports = estimate_all(ds, ecfg, specs)
    _diag(_table(reports))
    payload = {"data": str(data), "n": ds.n, "estimates": [r.to_dict() for r in reports]}
    _emit(payload)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    return EXIT_OK


def cmd_verify(args) -> int:
    tables = {}
    for item in args.table or ():
        name, _, path = item.partition("=")
        if not path:
            raise ConfigError(f"--table expects NAME=PATH, got {item!r}")
        try:
            tables[name] = load_scm(path)
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read table: {exc.strerror}") from None
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: invalid table: {exc}") from None
    results = run_verify_suite(n_random=args.n or 200, seed=args.seed or 0, tables=tables)
    for r in results:
        _diag(r.line())
    _emit({"passed": all(r.passed for r in results), "checks": [
        {"name": r.name, "passed": r.passed, "detail": r.detail} for r in results
    ]})
    return EXIT_OK if all(r.passed for r in results) else VERIFY_FAILED


def cmd_mc(args) -> int:
    cfg = _load(args)
    exp = cfg.experiment(seed=args.seed, n=args.n)
    out = args.out or cfg.mc.get("out")
    if not out:
        raise ConfigError("mc needs an output path (--out or mc.out)")
    t0 = time.perf_counter()

    def progress(done, total):
        _diag(f"replication {done}/{total} ({time.perf_counter() - t0:.1f}s)")

    summary = run_mc(exp, progress=progress if not args.quiet else None)
    summary.write(out)
    for f in summary.failures:
        _diag(f"replication {f['replication']} {f['estimand']}: {f['error']}")
    _diag(summary.csv_text().rstrip())
    _emit({"out": str(out), "rows": {k: vars(r) for k, r in summary.rows.items()}})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynlate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--n", type=int, help="override the sample size")
        if data:
            p.add_argument("--data", help="panel CSV to estimate on")
        return p

    common(sub.add_parser("simulate", help="draw a panel from the logistic-linear model")).set_defaults(fn=cmd_simulate)
    common(sub.add_parser("estimate", help="estimate targets on a panel CSV"), data=True).set_defaults(fn=cmd_estimate)
    v = sub.add_parser("verify", help="exact identification checks on discrete models")
    v.add_argument("--n", type=int, help="number of random models (default 200)")
    v.add_argument("--seed", type=int, help="seed for the random models")
    v.add_argument("--table", action="append", help="replace a tabulated model: NAME=PATH (JSON)")
    v.set_defaults(fn=cmd_verify)
    m = common(sub.add_parser("mc", help="Monte Carlo study: RMSE, bias and coverage"))
    m.add_argument("--quiet", action="store_true", help="suppress progress lines")
    m.set_defaults(fn=cmd_mc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _diag(f"error: {exc}")
        return EXIT_CONFIG
    except DataValidationError as exc:
        _diag(f"error: {exc}")
        return EXIT_DATA
    except (EstimabilityError, OverlapError) as exc:
        _diag(f"error: {exc}")
        return EXIT_ESTIMABILITY
    except OSError as exc:
        _diag(f"error: {exc}")
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a bug; report it with the contract's code
        _diag(f"internal error: {type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
