"""Command-line interface.

Exit codes: 0 success, 1 configuration or input error, 2 run diverged,
3 a verified property failed.
"""

import argparse
import os
import sys
import numpy as np

from . import harness
from . import hessian as hx
from .config import KNOWN_KEYS, ConfigError, parse_config
from .dcssgd import Ordering, write_comparison_csv
from .harness import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, EXIT_PROPERTY
from .sim import read_trace, staleness_stats

TEMPLATE = os.path.join(os.path.dirname(__file__), "templates", "reference.cfg")
DEFAULT_LAMBDAS = "0,0.04,0.5,2,8"


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
    g = p.add_argument_group("config keys (same names as in the config file)")
    for key in sorted(KNOWN_KEYS):
        g.add_argument(f"--{key}", dest=f"cfg:{key}", metavar="V")


def _load(args, path=None):
    text = ""
    path = path or args.config
    if path:
        with open(path) as fh:
            text = fh.read()
    overrides = list(args.set)
    for k, v in vars(args).items():
        if k.startswith("cfg:") and v is not None:
            overrides.append(f"{k[4:]}={v}")
    return parse_config(text, overrides)


def cmd_run(args):
    cfg = _load(args)
    out = harness.run(cfg, resume_from=args.resume)
    last = out.result.metrics[-1]
    print(f"{cfg.optimizer.name}: pass {last.passes:.3f} train_risk {last.train_risk:.6f} "
          f"eval_error {last.eval_error:.4f} -> {out.output_dir}")
    if out.status == EXIT_DIVERGED:
        print("run diverged; partial logs kept", file=sys.stderr)
    return out.status


def cmd_compare(args):
    if len(args.configs) < 1:
        raise ConfigError([("--config", "give at least one config")])
    cfgs = [_load(args, path) for path in args.configs]
    header, rows, summary = harness.compare(cfgs, args.by, args.out)
    for s in summary:
        print("\t".join(str(v) for v in s))
    return EXIT_DIVERGED if any(s[-1] for s in summary) else EXIT_OK


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([("--lambdas", f"cannot parse {text!r}")]) from None


def cmd_sweep(args):
    os.makedirs(args.out, exist_ok=True)
    if args.kind == "lambda":
        cfg = _load(args)
        _, summary, _ = harness.lambda_sweep(cfg, _floats(args.lambdas), args.out)
        for row in summary:
            print("\t".join(repr(v) for v in row))
        return EXIT_DIVERGED if any(r[-1] for r in summary) else EXIT_OK
    if args.kind == "dc-ssgd":
        cfg = _load(args)
        lams = _floats(args.lambdas) if args.lambdas != DEFAULT_LAMBDAS else [1.0]
        rows = []
        for lam in lams:
            rows += harness.dcssgd_comparison(cfg, args.trials, cfg.M if cfg.M > 1 else 8, args.eta, lam,
                                              Ordering(args.ordering), args.batch)
        write_comparison_csv(rows, os.path.join(args.out, "dc_ssgd_comparison.csv"))
        for lam in lams:
            sel = [r for r in rows if r["lambda"] == lam]
            print(f"lambda {lam}: mean dist_dc {np.mean([r['dist_dc'] for r in sel]):.6g} "
                  f"dist_plain {np.mean([r['dist_plain'] for r in sel]):.6g}")
        return EXIT_OK
    # lambda-mse
    from .verify import theorem_sweep
    recs = theorem_sweep(args.probe_seed)
    hx.write_sweep_csv(recs, os.path.join(args.out, "lambda_mse_sweep.csv"))
    held = sum(r.condition_held for r in recs)
    bad = sum(r.condition_held and r.mse_lambda_g > r.mse_g + 1e-12 for r in recs)
    print(f"{len(recs)} probes, condition held {held}, counterexamples {bad}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import verify_suite
    results = verify_suite(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


def cmd_inspect_trace(args):
    rows = read_trace(args.trace)
    kinds = {}
    for r in rows:
        kinds[r[1]] = kinds.get(r[1], 0) + 1
    st = staleness_stats(rows, warmup=args.warmup)
    print("events\t" + " ".join(f"{k}={v}" for k, v in sorted(kinds.items())))
    print(f"updates\t{st['count']}")
    print(f"tau_mean\t{st['mean']:.6g}")
    print(f"tau_max\t{st['max']}")
    print("tau_histogram\t" + " ".join(f"{k}:{v}" for k, v in st["histogram"].items()))
    if "diverged" in kinds:
        print("diverged\tyes")
    return EXIT_OK


def cmd_template(args):
    with open(TEMPLATE) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not the "diverged" status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="dcasgd", description="Delay-compensated ASGD simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one experiment")
    _add_config_flags(r)
    r.add_argument("--resume", help="continue from a checkpoint file")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("compare", help="run several configs and align their curves")
    c.add_argument("configs", nargs="+", help="config files")
    c.add_argument("--by", choices=("passes", "sim_time"), default="passes")
    c.add_argument("--out", required=True, help="directory for comparison.csv and summary.csv")
    c.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override for every config")
    c.set_defaults(fn=cmd_compare, config=None)

    s = sub.add_parser("sweep", help="lambda sweep, dc-ssgd comparison or lambda-MSE probe sweep")
    _add_config_flags(s)
    s.add_argument("--kind", choices=("lambda", "dc-ssgd", "lambda-mse"), default="lambda")
    s.add_argument("--lambdas", default=DEFAULT_LAMBDAS)
    s.add_argument("--out", required=True)
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--eta", type=float, default=0.05)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--ordering", choices=[o.value for o in Ordering], default=Ordering.AS_GIVEN.value)
    s.add_argument("--probe-seed", type=int, default=0, help="probe seed for lambda-mse")
    s.set_defaults(fn=cmd_sweep)

    v = sub.add_parser("verify", help="run the property checks")
    v.add_argument("--quick", action="store_true", help="skip the slower statistical checks")
    v.set_defaults(fn=cmd_verify)

    t = sub.add_parser("inspect-trace", help="staleness summary of a trace.log")
    t.add_argument("trace")
    t.add_argument("--warmup", type=int, default=0, help="skip this many applied gradients")
    t.set_defaults(fn=cmd_inspect_trace)

    tp = sub.add_parser("template", help="print the shipped reference config")
    tp.set_defaults(fn=cmd_template)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(all="ignore"):
            return args.fn(args)
    except ConfigError as exc:
        for key, msg in exc.errors:
            print(f"config error: {key}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
