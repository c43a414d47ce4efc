"""Command-line entry point: ``safasim {run,sweep,bias,show-defaults,validate-config}``.

Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error.
The output directory can be redirected with ``SAFASIM_OUTPUT_DIR``; an
explicit ``--output-dir`` wins over the environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ._validation import NumericDivergenceError
from .bias import AnalyticInconsistencyError
from .config import PRESETS, ConfigError, RunConfig, SweepSpec, parse_override
from .protocol import PROTOCOLS

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
OUTPUT_ENV = "SAFASIM_OUTPUT_DIR"

log = logging.getLogger("safasim")


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"cannot parse {text!r} as a list") from None
    return parse


def _add_config_args(p, *, with_config=True):
    if with_config:
        p.add_argument("--config", "-c", type=Path, help="TOML run config")
    p.add_argument("--task", choices=sorted(PRESETS), help="task preset (overrides config)")
    p.add_argument("--protocol", choices=PROTOCOLS, help="protocol (overrides config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key; repeatable")


def build_parser():
    parser = _Parser(prog="safasim", description="Semi-asynchronous federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_args(p)
    p.add_argument("--output-dir", "-o", type=Path)

    p = sub.add_parser("sweep", help="run a grid of experiments")
    p.add_argument("--spec", type=Path, help="TOML file: run config sections plus a [sweep] table")
    _add_config_args(p)
    p.add_argument("--C", type=_csv_list(float), help="comma-separated C values")
    p.add_argument("--cr", type=_csv_list(float), help="comma-separated crash probabilities")
    p.add_argument("--tau", type=_csv_list(int), help="comma-separated lag tolerances")
    p.add_argument("--protocols", type=_csv_list(str), help="comma-separated protocols")
    p.add_argument("--seeds", type=_csv_list(int), help="comma-separated seed coordinates")
    p.add_argument("--parallel", "-j", type=int, default=1)
    p.add_argument("--output-dir", "-o", type=Path)

    p = sub.add_parser("bias", help="analytic vs Monte-Carlo selection bias")
    p.add_argument("--params", type=Path, help="TOML with [[params]] rows; default: one row per case")
    p.add_argument("--cr", type=float, default=0.3, help="shared crash rate for the default rows")
    p.add_argument("--max-round", type=int, default=50)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o", type=Path, help="CSV path (default: <output dir>/bias.csv)")

    p = sub.add_parser("show-defaults", help="print the default config for a task")
    p.add_argument("--task", choices=sorted(PRESETS), default="regression")

    p = sub.add_parser("validate-config", help="check a config file without running it")
    p.add_argument("config", type=Path)
    _add_config_args(p, with_config=False)
    return parser


def _load_config(args, base: RunConfig | None = None) -> RunConfig:
    if base is not None:
        cfg = base
    elif getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig.for_task(args.task or "regression")
    if args.task and args.task != cfg.run.task:
        # re-apply the preset, keeping nothing task-specific from the file
        cfg = RunConfig.for_task(args.task, **{"run.protocol": cfg.run.protocol,
                                               "run.master_seed": cfg.run.master_seed})
    if args.protocol:
        cfg.set("run.protocol", args.protocol)
    for text in args.overrides:
        cfg.set(*parse_override(text))
    return cfg.validate()


def _output_dir(args, cfg_dir):
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(cfg_dir)


def cmd_run(args):
    from .runner import run_experiment
    cfg = _load_config(args)
    out = _output_dir(args, cfg.run.output_dir)
    csv_path, summary = run_experiment(cfg, out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"rounds written to {csv_path}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args):
    from .runner import run_sweep
    if args.spec:
        spec = SweepSpec.load(args.spec)
        base, axes = spec.base, dict(spec.axes)
    else:
        base, axes = None, {}
    base = _load_config(args, base)
    for name, values in (("C", args.C), ("cr", args.cr), ("tau", args.tau),
                         ("protocol", args.protocols), ("seed", args.seeds)):
        if values:
            axes[name] = values
    if not axes:
        raise ConfigError("sweep needs at least one axis (--C, --cr, --tau, --protocols, --seeds or a [sweep] table)")
    for proto in axes.get("protocol", []):
        if proto not in PROTOCOLS:
            raise ConfigError(f"sweep.protocol: unknown protocol {proto!r}")
    spec = SweepSpec(base, axes)
    for _, cfg in spec.cells():
        cfg.validate()
    out = _output_dir(args, base.run.output_dir)
    entries = run_sweep(spec, out, args.parallel)
    failed = [e for e in entries if e["status"] != "ok"]
    print(f"{len(entries) - len(failed)}/{len(entries)} cells succeeded; index at {out / 'index.json'}")
    for e in failed:
        print(f"  failed {e['coords']}: {e['error']}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_bias(args):
    from .runner import default_bias_params, load_bias_params, run_bias_analysis
    mc = {}
    if args.params:
        params, mc = load_bias_params(args.params)
    else:
        params = default_bias_params(args.cr, args.max_round)
    trials = args.trials if args.trials is not None else int(mc.get("trials", 10_000))
    seed = args.seed if args.seed is not None else int(mc.get("seed", 0))
    if trials < 1:
        raise ConfigError(f"trials: must be >= 1 (got {trials})")
    output = args.output or _output_dir(args, "results") / "bias.csv"
    path, _ = run_bias_analysis(params, output, trials, seed, int(mc.get("m_background", 100)))
    print(f"bias table written to {path}")
    return EXIT_OK


def cmd_show_defaults(args):
    sys.stdout.write(RunConfig.for_task(args.task).to_toml())
    return EXIT_OK


def cmd_validate(args):
    cfg = _load_config(args, RunConfig.load(args.config))
    print(f"ok: {args.config} (config hash {cfg.config_hash()})")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "bias": cmd_bias,
    "show-defaults": cmd_show_defaults,
    "validate-config": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc} (round {exc.round})", file=sys.stderr)
        return EXIT_RUNTIME
    except AnalyticInconsistencyError as exc:
        print(f"analytic inconsistency: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
