"""Command line entry point mapping subcommands to harness experiments."""

import argparse
import os
import sys

from .config import ConfigError, parse_config
from .green import MeshTooCoarse
from .harness import build_level, convergence_study, green_diagnostics, \
    maximal_semigroup_scan, maxreg_scan, run_checks, spacetime_stability, \
    stability_scan
from .linsolve import SolverError
from .evolution import BackendError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_CHECK = 3

_EXPERIMENTS = {
    "convergence": ("convergence", convergence_study),
    "stability-scan": ("stability_scan", stability_scan),
    "spacetime-stability": ("spacetime_stability", spacetime_stability),
    "maxreg-scan": ("maxreg", maxreg_scan),
    "semigroup-scan": ("semigroup_scan", maximal_semigroup_scan),
    "green-diag": ("green_diag", green_diagnostics),
}

# desk-scale defaults where the generic config would be too expensive or
# violates a precondition (C_star must satisfy C_star*h < 1/4)
_DEFAULT_OVERRIDES = {
    "stability-scan": ["discretization.dense_limit=4500",
                       "experiment.source_strategy=grid4"],
    "semigroup-scan": ["discretization.dense_limit=4500",
                       "experiment.q_list=2,4,inf"],
    "maxreg-scan": ["experiment.h_levels=8,16,32"],
    "green-diag": ["experiment.h_levels=8,16,32", "experiment.C_star=1"],
}


def _output_dir(args, cfg, subcommand):
    if args.output:
        return args.output
    if cfg.output:
        return cfg.output
    root = os.environ.get("PARAFEM_OUTPUT_ROOT", "results")
    return os.path.join(root, subcommand)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="parafem",
        description="Parabolic finite element laboratory: stability, "
                    "convergence and regularity experiments on "
                    "quasi-uniform meshes.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in list(_EXPERIMENTS) + ["mesh-info"]:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", default=None,
                       help="sectioned key=value config file")
        p.add_argument("-o", "--output", default=None,
                       help="output directory (default "
                            "$PARAFEM_OUTPUT_ROOT/<subcommand>)")
        p.add_argument("--check", action="store_true",
                       help="evaluate acceptance thresholds; exit 3 on breach")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering next to the CSV")
        p.add_argument("--jobs", type=int, default=None,
                       help="cap on worker threads")
        p.add_argument("overrides", nargs="*",
                       help="section.key=value pairs overriding the config")
    return parser


def _load_config(args):
    overrides = _DEFAULT_OVERRIDES.get(args.subcommand, [])
    overrides = overrides + list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"experiment.jobs={args.jobs}")
    if args.config is not None and not os.path.exists(args.config):
        raise ConfigError(f"config file {args.config} does not exist")
    return parse_config(args.config, overrides)


def _mesh_info(cfg):
    for n in cfg.h_levels:
        ctx = build_level(cfg, n)
        m = ctx.mesh
        print(f"level n={n}: {m.num_vertices} vertices, "
              f"{m.num_triangles} triangles, h={m.h:.6g}, "
              f"min_angle={m.min_angle():.2f} deg, "
              f"diameter_ratio={m.diameter_ratio():.3f}, "
              f"area={m.area:.9g}, dofs={ctx.dofs}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.subcommand == "mesh-info":
        _mesh_info(cfg)
        return EXIT_OK

    experiment, runner = _EXPERIMENTS[args.subcommand]
    try:
        table = runner(cfg)
    except (ConfigError, MeshTooCoarse, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, BackendError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    outdir = _output_dir(args, cfg, args.subcommand)
    from .report import write_report
    paths = write_report(table, cfg, outdir, experiment,
                         figures=not args.no_figures)
    for p in paths:
        print(f"wrote {p}")

    if args.check:
        fails = run_checks(experiment, table)
        for f in fails:
            print(f"CHECK FAIL: {f}", file=sys.stderr)
        if fails:
            return EXIT_CHECK
        print("all checks passed")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
