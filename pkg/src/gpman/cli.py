"""Command line entry point: ``gpman <subcommand> --config PATH --out DIR``."""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .fields import export_field, write_table
from .gp import FactorizationError
from .kernels import kernel_field, sample_prior
from .mesh import MeshError
from .spectral import ConvergenceError, solve_eigs, weyl_check

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

logger = logging.getLogger("gpman")


def _setup(config):
    manifold = harness.build_manifold_from_config(config)
    J = min(config.truncation, manifold.n_vertices)
    spectrum = solve_eigs(manifold, J, cache_dir=config.spectrum_cache or None)
    return manifold, spectrum


def cmd_eig(config):
    manifold, spectrum = _setup(config)
    out = Path(config.output_dir)
    write_table(out / "eigenvalues.csv", ("j", "eigenvalue"),
                [(j, float(lam)) for j, lam in enumerate(spectrum.eigenvalues)])
    if spectrum.size >= 32:
        weyl = weyl_check(spectrum, manifold.dim)
        write_table(out / "weyl.csv", ("slope", "expected_slope", "constant"),
                    [(weyl.slope, weyl.expected_slope, weyl.constant)])
        print(f"weyl slope {weyl.slope:.4f} (expected {weyl.expected_slope:.4f})")
    print(f"{spectrum.size} eigenpairs of {manifold.n_vertices} vertices, "
          f"total mass {spectrum.total_mass:.10g}")


def cmd_sample(config):
    _, spectrum = _setup(config)
    spec = config.intrinsic_spec(spectrum.size)
    for seed in config.seeds:
        f = sample_prior(spec, spectrum, harness.rng_for(seed, "prior"))
        export_field(f, Path(config.output_dir) / f"field_sample_{seed}.csv")


def cmd_kernel_field(config):
    manifold, spectrum = _setup(config)
    out = Path(config.output_dir)
    x0 = config.source_vertex
    export_field(kernel_field(config.intrinsic_spec(spectrum.size), spectrum, x0),
                 out / f"field_kernel_intrinsic_{x0}.csv")
    export_field(kernel_field(config.extrinsic_spec(), manifold, x0),
                 out / f"field_kernel_extrinsic_{x0}.csv")


def cmd_wce(config):
    summary, _ = harness.run_wce_experiment(config)
    for model in ("intrinsic_exact", "extrinsic_approx", "intrinsic_approx"):
        means = [row[3] for row in summary if row[0] == model]
        print(f"{model:17s} mean over seeds {np.mean(means):.6g}")


def cmd_rate(config):
    report = harness.run_rate_experiment(config)
    print(f"slope {report.slope:.4f} (theory {report.theory_slope:.4f})")


COMMANDS = {
    "eig": cmd_eig,
    "sample": cmd_sample,
    "kernel-field": cmd_kernel_field,
    "wce": cmd_wce,
    "rate": cmd_rate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="gpman", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one configuration key")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--paper-matching", action="store_true",
                        help="use nu + d/2 for the extrinsic smoothness")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = harness.load_config(args.config, args.overrides)
        if args.out:
            config = replace(config, output_dir=args.out)
        if args.paper_matching:
            config = replace(config, paper_matching=True)
    except (harness.ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        COMMANDS[args.command](config)
    except (harness.ConfigError, MeshError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, FactorizationError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
