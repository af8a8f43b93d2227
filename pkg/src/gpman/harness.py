"""Experiment orchestration: configuration, randomness, and CSV outputs.

Two experiments are provided.  ``run_wce_experiment`` compares worst-case
errors of intrinsic and extrinsic Matérn regression on one manifold over a
list of seeds.  ``run_rate_experiment`` measures how the squared L2 error of
the intrinsic posterior mean decays with the data size.
"""

import logging
import math
import zlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import gp
from .fields import export_field, write_table
from .kernels import EXTRINSIC, INTRINSIC, KernelSpec, sample_prior
from .mesh import dumbbell_perimeter, gen_circle, gen_dumbbell, gen_icosphere, load_mesh
from .spectral import solve_eigs
from .wce import (EXTRINSIC_APPROX, INTRINSIC_APPROX, INTRINSIC_EXACT,
                  wce_extrinsic_approx, wce_intrinsic)

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RateReport",
    "load_config",
    "parse_config",
    "apply_overrides",
    "build_manifold_from_config",
    "rng_for",
    "sample_nodes",
    "generate_dataset",
    "run_wce_experiment",
    "run_rate_experiment",
    "truncation_schedule",
    "export_field",
    "SUMMARY_HEADER",
]

SUMMARY_HEADER = ("model", "seed", "n_data", "mean", "spatial_std")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_int_list(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.replace(" ", "").split(",") if v]


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat experiment configuration.

    ``None`` marks values derived from others: ``kappa`` from the manifold,
    ``nu_extrinsic`` from ``nu`` (plus ``d/2`` under ``paper_matching``),
    ``kappa_extrinsic_init`` from ``kappa`` and ``xprime_size`` from
    ``n_data``.
    """

    manifold: str = "icosphere"
    level: int = 4
    radius: float = 1.0
    n_vertices: int = 1556
    lobe_radius: float = 1.0
    neck_halfwidth: float = 0.2
    center_offset: float = 2.2
    mesh_path: str = ""
    mesh_format: str = ""

    nu: float = 2.5
    kappa: float | None = None
    variance: float = 1.0
    truncation: int = 500

    nu_extrinsic: float | None = None
    kappa_extrinsic_init: float | None = None
    paper_matching: bool = False
    fit_extrinsic_lengthscale: bool = True
    fit_data_size: int = 500

    noise: float = 0.0005
    n_data: int = 500
    xprime_size: int | None = None
    seeds: tuple = tuple(range(10))

    source_vertex: int = 0
    rate_f0: str = "eigenfunction:5"
    n_grid: tuple = (32, 64, 128, 256, 512)
    truncation_c: float | None = None

    spectrum_cache: str = ""
    output_dir: str = "out"

    def __post_init__(self):
        if self.manifold not in ("icosphere", "dumbbell", "circle", "mesh"):
            raise ConfigError(f"unknown manifold {self.manifold!r}")
        if self.manifold == "mesh" and not self.mesh_path:
            raise ConfigError("manifold = mesh needs mesh_path")
        for name in ("nu", "variance", "noise"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.kappa is not None and not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        if self.truncation < 1 or self.n_data < 1:
            raise ConfigError("truncation and n_data must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    @property
    def intrinsic_dim(self):
        if self.manifold in ("dumbbell", "circle"):
            return 1
        if self.manifold == "mesh":
            fmt = self.mesh_format or Path(self.mesh_path).suffix.lstrip(".")
            return 1 if fmt in ("csv", "polyline_csv") else 2
        return 2

    def resolved_kappa(self):
        if self.kappa is not None:
            return float(self.kappa)
        if self.manifold == "icosphere":
            return 0.25 * self.radius
        if self.manifold == "dumbbell":
            return dumbbell_perimeter(self.lobe_radius, self.neck_halfwidth, self.center_offset) / 8.0
        if self.manifold == "circle":
            return self.radius
        raise ConfigError("kappa must be given for mesh manifolds")

    def resolved_nu_extrinsic(self):
        if self.nu_extrinsic is not None:
            return float(self.nu_extrinsic)
        return self.nu + (0.5 * self.intrinsic_dim if self.paper_matching else 0.0)

    def intrinsic_spec(self, truncation=None):
        return KernelSpec(INTRINSIC, self.nu, self.resolved_kappa(), self.variance,
                          truncation or self.truncation, self.intrinsic_dim)

    def extrinsic_spec(self, kappa=None):
        kappa = kappa if kappa is not None else (self.kappa_extrinsic_init or self.resolved_kappa())
        return KernelSpec(EXTRINSIC, self.resolved_nu_extrinsic(), kappa, self.variance)


_OPTIONAL_FLOAT = ("kappa", "nu_extrinsic", "kappa_extrinsic_init", "truncation_c")
_OPTIONAL_INT = ("xprime_size",)


def _convert(name, value):
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    if name not in defaults:
        raise ConfigError(f"unknown config key {name!r}")
    text = str(value).strip()
    try:
        if name in _OPTIONAL_FLOAT + _OPTIONAL_INT:
            if text.lower() in ("", "none"):
                return None
            return float(text) if name in _OPTIONAL_FLOAT else int(text)
        default = defaults[name]
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, tuple):
            return tuple(_parse_int_list(text))
        return type(default)(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r} ({exc})") from None


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _convert(key, value)
    return ExperimentConfig(**values)


def apply_overrides(config, overrides):
    """Apply ``key=value`` strings on top of ``config``."""
    changes = {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        changes[key] = _convert(key, value)
    try:
        return replace(config, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=()):
    config = ExperimentConfig() if path is None else parse_config(Path(path).read_text(encoding="utf-8"))
    return apply_overrides(config, overrides)


def build_manifold_from_config(config):
    if config.manifold == "icosphere":
        return gen_icosphere(config.level, config.radius)
    if config.manifold == "dumbbell":
        return gen_dumbbell(config.n_vertices, config.lobe_radius, config.neck_halfwidth,
                            config.center_offset)
    if config.manifold == "circle":
        return gen_circle(config.n_vertices, config.radius)
    return load_mesh(config.mesh_path, config.mesh_format or None)


# ---------------------------------------------------------------------------
# randomness

def rng_for(seed, label, *extra):
    """Independent generator for one purpose, derived from the master seed.

    Streams are keyed by a fixed label (``"nodes"``, ``"prior"``,
    ``"noise"``, ...) so that changing how one stream is consumed never
    shifts another.
    """
    code = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), code, *map(int, extra)]))


def sample_nodes(n, vertex_count, seed):
    """``n`` distinct vertex indices, uniform without replacement, sorted."""
    n, vertex_count = int(n), int(vertex_count)
    if not 0 <= n <= vertex_count:
        raise ValueError(f"cannot draw {n} distinct nodes from {vertex_count}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.sort(rng.choice(vertex_count, size=n, replace=False))


def generate_dataset(f0, x, noise, seed):
    """Observations ``y_i = f0[x_i] + eps_i`` with ``eps_i ~ N(0, noise)``."""
    x = np.asarray(x, dtype=np.int64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eps = rng.standard_normal(x.size) * math.sqrt(noise)
    return gp.Dataset(x, np.asarray(f0)[x] + eps, noise)


# ---------------------------------------------------------------------------
# worst-case error experiment

@dataclass
class WceSeedResult:
    seed: int
    kappa_extrinsic: float
    fields: dict


def _spectrum(config, manifold, J):
    cache = config.spectrum_cache or None
    return solve_eigs(manifold, J, cache_dir=cache)


def run_wce_experiment(config, manifold=None, spectrum=None, write=True):
    """Worst-case errors of the three models for every seed.

    For each seed: draw data nodes, draw the truth from the intrinsic prior,
    add noise, optionally fit the extrinsic length scale by marginal
    likelihood, then evaluate the exact intrinsic error, the approximate
    extrinsic error and the approximate intrinsic control at every vertex.

    Returns
    -------
    summary : list of tuple
        Rows ``(model, seed, n_data, mean, spatial_std)``.
    results : list of WceSeedResult
    """
    manifold = manifold or build_manifold_from_config(config)
    n = manifold.n_vertices
    if config.n_data > n:
        raise ConfigError(f"n_data={config.n_data} exceeds {n} vertices")
    J = min(config.truncation, n)
    spectrum = spectrum or _spectrum(config, manifold, J)
    ispec = config.intrinsic_spec(J)
    out = Path(config.output_dir)
    targets = np.arange(n)
    xprime_size = config.xprime_size or config.n_data

    summary, results, fits = [], [], []
    for seed in config.seeds:
        x = sample_nodes(config.n_data, n, rng_for(seed, "nodes"))
        f0 = sample_prior(ispec, spectrum, rng_for(seed, "prior"))
        data = generate_dataset(f0, x, config.noise, rng_for(seed, "noise"))

        espec = config.extrinsic_spec()
        if config.fit_extrinsic_lengthscale:
            if config.n_data >= config.fit_data_size:
                fit_data = data
            else:
                xf = sample_nodes(min(config.fit_data_size, n), n, rng_for(seed, "fit_nodes"))
                fit_data = generate_dataset(f0, xf, config.noise, rng_for(seed, "fit_noise"))
            ls = gp.fit_lengthscale(espec, manifold.vertices, fit_data, espec.kappa)
            espec = espec.with_kappa(ls.kappa)
            fits.append((seed, espec.kappa, ls.log_marginal_likelihood))
            logger.info("seed %d: extrinsic kappa %.6g (lml %.6g)", seed, ls.kappa,
                        ls.log_marginal_likelihood)

        xprime = sample_nodes(xprime_size, n, rng_for(seed, "xprime"))
        seed_fields = {
            INTRINSIC_EXACT: wce_intrinsic(ispec, spectrum, x, targets, config.noise),
            EXTRINSIC_APPROX: wce_extrinsic_approx(espec, ispec, spectrum, x, targets, xprime,
                                                   config.noise, manifold.vertices),
            INTRINSIC_APPROX: wce_extrinsic_approx(ispec, ispec, spectrum, x, targets, xprime,
                                                   config.noise),
        }
        for tag, wf in seed_fields.items():
            wf.metadata.update(seed=seed)
            summary.append((tag, seed, config.n_data, wf.mean, wf.spatial_std))
            if write:
                export_field(wf.values, out / f"field_{tag}_{seed}.csv")
        results.append(WceSeedResult(seed, espec.kappa, seed_fields))
        if write:
            write_table(out / "summary.csv", SUMMARY_HEADER, summary)
            if fits:
                write_table(out / "lengthscale.csv", ("seed", "kappa_extrinsic", "lml"), fits)
    return summary, results


# ---------------------------------------------------------------------------
# contraction-rate experiment

@dataclass
class RateReport:
    """Squared L2 errors of the posterior mean against the data size."""

    n_grid: list
    errors: np.ndarray  # shape (len(n_grid), n_seeds)
    mean_errors: np.ndarray
    slope: float
    intercept: float
    theory_slope: float
    truncations: list = field(default_factory=list)


def truncation_schedule(n, nu, d, c, beta=math.inf):
    """``ceil(c * n ** (d * min(1, nu / beta) / (2 nu + d)))`` eigenpairs."""
    exponent = d * min(1.0, nu / beta) / (2.0 * nu + d)
    return int(math.ceil(c * n ** exponent))


def _parse_f0(mode):
    kind, _, arg = str(mode).partition(":")
    if kind == "eigenfunction":
        return kind, int(arg or 5)
    if kind == "matern_sample":
        return kind, float(arg)
    raise ConfigError(f"unknown f0 mode {mode!r}")


def run_rate_experiment(config, f0_mode=None, n_grid=None, truncation_c=None, manifold=None,
                        spectrum=None, write=True):
    """Empirical decay of ``||m - f0||^2_L2`` in the data size.

    The error is mass-weighted over all vertices and normalized by the
    total mass (uniform input density).  The truth is either a fixed
    eigenfunction (infinitely smooth) or an intrinsic Matérn sample of
    smoothness ``beta``.  With ``truncation_c`` the prior keeps only
    :func:`truncation_schedule` eigenpairs at each data size.
    """
    f0_mode = f0_mode or config.rate_f0
    n_grid = list(n_grid or config.n_grid)
    truncation_c = truncation_c if truncation_c is not None else config.truncation_c
    if len(n_grid) < 3:
        raise ConfigError("the rate fit needs at least 3 data sizes")
    if sorted(n_grid) != n_grid:
        raise ConfigError("n_grid must be ascending")
    manifold = manifold or build_manifold_from_config(config)
    d = manifold.dim
    n_vertices = manifold.n_vertices
    if n_grid[-1] > n_vertices:
        raise ConfigError(f"largest data size {n_grid[-1]} exceeds {n_vertices} vertices")
    J = min(config.truncation, n_vertices)
    spectrum = spectrum or _spectrum(config, manifold, J)
    nu = config.nu

    kind, arg = _parse_f0(f0_mode)
    if kind == "eigenfunction":
        f0 = spectrum.eigenvectors[:, arg]
        beta = math.inf
        # An eigenfunction is smoother than any prior; scheduling as if
        # beta = nu keeps at least as many terms as the smooth-truth limit.
        schedule_beta = nu
    else:
        beta = arg
        truth = KernelSpec(INTRINSIC, beta, config.resolved_kappa(), config.variance, J, d)
        f0 = sample_prior(truth, spectrum, rng_for(config.seeds[0], "truth"))
        schedule_beta = beta

    mass = manifold.mass_diag
    errors = np.empty((len(n_grid), len(config.seeds)))
    truncations = []
    rows = []
    for a, n in enumerate(n_grid):
        Jn = J if truncation_c is None else min(J, truncation_schedule(n, nu, d, truncation_c, schedule_beta))
        truncations.append(Jn)
        spec = config.intrinsic_spec(Jn)
        for b, seed in enumerate(config.seeds):
            x = sample_nodes(n, n_vertices, rng_for(seed, "nodes", n))
            data = generate_dataset(f0, x, config.noise, rng_for(seed, "noise", n))
            mean, _ = _posterior_mean(spec, spectrum, data)
            err = math.fsum(mass * (mean - f0) ** 2) / manifold.total_mass
            errors[a, b] = err
            rows.append((n, seed, err))

    mean_errors = errors.mean(axis=1)
    slope, intercept = np.polyfit(np.log(n_grid), np.log(mean_errors), 1)
    theory = -2.0 * min(beta, nu) / (2.0 * nu + d)
    report = RateReport(n_grid, errors, mean_errors, float(slope), float(intercept), theory,
                        truncations)
    if write:
        out = Path(config.output_dir)
        write_table(out / "rate.csv", ("n", "seed", "sq_error"), rows)
        write_table(out / "rate_summary.csv",
                    ("slope", "intercept", "theory_slope", "f0", "truncation_c"),
                    [(report.slope, report.intercept, report.theory_slope, f0_mode,
                      "none" if truncation_c is None else truncation_c)])
    return report


def _posterior_mean(spec, spectrum, data):
    fit = gp.fit(spec, spectrum, data)
    targets = np.arange(spectrum.n_vertices)
    Ktx = gp.gram(spec, spectrum, targets, data.x)
    return Ktx @ fit.alpha, fit
