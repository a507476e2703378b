"""Plot-data generation for the convergence, variance and quantizer figures.

Each figure is a list of :class:`Series`; each series is written to its own
whitespace-delimited ``.dat`` file readable by gnuplot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from . import theory
from .harness import DEFAULT_SEED, ExperimentPlan, build_config, run_replications, sweep
from .quantizer import uniform_quantizer

FIGURE_IDS = ("2a", "2b", "2c", "3a", "3b")

ALPHA = Fraction(3, 10)
M_GRID = (11, 31, 101, 301, 1001)
ELL_GRID = tuple(2**k for k in range(12))
EPS_GRID = tuple(Fraction(k, 100) for k in range(50))


@dataclass
class Series:
    name: str
    description: str
    columns: tuple[str, ...]
    rows: list[tuple]

    def to_dat(self) -> str:
        lines = ["# " + " ".join(self.columns)]
        for row in self.rows:
            lines.append(" ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row))
        return "\n".join(lines) + "\n"


def figure_2a(seed: int = DEFAULT_SEED, paths: int = 5, **_) -> list[Series]:
    cfg = build_config({"protocol": "mbf", "m": 11, "alpha": str(ALPHA), "horizon": 2000})
    out = []
    for traj in run_replications(cfg, seed, range(paths)):
        rep = traj.provenance["replication"]
        rows = [(n, float(t)) for n, t in enumerate(traj.thetas)]
        out.append(Series(f"2a_mbf_path_rep{rep}", f"mbf sample path, m=11, alpha=3/10, K=1, replication {rep}",
                          ("step", "theta"), rows))
    return out


def _variance_vs_m(tag: str, bases: dict, seed: int, L: int, workers: int | None) -> list[Series]:
    out = []
    for label, base in bases.items():
        plan = ExperimentPlan(base=base, L=L, axis="m", values=M_GRID, master_seed=seed)
        rows = sweep(plan, workers=workers)
        out.append(Series(f"{tag}_{label}_empirical", f"{label}: empirical variance of sqrt(n)(theta_n - theta*), L={L}",
                          ("m", "variance", "stderr"),
                          [(r.config.m, r.estimate.point, r.estimate.stderr) for r in rows]))
        out.append(Series(f"{tag}_{label}_theory", f"{label}: predicted variance (exact finite-m form)",
                          ("m", "variance"),
                          [(r.config.m, r.predicted_var) for r in rows if r.predicted_var is not None]))
        limits = [(r.config.m, r.prediction.limit_variance) for r in rows
                  if r.prediction is not None and r.prediction.limit_variance is not None]
        if label.startswith("obf"):
            out.append(Series(f"{tag}_{label}_limit", f"{label}: large-m closed form", ("m", "variance"), limits))
    central = [(m, theory.centralized_baseline(build_config({"m": m, "alpha": str(ALPHA)}), m)) for m in M_GRID]
    out.append(Series(f"{tag}_centralized", "centralized sample quantile, scaled by n", ("m", "variance"), central))
    return out


def figure_2b(seed: int = DEFAULT_SEED, L: int = 100, workers: int | None = None, **_) -> list[Series]:
    common = {"alpha": str(ALPHA), "horizon": 2000, "gain": {"kind": "constant", "K": 1.0}}
    return _variance_vs_m("2b", {"mbf": {**common, "protocol": "mbf"}, "obf": {**common, "protocol": "obf"}},
                          seed, L, workers)


def figure_2c(seed: int = DEFAULT_SEED, L: int = 100, workers: int | None = None, **_) -> list[Series]:
    # started at theta*: the decaying obf gain cannot cover a macroscopic gap within n = 2000 steps
    common = {"alpha": str(ALPHA), "horizon": 2000, "theta0": float(ALPHA)}
    bases = {
        "mbf": {**common, "protocol": "mbf", "gain": {"kind": "constant", "K": "optimal"}},
        "obf_decaying": {**common, "protocol": "obf", "gain": {"kind": "decaying", "K": "optimal"}},
    }
    return _variance_vs_m("2c", bases, seed, L, workers)


def figure_3a(**_) -> list[Series]:
    m = 4000
    gauss, exact = [], []
    for ell in ELL_GRID:
        const = theory.quantizer_constants(uniform_quantizer(ell, ALPHA, m), m, ALPHA)
        gauss.append((ell, const["kappa"]))
        exact.append((ell, const["kappa_exact"]))
    return [
        Series("3a_kappa_exact", "kappa with the exact finite-m drift slope, rescaled by the centralized constant, m=4000",
               ("ell", "kappa"), exact),
        Series("3a_kappa_gaussian", "kappa with the Gaussian-limit drift slope, rescaled by the centralized constant, m=4000",
               ("ell", "kappa"), gauss),
    ]


def figure_3b(**_) -> list[Series]:
    # uniform(0,1): p = 1 at every interior quantile
    p = 1.0
    vm, v1 = [], []
    for eps in EPS_GRID:
        at = (1 - 2 * eps) * ALPHA + eps
        a = float(at * (1 - at))
        damp = float(1 - 2 * eps)
        vm.append((float(eps), theory.noise_prefactor_mbf(1.0 / (damp * p), p, ALPHA, eps)))
        v1.append((float(eps), theory.noise_prefactor_1bf(math.sqrt(2 * math.pi * a) / (damp * p), p, ALPHA, eps)))
    return [
        Series("3b_V_m", "m-bf noise prefactor V_m(eps), optimal gain per eps, uniform(0,1), alpha=3/10",
               ("eps", "V"), vm),
        Series("3b_V_1", "1-bf noise prefactor V_1(eps), optimal decaying gain per eps, uniform(0,1), alpha=3/10",
               ("eps", "V"), v1),
    ]


_BUILDERS = {"2a": figure_2a, "2b": figure_2b, "2c": figure_2c, "3a": figure_3a, "3b": figure_3b}


def figure_series(fig_id: str, **options) -> list[Series]:
    if fig_id not in _BUILDERS:
        raise ValueError(f"unknown figure id {fig_id!r}; expected one of {FIGURE_IDS}")
    return _BUILDERS[fig_id](**options)


def readme_text(fig_id: str, series: list[Series]) -> str:
    lines = [f"Figure {fig_id} plot data", ""]
    for s in series:
        lines.append(f"{s.name}.dat: {s.description}; columns: {' '.join(s.columns)}")
    return "\n".join(lines) + "\n"
