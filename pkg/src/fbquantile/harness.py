"""Monte Carlo replications, the windowed variance estimator and sweeps.

Replications of one configuration are advanced together as a batch; every
operation is elementwise across replications, so a replication's trajectory
does not depend on which other replications share its batch, and splitting
the work over processes cannot change a single bit of the output.
"""

from __future__ import annotations

import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import theory
from .protocol import ConfigError, ProtocolConfig, ProtocolEngine, StabilityWarning, Trajectory
from .streams import BOOTSTRAP, CHANNEL, OBSERVATIONS, StreamKey, step_blocks

DEFAULT_L = 100
DEFAULT_SEED = 12345
BOOTSTRAP_RESAMPLES = 200
AXES = ("m", "eps", "ell")

# uniforms held in memory per batch chunk
_BLOCK_BUDGET = 1 << 22


def build_config(data: dict) -> ProtocolConfig:
    """ProtocolConfig from a JSON mapping; ``"K": "optimal"`` resolves the gain.

    The optimal gain is the large-m minimiser from :func:`theory.optimal_gain`.
    """
    data = dict(data)
    gain = data.get("gain")
    if isinstance(gain, dict) and gain.get("K") == "optimal":
        probe = dict(data, gain={**gain, "K": 1.0})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilityWarning)
            cfg = ProtocolConfig.from_dict(probe)
        data["gain"] = {**gain, "K": theory.optimal_gain(cfg)}
    return ProtocolConfig.from_dict(data)


def _simulate(cfg: ProtocolConfig, master_seed: int, reps, engine: ProtocolEngine | None = None):
    """thetas (L, n+1) and received counts (L, n) for replications ``reps``."""
    engine = engine or ProtocolEngine(cfg, check_stability=False)
    reps = list(reps)
    L, m, n = len(reps), cfg.m, cfg.horizon
    chunk = max(1, min(256, _BLOCK_BUDGET // (L * m)))
    obs_iters = [step_blocks(StreamKey(master_seed, r, OBSERVATIONS), m, n, chunk) for r in reps]
    noisy = engine.eps > 0
    if noisy:
        noise_iters = [step_blocks(StreamKey(master_seed, r, CHANNEL), m, n, chunk) for r in reps]
    thetas = np.empty((L, n + 1))
    counts = np.empty((L, n), dtype=np.int64)
    theta = np.full(L, cfg.theta0)
    thetas[:, 0] = theta
    sched, gain, drive = cfg.schedule, engine.gain, engine.drive
    for blocks in zip(*obs_iters):
        first = blocks[0][0]
        obs = cfg.dist.ppf(np.stack([b for _, b in blocks]))
        if noisy:
            flips = np.stack([b for _, b in (next(it) for it in noise_iters)]) < engine.eps
        for j in range(obs.shape[1]):
            bits = obs[:, j, :] <= theta[:, None]
            if noisy:
                bits ^= flips[:, j, :]
            c = np.count_nonzero(bits, axis=1)
            theta = theta + (sched(first + j) * gain) * drive[c]
            thetas[:, first + j] = theta
            counts[:, first + j - 1] = c
    return thetas, counts


def run_replications(cfg: ProtocolConfig, master_seed: int, reps) -> list[Trajectory]:
    engine = ProtocolEngine(cfg, check_stability=False)
    reps = list(reps)
    thetas, counts = _simulate(cfg, master_seed, reps, engine)
    out = []
    for i, r in enumerate(reps):
        z = None if engine.z_table is None else engine.z_table[counts[i]]
        out.append(
            Trajectory(
                thetas=thetas[i],
                counts=counts[i],
                z=z,
                m=cfg.m,
                protocol=cfg.protocol,
                provenance={"master_seed": master_seed, "replication": r,
                            "streams": {"observations": OBSERVATIONS, "channel": CHANNEL}},
            )
        )
    return out


def run_replication(cfg: ProtocolConfig, master_seed: int, rep_index: int) -> Trajectory:
    """One deterministic trajectory; a pure function of its arguments."""
    return run_replications(cfg, master_seed, [rep_index])[0]


@dataclass(frozen=True)
class VarianceEstimate:
    point: float
    stderr: float
    L: int
    window: tuple[int, int]
    n_points: int
    config: dict = field(default_factory=dict)


def variance_from_trajectories(thetas: np.ndarray, theta_star: float, window, seed: int = DEFAULT_SEED,
                               resamples: int = BOOTSTRAP_RESAMPLES) -> tuple[float, float]:
    """Pooled variance of sqrt(n)(theta_n - theta*) over a window, with bootstrap stderr.

    ``thetas`` is (L, n+1) indexed by step. The stderr resamples whole
    replications with replacement.
    """
    lo, hi = window
    thetas = np.atleast_2d(thetas)
    if not 1 <= lo <= hi < thetas.shape[1]:
        raise ValueError(f"window [{lo}, {hi}] must satisfy 1 <= lo <= hi <= horizon")
    steps = np.arange(lo, hi + 1)
    err = np.sqrt(steps) * (thetas[:, lo:hi + 1] - theta_star)
    if err.size < 2:
        raise ValueError("degenerate window: need at least two pooled points")
    point = float(np.var(err, ddof=1))
    L = err.shape[0]
    if L < 2:
        return point, math.nan
    rng = StreamKey(seed, 0, BOOTSTRAP).generator()
    s1, s2 = err.sum(axis=1), (err * err).sum(axis=1)
    idx = rng.integers(0, L, size=(resamples, L))
    N = err.size
    S1, S2 = s1[idx].sum(axis=1), s2[idx].sum(axis=1)
    boot = (S2 - S1 * S1 / N) / (N - 1)
    return point, float(np.std(boot, ddof=1))


def _window_block(args):
    cfg, seed, reps, window = args
    thetas, _ = _simulate(cfg, seed, reps)
    return thetas[:, : window[1] + 1]


def simulate_window(cfg: ProtocolConfig, master_seed: int, L: int, window, workers: int | None = None) -> np.ndarray:
    """thetas[:, :hi+1] for replications 0..L-1, optionally over processes."""
    if not workers or workers <= 1:
        return _window_block((cfg, master_seed, range(L), window))
    bounds = np.linspace(0, L, min(workers, L) + 1).astype(int)
    jobs = [(cfg, master_seed, range(a, b), window) for a, b in zip(bounds, bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_window_block, jobs)), axis=0)


@dataclass(frozen=True)
class ExperimentPlan:
    """A base config mapping plus replication count, window and an optional sweep axis."""

    base: dict
    L: int = DEFAULT_L
    window: tuple[int, int] = (1800, 2000)
    axis: str | None = None
    values: tuple = ()
    master_seed: int = DEFAULT_SEED

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(w) for w in self.window))
        object.__setattr__(self, "values", tuple(self.values))
        if int(self.L) != self.L or self.L < 1:
            raise ConfigError(f"replications L must be an integer >= 1, got {self.L!r}")
        if self.axis is not None and self.axis not in AXES:
            raise ConfigError(f"sweep axis must be one of {AXES}, got {self.axis!r}")
        if self.axis is not None and not self.values:
            raise ConfigError("a sweep axis needs at least one value")
        lo, hi = self.window
        for value in self.values or (None,):
            cfg = self.config(value)
            if not 1 <= lo <= hi <= cfg.horizon:
                raise ConfigError(f"window must satisfy 1 <= n_lo <= n_hi <= horizon ({cfg.horizon}), got [{lo}, {hi}]")

    def config(self, value=None) -> ProtocolConfig:
        data = dict(self.base)
        if value is not None:
            if self.axis == "m":
                data["m"] = int(value)
            elif self.axis == "eps":
                data["eps"] = str(value)
            else:
                data["quantizer"] = f"uniform:{int(value)}"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilityWarning)
            return build_config(data)

    def to_dict(self) -> dict:
        out = {"base": self.base, "L": self.L, "window": list(self.window), "master_seed": self.master_seed}
        if self.axis is not None:
            out["axis"] = {"name": self.axis, "values": [_axis_json(v) for v in self.values]}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        unknown = set(data) - {"base", "L", "window", "axis", "master_seed"}
        if unknown:
            raise ConfigError(f"unknown plan keys: {sorted(unknown)}")
        axis = data.get("axis") or {}
        return cls(
            base=dict(data.get("base", {})),
            L=data.get("L", DEFAULT_L),
            window=tuple(data.get("window", (1800, 2000))),
            axis=axis.get("name"),
            values=tuple(axis.get("values", ())),
            master_seed=int(data.get("master_seed", DEFAULT_SEED)),
        )


def _axis_json(v):
    return str(v) if isinstance(v, Fraction) else v


def estimate_variance(plan: ExperimentPlan, value=None, workers: int | None = None) -> VarianceEstimate:
    cfg = plan.config(value)
    thetas = simulate_window(cfg, plan.master_seed, plan.L, plan.window, workers)
    point, stderr = variance_from_trajectories(thetas, cfg.theta_star, plan.window, plan.master_seed)
    lo, hi = plan.window
    return VarianceEstimate(point, stderr, plan.L, plan.window, plan.L * (hi - lo + 1), cfg.to_dict())


@dataclass(frozen=True)
class SweepRow:
    axis_name: str
    axis_value: object
    config: ProtocolConfig
    estimate: VarianceEstimate
    prediction: theory.VariancePrediction | None
    centralized_var: float

    @property
    def predicted_var(self) -> float | None:
        return None if self.prediction is None else self.prediction.scaled_variance


def _sweep_row(args) -> SweepRow:
    plan, value = args
    cfg = plan.config(value)
    est = estimate_variance(plan, value)
    try:
        pred = theory.predict(cfg)
    except ConfigError:
        pred = None
    # scaled by n, so directly comparable with the variance of sqrt(n)(theta_n - theta*)
    central = theory.centralized_baseline(cfg, cfg.m)
    return SweepRow(plan.axis, value, cfg, est, pred, central)


def sweep(plan: ExperimentPlan, workers: int | None = None) -> list[SweepRow]:
    """One row per axis value; rows are independent and returned in axis order."""
    if plan.axis is None:
        raise ConfigError("sweep needs a plan with an axis")
    jobs = [(plan, v) for v in plan.values]
    if not workers or workers <= 1:
        return [_sweep_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_row, jobs))


SWEEP_COLUMNS = ("axis_name", "axis_value", "protocol", "m", "alpha", "eps", "empirical_var", "empirical_stderr",
                 "predicted_var", "centralized_var", "L", "n", "window_lo", "window_hi")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    buf.write(",".join(SWEEP_COLUMNS) + "\n")
    for row in rows:
        cfg, est = row.config, row.estimate
        cells = (row.axis_name, row.axis_value, cfg.protocol, cfg.m, cfg.alpha, cfg.eps, est.point, est.stderr,
                 row.predicted_var, row.centralized_var, est.L, cfg.horizon, est.window[0], est.window[1])
        buf.write(",".join(_cell(c) for c in cells) + "\n")
    return buf.getvalue()


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])
