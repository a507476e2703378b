"""Decentralized quantile-estimation protocols.

Three fusion-center protocols share one skeleton. Each sensor sends the bit
1{X <= theta}; the fusion center sees the (possibly BSC-corrupted) count of
ones and moves theta by ``eps_n * gain * drive(count)``:

* ``mbf``: drive = alpha - count/m (the count itself is fed back).
* ``obf``: drive = Z - beta with Z = 1{count/m <= alpha} (one feedback bit).
* ``qbf``: drive = Q(alpha - count/m) - beta for a quantizer Q.

``drive`` depends only on the count, so it is tabulated once per config from
exact rationals. Two configs whose tables agree therefore produce
bit-identical trajectories from the same observations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .distributions import SourceDistribution
from .kernel import (
    as_level,
    quantized_expectation,
    quantized_expectation_exact,
    tail_G,
    tail_G_exact,
)
from .quantizer import QuantizerSpec, parse_quantizer

PROTOCOLS = ("mbf", "obf", "qbf")

# beta is evaluated in exact rational arithmetic up to this many sensors
EXACT_BETA_MAX_M = 256


class ConfigError(ValueError):
    """A protocol or experiment configuration violates an invariant."""


class StabilityWarning(UserWarning):
    """The gain is below the asymptotic-normality threshold."""


@dataclass(frozen=True)
class StepSchedule:
    """eps_n = 1/(n + offset) for the n-th update, n >= 1."""

    kind: str = "one-over-n"
    offset: int = 0

    def __post_init__(self):
        if self.kind != "one-over-n":
            raise ConfigError(f"unknown step schedule {self.kind!r}")
        if self.offset < 0:
            raise ConfigError("step schedule offset must be >= 0")

    def __call__(self, n: int) -> float:
        return 1.0 / (n + self.offset)


@dataclass(frozen=True)
class GainRule:
    """Constant gain K, or decaying gain K/sqrt(m)."""

    kind: str = "constant"
    K: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "decaying"):
            raise ConfigError(f"gain kind must be 'constant' or 'decaying', got {self.kind!r}")
        if not (math.isfinite(self.K) and self.K > 0):
            raise ConfigError(f"gain K must be > 0, got {self.K!r}")

    def value(self, m: int) -> float:
        return self.K if self.kind == "constant" else self.K / math.sqrt(m)


@dataclass(frozen=True)
class ChannelModel:
    """Binary symmetric channel on every sensor-to-fusion link."""

    eps: Fraction = Fraction(0)

    def __post_init__(self):
        try:
            eps = as_level(self.eps)
        except ValueError as exc:
            raise ConfigError(f"channel eps must satisfy 0 <= eps < 1/2: {exc}") from None
        if not eps < Fraction(1, 2):
            raise ConfigError(f"channel eps must satisfy 0 <= eps < 1/2, got {eps}")
        object.__setattr__(self, "eps", eps)


def channel_corrupt(bits: np.ndarray, eps: float, uniforms: np.ndarray) -> np.ndarray:
    """Flip each bit where its uniform falls below ``eps``."""
    return np.logical_xor(bits, np.asarray(uniforms) < float(eps))


def local_decision(x, theta) -> np.ndarray | int:
    """Sensor bit 1{x <= theta}."""
    out = np.asarray(x) <= theta
    return int(out) if out.ndim == 0 else out


def adjusted_alpha(alpha, eps) -> Fraction:
    """(1 - 2 eps) alpha + eps: the level whose received-bit fixed point is alpha."""
    alpha, eps = as_level(alpha), as_level(eps)
    if not eps < Fraction(1, 2):
        raise ValueError(f"eps must be < 1/2, got {eps}")
    return (1 - 2 * eps) * alpha + eps


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: str = "mbf"
    m: int = 11
    alpha: Fraction = Fraction(3, 10)
    gain: GainRule = field(default_factory=GainRule)
    schedule: StepSchedule = field(default_factory=StepSchedule)
    theta0: float | None = None
    channel: ChannelModel = field(default_factory=ChannelModel)
    adjust_alpha: bool = True
    horizon: int = 2000
    quantizer: QuantizerSpec | None = None
    dist: SourceDistribution = field(default_factory=SourceDistribution)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigError(f"m must be an integer >= 1, got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))
        try:
            alpha = as_level(self.alpha)
        except ValueError:
            raise ConfigError(f"alpha* must satisfy 0 < alpha* < 1, got {self.alpha!r}") from None
        if not 0 < alpha < 1:
            raise ConfigError(f"alpha* must satisfy 0 < alpha* < 1, got {alpha}")
        object.__setattr__(self, "alpha", alpha)
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon n must be an integer >= 1, got {self.horizon!r}")
        object.__setattr__(self, "horizon", int(self.horizon))
        if self.theta0 is None:
            object.__setattr__(self, "theta0", self.dist.default_theta0())
        elif not math.isfinite(self.theta0):
            raise ConfigError("theta0 must be finite")
        object.__setattr__(self, "theta0", float(self.theta0))
        if self.protocol == "qbf" and self.quantizer is None:
            raise ConfigError("protocol qbf requires a quantizer")
        if self.protocol != "qbf" and self.quantizer is not None:
            raise ConfigError(f"protocol {self.protocol} does not take a quantizer")

    @property
    def eps(self) -> Fraction:
        return self.channel.eps

    @property
    def effective_alpha(self) -> Fraction:
        """Level used at the fusion center: alpha-tilde(eps) when adjusting."""
        return adjusted_alpha(self.alpha, self.eps) if self.adjust_alpha else self.alpha

    @property
    def gain_value(self) -> float:
        """K for mbf and constant-gain rules, K/sqrt(m) for decaying gain."""
        return self.gain.value(self.m)

    @property
    def theta_star(self) -> float:
        return self.dist.quantile(self.alpha)

    @property
    def density_at_theta_star(self) -> float:
        return float(self.dist.density(self.theta_star))

    def replace(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "m": self.m,
            "alpha": str(self.alpha),
            "gain": {"kind": self.gain.kind, "K": self.gain.K},
            "schedule": {"kind": self.schedule.kind, "offset": self.schedule.offset},
            "theta0": self.theta0,
            "eps": str(self.eps),
            "adjust_alpha": self.adjust_alpha,
            "horizon": self.horizon,
            "quantizer": self.quantizer.to_dict() if self.quantizer is not None else None,
            "dist": self.dist.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        """Build a config from a JSON-style mapping; unknown keys are rejected."""
        known = {
            "protocol", "m", "alpha", "gain", "schedule", "theta0", "eps",
            "adjust_alpha", "horizon", "quantizer", "dist",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kwargs: dict = {}
            for key in ("protocol", "m", "horizon", "theta0", "adjust_alpha"):
                if key in data and data[key] is not None:
                    kwargs[key] = data[key]
            if "alpha" in data:
                try:
                    kwargs["alpha"] = as_level(data["alpha"])
                except (ValueError, TypeError, ZeroDivisionError):
                    raise ConfigError(f"alpha* must satisfy 0 < alpha* < 1, got {data['alpha']!r}") from None
            if data.get("gain") is not None:
                gain = data["gain"]
                kwargs["gain"] = GainRule(gain.get("kind", "constant"), float(gain.get("K", 1.0)))
            if data.get("schedule") is not None:
                sched = data["schedule"]
                kwargs["schedule"] = StepSchedule(sched.get("kind", "one-over-n"), int(sched.get("offset", 0)))
            if "eps" in data:
                kwargs["channel"] = ChannelModel(as_level(data["eps"]))
            if data.get("dist") is not None:
                dist = data["dist"]
                kwargs["dist"] = SourceDistribution.parse(dist) if isinstance(dist, str) else SourceDistribution.from_dict(dist)
            quant = data.get("quantizer")
            if quant is not None:
                if isinstance(quant, str):
                    probe = cls(**{k: v for k, v in kwargs.items() if k != "protocol"}, protocol="mbf")
                    kwargs["quantizer"] = parse_quantizer(quant, alpha=probe.effective_alpha, m=probe.m)
                else:
                    kwargs["quantizer"] = QuantizerSpec.from_dict(quant)
        except ConfigError:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kwargs)


def feedback_bits(cfg: ProtocolConfig) -> int:
    """Bits broadcast by the fusion center per step."""
    if cfg.protocol == "mbf":
        return max(1, math.ceil(math.log2(cfg.m + 1)))
    if cfg.protocol == "obf":
        return 1
    return cfg.quantizer.feedback_bits


def beta_offset(protocol: str, m: int, alpha_eff, quantizer: QuantizerSpec | None = None, *, exact: bool | None = None):
    """Offset that zeroes the drift at the target level.

    ``G_m(alpha, alpha)`` for obf and ``G_{m,l}(alpha, alpha)`` for qbf. Returned
    as a Fraction when evaluated exactly (small m), else a float.
    """
    if protocol == "mbf":
        raise ValueError("the mbf protocol has no beta offset")
    alpha_eff = as_level(alpha_eff)
    if exact is None:
        exact = m <= EXACT_BETA_MAX_M
    if protocol == "obf":
        return tail_G_exact(m, alpha_eff, alpha_eff) if exact else tail_G(m, alpha_eff, alpha_eff)
    if quantizer is None:
        raise ValueError("qbf needs a quantizer to compute beta")
    if exact:
        return quantized_expectation_exact(m, alpha_eff, alpha_eff, quantizer)
    return quantized_expectation(m, alpha_eff, alpha_eff, quantizer)


def _stability_check(cfg: ProtocolConfig) -> None:
    try:
        p = cfg.density_at_theta_star
    except ValueError:
        return
    if not p > 0:
        return
    damp = float(1 - 2 * cfg.eps)
    a = float(cfg.effective_alpha * (1 - cfg.effective_alpha))
    if cfg.protocol == "mbf":
        ok = cfg.gain.K * damp * p > 0.5
        need = f"K > {1 / (2 * damp * p):.6g}"
    elif cfg.protocol == "obf":
        limit = math.sqrt(2 * math.pi * a) / (2 * damp * p * math.sqrt(cfg.m))
        ok = cfg.gain_value > limit
        need = f"K_m > {limit:.6g}"
    else:
        return
    if not ok:
        warnings.warn(f"gain below the asymptotic-normality threshold ({need})", StabilityWarning, stacklevel=3)


@dataclass
class ProtocolState:
    theta: float
    step_index: int = 0
    beta: float | None = None


@dataclass
class Trajectory:
    """theta_0..theta_n with the received count and feedback value per step."""

    thetas: np.ndarray
    counts: np.ndarray
    z: np.ndarray | None
    m: int
    protocol: str
    provenance: dict = field(default_factory=dict)

    @property
    def aggregates(self) -> np.ndarray:
        return self.counts / self.m

    @property
    def horizon(self) -> int:
        return len(self.counts)

    def csv_lines(self) -> list[str]:
        lines = ["step,theta,aggregate,z"]
        lines.append(f"0,{float(self.thetas[0])!r},,")
        for n in range(1, len(self.thetas)):
            c = int(self.counts[n - 1])
            agg = repr(c / self.m)
            if self.z is None:
                zs = ""
            elif self.protocol == "obf":
                zs = str(int(self.z[n - 1]))
            else:
                zs = repr(float(self.z[n - 1]))
            lines.append(f"{n},{float(self.thetas[n])!r},{agg},{zs}")
        return lines

    def to_csv(self) -> str:
        return "\n".join(self.csv_lines()) + "\n"


class ProtocolEngine:
    """Deterministic state machine for one protocol configuration."""

    def __init__(self, cfg: ProtocolConfig, *, check_stability: bool = True):
        self.cfg = cfg
        self.m = cfg.m
        self.alpha_eff = cfg.effective_alpha
        self.gain = cfg.gain_value
        self.eps = float(cfg.eps)
        if check_stability:
            _stability_check(cfg)
        if cfg.protocol == "mbf":
            self.beta = None
        else:
            self.beta = beta_offset(cfg.protocol, cfg.m, self.alpha_eff, cfg.quantizer)
        self.z_table, self.drive = self._tables()

    def _tables(self):
        m, alpha = self.m, self.alpha_eff
        levels = [Fraction(c, m) for c in range(m + 1)]
        if self.cfg.protocol == "mbf":
            drive = [float(alpha - y) for y in levels]
            return None, np.array(drive)
        beta = Fraction(self.beta)
        if self.cfg.protocol == "obf":
            z = [1 if y <= alpha else 0 for y in levels]
        else:
            q = self.cfg.quantizer
            z = [q(alpha - y) for y in levels]
        drive = [float(Fraction(zc) - beta) for zc in z]
        z_arr = np.array(z, dtype=np.int64) if self.cfg.protocol == "obf" else np.array([float(zc) for zc in z])
        return z_arr, np.array(drive)

    @property
    def beta_float(self) -> float | None:
        return None if self.beta is None else float(self.beta)

    def initial_state(self) -> ProtocolState:
        return ProtocolState(theta=self.cfg.theta0, step_index=0, beta=self.beta_float)

    def received_count(self, theta: float, observations, noise_uniforms=None) -> int:
        bits = np.asarray(observations) <= theta
        if self.eps > 0:
            if noise_uniforms is None:
                raise ValueError("a noisy channel needs noise uniforms")
            bits = channel_corrupt(bits, self.eps, noise_uniforms)
        return int(np.count_nonzero(bits))

    def increment(self, n: int, count: int) -> float:
        return (self.cfg.schedule(n) * self.gain) * self.drive[count]

    def step(self, state: ProtocolState, observations, noise_uniforms=None) -> ProtocolState:
        """One round: decisions, uplink, aggregation, feedback, update."""
        n = state.step_index + 1
        count = self.received_count(state.theta, observations, noise_uniforms)
        theta = state.theta + self.increment(n, count)
        return ProtocolState(theta=theta, step_index=n, beta=state.beta)

    def max_increment(self, n: int) -> float:
        """Bound on |theta_{n} - theta_{n-1}| for the n-th update."""
        scale = self.cfg.schedule(n) * self.gain
        if self.cfg.protocol == "mbf":
            a = float(self.alpha_eff)
            return scale * max(a, 1 - a)
        b = self.beta_float
        if self.cfg.protocol == "obf":
            return scale * max(b, 1 - b)
        outs = [float(o) for o in self.cfg.quantizer.outputs]
        return scale * (max(outs) - min(outs) + abs(b))

    def run_block(self, theta: float, first_step: int, observations: np.ndarray, noise=None):
        """Advance over rows of ``observations``; returns (thetas, counts)."""
        rows = observations.shape[0]
        thetas = np.empty(rows)
        counts = np.empty(rows, dtype=np.int64)
        sched, gain, drive = self.cfg.schedule, self.gain, self.drive
        noisy = self.eps > 0
        for j in range(rows):
            bits = observations[j] <= theta
            if noisy:
                bits ^= noise[j] < self.eps
            c = int(np.count_nonzero(bits))
            theta = theta + (sched(first_step + j) * gain) * drive[c]
            thetas[j] = theta
            counts[j] = c
        return thetas, counts
