"""Closed-form drift, variance and stability quantities for the protocols.

All predictions refer to the scaled error sqrt(n)(theta_n - theta*). The
quantity ``gamma`` is the negative slope of the mean field at theta*; a
prediction is only emitted when gamma > 1/2.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .kernel import (
    as_level,
    cell_probabilities,
    cell_probabilities_exact,
    quantized_expectation,
    quantized_expectation_exact,
    quantized_expectation_partial_r,
    tail_G,
    tail_G_exact,
    tail_G_partial_r,
)
from .protocol import EXACT_BETA_MAX_M, ConfigError, GainRule, ProtocolConfig, adjusted_alpha, beta_offset
from .quantizer import QuantizerSpec

RATE_NM = "1/(nm)"
RATE_N_SQRT_M = "1/(n*sqrt(m))"


@dataclass(frozen=True)
class VariancePrediction:
    protocol: str
    m: int
    alpha: str
    eps: str
    gain: float
    stability_ok: bool
    stability_margin: float
    gamma: float
    mse_rate: str
    scaled_variance: float | None = None
    limit_variance: float | None = None
    leading_variance: float | None = None
    prefactor: float | None = None
    kappa: float | None = None
    kappa_exact: float | None = None
    kappa_raw: float | None = None
    ratio_to_centralized: float | None = None
    limit_ratio_to_centralized: float | None = None

    def to_record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None or k == "scaled_variance"}


def _a(level) -> float:
    level = Fraction(level)
    return float(level * (1 - level))


def _p(cfg: ProtocolConfig) -> float:
    p = cfg.density_at_theta_star
    if not p > 0:
        raise ConfigError("the source density must be positive at theta*")
    return p


def received_level(cfg: ProtocolConfig, theta: float):
    """P(received bit = 1) at theta: eps + (1 - 2 eps) F(theta).

    Exact (a Fraction) at theta*, where F(theta*) = alpha by definition.
    """
    eps = cfg.eps
    if theta == cfg.theta_star:
        return eps + (1 - 2 * eps) * cfg.alpha
    return float(eps) + float(1 - 2 * eps) * float(cfg.dist.cdf(theta))


def _beta(cfg: ProtocolConfig):
    return beta_offset(cfg.protocol, cfg.m, cfg.effective_alpha, cfg.quantizer)


def _feedback_mean(cfg: ProtocolConfig, r):
    """E[Z] given received-bit probability r (G_m or G_{m,l})."""
    alpha = cfg.effective_alpha
    exact = isinstance(r, Fraction) and cfg.m <= EXACT_BETA_MAX_M
    if cfg.protocol == "obf":
        return tail_G_exact(cfg.m, r, alpha) if exact else tail_G(cfg.m, r, alpha)
    if exact:
        return quantized_expectation_exact(cfg.m, r, alpha, cfg.quantizer)
    return quantized_expectation(cfg.m, r, alpha, cfg.quantizer)


def mean_field(cfg: ProtocolConfig, theta: float) -> float:
    """Expected update direction h(theta) (per unit step size)."""
    r = received_level(cfg, theta)
    if cfg.protocol == "mbf":
        return cfg.gain_value * float(cfg.effective_alpha - r) if isinstance(r, Fraction) \
            else cfg.gain_value * (float(cfg.effective_alpha) - r)
    diff = _feedback_mean(cfg, r) - _beta(cfg)
    return cfg.gain_value * float(diff)


def conditional_variance(cfg: ProtocolConfig, theta: float) -> float:
    """Variance of the update direction at theta, R(theta)."""
    r = float(received_level(cfg, theta))
    K = cfg.gain_value
    if cfg.protocol == "mbf":
        return K * K * r * (1.0 - r) / cfg.m
    if cfg.protocol == "obf":
        g = tail_G(cfg.m, r, cfg.effective_alpha)
        return K * K * g * (1.0 - g)
    probs = cell_probabilities(cfg.m, r, cfg.effective_alpha, cfg.quantizer)
    outs = np.asarray(cfg.quantizer.outputs, dtype=float)
    mean = float(np.dot(outs, probs))
    return K * K * max(float(np.dot(outs * outs, probs)) - mean * mean, 0.0)


def drift_slope(cfg: ProtocolConfig) -> float:
    """gamma = -h'(theta*), from the exact derivative of the feedback mean."""
    p = _p(cfg)
    damp = float(1 - 2 * cfg.eps)
    alpha = cfg.effective_alpha
    if cfg.protocol == "mbf":
        dmean = -1.0
    elif cfg.protocol == "obf":
        dmean = tail_G_partial_r(cfg.m, alpha, alpha)
    else:
        dmean = quantized_expectation_partial_r(cfg.m, alpha, alpha, cfg.quantizer)
    return -cfg.gain_value * damp * p * dmean


def _centralized_scaled(cfg: ProtocolConfig) -> float:
    return _a(cfg.alpha) / (_p(cfg) ** 2 * cfg.m)


def _rate(cfg: ProtocolConfig) -> str:
    if cfg.protocol == "mbf" or cfg.gain.kind == "decaying":
        return RATE_NM
    return RATE_N_SQRT_M


def _record(cfg, gamma, **values) -> VariancePrediction:
    ok = gamma > 0.5
    if not ok:
        values = {k: v for k, v in values.items() if k.startswith("kappa")}
    else:
        base = _centralized_scaled(cfg)
        if values.get("scaled_variance") is not None:
            values["ratio_to_centralized"] = values["scaled_variance"] / base
        if values.get("limit_variance") is not None:
            values["limit_ratio_to_centralized"] = values["limit_variance"] / base
    return VariancePrediction(
        protocol=cfg.protocol,
        m=cfg.m,
        alpha=str(cfg.alpha),
        eps=str(cfg.eps),
        gain=cfg.gain_value,
        stability_ok=ok,
        stability_margin=gamma - 0.5,
        gamma=gamma,
        mse_rate=_rate(cfg),
        **values,
    )


def predict_mbf(cfg: ProtocolConfig) -> VariancePrediction:
    """K^2 a~ / ((2 gamma - 1) m) with gamma = K (1 - 2 eps) p."""
    if cfg.protocol != "mbf":
        raise ConfigError("predict_mbf needs an mbf config")
    gamma = drift_slope(cfg)
    K = cfg.gain_value
    var = K * K * _a(cfg.effective_alpha) / ((2.0 * gamma - 1.0) * cfg.m) if gamma > 0.5 else None
    return _record(cfg, gamma, scaled_variance=var, limit_variance=var, leading_variance=var)


def _obf_limit(cfg: ProtocolConfig) -> tuple[float | None, float]:
    """Large-m closed form and its leading term for the configured gain rule."""
    p = _p(cfg) * float(1 - 2 * cfg.eps)
    root = math.sqrt(2.0 * math.pi * _a(cfg.effective_alpha))
    K, m = cfg.gain.K, cfg.m
    if cfg.gain.kind == "constant":
        den = 8.0 * K * p * math.sqrt(m) - 4.0 * root
        limit = K * K * root / den if den > 0 else None
        return limit, K * root / (8.0 * p * math.sqrt(m))
    den = 8.0 * K * p - 4.0 * root
    limit = K * K * root / den / m if den > 0 else None
    return limit, limit


def predict_1bf(cfg: ProtocolConfig) -> VariancePrediction:
    """Exact finite-m variance K_m^2 beta(1-beta)/(2 gamma_m - 1) plus large-m forms."""
    if cfg.protocol != "obf":
        raise ConfigError("predict_1bf needs an obf config")
    gamma = drift_slope(cfg)
    beta = float(_beta(cfg))
    K = cfg.gain_value
    exact = K * K * beta * (1.0 - beta) / (2.0 * gamma - 1.0) if gamma > 0.5 else None
    limit, leading = _obf_limit(cfg)
    return _record(cfg, gamma, scaled_variance=exact, limit_variance=limit, leading_variance=leading)


def gaussian_slope_sum(quantizer: QuantizerSpec, m: int, alpha) -> float:
    """sum_k r_k [exp(-m s_k^2 / 2a) - exp(-m s_{k+1}^2 / 2a)], infinite ends give 0."""
    a = _a(alpha)
    edges = [-math.inf, *(float(b) for b in quantizer.breakpoints), math.inf]
    gauss = [0.0 if math.isinf(e) else math.exp(-m * e * e / (2.0 * a)) for e in edges]
    return sum(float(r) * (gauss[k] - gauss[k + 1]) for k, r in enumerate(quantizer.outputs))


def quantizer_constants(quantizer: QuantizerSpec, m: int, alpha) -> dict:
    """kappa (Gaussian slope), kappa_exact (exact slope) and their ingredients at r = x = alpha."""
    alpha = Fraction(alpha)
    a = _a(alpha)
    if m <= EXACT_BETA_MAX_M:
        probs = [float(p) for p in cell_probabilities_exact(m, alpha, alpha, quantizer)]
    else:
        probs = list(cell_probabilities(m, alpha, alpha, quantizer))
    outs = np.asarray(quantizer.outputs, dtype=float)
    probs = np.asarray(probs)
    mean = float(np.dot(outs, probs))
    spread = max(float(np.dot(outs * outs, probs)) - mean * mean, 0.0)
    slope_gauss = gaussian_slope_sum(quantizer, m, alpha)
    dG = quantized_expectation_partial_r(m, alpha, alpha, quantizer)
    slope_exact = -dG * math.sqrt(2.0 * math.pi * a / m)
    if slope_gauss == 0.0 or slope_exact == 0.0:
        raise ConfigError("degenerate quantizer: the drift slope sum is zero (constant output?)")
    return {
        "spread": spread,
        "slope_gauss": slope_gauss,
        "slope_exact": slope_exact,
        "dG": dG,
        "kappa": 2.0 * math.pi * spread / slope_gauss**2,
        "kappa_exact": 2.0 * math.pi * spread / slope_exact**2,
    }


def kappa(quantizer: QuantizerSpec, m: int, alpha) -> float:
    """Quantizer constant, already rescaled by the centralized constant (1 for m-bf)."""
    return quantizer_constants(quantizer, m, alpha)["kappa"]


def kappa_exact(quantizer: QuantizerSpec, m: int, alpha) -> float:
    """kappa with the exact finite-m slope in place of the Gaussian one; always >= 1."""
    return quantizer_constants(quantizer, m, alpha)["kappa_exact"]


def predict_qbf(cfg: ProtocolConfig, quantizer: QuantizerSpec | None = None) -> VariancePrediction:
    if cfg.protocol != "qbf" and quantizer is None:
        raise ConfigError("predict_qbf needs a qbf config or a quantizer")
    if quantizer is not None:
        cfg = cfg.replace(protocol="qbf", quantizer=quantizer)
    const = quantizer_constants(cfg.quantizer, cfg.m, cfg.effective_alpha)
    gamma = drift_slope(cfg)
    K = cfg.gain_value
    p = _p(cfg) * float(1 - 2 * cfg.eps)
    a = _a(cfg.effective_alpha)
    k_eff = K * math.sqrt(cfg.m) * const["slope_gauss"] / math.sqrt(2.0 * math.pi * a)
    exact = K * K * const["spread"] / (2.0 * gamma - 1.0) if gamma > 0.5 else None
    den = 2.0 * k_eff * p - 1.0
    limit = const["kappa"] * a * k_eff**2 / (den * cfg.m) if den > 0 else None
    return _record(
        cfg,
        gamma,
        scaled_variance=exact,
        limit_variance=limit,
        kappa=const["kappa"],
        kappa_exact=const["kappa_exact"],
        kappa_raw=const["kappa"] * _a(cfg.alpha) / _p(cfg) ** 2,
    )


def predict(cfg: ProtocolConfig) -> VariancePrediction:
    if cfg.protocol == "mbf":
        return predict_mbf(cfg)
    if cfg.protocol == "obf":
        return predict_1bf(cfg)
    return predict_qbf(cfg)


def predict_noisy(cfg: ProtocolConfig) -> VariancePrediction:
    """Prediction carrying the 1/(mn) prefactor V(eps) = m * (large-m variance).

    Defined for mbf and for obf with decaying gain, where the MSE scales as
    1/(mn).
    """
    if cfg.protocol == "obf" and cfg.gain.kind != "decaying":
        raise ConfigError("the obf noise prefactor is defined for the decaying gain rule")
    if cfg.protocol == "qbf":
        raise ConfigError("noise prefactors are defined for mbf and obf")
    pred = predict(cfg)
    if pred.limit_variance is None:
        return pred
    prefactor = pred.limit_variance * cfg.m
    return VariancePrediction(**{**asdict(pred), "prefactor": prefactor})


def noise_prefactor_mbf(K: float, p: float, alpha, eps) -> float | None:
    """V_m(eps) = K^2 a~ / (2 K (1 - 2 eps) p - 1); None when unstable."""
    at = adjusted_alpha(alpha, eps)
    den = 2.0 * K * float(1 - 2 * Fraction(eps)) * p - 1.0
    return K * K * _a(at) / den if den > 0 else None


def noise_prefactor_1bf(K: float, p: float, alpha, eps) -> float | None:
    """V_1(eps) = K^2 sqrt(2 pi a~) / (8 K (1 - 2 eps) p - 4 sqrt(2 pi a~)); None when unstable."""
    root = math.sqrt(2.0 * math.pi * _a(adjusted_alpha(alpha, eps)))
    den = 8.0 * K * float(1 - 2 * Fraction(eps)) * p - 4.0 * root
    return K * K * root / den if den > 0 else None


def optimal_gain(cfg: ProtocolConfig, *, exact: bool = False) -> float:
    """Gain K minimising the predicted variance for the configured gain rule.

    The variance has the form K^2 R0 / (2 K c - 1), minimised at K = 1/c.
    ``exact`` uses the finite-m slope c; otherwise its large-m limit.
    """
    p = _p(cfg) * float(1 - 2 * cfg.eps)
    m = cfg.m
    if cfg.protocol == "mbf":
        return 1.0 / p
    a = _a(cfg.effective_alpha)
    if exact:
        km = 1.0 / drift_slope(cfg.replace(gain=GainRule("constant", 1.0)))
    elif cfg.protocol == "obf":
        km = math.sqrt(2.0 * math.pi * a) / (p * math.sqrt(m))
    else:
        slope = gaussian_slope_sum(cfg.quantizer, m, cfg.effective_alpha)
        km = math.sqrt(2.0 * math.pi * a) / (p * math.sqrt(m) * slope)
    return km if cfg.gain.kind == "constant" else km * math.sqrt(m)


def centralized_baseline(cfg: ProtocolConfig, total_samples: int) -> float:
    """alpha(1 - alpha) / (p^2 N): MSE of the sample quantile of N observations."""
    if total_samples < 1:
        raise ValueError("total_samples must be >= 1")
    return _a(cfg.alpha) / (_p(cfg) ** 2 * total_samples)


def centralized_sample_quantile(samples, alpha) -> float:
    """inf{x : F_N(x) >= alpha}, the ceil(N alpha)-th order statistic."""
    xs = np.sort(np.asarray(samples, dtype=float).ravel())
    if xs.size == 0:
        raise ValueError("centralized_sample_quantile needs at least one sample")
    alpha = as_level(alpha)
    if alpha == 0:
        raise ValueError("alpha must lie in (0, 1]")
    k = math.ceil(xs.size * alpha)
    return float(xs[max(k, 1) - 1])
