"""Source distributions for sensor observations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

KINDS = ("uniform", "gaussian", "exponential")

_PARAM_NAMES = {
    "uniform": ("a", "b"),
    "gaussian": ("mu", "sigma"),
    "exponential": ("lam",),
}
_DEFAULTS = {
    "uniform": (0.0, 1.0),
    "gaussian": (0.0, 1.0),
    "exponential": (1.0,),
}


@dataclass(frozen=True)
class SourceDistribution:
    """One of uniform(a, b), gaussian(mu, sigma), exponential(lam).

    Samples are drawn by inverse CDF from uniforms, so a sensor observation
    is a deterministic function of one addressable uniform.
    """

    kind: str = "uniform"
    params: tuple = field(default=(0.0, 1.0))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}; expected one of {KINDS}")
        params = tuple(float(p) for p in self.params)
        if len(params) != len(_PARAM_NAMES[self.kind]):
            raise ValueError(f"{self.kind} takes parameters {_PARAM_NAMES[self.kind]}, got {params}")
        if not all(math.isfinite(p) for p in params):
            raise ValueError("distribution parameters must be finite")
        if self.kind == "uniform" and not params[1] > params[0]:
            raise ValueError("uniform(a, b) requires b > a")
        if self.kind == "gaussian" and not params[1] > 0:
            raise ValueError("gaussian(mu, sigma) requires sigma > 0")
        if self.kind == "exponential" and not params[0] > 0:
            raise ValueError("exponential(lam) requires lam > 0")
        object.__setattr__(self, "params", params)

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0) -> "SourceDistribution":
        return cls("uniform", (a, b))

    @classmethod
    def gaussian(cls, mu: float = 0.0, sigma: float = 1.0) -> "SourceDistribution":
        return cls("gaussian", (mu, sigma))

    @classmethod
    def exponential(cls, lam: float = 1.0) -> "SourceDistribution":
        return cls("exponential", (lam,))

    @classmethod
    def parse(cls, text: str) -> "SourceDistribution":
        """Parse ``kind:p1,p2`` (e.g. ``uniform:0,1``); parameters optional."""
        kind, _, rest = text.partition(":")
        kind = kind.strip()
        if kind not in KINDS:
            raise ValueError(f"unknown distribution kind {kind!r}; expected one of {KINDS}")
        params = tuple(float(p) for p in rest.split(",")) if rest.strip() else _DEFAULTS[kind]
        return cls(kind, params)

    @classmethod
    def from_dict(cls, data: dict) -> "SourceDistribution":
        kind = data["kind"]
        if kind not in KINDS:
            raise ValueError(f"unknown distribution kind {kind!r}; expected one of {KINDS}")
        names = _PARAM_NAMES[kind]
        defaults = dict(zip(names, _DEFAULTS[kind]))
        return cls(kind, tuple(float(data.get(n, defaults[n])) for n in names))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(zip(_PARAM_NAMES[self.kind], self.params))}

    def __str__(self) -> str:
        return f"{self.kind}:" + ",".join(repr(p) for p in self.params)

    # -- the four-operation interface ----------------------------------

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            a, b = self.params
            out = np.clip((x - a) / (b - a), 0.0, 1.0)
        elif self.kind == "gaussian":
            mu, sigma = self.params
            out = special.ndtr((x - mu) / sigma)
        else:
            (lam,) = self.params
            out = np.where(x > 0, -np.expm1(-lam * np.maximum(x, 0.0)), 0.0)
        return out[()] if out.ndim == 0 else out

    def density(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            a, b = self.params
            out = np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0)
        elif self.kind == "gaussian":
            mu, sigma = self.params
            z = (x - mu) / sigma
            out = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
        else:
            (lam,) = self.params
            out = np.where(x >= 0, lam * np.exp(-lam * np.maximum(x, 0.0)), 0.0)
        return out[()] if out.ndim == 0 else out

    def ppf(self, u):
        """Inverse CDF on [0, 1] (vectorised, no boundary checks)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            a, b = self.params
            out = a + (b - a) * u
        elif self.kind == "gaussian":
            mu, sigma = self.params
            out = mu + sigma * special.ndtri(u)
        else:
            (lam,) = self.params
            out = -np.log1p(-u) / lam
        return out[()] if out.ndim == 0 else out

    def quantile(self, alpha) -> float:
        """theta(alpha) = inf{x : F(x) >= alpha}, for 0 < alpha < 1."""
        if not 0 < alpha < 1:
            raise ValueError(f"quantile level must lie strictly inside (0, 1), got {alpha}")
        return float(self.ppf(float(alpha)))

    def sample(self, stream: np.random.Generator, size=None):
        return self.ppf(stream.random(size))

    def bracket(self) -> tuple[float, float]:
        """Interval used to pick the default starting estimate."""
        if self.kind == "uniform":
            return self.params
        if self.kind == "gaussian":
            mu, sigma = self.params
            return (mu - 4 * sigma, mu + 4 * sigma)
        (lam,) = self.params
        return (0.0, math.log(1000.0) / lam)

    def default_theta0(self) -> float:
        lo, hi = self.bracket()
        return (lo + hi) / 2.0


def cdf(d: SourceDistribution, x):
    return d.cdf(x)


def density(d: SourceDistribution, x):
    return d.density(x)


def quantile(d: SourceDistribution, alpha) -> float:
    return d.quantile(alpha)


def sample(d: SourceDistribution, stream: np.random.Generator, size=None):
    return d.sample(stream, size)
