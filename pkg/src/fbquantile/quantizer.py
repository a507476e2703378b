"""Scalar quantizers for the multi-level feedback protocol.

A quantizer with finite breakpoints b_0 < ... < b_{K-2} and outputs
o_0 <= ... <= o_{K-1} maps v to o_j when v lies in the half-open cell
(b_{j-1}, b_j], with b_{-1} = -inf and b_{K-1} = +inf.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path


@dataclass(frozen=True)
class QuantizerSpec:
    breakpoints: tuple
    outputs: tuple

    def __post_init__(self):
        bps, outs = tuple(self.breakpoints), tuple(self.outputs)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "outputs", outs)
        if len(outs) < 2:
            raise ValueError("a quantizer needs at least two output levels")
        if len(bps) != len(outs) - 1:
            raise ValueError(
                f"{len(outs)} outputs need {len(outs) - 1} finite breakpoints, got {len(bps)}"
            )
        if any(not math.isfinite(b) for b in bps):
            raise ValueError("finite breakpoints must be finite numbers")
        if any(not b0 < b1 for b0, b1 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(not o0 <= o1 for o0, o1 in zip(outs, outs[1:])):
            raise ValueError("quantizer outputs must be non-decreasing")

    @property
    def n_cells(self) -> int:
        return len(self.outputs)

    @property
    def ell(self) -> float:
        """Half the number of cells (the level index of a 2*ell-cell quantizer)."""
        return self.n_cells / 2

    @property
    def feedback_bits(self) -> int:
        return max(1, math.ceil(math.log2(self.n_cells)))

    def cell_index(self, v) -> int:
        # first breakpoint >= v; exact for Fraction/float mixes
        return bisect.bisect_left(self.breakpoints, v)

    def __call__(self, v):
        return self.outputs[self.cell_index(v)]

    def to_dict(self) -> dict:
        return {
            "breakpoints": [_num_to_json(b) for b in self.breakpoints],
            "outputs": [_num_to_json(o) for o in self.outputs],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantizerSpec":
        return cls(
            breakpoints=[_num_from_json(b) for b in data["breakpoints"]],
            outputs=[_num_from_json(o) for o in data["outputs"]],
        )


def _num_to_json(x):
    if isinstance(x, Fraction):
        return str(x) if x.denominator != 1 else int(x)
    return float(x)


def _num_from_json(x):
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, int):
        return Fraction(x)
    return float(x)


def quantize(quantizer: QuantizerSpec, v):
    """Output of the cell (b_{j-1}, b_j] containing ``v``."""
    return quantizer(v)


def quantizer_for_1bf() -> QuantizerSpec:
    """Two cells split at 0 with outputs 0 and 1.

    ``Q(alpha - Ybar)`` is then 1{Ybar < alpha}, which matches the single-bit
    decision 1{Ybar <= alpha} except on the tie Ybar == alpha.
    """
    return QuantizerSpec(breakpoints=(Fraction(0),), outputs=(Fraction(0), Fraction(1)))


def quantizer_for_mbf(m: int, alpha) -> QuantizerSpec:
    """Quantizer that passes alpha - Ybar through unchanged.

    Outputs are the m + 1 lattice values alpha - (m - k)/m, k = 0..m.
    Breakpoints sit halfway between neighbouring lattice values, so no
    attainable value lands on a breakpoint.
    """
    alpha = Fraction(alpha)
    outputs = [alpha - Fraction(m - k, m) for k in range(m + 1)]
    breakpoints = [o + Fraction(1, 2 * m) for o in outputs[:-1]]
    return QuantizerSpec(breakpoints=breakpoints, outputs=outputs)


def uniform_quantizer(ell: int, alpha, m: int) -> QuantizerSpec:
    """Uniform 2*ell-cell quantizer on [-c/sqrt(m), c/sqrt(m)].

    c = 3 sqrt(alpha(1-alpha)), so the finite range covers three asymptotic
    standard deviations of alpha - Ybar. Finite cells output their midpoint;
    the two unbounded cells output the adjacent edge value.
    """
    if int(ell) != ell or ell < 1:
        raise ValueError(f"ell must be an integer >= 1, got {ell!r}")
    alpha = float(alpha)
    half = 3.0 * math.sqrt(alpha * (1.0 - alpha)) / math.sqrt(m)
    if ell == 1:
        return QuantizerSpec(breakpoints=(0.0,), outputs=(-half, half))
    n_bp = 2 * ell - 1
    width = 2.0 * half / (n_bp - 1)
    # integer offsets keep the grid exactly symmetric with a breakpoint at 0
    breakpoints = [(j - (ell - 1)) * width for j in range(n_bp)]
    breakpoints[0], breakpoints[-1] = -half, half
    mids = [(b0 + b1) / 2.0 for b0, b1 in zip(breakpoints, breakpoints[1:])]
    return QuantizerSpec(breakpoints=breakpoints, outputs=[-half, *mids, half])


def load_quantizer(path: str | Path) -> QuantizerSpec:
    return QuantizerSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def parse_quantizer(text: str, *, alpha, m: int) -> QuantizerSpec:
    """Parse a CLI quantizer argument: ``uniform:L``, ``1bf``, ``mbf`` or a JSON file path."""
    if text.startswith("uniform:"):
        return uniform_quantizer(int(text.split(":", 1)[1]), alpha, m)
    if text == "1bf":
        return quantizer_for_1bf()
    if text == "mbf":
        return quantizer_for_mbf(m, alpha)
    return load_quantizer(text)

