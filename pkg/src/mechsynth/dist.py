"""Integer noise distributions used by the mechanism runtime.

Two families, both parameterized by a positive ``scale`` b with q = e^(-1/b):

* two-sided geometric ("discrete Laplace"), centered at ``mean``:
  pmf(mean + k) = C(b) q^|k| over all integers, C(b) = (1 - q) / (1 + q);
* one-sided geometric ("discrete exponential"), starting at ``offset``:
  pmf(offset + k) = (1 - q) q^k for k >= 0.

Both expose exact pmf/logpmf, inverse-CDF scalar sampling, vectorized bulk
sampling, and closed-form importance-weight pieces for reweighting draws from
one scale to another: per draw v the log weight is ``alpha + beta * |v|``
with coefficients depending only on the two scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DiscreteLaplace", "DiscreteExponential", "make_dist",
    "weight_ratio", "log_weight_coeffs",
]


def _geometric_icdf(u: float, q: float) -> int:
    """Quantile of the failures-counting geometric: P[G <= g] = 1 - q^(g+1)."""
    if u <= 0.0:
        return 0
    return int(math.log1p(-u) / math.log(q))


@dataclass(frozen=True)
class DiscreteLaplace:
    """Symmetric integer noise: pmf(mean + k) = C q^|k|, C = (1-q)/(1+q)."""

    scale: float
    mean: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def q(self) -> float:
        return math.exp(-1.0 / self.scale)

    @property
    def norm_const(self) -> float:
        q = self.q
        return (1.0 - q) / (1.0 + q)

    def pmf(self, value):
        k = np.abs(np.asarray(value) - self.mean)
        return (self.norm_const * np.exp(-k / self.scale))[()]

    def logpmf(self, value):
        k = np.abs(np.asarray(value) - self.mean)
        return (math.log(self.norm_const) - k / self.scale)[()]

    def tail(self, k: int) -> float:
        """One-sided tail mass P[X >= mean + k] for k >= 1 (left side equal)."""
        if k < 1:
            raise ValueError("tail() covers offsets k >= 1 from the mean")
        q = self.q
        return self.norm_const * q**k / (1.0 - q)

    def sample(self, rng: np.random.Generator) -> int:
        q = self.q
        step = _geometric_icdf(rng.random(), q) - _geometric_icdf(rng.random(), q)
        return self.mean + step

    def sample_array(self, rng: np.random.Generator, size) -> np.ndarray:
        p = 1.0 - self.q
        steps = rng.geometric(p, size).astype(np.int64) - rng.geometric(p, size)
        return steps + self.mean


@dataclass(frozen=True)
class DiscreteExponential:
    """One-sided integer noise: pmf(offset + k) = (1-q) q^k for k >= 0."""

    scale: float
    offset: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def q(self) -> float:
        return math.exp(-1.0 / self.scale)

    @property
    def norm_const(self) -> float:
        return 1.0 - self.q

    def pmf(self, value):
        k = np.asarray(value) - self.offset
        out = self.norm_const * np.exp(-k / self.scale)
        return np.where(k >= 0, out, 0.0)[()]

    def logpmf(self, value):
        k = np.asarray(value) - self.offset
        out = math.log(self.norm_const) - k / self.scale
        return np.where(k >= 0, out, -np.inf)[()]

    def tail(self, k: int) -> float:
        """Tail mass P[X >= offset + k]."""
        if k < 0:
            return 1.0
        return self.q**k

    def sample(self, rng: np.random.Generator) -> int:
        return self.offset + _geometric_icdf(rng.random(), self.q)

    def sample_array(self, rng: np.random.Generator, size) -> np.ndarray:
        draws = rng.geometric(1.0 - self.q, size).astype(np.int64) - 1
        return draws + self.offset


_FAMILIES = {"lap": DiscreteLaplace, "exp": DiscreteExponential}


def make_dist(family: str, scale: float, center: int = 0):
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown noise family {family!r}") from None
    return cls(scale, center)


def log_weight_coeffs(family: str, target_scale: float, proposal_scale: float):
    """Coefficients (alpha, beta) of the per-draw log importance weight.

    For a centered draw v sampled at ``proposal_scale`` and reweighted to
    ``target_scale``, log w(v) = alpha + beta * |v| (the Laplace pmf depends
    on |v|; exponential draws are nonnegative, so |v| = v there).
    """
    target = make_dist(family, target_scale)
    proposal = make_dist(family, proposal_scale)
    alpha = math.log(target.norm_const) - math.log(proposal.norm_const)
    beta = 1.0 / proposal_scale - 1.0 / target_scale
    return alpha, beta


def weight_ratio(value: int, mean: int, target_scale, proposal_scale: float,
                 family: str = "lap") -> float:
    """pmf ratio target(value) / proposal(value), both centered at ``mean``.

    A ``None`` target marks a hole completed with "no noise"; such holes draw
    nothing, so asking for their ratio is a caller bug.
    """
    if target_scale is None:
        raise ValueError("no-noise holes draw no values; weight ratio undefined")
    target = make_dist(family, target_scale, mean)
    proposal = make_dist(family, proposal_scale, mean)
    lp = proposal.logpmf(value)
    if lp == -np.inf:
        raise ValueError(f"value {value} is outside the proposal's support")
    return float(np.exp(target.logpmf(value) - lp))
