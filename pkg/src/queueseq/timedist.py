"""Inter-event time heads.

``RiemannDist`` is a histogram density with ``n - 1`` equal-width bins on
``[0, (n - 1) w)`` and a half-normal tail beyond. ``exp_head`` turns a raw
network output into an exponential rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Stream

EPS_RATE = 1e-6
_LOG_HALFNORM = 0.5 * math.log(2.0 / math.pi)


class NegativeTime(ValueError):
    pass


@dataclass(frozen=True)
class RiemannDist:
    w: float
    n: int
    probs: np.ndarray
    tail_scale: float | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (self.n,):
            raise ValueError(f"expected {self.n} bin probabilities, got shape {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("bin probabilities must be nonnegative and sum to 1")
        if self.w <= 0:
            raise ValueError("bin width must be positive")
        object.__setattr__(self, "probs", p)
        if self.tail_scale is None:
            object.__setattr__(self, "tail_scale", float(self.w))

    @property
    def tail_start(self) -> float:
        return (self.n - 1) * self.w


def riemann_bin_index(d: RiemannDist, t: float) -> int:
    if t < 0:
        raise NegativeTime(t)
    return min(int(math.floor(t / d.w)), d.n - 1)


def bin_indices(t: np.ndarray, w: float, n: int) -> np.ndarray:
    """Vectorized ``riemann_bin_index`` for an array of times."""
    return np.minimum(np.floor(np.asarray(t) / w), n - 1).astype(np.int64)


def riemann_logpdf(d: RiemannDist, t: float) -> float:
    k = riemann_bin_index(d, t)
    with np.errstate(divide="ignore"):
        lp = math.log(d.probs[k]) if d.probs[k] > 0 else -math.inf
    if k < d.n - 1:
        return lp - math.log(d.w)
    s = d.tail_scale
    x = t - d.tail_start
    return lp + _LOG_HALFNORM - math.log(s) - 0.5 * (x / s) ** 2


def riemann_sample(d: RiemannDist, seed: int | Stream) -> float:
    """One draw: pick a bin, then uniform within it or half-normal in the tail."""
    rs = seed if isinstance(seed, Stream) else Stream(seed)
    k = rs.choice(d.probs)
    if k < d.n - 1:
        return (k + rs.uniform()) * d.w
    from scipy.special import ndtri

    u = rs.uniform()
    # half-normal inverse CDF: s * Phi^-1((1 + u) / 2)
    return d.tail_start + d.tail_scale * float(ndtri(0.5 * (1.0 + u)))


def riemann_samples(d: RiemannDist, size: int, seed: int) -> np.ndarray:
    rs = Stream(seed)
    return np.array([riemann_sample(d, rs) for _ in range(size)])


def riemann_entropy(d: RiemannDist) -> float:
    """Differential entropy of the histogram-plus-tail density."""
    p = d.probs
    body = p[:-1][p[:-1] > 0]
    h = float(-(body * np.log(body / d.w)).sum())
    pt = p[-1]
    if pt > 0:
        # entropy of a half-normal with scale s is 0.5 log(pi e s^2 / 2)
        h += -pt * math.log(pt) + pt * 0.5 * math.log(math.pi * math.e * d.tail_scale**2 / 2.0)
    return h


def choose_grid(dts, n_bins: int, quantile: float = 0.999) -> tuple[float, int]:
    """Bin width so that the last body edge covers the given quantile of ``dts``."""
    q = float(np.quantile(np.asarray(dts, dtype=float), quantile))
    if q <= 0:
        q = float(np.max(dts)) or 1.0
    return q / (n_bins - 1), n_bins


def softplus(x: float) -> float:
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def exp_head(raw: float) -> float:
    return softplus(raw) + EPS_RATE


def exp_nll(raw: float, t: float) -> float:
    """Negative log-likelihood of ``t`` under Exp(exp_head(raw))."""
    r = exp_head(raw)
    return -math.log(r) + r * t


def exp_nll_grad(raw: float, t: float) -> float:
    r = exp_head(raw)
    sig = 1.0 / (1.0 + math.exp(-raw))
    return (-1.0 / r + t) * sig


def exp_sq_error(raw: float, t: float) -> float:
    """Squared error between the predicted mean 1/rate and the realized time."""
    return (1.0 / exp_head(raw) - t) ** 2
