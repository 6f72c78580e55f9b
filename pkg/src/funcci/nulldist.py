"""Upper-tail probabilities of weighted sums of independent chi-square(1) variables."""

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import stats

from funcci.errors import InvalidArgumentError

DEFAULT_DRAWS = 100_000
DEFAULT_SEED = 20240917
MIN_DRAWS = 1000
BATCH_SIZE = 8192

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class WeightedChiSquare:
    """The law of ``sum_k weights[k] * Z_k**2`` with ``Z_k`` iid standard normal.

    ``draws`` and ``seed`` configure the Monte Carlo tail estimate.
    """

    weights: np.ndarray
    draws: int = DEFAULT_DRAWS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InvalidArgumentError("weights must be finite and strictly positive")
        if np.any(np.diff(w) > 0):
            raise InvalidArgumentError("weights must be sorted in descending order")
        if int(self.draws) < MIN_DRAWS:
            raise InvalidArgumentError(f"draws must be at least {MIN_DRAWS}, got {self.draws}")
        if int(self.seed) < 0:
            raise InvalidArgumentError("seed must be a nonnegative integer")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "draws", int(self.draws))
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_eigenvalues(cls, eigenvalues, rel_threshold=1e-12, **kwargs) -> "WeightedChiSquare":
        """Keep the eigenvalues above ``rel_threshold`` times the largest, sorted descending."""
        lam = np.sort(np.asarray(eigenvalues, dtype=float).ravel())[::-1]
        if lam.size == 0 or not lam[0] > 0:
            return cls(np.empty(0), **kwargs)
        return cls(lam[lam > rel_threshold * lam[0]], **kwargs)

    @property
    def mean(self) -> float:
        return float(np.sum(self.weights))

    @property
    def variance(self) -> float:
        return float(2.0 * np.sum(self.weights**2))


def _batch_rng(seed: int, batch: int) -> np.random.Generator:
    # Keyed by (seed, batch index) so any batch can be regenerated on its own.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, batch])))


def sample_weighted_chisq(dist: WeightedChiSquare, start: int = 0, stop: int = None) -> np.ndarray:
    """Draws ``start`` to ``stop - 1`` of the Monte Carlo reference sample."""
    stop = dist.draws if stop is None else stop
    if dist.weights.size == 0:
        return np.zeros(max(stop - start, 0))
    out = []
    first, last = start // BATCH_SIZE, (stop - 1) // BATCH_SIZE
    for b in range(first, last + 1):
        size = min(BATCH_SIZE, dist.draws - b * BATCH_SIZE)
        z = _batch_rng(dist.seed, b).standard_normal((size, dist.weights.size))
        sums = (z * z) @ dist.weights
        lo = max(start - b * BATCH_SIZE, 0)
        hi = min(stop - b * BATCH_SIZE, size)
        out.append(sums[lo:hi])
    return np.concatenate(out) if out else np.empty(0)


def _degenerate(t):
    return np.where(t == 0, 1.0, 0.0)


def _check_t(t_obs):
    t = np.asarray(t_obs, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise InvalidArgumentError("observed statistic must be finite and nonnegative")
    return t


def pvalue_mc(dist: WeightedChiSquare, t_obs: ArrayLike) -> ArrayLike:
    """Monte Carlo upper-tail probability ``(1 + #{draws >= t}) / (draws + 1)``.

    ``t_obs`` may be a scalar or an array; the same reference draws are used
    for every entry, so the result is non-increasing in ``t_obs``.
    """
    t = _check_t(t_obs)
    if dist.weights.size == 0:
        p = _degenerate(t)
        return float(p) if p.ndim == 0 else p
    flat = t.ravel()
    exceed = np.zeros(flat.size, dtype=np.int64)
    for b in range((dist.draws + BATCH_SIZE - 1) // BATCH_SIZE):
        lo = b * BATCH_SIZE
        sums = np.sort(sample_weighted_chisq(dist, lo, min(lo + BATCH_SIZE, dist.draws)))
        exceed += sums.size - np.searchsorted(sums, flat, side="left")
    p = ((1 + exceed) / (dist.draws + 1)).reshape(t.shape)
    return float(p) if p.ndim == 0 else p


def pvalue_satterthwaite(dist: WeightedChiSquare, t_obs: ArrayLike) -> ArrayLike:
    """Two-moment approximation by ``a * chi2(d)``, ``a = sum w^2 / sum w``, ``d = (sum w)^2 / sum w^2``."""
    t = _check_t(t_obs)
    w = dist.weights
    if w.size == 0:
        p = _degenerate(t)
    else:
        s1, s2 = np.sum(w), np.sum(w * w)
        a = s2 / s1
        d = s1 * s1 / s2
        p = np.clip(stats.chi2.sf(t / a, d), 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p
