"""Curve reconstruction from discrete observations, quadrature, and L2 geometry.

Each subject's curve is represented by coordinates with respect to the
Gaussian kernel sections at its own observation times.  Inner products in
L2[0, 1] are evaluated with composite Simpson quadrature on an equally
spaced grid.
"""

from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from funcci.errors import InvalidArgumentError, NumericalError, TuningError
from funcci.kernelmat import sym_eig

DEFAULT_GRID_L = 100


@dataclass(frozen=True)
class FunctionalSample:
    """One subject's observations of one channel."""

    subject_id: Hashable
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float).ravel()
        v = np.array(self.values, dtype=float).ravel()
        if t.size == 0 or t.size != v.size:
            raise InvalidArgumentError(
                f"subject {self.subject_id!r}: times and values must be nonempty and of equal length"
            )
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise InvalidArgumentError(f"subject {self.subject_id!r}: non-finite observation")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgumentError(f"subject {self.subject_id!r}: times must be strictly increasing")
        if t[0] < 0 or t[-1] > 1:
            raise InvalidArgumentError(f"subject {self.subject_id!r}: times must lie in [0, 1]")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class SmoothedCurve:
    """Coordinates of a reconstructed curve in the span of ``exp(-gamma_T (. - t)^2)``, t in ``times``."""

    coords: np.ndarray
    times: np.ndarray
    gamma_T: float
    delta_n: float


@dataclass(frozen=True)
class QuadratureRule:
    grid: np.ndarray
    weights: np.ndarray

    @property
    def l(self) -> int:
        return self.grid.size - 1

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def kernel_cross(times_a, times_b, gamma_T: float) -> np.ndarray:
    """``exp(-gamma_T (a_r - b_s)^2)`` for every pair of time points."""
    if not gamma_T > 0:
        raise InvalidArgumentError(f"gamma_T must be positive, got {gamma_T}")
    a = np.asarray(times_a, dtype=float).ravel()
    b = np.asarray(times_b, dtype=float).ravel()
    return np.exp(-gamma_T * np.subtract.outer(a, b) ** 2)


class _TimeKernel:
    """Eigendecomposition of ``K_T`` on one set of observation times."""

    def __init__(self, times, gamma_T):
        self.times = times
        K = kernel_cross(times, times, gamma_T)
        es = sym_eig(K)
        self.K = K
        self.values = np.clip(es.values, 0.0, None)
        self.vectors = es.vectors
        self.lam_max = float(self.values[0])

    def shrink(self, delta):
        """Spectral filter ``1 / (lambda + delta * lambda_max)``."""
        return 1.0 / (self.values + delta * self.lam_max)

    def gcv_terms(self, values, delta):
        c = delta * self.lam_max
        proj = self.vectors.T @ values
        resid = c / (self.values + c)
        rss = float(np.sum((resid * proj) ** 2))
        trace = float(np.sum(self.values / (self.values + c)))
        return rss, 1.0 - trace / self.times.size


class TimeKernelCache:
    """Caches the kernel eigendecomposition per distinct observation-time vector."""

    def __init__(self, gamma_T: float):
        if not gamma_T > 0:
            raise InvalidArgumentError(f"gamma_T must be positive, got {gamma_T}")
        self.gamma_T = float(gamma_T)
        self._store: Dict[bytes, _TimeKernel] = {}

    def get(self, times) -> _TimeKernel:
        t = np.asarray(times, dtype=float)
        key = t.tobytes()
        tk = self._store.get(key)
        if tk is None:
            tk = _TimeKernel(t, self.gamma_T)
            self._store[key] = tk
        return tk


def smooth_curve(
    sample: FunctionalSample, gamma_T: float, delta_n: float, cache: Optional[TimeKernelCache] = None
) -> SmoothedCurve:
    """Tikhonov-regularized coordinates ``(K_T + delta_n * lambda_max(K_T) I)^{-1} x``.

    With ``delta_n == 0`` the curve interpolates the observations and ``K_T``
    must be numerically invertible.
    """
    if delta_n < 0:
        raise InvalidArgumentError(f"delta_n must be nonnegative, got {delta_n}")
    if cache is None:
        cache = TimeKernelCache(gamma_T)
    tk = cache.get(sample.times)
    if delta_n == 0:
        if tk.values[-1] <= 1e-13 * tk.lam_max:
            raise NumericalError(
                f"subject {sample.subject_id!r}: kernel matrix is singular; use delta_n > 0"
            )
        coords = np.linalg.solve(tk.K, sample.values)
    else:
        coords = tk.vectors @ (tk.shrink(delta_n) * (tk.vectors.T @ sample.values))
    return SmoothedCurve(coords, sample.times, float(gamma_T), float(delta_n))


def eval_curve(curve: SmoothedCurve, grid) -> np.ndarray:
    return kernel_cross(grid, curve.times, curve.gamma_T) @ curve.coords


def simpson_rule(l: int, u0: float = 0.0, ul: float = 1.0) -> QuadratureRule:
    """Composite Simpson rule on ``l + 1`` equally spaced points (``l`` even)."""
    if l < 2 or l % 2:
        raise InvalidArgumentError(f"Simpson's rule needs an even number of intervals >= 2, got {l}")
    if not ul > u0:
        raise InvalidArgumentError("interval must have positive length")
    h = (ul - u0) / l
    w = np.full(l + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return QuadratureRule(np.linspace(u0, ul, l + 1), w * h / 3.0)


def equispaced_rule(l: int, u0: float = 0.0, ul: float = 1.0) -> QuadratureRule:
    """Cubic-exact rule on any equally spaced grid.

    Even ``l`` is plain composite Simpson.  Odd ``l >= 3`` closes the last
    three intervals with Simpson's 3/8 rule; ``l == 1`` falls back to the
    trapezoid.
    """
    if l % 2 == 0:
        return simpson_rule(l, u0, ul)
    if not ul > u0:
        raise InvalidArgumentError("interval must have positive length")
    h = (ul - u0) / l
    grid = np.linspace(u0, ul, l + 1)
    if l == 1:
        return QuadratureRule(grid, np.array([h / 2, h / 2]))
    w = np.zeros(l + 1)
    if l > 3:
        w[: l - 2] = simpson_rule(l - 3, u0, u0 + (l - 3) * h).weights
    w[l - 3 :] += 3.0 * h / 8.0 * np.array([1.0, 3.0, 3.0, 1.0])
    return QuadratureRule(grid, w)


def inner_product_balanced(values_i, values_j, rule: QuadratureRule) -> float:
    vi = np.asarray(values_i, dtype=float)
    vj = np.asarray(values_j, dtype=float)
    if vi.shape != rule.grid.shape or vj.shape != rule.grid.shape:
        raise InvalidArgumentError(
            f"values must match the quadrature grid length {rule.grid.size}"
        )
    return float(vi @ (rule.weights * vj))


def inner_product_unbalanced(curve_i: SmoothedCurve, curve_j: SmoothedCurve, rule: QuadratureRule) -> float:
    """L2 inner product of two reconstructed curves by quadrature on ``rule.grid``."""
    if curve_i.gamma_T != curve_j.gamma_T:
        raise InvalidArgumentError("curves were smoothed with different gamma_T")
    return inner_product_balanced(eval_curve(curve_i, rule.grid), eval_curve(curve_j, rule.grid), rule)


def gram_of_values(values, rule: QuadratureRule) -> np.ndarray:
    """Matrix of quadrature inner products between the rows of ``values``."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[1] != rule.grid.size:
        raise InvalidArgumentError(f"expected rows of length {rule.grid.size}")
    ip = (v * rule.weights) @ v.T
    return 0.5 * (ip + ip.T)


def pairwise_geometry(inner_products) -> Tuple[np.ndarray, float]:
    """Squared L2 distances from an inner-product matrix, and their mean root.

    Returns
    -------
    sq_dists : ndarray of shape (n, n)
        ``ip_ii - 2 ip_ij + ip_jj`` clipped at zero, with an exact zero diagonal.
    mean_dist : float
        Average of ``sqrt(sq_dists)`` over distinct pairs (0 when n < 2).
    """
    ip = np.asarray(inner_products, dtype=float)
    if ip.ndim != 2 or ip.shape[0] != ip.shape[1]:
        raise InvalidArgumentError("inner-product matrix must be square")
    d = np.diag(ip)
    sq = np.clip(d[:, None] - 2.0 * ip + d[None, :], 0.0, None)
    sq = 0.5 * (sq + sq.T)
    np.fill_diagonal(sq, 0.0)
    n = ip.shape[0]
    if n < 2:
        return sq, 0.0
    iu = np.triu_indices(n, k=1)
    return sq, float(np.mean(np.sqrt(sq[iu])))


def gcv_smoothing(
    samples_xyz: Sequence[Sequence[FunctionalSample]],
    gamma_T: float,
    grid_I_T: Sequence[float],
    cache: Optional[TimeKernelCache] = None,
) -> Tuple[float, List[float]]:
    """Choose the smoothing constant by GCV summed over every subject and channel.

    Returns the first grid value attaining the minimum and the score of every
    candidate (NaN where the GCV denominator vanished).
    """
    grid = [float(d) for d in grid_I_T]
    if not grid:
        raise InvalidArgumentError("candidate grid is empty")
    if any(not d > 0 for d in grid):
        raise InvalidArgumentError("candidates must be positive")
    if cache is None:
        cache = TimeKernelCache(gamma_T)
    scores = []
    for delta in grid:
        total = 0.0
        for channel in samples_xyz:
            for s in channel:
                rss, denom = cache.get(s.times).gcv_terms(s.values, delta)
                if not denom > 0:
                    total = np.nan
                    break
                total += rss / denom**2
            if np.isnan(total):
                break
        scores.append(float(total))
    return _first_argmin(grid, scores, "delta_n"), scores


def _first_argmin(grid, scores, name):
    arr = np.asarray(scores, dtype=float)
    ok = np.isfinite(arr)
    if not ok.any():
        raise TuningError(f"every {name} candidate was rejected by GCV")
    best = np.min(arr[ok])
    return grid[int(np.flatnonzero(ok & (arr == best))[0])]


@dataclass
class SmoothedChannel:
    """A channel of n reconstructed curves evaluated on the quadrature grid."""

    curves: List[SmoothedCurve] = field(default_factory=list)
    grid_values: Optional[np.ndarray] = None


def smooth_channel(
    samples: Sequence[FunctionalSample],
    gamma_T: float,
    delta_n: float,
    rule: QuadratureRule,
    cache: Optional[TimeKernelCache] = None,
) -> SmoothedChannel:
    if cache is None:
        cache = TimeKernelCache(gamma_T)
    curves = [smooth_curve(s, gamma_T, delta_n, cache) for s in samples]
    values = np.vstack([eval_curve(c, rule.grid) for c in curves])
    return SmoothedChannel(curves, values)
