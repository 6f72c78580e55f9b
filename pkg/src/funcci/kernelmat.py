"""Gram matrices and the dense symmetric linear algebra built on them."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist

from funcci.errors import DegenerateDataError, InvalidArgumentError, NotPSDError, NumericalError

KERNEL_TAGS = ("gaussian", "brownian", "product")

SYMMETRY_RTOL = 1e-10
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class GramMatrix:
    """An n x n symmetric kernel matrix together with its provenance.

    Parameters
    ----------
    entries : ndarray of shape (n, n)
        Stored read-only.
    kernel_tag : {'gaussian', 'brownian', 'product'}
    bandwidth : float or None
        The Gaussian ``gamma`` in ``exp(-gamma * d**2)``; None for other kernels.
    centered : bool
        Whether ``entries`` already equals ``H K H``.
    """

    entries: np.ndarray
    kernel_tag: str
    bandwidth: Optional[float] = None
    centered: bool = False

    def __post_init__(self):
        if self.kernel_tag not in KERNEL_TAGS:
            raise InvalidArgumentError(f"unknown kernel tag {self.kernel_tag!r}")
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidArgumentError(f"Gram matrix must be square, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order and the matching orthonormal eigenvectors (as columns)."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def _symmetrize(m):
    return 0.5 * (m + m.T)


def _check_symmetric(m, what="matrix", rtol=SYMMETRY_RTOL):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"{what} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError(f"{what} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and np.max(np.abs(m - m.T)) > rtol * scale:
        raise InvalidArgumentError(f"{what} is not symmetric")
    return m


def as_gram(entries, kernel_tag="product", bandwidth=None, centered=False) -> GramMatrix:
    """Wrap a plain symmetric array as a GramMatrix (symmetrized on the way in)."""
    m = _check_symmetric(entries, "Gram matrix")
    return GramMatrix(_symmetrize(m), kernel_tag, bandwidth, centered)


def rbf_gram(sq_dists, gamma: float) -> GramMatrix:
    """Gaussian Gram matrix ``exp(-gamma * sq_dists)``."""
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be positive, got {gamma}")
    d2 = _check_symmetric(sq_dists, "squared-distance matrix", rtol=1e-12)
    if np.any(d2 < 0):
        raise InvalidArgumentError("squared distances must be nonnegative")
    if np.any(np.diag(d2) != 0):
        raise InvalidArgumentError("squared-distance matrix must have a zero diagonal")
    return GramMatrix(np.exp(-gamma * _symmetrize(d2)), "gaussian", float(gamma), False)


def brownian_gram(times) -> GramMatrix:
    """Brownian-motion kernel matrix ``min(t_r, t_s)``."""
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0:
        raise InvalidArgumentError("times must be nonempty")
    if not np.all(np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
        raise InvalidArgumentError("times must be finite and lie in [0, 1]")
    return GramMatrix(np.minimum.outer(t, t), "brownian", None, False)


def center_gram(K: GramMatrix) -> GramMatrix:
    """Double-centre a Gram matrix: ``H K H`` with ``H = I - 11^T / n``."""
    if K.centered:
        raise InvalidArgumentError("Gram matrix is already centered")
    return GramMatrix(_double_center(K.entries), K.kernel_tag, K.bandwidth, True)


def _double_center(m):
    # Same as H m H, without forming H.
    row = m.mean(axis=1, keepdims=True)
    col = m.mean(axis=0, keepdims=True)
    return _symmetrize(m - row - col + m.mean())


def hadamard(A: GramMatrix, B: GramMatrix) -> GramMatrix:
    """Entrywise product; PSD by the Schur product theorem."""
    if A.n != B.n:
        raise InvalidArgumentError(f"dimension mismatch: {A.n} vs {B.n}")
    centered = A.centered and B.centered
    return GramMatrix(_symmetrize(A.entries * B.entries), "product", None, centered)


def mean_pairwise_distance(points) -> float:
    """Average of ``|u_a - u_b|`` over distinct pairs of 1-D points."""
    u = np.asarray(points, dtype=float).reshape(-1, 1)
    if u.shape[0] < 2:
        raise InvalidArgumentError("need at least two points")
    return float(np.mean(pdist(u)))


def bandwidth_from_distances(dists, count_basis: int) -> float:
    """Gaussian ``gamma`` with ``1/sqrt(gamma)`` equal to the mean pairwise distance.

    Parameters
    ----------
    dists : array_like
        All distinct pairwise distances.
    count_basis : int
        Number of distinct pairs, ``p * (p - 1) / 2``.
    """
    if count_basis < 1:
        raise InvalidArgumentError("count_basis must be a positive pair count")
    d = np.asarray(dists, dtype=float).ravel()
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise InvalidArgumentError("distances must be finite and nonnegative")
    mean = float(np.sum(d)) / count_basis
    if not mean > 0:
        raise DegenerateDataError("all pairwise distances are zero; bandwidth undefined")
    return 1.0 / mean**2


def sym_eig(S) -> EigenSystem:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    s = _check_symmetric(S)
    try:
        values, vectors = np.linalg.eigh(_symmetrize(s))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return EigenSystem(values[::-1].copy(), vectors[:, ::-1].copy())


def largest_eigenvalue(S) -> float:
    s = _check_symmetric(S)
    if s.shape[0] == 0:
        return 0.0
    n = s.shape[0]
    try:
        top = scipy.linalg.eigh(_symmetrize(s), eigvals_only=True, subset_by_index=[n - 1, n - 1])
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return float(top[0])


def psd_sqrt(S, eig: Optional[EigenSystem] = None) -> np.ndarray:
    """Symmetric square root of a PSD matrix.

    Eigenvalues down to ``-1e-10 * max|eigenvalue|`` are treated as rounding
    noise and clipped to zero; anything more negative raises NotPSDError.
    """
    es = sym_eig(S) if eig is None else eig
    vals = es.values
    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    if vals.size and vals[-1] < -PSD_RTOL * scale:
        raise NotPSDError(f"matrix is not PSD: smallest eigenvalue {vals[-1]:.3e}, largest {vals[0]:.3e}")
    root = np.sqrt(np.clip(vals, 0.0, None))
    return _symmetrize((es.vectors * root) @ es.vectors.T)


def reg_solve(S, rho: float, B) -> np.ndarray:
    """Tikhonov-regularized solve ``(S + rho I)^{-1} B``."""
    if not rho > 0:
        raise InvalidArgumentError(f"rho must be positive, got {rho}")
    s = _check_symmetric(S)
    b = np.asarray(B, dtype=float)
    a = _symmetrize(s) + rho * np.eye(s.shape[0])
    try:
        return scipy.linalg.solve(a, b, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        # Not numerically positive definite; fall back to a general solve.
        try:
            return scipy.linalg.solve(a, b, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise NumericalError(f"regularized system is singular: {exc}") from exc
