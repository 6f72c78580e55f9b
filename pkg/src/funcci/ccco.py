"""Conditional independence test for random functions.

The pipeline reconstructs the curves (or integrates them directly on a common
grid), builds Gaussian Gram matrices on the resulting L2 distances, conjoins
the X and Y kernels with the Z kernel by Hadamard products, partials out Z with
the Tikhonov operator ``R_Z = n eps (K_Z~ + n eps I)^{-1}``, and compares

    T_n = trace(K_X|Z K_Y|Z) / n

against the weighted chi-square law whose weights are the eigenvalues of
``(K_X|Z o K_Y|Z) / n``.
"""

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from funcci.config import PipelineConfig
from funcci.dataset import TripleDataset
from funcci.errors import DegenerateDataError, InvalidArgumentError, TuningError
from funcci.kernelmat import (
    GramMatrix,
    bandwidth_from_distances,
    center_gram,
    hadamard,
    mean_pairwise_distance,
    psd_sqrt,
    rbf_gram,
    reg_solve,
    sym_eig,
)
from funcci.nulldist import WeightedChiSquare, pvalue_mc, pvalue_satterthwaite
from funcci.smoothing import (
    TimeKernelCache,
    equispaced_rule,
    gcv_smoothing,
    gram_of_values,
    pairwise_geometry,
    simpson_rule,
    smooth_channel,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConditionalGramSet:
    K_ddX_given_Z: np.ndarray
    K_ddY_given_Z: np.ndarray
    R_Z: np.ndarray
    epsilon_n: float


@dataclass(frozen=True)
class TuningRecord:
    """Bandwidths and regularization constants chosen for one run.

    ``gamma_T`` and ``delta_star`` are None when the common-grid shortcut
    skipped smoothing.  ``epsilon_star`` is the selected grid value before
    rescaling by the largest eigenvalue of the centred Z Gram matrix.
    """

    gamma_T: Optional[float]
    gamma_X: float
    gamma_Y: float
    gamma_Z: float
    delta_star: Optional[float]
    epsilon_star: float


@dataclass
class TestResult:
    statistic: float
    eigenvalues: np.ndarray
    p_value: float
    tuning: TuningRecord
    n: int
    diagnostics: Dict[str, float] = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self, eigen_head: Optional[int] = None) -> dict:
        eig = self.eigenvalues if eigen_head is None else self.eigenvalues[:eigen_head]
        return {
            "statistic": float(self.statistic),
            "p_value": float(self.p_value),
            "n": int(self.n),
            "eigenvalues": [float(v) for v in eig],
            "tuning": asdict(self.tuning),
            "diagnostics": {k: float(v) for k, v in sorted(self.diagnostics.items())},
        }


def conjoined_grams(K_X: GramMatrix, K_Y: GramMatrix, K_Z: GramMatrix) -> Tuple[GramMatrix, GramMatrix]:
    """Gram matrices of the product kernels on (X, Z) and (Y, Z)."""
    if any(K.centered for K in (K_X, K_Y, K_Z)):
        raise InvalidArgumentError("conjoined Gram matrices are built from uncentered kernels")
    return hadamard(K_X, K_Z), hadamard(K_Y, K_Z)


def make_R_Z(K_Z_centered: GramMatrix, epsilon_n: float, n: int) -> np.ndarray:
    """``n eps (K_Z~ + n eps I)^{-1}``; ``epsilon_n`` is the already rescaled constant."""
    if not epsilon_n > 0:
        raise InvalidArgumentError(f"epsilon_n must be positive, got {epsilon_n}")
    if not K_Z_centered.centered:
        raise InvalidArgumentError("R_Z needs the centered Z Gram matrix")
    if K_Z_centered.n != n:
        raise InvalidArgumentError(f"Gram matrix has size {K_Z_centered.n}, expected {n}")
    rho = n * epsilon_n
    R = reg_solve(K_Z_centered.entries, rho, rho * np.eye(n))
    return 0.5 * (R + R.T)


def conditional_grams(
    K_ddX_c: GramMatrix, K_ddY_c: GramMatrix, R_Z: np.ndarray, epsilon_n: float
) -> ConditionalGramSet:
    R = np.asarray(R_Z, dtype=float)
    if not (K_ddX_c.n == K_ddY_c.n == R.shape[0] == R.shape[1]):
        raise InvalidArgumentError("dimension mismatch among conditional Gram inputs")
    kx = R @ K_ddX_c.entries @ R
    ky = R @ K_ddY_c.entries @ R
    return ConditionalGramSet(0.5 * (kx + kx.T), 0.5 * (ky + ky.T), R, float(epsilon_n))


def test_statistic(cgs: ConditionalGramSet, n: int) -> float:
    """``trace(K_X|Z K_Y|Z) / n``, clipped at zero against rounding."""
    if n < 2:
        raise InvalidArgumentError("the statistic needs n >= 2")
    # trace(AB) for symmetric A, B
    t = float(np.sum(cgs.K_ddX_given_Z * cgs.K_ddY_given_Z)) / n
    return max(t, 0.0)


test_statistic.__test__ = False


def null_eigenvalues(K_ddX_c: GramMatrix, K_ddY_c: GramMatrix, R_Z: np.ndarray, n: int) -> np.ndarray:
    """Eigenvalues of ``L^T L`` where column k of ``L`` is ``(L_X e_k) kron (L_Y e_k) / sqrt(n)``.

    Uses ``L^T L = (L_X^T L_X) o (L_Y^T L_Y) / n`` so the ``n^2 x n`` matrix is
    never formed.  Negative rounding noise is clipped to zero; the result is
    sorted in descending order.
    """
    if n < 2:
        raise InvalidArgumentError("need n >= 2")
    R = np.asarray(R_Z, dtype=float)
    Lx = psd_sqrt(K_ddX_c.entries) @ R
    Ly = psd_sqrt(K_ddY_c.entries) @ R
    M = (Lx.T @ Lx) * (Ly.T @ Ly) / n
    vals = sym_eig(0.5 * (M + M.T)).values
    return np.clip(vals, 0.0, None)


def _epsilon_gcv_scores(K_XY_c: np.ndarray, K_Z_c: np.ndarray, grid: Sequence[float]):
    n = K_Z_c.shape[0]
    es = sym_eig(K_Z_c)
    lam = np.clip(es.values, 0.0, None)
    lam_max = float(lam[0])
    if not lam_max > 0:
        raise DegenerateDataError("centered Z Gram matrix is zero", channel="Z")
    proj = es.vectors.T @ K_XY_c
    row_sq = np.sum(proj * proj, axis=1)
    scores = []
    for eps in grid:
        c = n * eps * lam_max
        keep = c / (lam + c)
        num = float(np.sum(keep**2 * row_sq))
        denom = 1.0 - float(np.sum(lam / (lam + c))) / n
        scores.append(num / denom**2 if denom > 0 else float("nan"))
    return scores, lam_max


def gcv_epsilon(
    K_X: GramMatrix, K_Y: GramMatrix, K_Z_c: GramMatrix, grid_I_Z: Sequence[float]
) -> Tuple[float, List[float]]:
    """Select epsilon_n by GCV for predicting the centred X-Y product kernel from Z.

    ``K_X`` and ``K_Y`` are the uncentered second-layer Gram matrices;
    ``K_Z_c`` is centered.  Each candidate is rescaled by the largest
    eigenvalue of ``K_Z_c`` inside the criterion.  Returns the first minimizer
    and every score (NaN for rejected candidates).
    """
    grid = [float(e) for e in grid_I_Z]
    if not grid:
        raise InvalidArgumentError("candidate grid is empty")
    if any(not e > 0 for e in grid):
        raise InvalidArgumentError("candidates must be positive")
    if K_X.centered or K_Y.centered or not K_Z_c.centered:
        raise InvalidArgumentError("expected uncentered K_X, K_Y and centered K_Z")
    K_XY_c = center_gram(hadamard(K_X, K_Y)).entries
    scores, _ = _epsilon_gcv_scores(K_XY_c, K_Z_c.entries, grid)
    arr = np.asarray(scores)
    ok = np.isfinite(arr)
    if not ok.any():
        raise TuningError("every epsilon_n candidate was rejected by GCV")
    best = np.min(arr[ok])
    return grid[int(np.flatnonzero(ok & (arr == best))[0])], scores


@dataclass
class Preparation:
    """Intermediate state of a run up to (and including) the choice of epsilon_n."""

    n: int
    balanced: bool
    gamma_T: Optional[float]
    delta_star: Optional[float]
    delta_scores: Optional[List[float]]
    delta_grid: Optional[List[float]]
    inner_products: Dict[str, np.ndarray]
    grams: Dict[str, GramMatrix]
    epsilon_star: float
    epsilon_scores: List[float]
    epsilon_grid: List[float]
    lambda_max_KZ: float
    timing: Dict[str, float] = field(default_factory=dict)


def _channel_gram(ip: np.ndarray, channel: str) -> GramMatrix:
    n = ip.shape[0]
    sq, mean_dist = pairwise_geometry(ip)
    if not mean_dist > 0:
        raise DegenerateDataError(
            f"channel {channel}: every pairwise distance is zero (constant channel)", channel=channel
        )
    iu = np.triu_indices(n, k=1)
    gamma = bandwidth_from_distances(np.sqrt(sq[iu]), n * (n - 1) // 2)
    return rbf_gram(sq, gamma)


def smoothing_setup(config: PipelineConfig):
    """Quadrature rule on [0, 1] and the time-kernel bandwidth from its mean pairwise spacing."""
    rule = simpson_rule(config.grid_l, 0.0, 1.0)
    gamma_T = 1.0 / mean_pairwise_distance(rule.grid) ** 2
    return rule, gamma_T


def prepare(data: TripleDataset, config: PipelineConfig) -> Preparation:
    """Run the pipeline through Gram construction and both GCV selections."""
    n = data.n
    if n < 3:
        raise InvalidArgumentError(f"need at least 3 subjects, got {n}")
    timing = {}
    clock = time.perf_counter()
    grid = data.common_grid()
    balanced = grid is not None if config.balanced is None else config.balanced
    if balanced and grid is None:
        raise InvalidArgumentError("balanced mode requested but subjects do not share an equally spaced grid")

    names = data.names
    if balanced:
        rule = equispaced_rule(grid.size - 1, float(grid[0]), float(grid[-1]))
        gamma_T = delta_star = None
        delta_scores = delta_grid = None
        ips = {
            name: gram_of_values(np.vstack([s.values for s in ch]), rule)
            for name, ch in zip(names, data.channels)
        }
        timing["smoothing"] = time.perf_counter() - clock
    else:
        singletons = sum(1 for ch in data.channels for s in ch if s.m == 1)
        if singletons:
            warnings.warn(f"{singletons} curve(s) observed at a single time point", stacklevel=2)
        rule, gamma_T = smoothing_setup(config)
        cache = TimeKernelCache(gamma_T)
        delta_grid = list(config.grid_T)
        delta_star, delta_scores = gcv_smoothing(data.channels, gamma_T, delta_grid, cache)
        timing["gcv_delta"] = time.perf_counter() - clock
        clock = time.perf_counter()
        ips = {}
        for name, ch in zip(names, data.channels):
            sm = smooth_channel(ch, gamma_T, delta_star, rule, cache)
            ips[name] = gram_of_values(sm.grid_values, rule)
        timing["smoothing"] = time.perf_counter() - clock
    clock = time.perf_counter()

    grams = {}
    for role, name in zip("XYZ", names):
        grams[role] = _channel_gram(ips[name], name)
    K_Z_c = center_gram(grams["Z"])
    eps_grid = list(config.epsilon_grid(n))
    try:
        eps_star, eps_scores = gcv_epsilon(grams["X"], grams["Y"], K_Z_c, eps_grid)
    except DegenerateDataError as exc:
        raise DegenerateDataError(f"channel {names[2]}: {exc}", channel=names[2]) from exc
    lam_max = float(sym_eig(K_Z_c.entries).values[0])
    timing["grams_gcv_epsilon"] = time.perf_counter() - clock
    return Preparation(
        n=n,
        balanced=balanced,
        gamma_T=gamma_T,
        delta_star=delta_star,
        delta_scores=delta_scores,
        delta_grid=delta_grid,
        inner_products=ips,
        grams=grams,
        epsilon_star=eps_star,
        epsilon_scores=eps_scores,
        epsilon_grid=eps_grid,
        lambda_max_KZ=lam_max,
        timing=timing,
    )


def run_test(data: TripleDataset, config: Optional[PipelineConfig] = None) -> TestResult:
    """Test ``X independent of Y given Z`` on a functional dataset.

    Parameters
    ----------
    data : TripleDataset
        At least three subjects, each observed on all three channels.
    config : PipelineConfig, optional
        Defaults reproduce the standard tuning grids and a 10^5-draw Monte
        Carlo p-value.

    Returns
    -------
    TestResult
        ``timing`` holds per-stage wall-clock seconds; every other field is a
        deterministic function of ``data`` and ``config``.
    """
    config = PipelineConfig() if config is None else config
    prep = prepare(data, config)
    clock = time.perf_counter()
    n = prep.n
    K_ddX, K_ddY = conjoined_grams(prep.grams["X"], prep.grams["Y"], prep.grams["Z"])
    K_ddX_c, K_ddY_c = center_gram(K_ddX), center_gram(K_ddY)
    K_Z_c = center_gram(prep.grams["Z"])
    eps_eff = prep.epsilon_star * prep.lambda_max_KZ
    R_Z = make_R_Z(K_Z_c, eps_eff, n)
    cgs = conditional_grams(K_ddX_c, K_ddY_c, R_Z, eps_eff)
    stat = test_statistic(cgs, n)
    eig = null_eigenvalues(K_ddX_c, K_ddY_c, R_Z, n)
    t_stat = time.perf_counter() - clock
    clock = time.perf_counter()
    dist = WeightedChiSquare.from_eigenvalues(
        eig, rel_threshold=config.eig_threshold, draws=config.draws, seed=config.seed
    )
    if config.pvalue_method == "mc":
        p = pvalue_mc(dist, stat)
    else:
        p = pvalue_satterthwaite(dist, stat)
    t_null = time.perf_counter() - clock
    log.debug("n=%d T_n=%.6g p=%.4g", n, stat, p)

    diagnostics = {
        "balanced": float(prep.balanced),
        "epsilon_effective": eps_eff,
        "lambda_max_KZ": prep.lambda_max_KZ,
        "null_weights": float(dist.weights.size),
        "null_mean": dist.mean,
        "null_sd": float(np.sqrt(dist.variance)),
    }
    timing = dict(prep.timing, statistic=t_stat, null_distribution=t_null)
    tuning = TuningRecord(
        gamma_T=prep.gamma_T,
        gamma_X=prep.grams["X"].bandwidth,
        gamma_Y=prep.grams["Y"].bandwidth,
        gamma_Z=prep.grams["Z"].bandwidth,
        delta_star=prep.delta_star,
        epsilon_star=prep.epsilon_star,
    )
    return TestResult(stat, eig, float(p), tuning, n, diagnostics, timing)
