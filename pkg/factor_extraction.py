"""
One-wave factor analysis
Estimates how many factors a single wave's covariance supports, and extracts principal-axis loadings
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import AppConfig, RuntimeConfig
from exceptions import InvalidInputError
from linalg_core import as_matrix, max_asymmetry, numeric_rank, DEFAULT_REL_TOL
from panel_storage import write_frame_csv
from simulator import TrajectoryPanel

logger = logging.getLogger(__name__)


class DimensionalityMethod(str, Enum):
    REDUCED_RANK = "reduced-rank"
    PARALLEL_ANALYSIS = "parallel-analysis"
    GAP_RATIO = "gap-ratio"


@dataclass
class DimensionalityParams:
    """Knobs for the three estimators; n_observations is required by parallel analysis only"""
    rel_tol: float = DEFAULT_REL_TOL
    n_observations: Optional[int] = None
    replicates: int = 200
    percentile: float = 95.0
    seed: int = 20240101
    max_k: Optional[int] = None
    symmetry_tol: float = 1e-8
    threads: Optional[int] = None

    @classmethod
    def from_config(cls, config: AppConfig, n_observations: Optional[int] = None) -> 'DimensionalityParams':
        return cls(
            rel_tol=config.tolerances.rank_rel_tol,
            n_observations=n_observations,
            replicates=config.parallel_analysis.replicates,
            percentile=config.parallel_analysis.percentile,
            seed=config.parallel_analysis.seed,
            symmetry_tol=config.tolerances.symmetry_tol,
            threads=config.runtime.threads or None,
        )


@dataclass
class DimensionalityReport:
    eigenvalues: List[float]
    method: DimensionalityMethod
    estimated_factors: int
    threshold_used: float

    def to_dict(self) -> Dict:
        return {
            'eigenvalues': list(self.eigenvalues),
            'method': self.method.value,
            'estimated_factors': self.estimated_factors,
            'threshold_used': self.threshold_used,
        }


@dataclass
class LoadingEstimate:
    """Principal-axis loadings, columns ordered by variance explained"""
    loadings: np.ndarray
    variance_explained: List[float]

    def to_dict(self) -> Dict:
        return {
            'loadings': self.loadings.tolist(),
            'variance_explained': list(self.variance_explained),
        }


@dataclass
class CrossBlockSummary:
    max_abs: float
    mean_abs: float

    def to_dict(self) -> Dict:
        return {'max_abs': self.max_abs, 'mean_abs': self.mean_abs}


def sample_covariance(panel: TrajectoryPanel, wave: int) -> np.ndarray:
    """Unbiased (n - 1) covariance of the items at one wave"""
    if panel.n_subjects < 2:
        raise InvalidInputError("Sample covariance needs at least two subjects")
    responses = panel.wave(wave)
    return np.atleast_2d(np.cov(responses, rowvar=False, ddof=1))


def _symmetric_input(s, symmetry_tol: float) -> np.ndarray:
    s = as_matrix(s, "covariance")
    if s.shape[0] != s.shape[1]:
        raise InvalidInputError(f"Covariance must be square, got shape {s.shape}")
    asymmetry = max_asymmetry(s)
    if asymmetry > symmetry_tol:
        raise InvalidInputError(f"Covariance is not symmetric (max asymmetry {asymmetry:.3e})")
    return 0.5 * (s + s.T)


def _descending_eigenvalues(s: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(s)[::-1]


def _leading_noise_eigenvalue(n: int, p: int, seed_seq: np.random.SeedSequence) -> float:
    rng = np.random.default_rng(seed_seq)
    noise = rng.standard_normal((n, p))
    cov = np.atleast_2d(np.cov(noise, rowvar=False, ddof=1))
    return float(np.linalg.eigvalsh(cov)[-1])


@lru_cache(maxsize=64)
def _noise_threshold(n: int, p: int, replicates: int, percentile: float, seed: int, workers: int) -> float:
    streams = np.random.SeedSequence(seed).spawn(replicates)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        leading = list(pool.map(lambda ss: _leading_noise_eigenvalue(n, p, ss), streams))
    threshold = float(np.percentile(leading, percentile))
    logger.debug("Noise threshold for n=%d, p=%d over %d replicates: %.6f", n, p, replicates, threshold)
    return threshold


def _parallel_analysis(values: np.ndarray, p: int, params: DimensionalityParams):
    n = params.n_observations
    if n is None or n < 2:
        raise InvalidInputError("Parallel analysis needs the sample size (n_observations >= 2)")
    if params.replicates < 1 or not 0 < params.percentile < 100:
        raise InvalidInputError("Parallel analysis needs replicates >= 1 and a percentile in (0, 100)")

    workers = params.threads or RuntimeConfig.from_env().worker_count()
    threshold = _noise_threshold(int(n), p, int(params.replicates), float(params.percentile),
                                 int(params.seed), workers)
    return int(np.count_nonzero(values > threshold)), threshold


def _gap_ratio(values: np.ndarray, p: int, params: DimensionalityParams):
    max_k = p - 1 if params.max_k is None else min(int(params.max_k), p - 1)
    if max_k < 1:
        return 0, 1.0

    ratios = []
    for k in range(1, max_k + 1):
        upper, lower = values[k - 1], values[k]
        if lower > 0:
            ratios.append(upper / lower)
        else:
            ratios.append(np.inf if upper > 0 else 1.0)

    best = int(np.argmax(ratios))
    if not ratios[best] > 1.0 + params.rel_tol:
        return 0, float(ratios[best])
    return best + 1, float(ratios[best])


def estimate_dimensionality(s, method=DimensionalityMethod.REDUCED_RANK,
                            params: DimensionalityParams = None) -> DimensionalityReport:
    """
    Number of factors supported by a covariance matrix, by one of three estimators:

    - reduced-rank: numeric rank of S - I (exact for population covariances)
    - parallel-analysis: eigenvalues of S above the chosen percentile of the leading
      eigenvalue of pure N(0, I) sample covariances at the same n and p
    - gap-ratio: k maximizing lambda_k / lambda_(k+1), 0 when the spectrum is flat
    """
    params = params or DimensionalityParams()
    try:
        method = DimensionalityMethod(method)
    except ValueError:
        raise InvalidInputError(f"Unknown dimensionality method {method!r}")

    s = _symmetric_input(s, params.symmetry_tol)
    p = s.shape[0]
    values = _descending_eigenvalues(s)

    if method == DimensionalityMethod.REDUCED_RANK:
        reduced = s - np.eye(p)
        estimate = numeric_rank(reduced, params.rel_tol)
        threshold = params.rel_tol * float(np.linalg.norm(reduced, 2))
    elif method == DimensionalityMethod.PARALLEL_ANALYSIS:
        estimate, threshold = _parallel_analysis(values, p, params)
    else:
        estimate, threshold = _gap_ratio(values, p, params)

    return DimensionalityReport(
        eigenvalues=[float(v) for v in values],
        method=method,
        estimated_factors=int(estimate),
        threshold_used=float(threshold),
    )


def extract_loadings(s, k: int, symmetry_tol: float = 1e-8) -> LoadingEstimate:
    """Top-k eigenvectors of S - I scaled by the root of their (clipped) eigenvalues"""
    s = _symmetric_input(s, symmetry_tol)
    p = s.shape[0]
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidInputError(f"Number of factors must be a positive integer, got {k!r}")
    if k > p:
        raise InvalidInputError(f"Cannot extract {k} factors from {p} items")

    values, vectors = np.linalg.eigh(s - np.eye(p))
    order = np.argsort(values)[::-1][:k]
    kept = np.clip(values[order], 0.0, None)
    loadings = vectors[:, order] * np.sqrt(kept)

    for j in range(k):
        column = loadings[:, j]
        if column[np.argmax(np.abs(column))] < 0:
            loadings[:, j] = -column

    return LoadingEstimate(loadings=loadings, variance_explained=[float(v) for v in kept])


def cross_block_covariance(s, block_a: Sequence[int], block_b: Sequence[int]) -> CrossBlockSummary:
    """Max and mean absolute covariance between items of two disjoint blocks"""
    s = as_matrix(s, "covariance")
    p = s.shape[0]
    a, b = list(block_a), list(block_b)
    if not a or not b:
        raise InvalidInputError("Item blocks must not be empty")
    if any(not 0 <= i < p for i in a + b):
        raise InvalidInputError(f"Item block indices must lie in 0..{p - 1}")
    overlap = set(a) & set(b)
    if overlap:
        raise InvalidInputError(f"Item blocks overlap at {sorted(overlap)}")

    values = np.abs(s[np.ix_(a, b)])
    return CrossBlockSummary(max_abs=float(values.max()), mean_abs=float(values.mean()))


def first_factor_share(s) -> float:
    """Share of the positive part of the reduced spectrum carried by the leading eigenvalue"""
    s = as_matrix(s, "covariance")
    values = np.linalg.eigvalsh(0.5 * (s + s.T) - np.eye(s.shape[0]))
    positive = values[values > 0]
    if positive.size == 0:
        return 0.0
    return float(positive.max() / positive.sum())


def write_scree_csv(report: DimensionalityReport, path: str) -> str:
    frame = pd.DataFrame({
        'index': np.arange(1, len(report.eigenvalues) + 1),
        'value': report.eigenvalues,
    })
    return write_frame_csv(frame, path)
