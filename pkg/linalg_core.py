"""
Small dense real-matrix algebra
Products, powers, eigenvalues, numeric rank, inversion and multiplicity checks on numpy arrays
"""

import cmath
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Sequence

import numpy as np

from exceptions import InvalidInputError, NumericFailureError, SingularMatrixError
from union_find import UnionFind

logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-8
DEFAULT_CLUSTER_TOL = 1e-5
# digits kept when ordering eigenvalues, so float noise cannot reorder ties
_ORDER_DIGITS = 12


@dataclass(frozen=True)
class EigenGroup:
    """One distinct eigenvalue with its multiplicities"""
    value: complex
    algebraic: int
    geometric: int

    @property
    def is_real(self) -> bool:
        return self.value.imag == 0.0

    @property
    def semisimple(self) -> bool:
        return self.geometric == self.algebraic

    @property
    def modulus(self) -> float:
        return abs(self.value)

    def to_dict(self) -> dict:
        return {
            'value': complex_to_dict(self.value),
            'algebraic_multiplicity': self.algebraic,
            'geometric_multiplicity': self.geometric,
        }


@dataclass(frozen=True)
class EigenReport:
    """All eigenvalues of a matrix plus their grouping into distinct values"""
    values: List[complex]
    groups: List[EigenGroup] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'values': [complex_to_dict(v) for v in self.values],
            'groups': [g.to_dict() for g in self.groups],
        }


def complex_to_dict(value: complex) -> dict:
    return {'re': float(value.real), 'im': float(value.imag)}


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate and convert nested sequences or arrays into a finite 2-D float matrix"""
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"{name} is not a numeric matrix: {e}")
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or infinite entries")
    return arr


def _require_square(a: np.ndarray, name: str = "matrix") -> int:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    return a.shape[0]


def frobenius(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 'fro'))


def mat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product"""
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"Cannot multiply {a.shape} by {b.shape}: inner dimensions differ")
    return a @ b


def mat_pow(a: np.ndarray, t: int) -> np.ndarray:
    """a multiplied with itself t times by repeated squaring (t = 0 gives the identity)"""
    _require_square(a)
    if t < 0:
        raise InvalidInputError(f"Power must be non-negative, got {t}")
    return np.linalg.matrix_power(a, int(t))


def _order_key(value: complex):
    return (-round(abs(value), _ORDER_DIGITS),
            -round(value.real, _ORDER_DIGITS),
            -round(value.imag, _ORDER_DIGITS))


def _closed_form_eigenvalues(a: np.ndarray) -> List[complex]:
    if a.shape[0] == 1:
        return [complex(a[0, 0], 0.0)]

    trace = a[0, 0] + a[1, 1]
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    # (a - d)^2 + 4bc equals trace^2 - 4 det without cancelling near a multiple of I
    spread = a[0, 0] - a[1, 1]
    disc = spread * spread + 4.0 * a[0, 1] * a[1, 0]
    if disc >= 0:
        root = np.sqrt(disc)
        # avoid cancellation in the smaller root
        big = 0.5 * (trace + root) if trace >= 0 else 0.5 * (trace - root)
        small = det / big if big != 0 else 0.0
        return [complex(big, 0.0), complex(small, 0.0)]
    half = 0.5 * trace
    im = 0.5 * np.sqrt(-disc)
    return [complex(half, im), complex(half, -im)]


def eigenvalues(a: np.ndarray) -> List[complex]:
    """
    All eigenvalues with multiplicity, ordered by descending modulus,
    then descending real part, then descending imaginary part
    """
    m = _require_square(a)

    if m <= 2:
        values = _closed_form_eigenvalues(a)
    else:
        # LAPACK Hessenberg reduction followed by shifted QR sweeps
        try:
            values = [complex(v) for v in np.linalg.eigvals(a)]
        except np.linalg.LinAlgError as e:
            raise NumericFailureError(f"Eigenvalue iteration did not converge: {e}")

        residual = abs(sum(values) - np.trace(a))
        scale = 1.0 + frobenius(a)
        if not np.isfinite(residual) or residual > 1e-8 * scale * m:
            raise NumericFailureError(
                f"Eigenvalues inconsistent with trace (residual {residual:.3e})",
                residual=float(residual)
            )

    if not all(cmath.isfinite(v) for v in values):
        raise NumericFailureError("Eigenvalue computation produced non-finite values")

    return sorted(values, key=_order_key)


def spectral_radius(a: np.ndarray) -> float:
    return max(abs(v) for v in eigenvalues(a))


def numeric_rank(a: np.ndarray, rel_tol: float = DEFAULT_REL_TOL, abs_tol: float = 0.0) -> int:
    """
    Count of singular values above rel_tol times the largest one
    (and above abs_tol, for matrices whose entries may have decayed to roundoff)
    """
    if not rel_tol > 0:
        raise InvalidInputError(f"rel_tol must be positive, got {rel_tol}")
    try:
        singular = np.linalg.svd(a, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise NumericFailureError(f"Singular value decomposition failed: {e}")
    if singular.size == 0 or singular[0] == 0.0:
        return 0
    threshold = max(rel_tol * singular[0], abs_tol)
    return int(np.count_nonzero(singular > threshold))


def invert(a: np.ndarray, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Inverse of a well-conditioned square matrix"""
    _require_square(a)
    condition = float(np.linalg.cond(a))
    if not np.isfinite(condition) or condition > 1.0 / rel_tol:
        raise SingularMatrixError(
            f"Matrix is numerically singular (condition estimate {condition:.3e})",
            condition=condition
        )
    try:
        return np.linalg.inv(a)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"Matrix inversion failed: {e}", condition=condition)


def eigenspace_dimension(a: np.ndarray, lam: complex, rel_tol: float = DEFAULT_REL_TOL,
                         spread: float = 0.0) -> int:
    """
    m - rank(a - lam I), with singular values measured against the scale of a so that
    roundoff in a near-multiple of I is not mistaken for rank.

    spread is the radius of the eigenvalue cluster lam stands for; singular values of order
    spread belong to the cluster and count towards its eigenspace.
    """
    m = _require_square(a)
    floor = max(rel_tol, 10.0 * spread) * max(1.0, float(np.linalg.norm(a, 2)))
    return m - numeric_rank(a - lam * np.eye(m), rel_tol, abs_tol=floor)


def geometric_multiplicity(a: np.ndarray, lam: float, rel_tol: float = DEFAULT_REL_TOL) -> int:
    """Dimension of the eigenspace of a real eigenvalue"""
    multiplicity = eigenspace_dimension(a, lam, rel_tol)
    if multiplicity < 1:
        raise InvalidInputError(f"{lam} is not an eigenvalue of the matrix at tolerance {rel_tol}")
    return multiplicity


def _clusters(values: List[complex], cluster_tol: float) -> List[List[complex]]:
    # single linkage: roundoff spreads a Jordan block of size k over a circle of radius eps^(1/k)
    uf = UnionFind(len(values))
    for i, j in combinations(range(len(values)), 2):
        if abs(values[i] - values[j]) <= cluster_tol * max(1.0, abs(values[i])):
            uf.union(i, j)
    return [[values[i] for i in members] for members in uf.components()]


def eigen_report(a: np.ndarray, rel_tol: float = DEFAULT_REL_TOL,
                 cluster_tol: float = DEFAULT_CLUSTER_TOL) -> EigenReport:
    """
    Eigenvalues grouped into distinct values with algebraic and geometric multiplicities.
    Values closer than cluster_tol are one eigenvalue split by roundoff.
    """
    values = eigenvalues(a)

    groups = []
    for members in _clusters(values, cluster_tol):
        centre = complex(np.mean(members))
        spread = max(abs(v - centre) for v in members)
        if abs(centre.imag) <= cluster_tol:
            centre = complex(centre.real, 0.0)
        algebraic = len(members)
        lam = centre.real if centre.imag == 0.0 else centre
        nullity = eigenspace_dimension(a, lam, rel_tol, spread)
        if nullity < 1:
            logger.debug("Eigenvalue %s perturbed off the spectrum, reporting one eigenvector", centre)
        geometric = min(max(nullity, 1), algebraic)
        groups.append(EigenGroup(value=centre, algebraic=algebraic, geometric=geometric))

    groups.sort(key=lambda g: _order_key(g.value))
    return EigenReport(values=values, groups=groups)


def max_asymmetry(a: np.ndarray) -> float:
    """Largest |a_ij - a_ji|"""
    return float(np.max(np.abs(a - a.T), initial=0.0))


def min_symmetric_eigenvalue(a: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetric part of a"""
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[0])


def symmetric_sqrt(a: np.ndarray, psd_tol: float = 1e-10, name: str = "covariance") -> np.ndarray:
    """
    Symmetric square root of a PSD matrix; eigenvalues in [-psd_tol, 0] are clipped to zero
    """
    values, vectors = np.linalg.eigh(0.5 * (a + a.T))
    if values[0] < -psd_tol:
        raise InvalidInputError(f"{name} is not positive semidefinite (min eigenvalue {values[0]:.3e})")
    clipped = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(clipped)) @ vectors.T


def permutation_matrix(order: Sequence[int]) -> np.ndarray:
    """P such that P @ a @ P.T relabels rows and columns of a in the given order"""
    m = len(order)
    p = np.zeros((m, m))
    p[np.arange(m), list(order)] = 1.0
    return p
