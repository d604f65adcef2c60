"""
Equilibrium analysis of the transition matrix B
Convergence of B^t, its limit, the asymptotic factor rank, causal equivalence
classes of factors and the per-class rank bounds
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import ToleranceConfig
from exceptions import InvalidInputError, NoConvergenceError, NumericFailureError
from linalg_core import (
    as_matrix, complex_to_dict, eigen_report, eigenspace_dimension, frobenius,
    numeric_rank, DEFAULT_CLUSTER_TOL, DEFAULT_REL_TOL,
)
from union_find import UnionFind

logger = logging.getLogger(__name__)

DEFAULT_UNIT_TOL = 1e-9
DEFAULT_ZERO_TOL = 1e-12
DEFAULT_LIMIT_ABS_TOL = 1e-10
DEFAULT_MAX_DOUBLINGS = 64
DEFAULT_LIMIT_RANK_REL_TOL = 1e-6
# B* is a projector, so its nonzero singular values are >= 1; anything this small is decay residue
LIMIT_RANK_ABS_TOL = 1e-6


class ConvergenceStatus(str, Enum):
    CONVERGES = "converges"
    DIVERGES_UNBOUNDED = "diverges-unbounded"
    DIVERGES_OSCILLATES = "diverges-oscillates"


class BoundKind(str, Enum):
    SINGLETON_UNIT = "singleton-unit"
    SINGLETON_DECAY = "singleton-decay"
    PAIR = "pair"
    POSITIVE_PERRON = "positive-perron"
    GENERAL = "general"


@dataclass
class ConvergenceReport:
    """Verdict on whether B^t converges, with the limit and its rank when it does"""
    eigenvalues: List[complex]
    status: ConvergenceStatus
    reason: str
    limit: Optional[np.ndarray] = None
    asymptotic_rank: Optional[int] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def converges(self) -> bool:
        return self.status == ConvergenceStatus.CONVERGES

    def to_dict(self) -> Dict:
        return {
            'eigenvalues': [complex_to_dict(v) for v in self.eigenvalues],
            'status': self.status.value,
            'reason': self.reason,
            'limit': self.limit.tolist() if self.limit is not None else None,
            'asymptotic_rank': self.asymptotic_rank,
            'warnings': list(self.warnings),
        }


@dataclass
class EquivalencePartition:
    """Factor classes that are mutually disconnected in the causal graph of B"""
    classes: List[Tuple[int, ...]]
    permutation: List[int]

    def permuted(self, b: np.ndarray) -> np.ndarray:
        """B relabelled so that each class occupies one diagonal block"""
        order = self.permutation
        return b[np.ix_(order, order)]

    def to_dict(self) -> Dict:
        return {
            'classes': [list(c) for c in self.classes],
            'permutation': list(self.permutation),
        }


@dataclass
class ClassReport:
    """Structure and equilibrium rank of one equivalence class"""
    indices: Tuple[int, ...]
    block: np.ndarray
    bound_kind: BoundKind
    rank_bound: Optional[str]
    exact_rank: Optional[int]
    convergent: bool
    status: ConvergenceStatus

    def to_dict(self) -> Dict:
        return {
            'indices': list(self.indices),
            'block': self.block.tolist(),
            'bound_kind': self.bound_kind.value,
            'rank_bound': self.rank_bound,
            'exact_rank': self.exact_rank,
            'convergent': self.convergent,
            'status': self.status.value,
        }


def _square(b, name: str = "B") -> np.ndarray:
    b = as_matrix(b, name)
    if b.shape[0] != b.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {b.shape}")
    return b


def limit_matrix(b, abs_tol: float = DEFAULT_LIMIT_ABS_TOL,
                 max_doublings: int = DEFAULT_MAX_DOUBLINGS) -> np.ndarray:
    """B* = lim B^t by repeated squaring until successive squarings agree within abs_tol"""
    b = _square(b)
    current = b.copy()
    change = float('inf')
    for doubling in range(1, max_doublings + 1):
        squared = current @ current
        if not np.all(np.isfinite(squared)):
            raise NoConvergenceError(f"B^(2^{doubling}) overflowed; B^t does not converge")
        change = frobenius(squared - current)
        current = squared
        if change < abs_tol:
            break
    else:
        raise NoConvergenceError(
            f"B^(2^k) still moving after {max_doublings} doublings (last change {change:.3e}); "
            f"check the convergence tolerances",
            residual=change,
        )

    # a period-2 orbit squares to a fixed point too, so B* must also be fixed by B itself
    drift = frobenius(b @ current - current)
    if drift > 10.0 * abs_tol * max(1.0, frobenius(current)):
        raise NoConvergenceError(
            f"B^(2^k) settled but B * B^(2^k) differs from it by {drift:.3e}; B^t oscillates",
            residual=drift,
        )
    logger.debug("Limit reached after %d doublings (change %.3e)", doubling, change)
    return current


def _format_values(values) -> str:
    return ", ".join(f"{v.real:.6g}{v.imag:+.6g}i" for v in values)


def classify_convergence(b, tol: float = DEFAULT_UNIT_TOL, rel_tol: float = DEFAULT_REL_TOL,
                         limit_abs_tol: float = DEFAULT_LIMIT_ABS_TOL,
                         max_doublings: int = DEFAULT_MAX_DOUBLINGS,
                         limit_rank_rel_tol: float = DEFAULT_LIMIT_RANK_REL_TOL,
                         cluster_tol: float = DEFAULT_CLUSTER_TOL) -> ConvergenceReport:
    """
    B^t converges iff every eigenvalue lies strictly inside the unit circle, or equals 1
    with as many independent eigenvectors as its algebraic multiplicity.

    Eigenvalues within cluster_tol of each other are tested together for semisimplicity,
    since roundoff splits a defective eigenvalue into a cluster of simple-looking ones.
    """
    b = _square(b)
    spectrum = eigen_report(b, rel_tol, cluster_tol)
    values = spectrum.values
    warnings = []

    defective = [g for g in spectrum.groups if not g.semisimple and g.modulus >= 1.0 - tol]
    if defective:
        at_one = [g for g in defective if g.is_real and abs(g.value - 1.0) <= tol]
        if at_one:
            (group,) = at_one
            reason = (f"eigenvalue 1 is not semisimple (algebraic multiplicity {group.algebraic}, "
                      f"geometric multiplicity {group.geometric}); B^t grows polynomially")
        else:
            reason = (f"eigenvalue(s) of modulus 1 ({_format_values(g.value for g in defective)}) "
                      f"are not semisimple; B^t grows polynomially")
        return ConvergenceReport(
            eigenvalues=values,
            status=ConvergenceStatus.DIVERGES_UNBOUNDED,
            reason=reason,
            warnings=warnings,
        )

    unit = [v for v in values if abs(v - 1.0) <= tol]
    others = [v for v in values if abs(v - 1.0) > tol]
    outside = [v for v in others if abs(v) > 1.0 + tol]
    on_circle = [v for v in others if 1.0 - tol <= abs(v) <= 1.0 + tol]

    near_critical = [v for v in on_circle if abs(v) < 1.0]
    if near_critical:
        warnings.append(
            f"{len(near_critical)} eigenvalue(s) with modulus in (1 - {tol:g}, 1) treated as "
            f"non-convergent; the dichotomy is not resolvable at this tolerance"
        )
        logger.warning("Near-critical eigenvalues %s", near_critical)

    algebraic = len(unit)
    geometric = eigenspace_dimension(b, 1.0, rel_tol) if algebraic else 0

    if outside:
        largest = max(abs(v) for v in outside)
        return ConvergenceReport(
            eigenvalues=values,
            status=ConvergenceStatus.DIVERGES_UNBOUNDED,
            reason=f"eigenvalue modulus {largest:.6g} exceeds 1",
            warnings=warnings,
        )
    if algebraic and geometric < algebraic:
        return ConvergenceReport(
            eigenvalues=values,
            status=ConvergenceStatus.DIVERGES_UNBOUNDED,
            reason=(f"eigenvalue 1 is not semisimple (algebraic multiplicity {algebraic}, "
                    f"geometric multiplicity {geometric}); B^t grows polynomially"),
            warnings=warnings,
        )
    if on_circle:
        return ConvergenceReport(
            eigenvalues=values,
            status=ConvergenceStatus.DIVERGES_OSCILLATES,
            reason=(f"eigenvalue(s) of modulus 1 other than 1 ({_format_values(on_circle)}); "
                    f"B^t cycles without settling"),
            warnings=warnings,
        )

    limit = limit_matrix(b, limit_abs_tol, max_doublings)
    limit_rank = numeric_rank(limit, limit_rank_rel_tol, abs_tol=LIMIT_RANK_ABS_TOL)
    if limit_rank != algebraic:
        raise NumericFailureError(
            f"Rank of the limit ({limit_rank}) disagrees with the multiplicity of eigenvalue 1 "
            f"({algebraic}); tolerances are inconsistent for this matrix"
        )

    if algebraic:
        reason = (f"eigenvalue 1 is semisimple with multiplicity {algebraic}; "
                  f"all other eigenvalues lie inside the unit circle")
    else:
        reason = "all eigenvalues lie inside the unit circle"

    return ConvergenceReport(
        eigenvalues=values,
        status=ConvergenceStatus.CONVERGES,
        reason=reason,
        limit=limit,
        asymptotic_rank=algebraic,
        warnings=warnings,
    )


def asymptotic_rank(b, tol: float = DEFAULT_UNIT_TOL, rel_tol: float = DEFAULT_REL_TOL) -> int:
    """Dimension of the equilibrium factor space, rank(lim B^t)"""
    report = classify_convergence(b, tol=tol, rel_tol=rel_tol)
    if not report.converges:
        raise InvalidInputError(f"B^t does not converge: {report.reason}")
    return report.asymptotic_rank


def equivalence_classes(b, zero_tol: float = DEFAULT_ZERO_TOL) -> EquivalencePartition:
    """Connected components of the symmetrised nonzero pattern of B"""
    b = _square(b)
    m = b.shape[0]
    uf = UnionFind(m)
    linked = np.abs(b) > zero_tol
    linked = linked | linked.T
    for i in range(m):
        for j in range(i + 1, m):
            if linked[i, j]:
                uf.union(i, j)

    classes = [tuple(c) for c in uf.components()]
    permutation = [i for c in classes for i in c]
    return EquivalencePartition(classes=classes, permutation=permutation)


def _check_partition(b: np.ndarray, partition: EquivalencePartition, zero_tol: float) -> None:
    m = b.shape[0]
    if sorted(partition.permutation) != list(range(m)):
        raise InvalidInputError("Partition does not cover the factors of B exactly once")
    for a_pos, first in enumerate(partition.classes):
        for second in partition.classes[a_pos + 1:]:
            cross = b[np.ix_(first, second)]
            back = b[np.ix_(second, first)]
            if np.any(np.abs(cross) > zero_tol) or np.any(np.abs(back) > zero_tol):
                raise InvalidInputError(
                    f"Classes {list(first)} and {list(second)} are linked in B; "
                    f"the partition was not produced from this matrix"
                )


def _bound_kind(block: np.ndarray, tol: float, zero_tol: float) -> Tuple[BoundKind, Optional[str]]:
    size = block.shape[0]
    if size == 1:
        entry = block[0, 0]
        if abs(entry - 1.0) <= tol:
            return BoundKind.SINGLETON_UNIT, "exact 1"
        if abs(entry) < 1.0 - tol:
            return BoundKind.SINGLETON_DECAY, "exact 0"
        return BoundKind.GENERAL, None
    if size == 2:
        return BoundKind.PAIR, "≤1"
    if np.all(block > zero_tol):
        return BoundKind.POSITIVE_PERRON, "≤1"
    return BoundKind.GENERAL, None


def block_decompose(b, partition: EquivalencePartition, tol: float = DEFAULT_UNIT_TOL,
                    zero_tol: float = DEFAULT_ZERO_TOL,
                    rel_tol: float = DEFAULT_REL_TOL,
                    cluster_tol: float = DEFAULT_CLUSTER_TOL) -> List[ClassReport]:
    """Per-class block, its a-priori rank bound and its exact equilibrium rank"""
    b = _square(b)
    _check_partition(b, partition, zero_tol)

    reports = []
    for indices in partition.classes:
        block = b[np.ix_(indices, indices)]
        kind, bound = _bound_kind(block, tol, zero_tol)
        verdict = classify_convergence(block, tol=tol, rel_tol=rel_tol, cluster_tol=cluster_tol)
        exact = verdict.asymptotic_rank if verdict.converges else None

        if exact is not None and bound == "≤1" and exact > 1:
            raise NumericFailureError(
                f"Class {list(indices)} ({kind.value}) has equilibrium rank {exact}, "
                f"which its structure rules out"
            )

        reports.append(ClassReport(
            indices=tuple(indices),
            block=block,
            bound_kind=kind,
            rank_bound=bound,
            exact_rank=exact,
            convergent=verdict.converges,
            status=verdict.status,
        ))
    return reports


def collapse_horizon(b, eps: float = 1e-6, max_steps: int = 100000,
                     tol: float = DEFAULT_UNIT_TOL) -> int:
    """Smallest k with ||B^k - B*||_F <= eps"""
    report = classify_convergence(b, tol=tol)
    if not report.converges:
        raise InvalidInputError(f"B^t does not converge: {report.reason}")

    b = _square(b)
    power = np.eye(b.shape[0])
    for k in range(max_steps + 1):
        if frobenius(power - report.limit) <= eps:
            return k
        power = power @ b
    raise NoConvergenceError(f"B^k not within {eps:g} of its limit after {max_steps} steps")


class EquilibriumAnalyzer:
    """
    Runs the full equilibrium analysis of a transition matrix with one set of tolerances
    """

    def __init__(self, tolerances: ToleranceConfig = None, horizon_eps: float = 1e-6):
        self.tolerances = tolerances or ToleranceConfig()
        self.horizon_eps = horizon_eps

    def classify(self, b) -> ConvergenceReport:
        tol = self.tolerances
        return classify_convergence(
            b,
            tol=tol.unit_tol,
            rel_tol=tol.rank_rel_tol,
            limit_abs_tol=tol.limit_abs_tol,
            max_doublings=tol.max_doublings,
            limit_rank_rel_tol=tol.limit_rank_rel_tol,
            cluster_tol=tol.cluster_tol,
        )

    def partition(self, b) -> EquivalencePartition:
        return equivalence_classes(b, self.tolerances.zero_tol)

    def class_reports(self, b, partition: EquivalencePartition) -> List[ClassReport]:
        tol = self.tolerances
        return block_decompose(b, partition, tol=tol.unit_tol, zero_tol=tol.zero_tol,
                               rel_tol=tol.rank_rel_tol, cluster_tol=tol.cluster_tol)

    def analyze(self, b) -> Dict:
        """Convergence verdict, eigenstructure, causal classes and collapse horizon of B"""
        b = _square(b)
        convergence = self.classify(b)
        partition = self.partition(b)
        classes = self.class_reports(b, partition)
        eigen = eigen_report(b, self.tolerances.rank_rel_tol, self.tolerances.cluster_tol)

        horizon = None
        if convergence.converges:
            horizon = collapse_horizon(b, eps=self.horizon_eps, tol=self.tolerances.unit_tol)

        analysis = {
            'convergence': convergence.to_dict(),
            'eigenstructure': eigen.to_dict(),
            'partition': partition.to_dict(),
            'classes': [c.to_dict() for c in classes],
            'collapse_horizon': horizon,
            'collapse_horizon_eps': self.horizon_eps,
        }

        if convergence.converges:
            class_total = sum(c.exact_rank for c in classes if c.exact_rank is not None)
            analysis['class_rank_total'] = class_total
            if all(c.convergent for c in classes) and class_total != convergence.asymptotic_rank:
                logger.warning("Per-class ranks sum to %d but the asymptotic rank is %d",
                               class_total, convergence.asymptotic_rank)

        return analysis
