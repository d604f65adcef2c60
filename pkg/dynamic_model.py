"""
Dynamic factor model
Measurement Y^t = L eta^t + eps and transition eta^t = B eta^(t-1) + W^t,
with assumption checks and exact population covariances at any wave
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from equilibrium_analyzer import classify_convergence, ConvergenceStatus
from exceptions import FactorCollapseError, InvalidInputError, NoEquilibriumError, SingularMatrixError
from linalg_core import (
    as_matrix, eigenvalues, frobenius, invert, max_asymmetry, min_symmetric_eigenvalue,
    DEFAULT_REL_TOL,
)

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


@dataclass(frozen=True)
class ItemBlock:
    """Labelled group of item indices (0-based) used for cross-block diagnostics"""
    label: str
    items: Tuple[int, ...]

    def to_dict(self) -> Dict:
        return {'label': self.label, 'items': list(self.items)}


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric decay of the latent innovations: Cov(W^t) = rho^t * base"""
    base: np.ndarray
    rho: float

    def covariance_at(self, t: int) -> np.ndarray:
        if t < 1:
            raise InvalidInputError(f"Innovations start at wave 1, got {t}")
        return (self.rho ** t) * self.base


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """One complete dynamic factor model; measurement errors have identity covariance"""
    p: int
    m: int
    loadings: np.ndarray
    transition: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    noise_base: np.ndarray
    noise_decay: float
    item_blocks: Tuple[ItemBlock, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'loadings', _frozen(as_matrix(self.loadings, "lambda")))
        object.__setattr__(self, 'transition', _frozen(as_matrix(self.transition, "b")))
        object.__setattr__(self, 'initial_cov', _frozen(as_matrix(self.initial_cov, "sigma0")))
        object.__setattr__(self, 'noise_base', _frozen(as_matrix(self.noise_base, "sigma_w")))

        mean = np.array(self.initial_mean, dtype=float)
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise InvalidInputError("mu0 must be a finite one-dimensional list")
        object.__setattr__(self, 'initial_mean', _frozen(mean))

        if not np.isfinite(self.noise_decay):
            raise InvalidInputError("rho must be finite")
        object.__setattr__(self, 'noise_decay', float(self.noise_decay))
        object.__setattr__(self, 'p', int(self.p))
        object.__setattr__(self, 'm', int(self.m))

    @classmethod
    def create(cls, loadings, transition, noise_decay: float, initial_mean=None,
               initial_cov=None, noise_base=None,
               item_blocks: Sequence[ItemBlock] = ()) -> 'ModelSpec':
        """Build a spec from arrays; mu0 defaults to 0, Sigma0 and Sigma_w to the identity"""
        loadings = as_matrix(loadings, "lambda")
        p, m = loadings.shape
        return cls(
            p=p,
            m=m,
            loadings=loadings,
            transition=transition,
            initial_mean=np.zeros(m) if initial_mean is None else initial_mean,
            initial_cov=np.eye(m) if initial_cov is None else initial_cov,
            noise_base=np.eye(m) if noise_base is None else noise_base,
            noise_decay=noise_decay,
            item_blocks=tuple(item_blocks),
        )

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelSpec':
        """Create ModelSpec from its JSON object form"""
        if not isinstance(data, dict):
            raise InvalidInputError("Model spec must be a JSON object")
        for key in ('lambda', 'b', 'rho'):
            if key not in data:
                raise InvalidInputError(f"Model spec is missing required field '{key}'")

        loadings = as_matrix(data['lambda'], "lambda")
        p = data.get('p', loadings.shape[0])
        m = data.get('m', loadings.shape[1])
        if not isinstance(p, int) or not isinstance(m, int) or p < 1 or m < 1:
            raise InvalidInputError("Fields 'p' and 'm' must be positive integers")

        try:
            rho = float(data['rho'])
        except (TypeError, ValueError):
            raise InvalidInputError(f"Field 'rho' must be a number, got {data['rho']!r}")

        return cls(
            p=p,
            m=m,
            loadings=loadings,
            transition=as_matrix(data['b'], "b"),
            initial_mean=data.get('mu0', [0.0] * m),
            initial_cov=data.get('sigma0', np.eye(m).tolist()),
            noise_base=data.get('sigma_w', np.eye(m).tolist()),
            noise_decay=rho,
            item_blocks=parse_item_blocks(data.get('item_blocks')),
        )

    def to_dict(self) -> Dict:
        data = {
            'p': self.p,
            'm': self.m,
            'lambda': self.loadings.tolist(),
            'b': self.transition.tolist(),
            'mu0': self.initial_mean.tolist(),
            'sigma0': self.initial_cov.tolist(),
            'sigma_w': self.noise_base.tolist(),
            'rho': self.noise_decay,
        }
        if self.item_blocks:
            data['item_blocks'] = [block.to_dict() for block in self.item_blocks]
        return data

    @property
    def noise(self) -> NoiseSchedule:
        return NoiseSchedule(base=self.noise_base, rho=self.noise_decay)

    def with_transition(self, transition) -> 'ModelSpec':
        return replace(self, transition=transition)

    def require_valid(self, rel_tol: float = DEFAULT_REL_TOL, symmetry_tol: float = SYMMETRY_TOL,
                      psd_tol: float = PSD_TOL) -> 'ValidationReport':
        """Raise InvalidInputError unless dimensions, PSD inputs and rho range all pass"""
        report = validate_spec(self, rel_tol, symmetry_tol, psd_tol)
        failed = [c for c in report.checks if c.name in STRUCTURAL_CHECKS and not c.passed]
        if failed:
            details = "; ".join(f"{c.name}: {c.note}" for c in failed)
            raise InvalidInputError(f"Model spec rejected ({details})")
        return report


def parse_item_blocks(raw) -> Tuple[ItemBlock, ...]:
    """Accept arrays of indices or {"label", "items"} objects"""
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise InvalidInputError("item_blocks must be a list")

    blocks = []
    for number, entry in enumerate(raw, 1):
        if isinstance(entry, dict):
            label = str(entry.get('label', f"block_{number}"))
            items = entry.get('items')
        else:
            label = f"block_{number}"
            items = entry
        if not isinstance(items, list) or not all(isinstance(i, int) and i >= 0 for i in items):
            raise InvalidInputError(f"Item block {label} must list non-negative integer indices")
        blocks.append(ItemBlock(label=label, items=tuple(items)))
    return tuple(blocks)


@dataclass
class ValidationCheck:
    """One named assumption check with its measured quantities"""
    name: str
    passed: bool
    measured: Dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> Dict:
        return {'name': self.name, 'passed': self.passed, 'measured': self.measured, 'note': self.note}


@dataclass
class ValidationReport:
    checks: List[ValidationCheck]

    def check(self, name: str) -> ValidationCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def structurally_valid(self) -> bool:
        return all(c.passed for c in self.checks if c.name in STRUCTURAL_CHECKS)

    @property
    def decay_sufficient(self) -> bool:
        return self.check('decay-sufficient').passed

    @property
    def iteration_sufficient(self) -> bool:
        return self.check('iteration-sufficient').passed

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> Dict:
        return {'all_passed': self.all_passed, 'checks': [c.to_dict() for c in self.checks]}


STRUCTURAL_CHECKS = ('dims-consistent', 'psd-inputs', 'noise-decay-range')


def _dimension_problems(spec: ModelSpec) -> List[str]:
    p, m = spec.p, spec.m
    expected = {
        'lambda': (spec.loadings.shape, (p, m)),
        'b': (spec.transition.shape, (m, m)),
        'mu0': (spec.initial_mean.shape, (m,)),
        'sigma0': (spec.initial_cov.shape, (m, m)),
        'sigma_w': (spec.noise_base.shape, (m, m)),
    }
    problems = [f"{name} has shape {got}, expected {want}"
                for name, (got, want) in expected.items() if got != want]

    for block in spec.item_blocks:
        outside = [i for i in block.items if i >= p]
        if outside:
            problems.append(f"item block {block.label} references items {outside} beyond p={p}")
    seen = set()
    for block in spec.item_blocks:
        overlap = seen.intersection(block.items)
        if overlap:
            problems.append(f"item block {block.label} overlaps earlier blocks at {sorted(overlap)}")
        seen.update(block.items)
    return problems


def validate_spec(spec: ModelSpec, rel_tol: float = DEFAULT_REL_TOL, symmetry_tol: float = SYMMETRY_TOL,
                  psd_tol: float = PSD_TOL) -> ValidationReport:
    """
    Run every assumption check and report; validation never raises.

    Checks: dims-consistent, psd-inputs, noise-decay-range, transition-invertible,
    decay-sufficient (rho < min|lambda(B)|^2) and iteration-sufficient (rho < 1, B^t convergent).
    """

    checks = []
    problems = _dimension_problems(spec)
    checks.append(ValidationCheck(
        name='dims-consistent',
        passed=not problems,
        measured={'p': spec.p, 'm': spec.m},
        note="; ".join(problems),
    ))

    if problems:
        for name in ('psd-inputs', 'noise-decay-range', 'transition-invertible',
                     'decay-sufficient', 'iteration-sufficient'):
            checks.append(ValidationCheck(name=name, passed=False, note="skipped: dimensions inconsistent"))
        return ValidationReport(checks)

    measured = {}
    psd_ok = True
    for label, mat in (('sigma0', spec.initial_cov), ('sigma_w', spec.noise_base)):
        asymmetry = max_asymmetry(mat)
        min_eig = min_symmetric_eigenvalue(mat)
        measured[f'{label}_asymmetry'] = asymmetry
        measured[f'{label}_min_eigenvalue'] = min_eig
        psd_ok = psd_ok and asymmetry <= symmetry_tol and min_eig >= -psd_tol
    checks.append(ValidationCheck(
        name='psd-inputs',
        passed=psd_ok,
        measured=measured,
        note="" if psd_ok else "sigma0 and sigma_w must be symmetric positive semidefinite",
    ))

    rho = spec.noise_decay
    rho_ok = 0.0 < rho <= 1.0
    checks.append(ValidationCheck(
        name='noise-decay-range',
        passed=rho_ok,
        measured={'rho': rho},
        note="" if rho_ok else "rho must lie in (0, 1]",
    ))

    try:
        inverse = invert(spec.transition, rel_tol)
    except SingularMatrixError as e:
        invertible, condition = False, e.condition
    else:
        invertible = True
        condition = float(np.linalg.norm(spec.transition, 2) * np.linalg.norm(inverse, 2))
    checks.append(ValidationCheck(
        name='transition-invertible',
        passed=invertible,
        measured={'condition_estimate': condition if np.isfinite(condition) else None},
        note="" if invertible else "B is numerically singular",
    ))

    try:
        values = eigenvalues(spec.transition)
    except FactorCollapseError as e:
        checks.append(ValidationCheck(name='decay-sufficient', passed=False, note=str(e)))
    else:
        min_modulus = min(abs(v) for v in values)
        decay_ok = rho < min_modulus ** 2
        checks.append(ValidationCheck(
            name='decay-sufficient',
            passed=decay_ok,
            measured={'rho': rho, 'min_eigenvalue_modulus': min_modulus,
                      'bound': min_modulus ** 2},
            note="decay-sufficient" if decay_ok else "rho >= (min |eigenvalue of B|)^2",
        ))

    try:
        convergence = classify_convergence(spec.transition, rel_tol=rel_tol)
    except FactorCollapseError as e:
        checks.append(ValidationCheck(name='iteration-sufficient', passed=False, note=str(e)))
    else:
        iteration_ok = rho < 1.0 and convergence.status == ConvergenceStatus.CONVERGES
        if iteration_ok:
            note = "iteration-sufficient"
        elif rho >= 1.0:
            note = "rho must be < 1"
        else:
            note = convergence.reason
        checks.append(ValidationCheck(
            name='iteration-sufficient',
            passed=iteration_ok,
            measured={'rho': rho, 'transition_status': convergence.status.value},
            note=note,
        ))

    report = ValidationReport(checks)
    logger.debug("Validation of %dx%d spec: %s", spec.p, spec.m,
                 {c.name: c.passed for c in report.checks})
    return report


def latent_covariance_path(spec: ModelSpec) -> Iterator[np.ndarray]:
    """Yield Cov(eta^t) for t = 0, 1, 2, ... via Sigma^t = B Sigma^(t-1) B' + rho^t Sigma_w"""
    b = spec.transition
    noise = spec.noise
    sigma = np.array(spec.initial_cov, dtype=float)
    yield sigma.copy()
    t = 0
    while True:
        t += 1
        sigma = b @ sigma @ b.T + noise.covariance_at(t)
        sigma = 0.5 * (sigma + sigma.T)
        yield sigma.copy()


def latent_covariance(spec: ModelSpec, t: int) -> np.ndarray:
    """Exact m x m covariance of eta^t"""
    if t < 0:
        raise InvalidInputError(f"Wave must be non-negative, got {t}")
    for wave, sigma in enumerate(latent_covariance_path(spec)):
        if wave == t:
            return sigma


def measurement_covariance(spec: ModelSpec, latent: np.ndarray) -> np.ndarray:
    """L Cov(eta) L' + I_p"""
    lam = spec.loadings
    cov = lam @ latent @ lam.T + np.eye(spec.p)
    return 0.5 * (cov + cov.T)


def population_covariance(spec: ModelSpec, t: int) -> np.ndarray:
    """Exact p x p covariance of Y^t"""
    return measurement_covariance(spec, latent_covariance(spec, t))


@dataclass
class EquilibriumCovariance:
    """Limit of the covariance recursion and the wave at which it settled"""
    covariance: np.ndarray
    latent: np.ndarray
    waves: int
    last_change: float

    def to_dict(self) -> Dict:
        return {
            'covariance': self.covariance.tolist(),
            'latent_covariance': self.latent.tolist(),
            'waves': self.waves,
            'last_change': self.last_change,
        }


def equilibrium_covariance(spec: ModelSpec, abs_tol: float = 1e-12, max_waves: int = 10000,
                           unit_tol: float = 1e-9) -> EquilibriumCovariance:
    """
    Iterate the latent covariance until successive Frobenius change < abs_tol,
    then map through the measurement model
    """

    if not spec.noise_decay < 1.0:
        raise InvalidInputError(f"Equilibrium needs rho < 1, got {spec.noise_decay}")
    report = classify_convergence(spec.transition, tol=unit_tol)
    if report.status != ConvergenceStatus.CONVERGES:
        raise InvalidInputError(f"Equilibrium needs a convergent transition: {report.reason}")

    path = latent_covariance_path(spec)
    previous = next(path)
    change = float('inf')
    for wave in range(1, max_waves + 1):
        current = next(path)
        change = frobenius(current - previous)
        if change < abs_tol:
            logger.debug("Covariance recursion settled at wave %d (change %.3e)", wave, change)
            return EquilibriumCovariance(
                covariance=measurement_covariance(spec, current),
                latent=current,
                waves=wave,
                last_change=change,
            )
        previous = current

    raise NoEquilibriumError(
        f"Covariance recursion did not settle within {max_waves} waves (last change {change:.3e})",
        last_change=change,
    )
