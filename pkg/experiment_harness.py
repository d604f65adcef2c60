"""
Collapse experiments
Runs a model wave by wave, compares the population dimensionality with what a one-wave
analyst would estimate from a simulated sample, and writes the resulting reports
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import block_diag

from config import ParallelAnalysisConfig, RuntimeConfig, ToleranceConfig
from dynamic_model import ItemBlock, ModelSpec, latent_covariance_path, measurement_covariance
from equilibrium_analyzer import EquilibriumAnalyzer
from exceptions import InvalidInputError
from factor_extraction import (
    DimensionalityMethod, DimensionalityParams, cross_block_covariance, estimate_dimensionality,
    first_factor_share, sample_covariance,
)
from linalg_core import spectral_radius
from panel_storage import write_frame_csv, write_json
from simulator import MAX_SEED, simulate_panel

logger = logging.getLogger(__name__)

DEFAULT_WAVES = (1, 2, 5, 10, 20, 40)
DEFAULT_SUBJECTS = 5000
DEFAULT_SEED = 42
REPORT_FORMATS = ('json', 'csv')
CSV_COLUMNS = ['wave', 'population_rank', 'est_reduced', 'est_parallel', 'est_gap',
               'lambda1', 'lambda2', 'cross_block_max']


@dataclass
class ScenarioConfig:
    """A model plus the waves, sample size and seed of one experiment"""
    name: str
    spec: ModelSpec
    wave_schedule: Tuple[int, ...] = DEFAULT_WAVES
    n_subjects: int = DEFAULT_SUBJECTS
    seed: int = DEFAULT_SEED
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    parallel_analysis: ParallelAnalysisConfig = field(default_factory=ParallelAnalysisConfig)

    def __post_init__(self):
        waves = tuple(self.wave_schedule)
        if not waves:
            raise InvalidInputError("Wave schedule must not be empty")
        if not all(isinstance(w, (int, np.integer)) and w >= 0 for w in waves):
            raise InvalidInputError(f"Waves must be non-negative integers, got {list(waves)}")
        if any(later <= earlier for earlier, later in zip(waves, waves[1:])):
            raise InvalidInputError(f"Wave schedule must be strictly increasing, got {list(waves)}")
        if not isinstance(self.n_subjects, (int, np.integer)) or self.n_subjects < 2:
            raise InvalidInputError(f"n_subjects must be an integer >= 2, got {self.n_subjects!r}")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < MAX_SEED:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        self.wave_schedule = tuple(int(w) for w in waves)

    @classmethod
    def from_dict(cls, data: Dict) -> 'ScenarioConfig':
        """Create ScenarioConfig from its JSON object form; 'spec' is required"""
        if not isinstance(data, dict) or 'spec' not in data:
            raise InvalidInputError("Experiment config must be a JSON object with a 'spec' field")
        return cls(
            name=str(data.get('name', 'custom')),
            spec=ModelSpec.from_dict(data['spec']),
            wave_schedule=tuple(data.get('waves', DEFAULT_WAVES)),
            n_subjects=data.get('n_subjects', DEFAULT_SUBJECTS),
            seed=data.get('seed', DEFAULT_SEED),
            tolerances=ToleranceConfig.from_dict(data.get('tolerances', {})),
            parallel_analysis=ParallelAnalysisConfig.from_dict(data.get('parallel_analysis', {})),
        )

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'spec': self.spec.to_dict(),
            'waves': list(self.wave_schedule),
            'n_subjects': int(self.n_subjects),
            'seed': int(self.seed),
            'tolerances': self.tolerances.to_dict(),
            'parallel_analysis': {
                'replicates': self.parallel_analysis.replicates,
                'percentile': self.parallel_analysis.percentile,
                'seed': self.parallel_analysis.seed,
            },
        }


@dataclass
class WaveRecord:
    """Population and sample view of one scheduled wave"""
    wave: int
    population_rank: int
    estimates: Dict[str, int]
    population_eigenvalues: List[float]
    sample_eigenvalues: List[float]
    cross_block: Optional[Dict]
    sample_cross_block: Optional[Dict]
    first_factor_share: float

    def to_dict(self) -> Dict:
        return {
            'wave': self.wave,
            'population_rank': self.population_rank,
            'estimates': dict(self.estimates),
            'population_eigenvalues': list(self.population_eigenvalues),
            'sample_eigenvalues': list(self.sample_eigenvalues),
            'cross_block': self.cross_block,
            'sample_cross_block': self.sample_cross_block,
            'first_factor_share': self.first_factor_share,
        }

    def csv_row(self) -> Dict:
        lambdas = self.sample_eigenvalues + [np.nan, np.nan]
        return {
            'wave': self.wave,
            'population_rank': self.population_rank,
            'est_reduced': self.estimates[DimensionalityMethod.REDUCED_RANK.value],
            'est_parallel': self.estimates[DimensionalityMethod.PARALLEL_ANALYSIS.value],
            'est_gap': self.estimates[DimensionalityMethod.GAP_RATIO.value],
            'lambda1': lambdas[0],
            'lambda2': lambdas[1],
            'cross_block_max': self.cross_block['max_abs'] if self.cross_block else np.nan,
        }


@dataclass
class ExperimentReport:
    scenario: str
    seed: int
    n_subjects: int
    records: List[WaveRecord]
    convergence: Dict
    partition: Dict
    classes: List[Dict]
    validation: Dict
    asymptotic_rank: Optional[int]
    collapse_wave: Optional[int]
    verdict: str

    @property
    def final_record(self) -> WaveRecord:
        return self.records[-1]

    def to_dict(self) -> Dict:
        return {
            'scenario': self.scenario,
            'seed': self.seed,
            'n_subjects': self.n_subjects,
            'records': [r.to_dict() for r in self.records],
            'convergence': self.convergence,
            'partition': self.partition,
            'classes': self.classes,
            'validation': self.validation,
            'asymptotic_rank': self.asymptotic_rank,
            'collapse_wave': self.collapse_wave,
            'verdict': self.verdict,
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.csv_row() for r in self.records], columns=CSV_COLUMNS)


def _block_loadings(items_per_factor: int, m: int, loading: float = 0.8) -> np.ndarray:
    return block_diag(*[np.full((items_per_factor, 1), loading)] * m)


def _factor_blocks(items_per_factor: int, m: int, labels: List[str] = None) -> Tuple[ItemBlock, ...]:
    labels = labels or [f"block_{i}" for i in range(1, m + 1)]
    return tuple(
        ItemBlock(label=labels[f], items=tuple(range(f * items_per_factor, (f + 1) * items_per_factor)))
        for f in range(m)
    )


def _positive_transition(m: int, seed: int, max_subdominant: float = 0.6) -> np.ndarray:
    """Seeded strictly positive B with spectral radius 1 and a well separated Perron root"""
    rng = np.random.default_rng(seed)
    while True:
        candidate = rng.uniform(0.1, 1.0, size=(m, m))
        candidate = candidate / spectral_radius(candidate)
        moduli = sorted(np.abs(np.linalg.eigvals(candidate)), reverse=True)
        if moduli[1] <= max_subdominant:
            return candidate


def _coupled_spec(labels: List[str]) -> ModelSpec:
    return ModelSpec.create(
        loadings=_block_loadings(6, 2),
        transition=[[0.7, 0.3], [0.2, 0.8]],
        noise_decay=0.2,
        item_blocks=_factor_blocks(6, 2, labels),
    )


def _figure1() -> ScenarioConfig:
    return ScenarioConfig(name="figure1", spec=_coupled_spec(["block_1", "block_2"]))


def _identity() -> ScenarioConfig:
    spec = ModelSpec.create(
        loadings=_block_loadings(6, 2),
        transition=np.eye(2),
        noise_decay=0.2,
        item_blocks=_factor_blocks(6, 2),
    )
    return ScenarioConfig(name="identity", spec=spec)


def _positive_block() -> ScenarioConfig:
    spec = ModelSpec.create(
        loadings=_block_loadings(4, 3),
        transition=_positive_transition(3, seed=20240607),
        noise_decay=0.2,
        item_blocks=_factor_blocks(4, 3),
    )
    return ScenarioConfig(name="positive-block", spec=spec)


def _mixed_sign() -> ScenarioConfig:
    spec = ModelSpec.create(
        loadings=_block_loadings(4, 3),
        transition=np.eye(3) - np.ones((3, 3)) / 6.0,
        noise_decay=0.2,
        item_blocks=_factor_blocks(4, 3),
    )
    return ScenarioConfig(name="mixed-sign", spec=spec)


def _anxiety_depression() -> ScenarioConfig:
    return ScenarioConfig(name="anxiety-depression", spec=_coupled_spec(["anxiety", "depression"]))


BUILTIN_SCENARIOS = {
    'figure1': (_figure1, "two causally coupled factors that collapse to one"),
    'identity': (_identity, "two factors with no causal effects; both survive"),
    'positive-block': (_positive_block, "three factors under a strictly positive transition"),
    'mixed-sign': (_mixed_sign, "three coupled factors with mixed-sign effects; two survive"),
    'anxiety-depression': (_anxiety_depression, "figure1 with anxiety and depression item blocks"),
}


def builtin_scenario(name: str) -> ScenarioConfig:
    if name not in BUILTIN_SCENARIOS:
        raise InvalidInputError(
            f"Unknown scenario '{name}'. Built-ins: {', '.join(BUILTIN_SCENARIOS)}"
        )
    factory, _ = BUILTIN_SCENARIOS[name]
    return factory()


def _cross_block(cov: np.ndarray, blocks: Tuple[ItemBlock, ...]) -> Optional[Dict]:
    """Largest and mean absolute covariance across every pair of item blocks"""
    if len(blocks) < 2:
        return None
    summaries = [cross_block_covariance(cov, a.items, b.items) for a, b in combinations(blocks, 2)]
    return {
        'max_abs': max(s.max_abs for s in summaries),
        'mean_abs': float(np.mean([s.mean_abs for s in summaries])),
    }


def _leading(values: List[float], count: int = 2) -> List[float]:
    return [float(v) for v in values[:count]]


def run_collapse_experiment(config: ScenarioConfig, threads: Optional[int] = None) -> ExperimentReport:
    """
    Population dimensionality and sample estimates at each scheduled wave, plus the
    equilibrium analysis of B and a verdict on whether the final wave has collapsed
    to the asymptotic rank
    """
    spec = config.spec
    tolerances = config.tolerances
    validation = spec.require_valid(tolerances.rank_rel_tol, tolerances.symmetry_tol, tolerances.psd_tol)
    if not validation.iteration_sufficient:
        logger.warning("Scenario %s: %s", config.name, validation.check('iteration-sufficient').note)

    analyzer = EquilibriumAnalyzer(tolerances)
    convergence = analyzer.classify(spec.transition)
    partition = analyzer.partition(spec.transition)
    classes = analyzer.class_reports(spec.transition, partition)

    schedule = config.wave_schedule
    last_wave = schedule[-1]
    population = {}
    for wave, latent in zip(range(last_wave + 1), latent_covariance_path(spec)):
        if wave in schedule:
            population[wave] = measurement_covariance(spec, latent)

    workers = threads or RuntimeConfig.from_env().worker_count()
    panel = simulate_panel(spec, last_wave + 1, config.n_subjects, config.seed, threads=workers,
                           psd_tol=tolerances.psd_tol)
    params = DimensionalityParams(
        rel_tol=tolerances.rank_rel_tol,
        n_observations=config.n_subjects,
        replicates=config.parallel_analysis.replicates,
        percentile=config.parallel_analysis.percentile,
        seed=config.parallel_analysis.seed,
        symmetry_tol=tolerances.symmetry_tol,
        threads=workers,
    )

    def wave_record(wave: int) -> WaveRecord:
        pop_cov = population[wave]
        pop_report = estimate_dimensionality(pop_cov, DimensionalityMethod.REDUCED_RANK, params)
        sample = sample_covariance(panel, wave)
        estimates = {
            method.value: estimate_dimensionality(sample, method, params).estimated_factors
            for method in DimensionalityMethod
        }
        sample_values = np.linalg.eigvalsh(sample)[::-1]
        return WaveRecord(
            wave=wave,
            population_rank=pop_report.estimated_factors,
            estimates=estimates,
            population_eigenvalues=_leading(pop_report.eigenvalues),
            sample_eigenvalues=_leading(list(sample_values)),
            cross_block=_cross_block(pop_cov, spec.item_blocks),
            sample_cross_block=_cross_block(sample, spec.item_blocks),
            first_factor_share=first_factor_share(sample),
        )

    with ThreadPoolExecutor(max_workers=workers) as pool:
        records = list(pool.map(wave_record, schedule))

    rank = convergence.asymptotic_rank if convergence.converges else None
    collapse_wave = None
    if rank is not None:
        collapse_wave = next((r.wave for r in records if r.population_rank == rank), None)

    final = records[-1]
    if rank is None:
        verdict = f"B^t does not converge ({convergence.reason}); there is no equilibrium dimensionality"
    elif final.population_rank == rank:
        verdict = (f"Final wave {final.wave} dimensionality {final.population_rank} equals "
                   f"the asymptotic rank {rank}")
    else:
        verdict = (f"Final wave {final.wave} dimensionality {final.population_rank} has not yet "
                   f"reached the asymptotic rank {rank}")
    logger.info("Scenario %s: %s", config.name, verdict)

    return ExperimentReport(
        scenario=config.name,
        seed=int(config.seed),
        n_subjects=int(config.n_subjects),
        records=records,
        convergence=convergence.to_dict(),
        partition=partition.to_dict(),
        classes=[c.to_dict() for c in classes],
        validation=validation.to_dict(),
        asymptotic_rank=rank,
        collapse_wave=collapse_wave,
        verdict=verdict,
    )


def report_filename(report: ExperimentReport, fmt: str) -> str:
    return f"{report.scenario}_{report.seed}.{fmt}"


def write_report(report: ExperimentReport, fmt: str, destination: str) -> str:
    """Write the report into the destination directory as <scenario>_<seed>.<fmt>"""
    if fmt not in REPORT_FORMATS:
        raise InvalidInputError(f"Unknown report format '{fmt}', expected one of {REPORT_FORMATS}")
    path = os.path.join(destination, report_filename(report, fmt))
    if fmt == 'json':
        return write_json(report.to_dict(), path)
    return write_frame_csv(report.to_frame(), path)


def generate_text_report(report: ExperimentReport) -> str:
    """Human-readable summary of an experiment"""
    lines = []
    lines.append("=" * 60)
    lines.append(f"COLLAPSE EXPERIMENT: {report.scenario.upper()}")
    lines.append("=" * 60)
    lines.append(f"Seed: {report.seed}    Subjects: {report.n_subjects}")
    lines.append("")

    convergence = report.convergence
    lines.append("TRANSITION MATRIX:")
    lines.append(f"  Status: {convergence['status']}")
    lines.append(f"  Reason: {convergence['reason']}")
    lines.append(f"  Asymptotic rank: {report.asymptotic_rank if report.asymptotic_rank is not None else 'n/a'}")
    lines.append(f"  Equivalence classes: {report.partition['classes']}")
    for warning in convergence.get('warnings', []):
        lines.append(f"  Warning: {warning}")
    lines.append("")

    lines.append("WAVES:")
    lines.append("-" * 40)
    lines.append(f"  {'wave':>5} {'pop':>4} {'red':>4} {'par':>4} {'gap':>4} {'share':>7} {'cross':>8}")
    for record in report.records:
        cross = record.cross_block['max_abs'] if record.cross_block else float('nan')
        lines.append(
            f"  {record.wave:>5} {record.population_rank:>4} "
            f"{record.estimates['reduced-rank']:>4} {record.estimates['parallel-analysis']:>4} "
            f"{record.estimates['gap-ratio']:>4} {record.first_factor_share:>7.3f} {cross:>8.4f}"
        )
    lines.append("")

    if report.collapse_wave is not None:
        lines.append(f"Collapse wave: {report.collapse_wave}")
    lines.append(f"VERDICT: {report.verdict}")
    lines.append("=" * 60)

    return "\n".join(lines)
