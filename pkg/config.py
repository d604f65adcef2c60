"""
Configuration module for the factor collapse toolkit
Handles numerical tolerances, Monte Carlo settings and runtime options
"""

import os
import json
import logging
from typing import Dict
from dataclasses import dataclass, field, asdict

from dotenv import load_dotenv

from exceptions import InvalidInputError

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "FACTOR_COLLAPSE_THREADS"


@dataclass
class ToleranceConfig:
    """Numerical tolerances shared by every analysis step"""
    rank_rel_tol: float = 1e-8
    unit_tol: float = 1e-9  # |lambda - 1| below this counts as a unit eigenvalue
    zero_tol: float = 1e-12  # structural zeros of B
    limit_abs_tol: float = 1e-10
    max_doublings: int = 64
    equilibrium_abs_tol: float = 1e-12
    max_waves: int = 10000
    symmetry_tol: float = 1e-8
    psd_tol: float = 1e-10
    cluster_tol: float = 1e-5
    limit_rank_rel_tol: float = 1e-6

    @classmethod
    def from_dict(cls, data: Dict) -> 'ToleranceConfig':
        """Create ToleranceConfig from dictionary, unknown keys are rejected"""
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"Unknown tolerance fields: {sorted(unknown)}")
        defaults = cls()
        values = {}
        for name in cls.__dataclass_fields__:
            raw = data.get(name, getattr(defaults, name))
            try:
                values[name] = type(getattr(defaults, name))(raw)
            except (TypeError, ValueError):
                raise InvalidInputError(f"Tolerance '{name}' must be numeric, got {raw!r}")
        return cls(**values)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ParallelAnalysisConfig:
    """Configuration for the parallel-analysis factor count"""
    replicates: int = 200
    percentile: float = 95.0
    seed: int = 20240101

    @classmethod
    def from_dict(cls, data: Dict) -> 'ParallelAnalysisConfig':
        """Create ParallelAnalysisConfig from dictionary"""
        return cls(
            replicates=int(data.get('replicates', 200)),
            percentile=float(data.get('percentile', 95.0)),
            seed=int(data.get('seed', 20240101))
        )


@dataclass
class RuntimeConfig:
    """Runtime options read from the environment"""
    threads: int = 0  # 0 = auto

    @classmethod
    def from_env(cls) -> 'RuntimeConfig':
        """Create RuntimeConfig from environment variables (a local .env file is honoured)"""
        load_dotenv()
        raw = os.getenv(THREADS_ENV_VAR, '').strip()
        if not raw:
            return cls()
        try:
            threads = int(raw)
        except ValueError:
            raise InvalidInputError(f"{THREADS_ENV_VAR} must be a non-negative integer, got {raw!r}")
        if threads < 0:
            raise InvalidInputError(f"{THREADS_ENV_VAR} must be a non-negative integer, got {raw!r}")
        return cls(threads=threads)

    def worker_count(self) -> int:
        """Number of worker threads to use"""
        if self.threads > 0:
            return self.threads
        return os.cpu_count() or 1


@dataclass
class AppConfig:
    """Main application configuration"""
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    parallel_analysis: ParallelAnalysisConfig = field(default_factory=ParallelAnalysisConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    report_directory: str = "reports"
    default_seed: int = 42
    default_subjects: int = 5000

    @classmethod
    def load_from_file(cls, config_path: str = "config.json") -> 'AppConfig':
        """Load configuration from JSON file, falling back to defaults when it is absent"""
        if not os.path.exists(config_path):
            logger.info("No configuration file at %s, using defaults", config_path)
            return cls.create_default_config_obj()

        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"Malformed configuration file {config_path}: {e}")

        if not isinstance(data, dict):
            raise InvalidInputError(f"Configuration file {config_path} must hold a JSON object")

        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Dict) -> 'AppConfig':
        """Create AppConfig from dictionary"""
        return cls(
            tolerances=ToleranceConfig.from_dict(data.get('tolerances', {})),
            parallel_analysis=ParallelAnalysisConfig.from_dict(data.get('parallel_analysis', {})),
            runtime=RuntimeConfig.from_env(),
            report_directory=data.get('report_directory', 'reports'),
            default_seed=int(data.get('default_seed', 42)),
            default_subjects=int(data.get('default_subjects', 5000))
        )

    @classmethod
    def create_default_config_obj(cls) -> 'AppConfig':
        """Create a default configuration object"""
        return cls(runtime=RuntimeConfig.from_env())

    def validate(self) -> bool:
        """Validate that all configuration values are in range"""
        errors = []
        tol = self.tolerances

        for name in ('rank_rel_tol', 'unit_tol', 'limit_abs_tol', 'equilibrium_abs_tol',
                     'symmetry_tol', 'psd_tol', 'cluster_tol', 'limit_rank_rel_tol'):
            if not getattr(tol, name) > 0:
                errors.append(f"Tolerance {name} must be positive")
        if tol.zero_tol < 0:
            errors.append("Tolerance zero_tol must be non-negative")
        if tol.max_doublings < 1:
            errors.append("max_doublings must be at least 1")
        if tol.max_waves < 1:
            errors.append("max_waves must be at least 1")
        if self.parallel_analysis.replicates < 1:
            errors.append("Parallel analysis needs at least one replicate")
        if not 0 < self.parallel_analysis.percentile < 100:
            errors.append("Parallel analysis percentile must lie in (0, 100)")
        if self.default_subjects < 2:
            errors.append("default_subjects must be at least 2")
        if not 0 <= self.default_seed < 2 ** 64:
            errors.append("default_seed must be a 64-bit unsigned integer")

        if errors:
            logger.error("Configuration validation errors:")
            for error in errors:
                logger.error("  - %s", error)
            return False

        return True
