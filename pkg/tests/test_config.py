import json
import os

import pytest

from config import THREADS_ENV_VAR, AppConfig, ParallelAnalysisConfig, RuntimeConfig, ToleranceConfig
from exceptions import InvalidInputError


def test_defaults_when_file_is_absent(tmp_path):
    config = AppConfig.load_from_file(str(tmp_path / "absent.json"))
    assert config.tolerances == ToleranceConfig()
    assert config.parallel_analysis == ParallelAnalysisConfig()
    assert config.default_seed == 42
    assert config.validate()


def test_partial_file_keeps_other_defaults(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        'tolerances': {'unit_tol': 1e-7, 'max_waves': 50},
        'parallel_analysis': {'replicates': 20},
        'report_directory': 'out',
    }))
    config = AppConfig.load_from_file(str(path))
    assert config.tolerances.unit_tol == 1e-7
    assert config.tolerances.max_waves == 50
    assert isinstance(config.tolerances.max_waves, int)
    assert config.tolerances.zero_tol == 1e-12
    assert config.parallel_analysis.replicates == 20
    assert config.parallel_analysis.percentile == 95.0
    assert config.report_directory == 'out'


def test_shipped_config_is_valid():
    config = AppConfig.load_from_file(os.path.join(os.path.dirname(__file__), "..", "config.json"))
    assert config.validate()


def test_unknown_and_non_numeric_tolerances_are_rejected():
    with pytest.raises(InvalidInputError):
        ToleranceConfig.from_dict({'unit_tolerance': 1e-9})
    with pytest.raises(InvalidInputError):
        ToleranceConfig.from_dict({'unit_tol': 'tiny'})


def test_malformed_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    with pytest.raises(InvalidInputError):
        AppConfig.load_from_file(str(path))
    path.write_text("[1, 2]")
    with pytest.raises(InvalidInputError):
        AppConfig.load_from_file(str(path))


@pytest.mark.parametrize("changes", [
    {'tolerances': ToleranceConfig(unit_tol=0.0)},
    {'tolerances': ToleranceConfig(zero_tol=-1.0)},
    {'tolerances': ToleranceConfig(max_waves=0)},
    {'parallel_analysis': ParallelAnalysisConfig(percentile=100.0)},
    {'parallel_analysis': ParallelAnalysisConfig(replicates=0)},
    {'default_subjects': 1},
])
def test_validate_flags_out_of_range_values(changes):
    assert not AppConfig(**changes).validate()


def test_runtime_threads_from_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    runtime = RuntimeConfig.from_env()
    assert runtime.threads == 3
    assert runtime.worker_count() == 3


def test_runtime_auto_threads(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "")
    assert RuntimeConfig.from_env().worker_count() >= 1


@pytest.mark.parametrize("raw", ["many", "-2"])
def test_runtime_rejects_bad_thread_counts(monkeypatch, raw):
    monkeypatch.setenv(THREADS_ENV_VAR, raw)
    with pytest.raises(InvalidInputError):
        RuntimeConfig.from_env()
