import json

import pytest
from click.testing import CliRunner

from experiment_harness import CSV_COLUMNS, builtin_scenario
from main import cli


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def invoke(runner, tmp_path):
    """Run the CLI with defaults only (no config file on disk)"""
    def run(*args, config=None):
        config_path = config or str(tmp_path / "absent-config.json")
        return runner.invoke(cli, ['--config', config_path, *args])
    return run


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(builtin_scenario("figure1").spec.to_dict()))
    return str(path)


def write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def test_analyze_identity(invoke, tmp_path):
    result = invoke('analyze', write(tmp_path, "b.json", [[1.0, 0.0], [0.0, 1.0]]))
    assert result.exit_code == 0, result.output
    data = json.loads(result.stdout)
    assert data['asymptotic_rank'] == 2
    assert data['convergence']['status'] == 'converges'
    assert data['partition']['classes'] == [[0], [1]]


def test_analyze_jordan_block_reports_divergence(invoke, tmp_path):
    result = invoke('analyze', write(tmp_path, "b.json", {'b': [[1.0, 1.0], [0.0, 1.0]]}))
    assert result.exit_code == 0, result.output
    data = json.loads(result.stdout)
    assert data['convergence']['status'] == 'diverges-unbounded'
    assert data['asymptotic_rank'] is None


def test_analyze_with_tolerance_override(invoke, tmp_path):
    path = write(tmp_path, "b.json", [[1.0, 1e-6], [0.0, 1.0]])
    merged = json.loads(invoke('analyze', path).stdout)
    split = json.loads(invoke('analyze', path, '--zero-tol', '1e-5').stdout)
    assert merged['partition']['classes'] == [[0, 1]]
    assert split['partition']['classes'] == [[0], [1]]


def test_invalid_input_exits_with_2(invoke, tmp_path):
    result = invoke('analyze', write(tmp_path, "b.json", [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    assert result.exit_code == 2
    assert result.stderr.startswith("Error:")

    bad_tol = invoke('analyze', write(tmp_path, "i.json", [[1.0]]), '--unit-tol', '-1')
    assert bad_tol.exit_code == 2


def test_missing_file_exits_with_4(invoke, tmp_path):
    result = invoke('analyze', str(tmp_path / "missing.json"))
    assert result.exit_code == 4
    assert "missing.json" in result.stderr


def test_numeric_failure_exits_with_3(invoke, tmp_path, spec_file):
    config = write(tmp_path, "config.json", {'tolerances': {'max_waves': 3}})
    result = invoke('covariance', spec_file, '--equilibrium', config=config)
    assert result.exit_code == 3
    assert result.stderr.startswith("Error:")


def test_bad_config_is_rejected(invoke, tmp_path):
    config = write(tmp_path, "config.json", {'tolerances': {'unit_tol': 0}})
    assert invoke('scenarios', config=config).exit_code == 2
    config = write(tmp_path, "typo.json", {'tolerances': {'unit_tolerance': 1e-9}})
    assert invoke('scenarios', config=config).exit_code == 2


def test_validate(invoke, spec_file):
    result = invoke('validate', spec_file)
    assert result.exit_code == 0, result.output
    data = json.loads(result.stdout)
    assert data['all_passed'] is True
    assert {c['name'] for c in data['checks']} >= {'dims-consistent', 'decay-sufficient', 'iteration-sufficient'}


def test_covariance_at_wave_and_equilibrium(invoke, spec_file):
    at_wave = json.loads(invoke('covariance', spec_file, '--wave', '0').stdout)
    assert at_wave['wave'] == 0
    assert len(at_wave['covariance']) == 12
    assert at_wave['covariance'][0][0] == pytest.approx(1.64)

    equilibrium = json.loads(invoke('covariance', spec_file, '--equilibrium').stdout)
    assert equilibrium['latent_covariance'][0][0] == pytest.approx(0.65, abs=1e-3)

    assert invoke('covariance', spec_file).exit_code == 2


def test_simulate_then_extract(invoke, tmp_path, spec_file):
    panel_path = str(tmp_path / "panel.csv")
    result = invoke('simulate', spec_file, '--waves', '3', '--n', '500', '--seed', '9', '--out', panel_path)
    assert result.exit_code == 0, result.output
    assert "500 subjects x 3 waves" in result.stdout

    scree = str(tmp_path / "scree.csv")
    result = invoke('extract', panel_path, '--wave', '1', '--loadings', '2', '--scree', scree)
    assert result.exit_code == 0, result.output
    data = json.loads(result.stdout)
    assert data['wave'] == 1
    assert data['dimensionality']['method'] == 'parallel-analysis'
    assert data['dimensionality']['estimated_factors'] == 2
    assert len(data['loadings']['loadings']) == 12
    with open(scree) as f:
        assert f.readline().strip() == "index,value"


def test_extract_covariance_json(invoke, tmp_path):
    path = write(tmp_path, "s.json", {'covariance': [[2.0, 1.0], [1.0, 2.0]]})
    data = json.loads(invoke('extract', path).stdout)
    assert data['dimensionality']['method'] == 'reduced-rank'
    assert data['dimensionality']['estimated_factors'] == 1
    assert 'wave' not in data


def test_experiment_writes_reports(invoke, tmp_path):
    out = tmp_path / "reports"
    result = invoke('experiment', 'figure1', '--out', str(out), '--n', '300', '--waves', '1,40')
    assert result.exit_code == 0, result.output
    assert "COLLAPSE EXPERIMENT: FIGURE1" in result.stdout
    assert sorted(p.name for p in out.iterdir()) == ["figure1_42.csv", "figure1_42.json"]

    report = json.loads((out / "figure1_42.json").read_text())
    assert [r['population_rank'] for r in report['records']] == [2, 1]
    header = (out / "figure1_42.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)


def test_experiment_from_config_file(invoke, tmp_path):
    scenario = builtin_scenario("identity").to_dict()
    scenario.update(name="mine", seed=7, n_subjects=200, waves=[1, 3])
    config = write(tmp_path, "experiment.json", scenario)
    out = tmp_path / "reports"
    result = invoke('experiment', config, '--out', str(out), '--format', 'json')
    assert result.exit_code == 0, result.output
    assert [p.name for p in out.iterdir()] == ["mine_7.json"]


def test_experiment_rejects_unknown_target_and_bad_waves(invoke, tmp_path):
    assert invoke('experiment', 'three-body', '--out', str(tmp_path)).exit_code == 2
    assert invoke('experiment', 'figure1', '--out', str(tmp_path), '--waves', '1,x').exit_code == 2


def test_experiment_unwritable_output_exits_with_4(invoke, tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("occupied")
    result = invoke('experiment', 'identity', '--out', str(blocker / "reports"), '--n', '50',
                    '--waves', '1')
    assert result.exit_code == 4


def test_scenarios_lists_builtins(invoke):
    result = invoke('scenarios')
    assert result.exit_code == 0
    names = [line.split()[0] for line in result.stdout.splitlines()]
    assert names == ['figure1', 'identity', 'positive-block', 'mixed-sign', 'anxiety-depression']


def test_every_tolerance_is_a_flag(invoke):
    flags = ['--rank-tol', '--unit-tol', '--zero-tol', '--limit-abs-tol', '--max-doublings',
             '--equilibrium-abs-tol', '--max-waves', '--symmetry-tol', '--psd-tol', '--cluster-tol',
             '--limit-rank-tol']
    for command in ('analyze', 'validate', 'simulate', 'covariance', 'extract', 'experiment'):
        text = invoke(command, '--help').stdout
        assert all(flag in text for flag in flags), command


def test_max_waves_flag_bounds_equilibrium(invoke, spec_file):
    result = invoke('covariance', spec_file, '--equilibrium', '--max-waves', '3')
    assert result.exit_code == 3


def test_experiment_tolerance_flags(invoke, tmp_path):
    out = tmp_path / "reports"
    assert invoke('experiment', 'identity', '--n', '50', '--waves', '1', '--cluster-tol', '0',
                  '--out', str(out)).exit_code == 2

    result = invoke('experiment', 'figure1', '--n', '50', '--waves', '1', '--zero-tol', '0.35',
                    '--format', 'json', '--out', str(out))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "figure1_42.json").read_text())
    assert report['partition']['classes'] == [[0], [1]]
