"""
Factor Collapse Toolkit
Command-line entry point: equilibrium analysis, panel simulation, one-wave factor
extraction and collapse experiments on JSON model specs
"""

import functools
import json
import logging
import sys
from dataclasses import replace
from typing import Dict, Optional

import click

from config import AppConfig, ToleranceConfig
from dynamic_model import equilibrium_covariance, population_covariance, validate_spec
from equilibrium_analyzer import EquilibriumAnalyzer
from exceptions import FactorCollapseError, InvalidInputError
from experiment_harness import (
    BUILTIN_SCENARIOS, REPORT_FORMATS, ScenarioConfig, builtin_scenario, generate_text_report,
    run_collapse_experiment, write_report,
)
from factor_extraction import (
    DimensionalityMethod, DimensionalityParams, estimate_dimensionality, extract_loadings,
    sample_covariance, write_scree_csv,
)
from panel_storage import load_matrix, load_model_spec, load_panel_csv, read_json, save_panel_csv
from simulator import simulate_panel

logger = logging.getLogger(__name__)

_LOG_LEVELS = [logging.WARNING, logging.INFO, logging.DEBUG]
_DEFAULTS = ToleranceConfig()


def handle_errors(command):
    """Map toolkit errors to a one-line diagnostic and their exit code"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except FactorCollapseError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


# flag, ToleranceConfig field, help
_TOLERANCE_FLAGS = [
    ('--rank-tol', 'rank_rel_tol', "Relative singular value cutoff for numeric rank"),
    ('--unit-tol', 'unit_tol', "|lambda - 1| counted as a unit eigenvalue"),
    ('--zero-tol', 'zero_tol', "Entries of B at or below this are structural zeros"),
    ('--limit-abs-tol', 'limit_abs_tol', "Change between squarings at which B^(2^k) has converged"),
    ('--max-doublings', 'max_doublings', "Squarings allowed when computing the limit of B^t"),
    ('--equilibrium-abs-tol', 'equilibrium_abs_tol', "Covariance change at which the recursion has settled"),
    ('--max-waves', 'max_waves', "Waves allowed for the covariance recursion to settle"),
    ('--symmetry-tol', 'symmetry_tol', "Largest asymmetry accepted in a covariance"),
    ('--psd-tol', 'psd_tol', "Negative eigenvalues down to -psd_tol are clipped to zero"),
    ('--cluster-tol', 'cluster_tol', "Eigenvalues closer than this are one split eigenvalue"),
    ('--limit-rank-tol', 'limit_rank_rel_tol', "Relative singular value cutoff for the rank of the limit"),
]


def tolerance_options(command):
    """Expose every tolerance as a flag; the command receives them as tolerance_flags"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        flags = {field_name: kwargs.pop(field_name) for _, field_name, _ in _TOLERANCE_FLAGS}
        return command(*args, tolerance_flags=flags, **kwargs)

    for flag, field_name, text in reversed(_TOLERANCE_FLAGS):
        default = getattr(_DEFAULTS, field_name)
        wrapper = click.option(flag, field_name, type=type(default), default=None,
                               help=f"{text} [default: {default:g}]")(wrapper)
    return wrapper


def _tolerances(config: AppConfig, flags: Dict, base: Optional[ToleranceConfig] = None) -> ToleranceConfig:
    """Tolerances from the config (or base) with the command-line flags applied on top"""
    overrides = {name: value for name, value in flags.items() if value is not None}
    tolerances = replace(base or config.tolerances, **overrides)
    if overrides and not replace(config, tolerances=tolerances).validate():
        raise InvalidInputError(f"Tolerance flags out of range: {overrides}")
    return tolerances


def _echo_json(data) -> None:
    click.echo(json.dumps(data, indent=2))


@click.group()
@click.option('--config', 'config_path', default='config.json', show_default=True,
              type=click.Path(dir_okay=False), help='Configuration file (defaults apply when absent)')
@click.option('-v', '--verbose', count=True, help='Repeat for more log output (-v info, -vv debug)')
@click.pass_context
@handle_errors
def cli(ctx: click.Context, config_path: str, verbose: int):
    """Analyze when causally coupled latent factors collapse into one."""
    logging.basicConfig(
        level=_LOG_LEVELS[min(verbose, len(_LOG_LEVELS) - 1)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = AppConfig.load_from_file(config_path)
    if not config.validate():
        raise InvalidInputError(f"Configuration in {config_path} failed validation")
    ctx.obj = config


@cli.command()
@click.argument('b_file', type=click.Path(dir_okay=False))
@click.option('--horizon-eps', type=float, default=1e-6, show_default=True,
              help='Distance to the limit that defines the collapse horizon')
@tolerance_options
@click.pass_obj
@handle_errors
def analyze(config: AppConfig, b_file: str, horizon_eps: float, tolerance_flags: Dict):
    """Convergence, limit rank and equivalence classes of a transition matrix."""
    b = load_matrix(b_file, keys=('b',))
    analyzer = EquilibriumAnalyzer(_tolerances(config, tolerance_flags), horizon_eps)
    analysis = analyzer.analyze(b)
    analysis['asymptotic_rank'] = analysis['convergence']['asymptotic_rank']
    _echo_json(analysis)


@cli.command()
@click.argument('spec_file', type=click.Path(dir_okay=False))
@tolerance_options
@click.pass_obj
@handle_errors
def validate(config: AppConfig, spec_file: str, tolerance_flags: Dict):
    """Check a model spec against the model assumptions."""
    spec = load_model_spec(spec_file)
    tolerances = _tolerances(config, tolerance_flags)
    report = validate_spec(spec, tolerances.rank_rel_tol, tolerances.symmetry_tol, tolerances.psd_tol)
    _echo_json(report.to_dict())


@cli.command()
@click.argument('spec_file', type=click.Path(dir_okay=False))
@click.option('--waves', 'n_waves', type=click.IntRange(min=1), required=True,
              help='Number of waves to simulate (wave 0 is the initial state)')
@click.option('--n', 'n_subjects', type=click.IntRange(min=1), default=None,
              help='Number of subjects [default: from config]')
@click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=None,
              help='Random seed [default: from config]')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), required=True,
              help='Panel CSV to write')
@tolerance_options
@click.pass_obj
@handle_errors
def simulate(config: AppConfig, spec_file: str, n_waves: int, n_subjects: Optional[int],
             seed: Optional[int], out_path: str, tolerance_flags: Dict):
    """Simulate a panel of subjects and write it as CSV."""
    spec = load_model_spec(spec_file)
    n_subjects = n_subjects or config.default_subjects
    seed = config.default_seed if seed is None else seed
    tolerances = _tolerances(config, tolerance_flags)
    panel = simulate_panel(spec, n_waves, n_subjects, seed, threads=config.runtime.threads or None,
                           psd_tol=tolerances.psd_tol)
    save_panel_csv(panel, out_path)
    click.echo(f"Wrote {panel.n_subjects} subjects x {panel.n_waves} waves to {out_path}")


@cli.command()
@click.argument('spec_file', type=click.Path(dir_okay=False))
@click.option('--wave', type=click.IntRange(min=0), default=None, help='Wave of the population covariance')
@click.option('--equilibrium', is_flag=True, help='Print the equilibrium covariance instead')
@tolerance_options
@click.pass_obj
@handle_errors
def covariance(config: AppConfig, spec_file: str, wave: Optional[int], equilibrium: bool,
               tolerance_flags: Dict):
    """Exact population covariance of the items at one wave or at equilibrium."""
    spec = load_model_spec(spec_file)
    tolerances = _tolerances(config, tolerance_flags)
    spec.require_valid(tolerances.rank_rel_tol, tolerances.symmetry_tol, tolerances.psd_tol)
    if equilibrium:
        result = equilibrium_covariance(
            spec,
            abs_tol=tolerances.equilibrium_abs_tol,
            max_waves=tolerances.max_waves,
            unit_tol=tolerances.unit_tol,
        )
        _echo_json(result.to_dict())
        return
    if wave is None:
        raise InvalidInputError("Give --wave T or --equilibrium")
    _echo_json({'wave': wave, 'covariance': population_covariance(spec, wave).tolist()})


@cli.command()
@click.argument('input_file', type=click.Path(dir_okay=False))
@click.option('--method', type=click.Choice([m.value for m in DimensionalityMethod]), default=None,
              help='Estimator [default: parallel-analysis for panels, reduced-rank for matrices]')
@click.option('--wave', type=click.IntRange(min=0), default=None,
              help='Panel wave to analyze [default: last wave]')
@click.option('--n-observations', type=click.IntRange(min=2), default=None,
              help='Sample size behind a covariance file (parallel analysis)')
@click.option('--loadings', 'n_loadings', type=click.IntRange(min=1), default=None,
              help='Also extract this many principal-axis loadings')
@click.option('--scree', 'scree_path', type=click.Path(dir_okay=False), default=None,
              help='Write the eigenvalues as a two-column CSV')
@tolerance_options
@click.pass_obj
@handle_errors
def extract(config: AppConfig, input_file: str, method: Optional[str], wave: Optional[int],
            n_observations: Optional[int], n_loadings: Optional[int], scree_path: Optional[str],
            tolerance_flags: Dict):
    """One-wave factor analysis of a panel CSV or a covariance JSON."""
    if input_file.lower().endswith('.csv'):
        panel = load_panel_csv(input_file)
        wave = panel.n_waves - 1 if wave is None else wave
        s = sample_covariance(panel, wave)
        n_observations = panel.n_subjects
        method = method or DimensionalityMethod.PARALLEL_ANALYSIS.value
    else:
        s = load_matrix(input_file, keys=('covariance', 's'))
        method = method or DimensionalityMethod.REDUCED_RANK.value

    params = DimensionalityParams.from_config(config, n_observations)
    tolerances = _tolerances(config, tolerance_flags)
    params.rel_tol = tolerances.rank_rel_tol
    params.symmetry_tol = tolerances.symmetry_tol
    report = estimate_dimensionality(s, method, params)
    output = {'dimensionality': report.to_dict()}
    if wave is not None:
        output['wave'] = wave
    if n_loadings is not None:
        output['loadings'] = extract_loadings(s, n_loadings, params.symmetry_tol).to_dict()
    if scree_path:
        write_scree_csv(report, scree_path)
    _echo_json(output)


def _parse_waves(raw: Optional[str]):
    if raw is None:
        return None
    try:
        return tuple(int(part) for part in raw.split(',') if part.strip())
    except ValueError:
        raise InvalidInputError(f"--waves must be comma separated integers, got {raw!r}")


@cli.command()
@click.argument('target')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
              help='Report directory [default: report_directory from config]')
@click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=None, help='Override the scenario seed')
@click.option('--n', 'n_subjects', type=click.IntRange(min=2), default=None,
              help='Override the number of subjects')
@click.option('--waves', default=None, help='Override the wave schedule, e.g. 1,2,5,10')
@click.option('--format', 'formats', type=click.Choice(REPORT_FORMATS), multiple=True,
              help='Report format(s) to write [default: json and csv]')
@tolerance_options
@click.pass_obj
@handle_errors
def experiment(config: AppConfig, target: str, out_dir: Optional[str], seed: Optional[int],
               n_subjects: Optional[int], waves: Optional[str], formats, tolerance_flags: Dict):
    """Run a built-in scenario (or an experiment config JSON) and write its reports."""
    if target in BUILTIN_SCENARIOS:
        scenario = replace(builtin_scenario(target), tolerances=config.tolerances,
                           parallel_analysis=config.parallel_analysis)
    elif target.lower().endswith('.json'):
        scenario = ScenarioConfig.from_dict(read_json(target))
    else:
        raise InvalidInputError(
            f"'{target}' is neither a built-in scenario ({', '.join(BUILTIN_SCENARIOS)}) nor a JSON file"
        )

    overrides = {}
    if seed is not None:
        overrides['seed'] = seed
    if n_subjects is not None:
        overrides['n_subjects'] = n_subjects
    schedule = _parse_waves(waves)
    if schedule is not None:
        overrides['wave_schedule'] = schedule
    if overrides:
        scenario = replace(scenario, **overrides)
    scenario = replace(scenario, tolerances=_tolerances(config, tolerance_flags, base=scenario.tolerances))

    report = run_collapse_experiment(scenario, threads=config.runtime.threads or None)
    out_dir = out_dir or config.report_directory
    for fmt in formats or REPORT_FORMATS:
        path = write_report(report, fmt, out_dir)
        logger.info("Report written to %s", path)

    click.echo(generate_text_report(report))


@cli.command()
def scenarios():
    """List the built-in scenarios."""
    for name, (_, description) in BUILTIN_SCENARIOS.items():
        click.echo(f"{name:<20} {description}")


def main():
    cli(prog_name="factor-collapse")


if __name__ == "__main__":
    main()
