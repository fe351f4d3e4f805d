import json

import numpy as np
import pandas as pd
import pytest

from lqr_lab.exceptions import ConfigError
from lqr_lab.harness import (
    ERROR_MULTIPLIERS,
    LAPLACIAN_A,
    PANEL_COLUMNS,
    AggregateCurve,
    ExperimentConfig,
    TrialOutcome,
    aggregate,
    emit_plotdata,
    load_config,
    load_synthesis_problem,
    parse_matrix,
    preset_system,
    read_plotdata,
    run_experiment,
    sample_times,
    write_experiment,
)


# Fixtures for aggregation
@pytest.fixture
def times():
    return np.array([1, 10, 100])


@pytest.fixture
def outcomes(rng, times):
    result = []
    for label in ('robust', 'ofu'):
        for trial in range(7):
            outcome = TrialOutcome(label, label, 1.0, trial, trial)
            outcome.panels = {'regret': rng.standard_normal(3) * 10, 'cost': rng.uniform(10, 20, 3)}
            result.append(outcome)
    return result


@pytest.fixture
def curve(outcomes, times):
    return aggregate(outcomes, times)


def write_cfg(tmp_path, text, name='experiment.cfg'):
    path = tmp_path / name
    path.write_text(text)
    return path


# Test cases for preset_system() and parse_matrix()
def test_presets():
    sys = preset_system('laplacian')
    np.testing.assert_array_equal(sys.A, LAPLACIAN_A)
    np.testing.assert_array_equal(sys.Q, 10 * np.eye(3))
    assert preset_system('large_transient').A[1, 0] == 4.0
    np.testing.assert_array_equal(preset_system('demand').R, 1e3 * np.eye(3))
    with pytest.raises(ConfigError, match="Unknown preset"):
        preset_system('pendulum')


def test_parse_matrix():
    np.testing.assert_array_equal(parse_matrix("1 2; 3, 4"), [[1.0, 2.0], [3.0, 4.0]])
    with pytest.raises(ConfigError, match="equal length"):
        parse_matrix("1 2; 3")
    with pytest.raises(ConfigError, match="invalid matrix entry"):
        parse_matrix("1 x")


# Test cases for ExperimentConfig
def test_demand_experiment_defaults_to_demand_preset():
    cfg = ExperimentConfig(experiment='demand')
    assert cfg.preset == 'demand'
    assert cfg.strategies == ('constrained', 'unconstrained')
    assert cfg.C_eta == 0.0


def test_error_scaling_defaults():
    cfg = ExperimentConfig(experiment='error_scaling')
    assert cfg.multipliers == ERROR_MULTIPLIERS
    assert cfg.warmup_steps == 300
    labels = [label for label, _, _ in cfg.variants()]
    assert cfg.multipliers == (1.0, 2.0, 5.0)
    assert labels[:3] == ['robust@1', 'robust@2', 'robust@5']


def test_data_policies_are_per_strategy():
    cfg = ExperimentConfig()
    assert dict(cfg.data_policies) == {'robust': 'epoch', 'nominal': 'epoch', 'ofu': 'all', 'ts': 'all'}
    custom = ExperimentConfig(strategies=('robust', 'ofu'), data_policies=(('robust', 'all'),))
    assert custom.data_policy('robust') == 'all'
    assert custom.data_policy('ofu') == 'all'
    assert dict(ExperimentConfig(experiment='demand').data_policies) == {'constrained': 'all',
                                                                        'unconstrained': 'all'}


def test_switching_strategies_keep_all_data():
    with pytest.raises(ConfigError, match="always estimates from all data"):
        ExperimentConfig(data_policies=(('ofu', 'epoch'),))
    with pytest.raises(ConfigError, match="Unknown data policy for robust"):
        ExperimentConfig(data_policies=(('robust', 'recent'),))


def test_schedule_constant_defaults_to_warmup_length():
    cfg = ExperimentConfig(preset='large_transient')
    assert cfg.warmup_steps == 250
    assert cfg.C_T == 250
    assert cfg.C_eta == 2.0


def test_config_rejects_unknown_strategy():
    with pytest.raises(ConfigError, match="Unknown strategies"):
        ExperimentConfig(strategies=('constrained',))


def test_custom_preset_needs_matrices():
    with pytest.raises(ConfigError, match="needs the matrices"):
        ExperimentConfig(preset='custom')


def test_gamma_search_keyword():
    assert ExperimentConfig(gamma='search').synthesis().gamma_fixed is None


def test_digest_tracks_configuration():
    assert ExperimentConfig(trials=3).digest() == ExperimentConfig(trials=3).digest()
    assert ExperimentConfig(trials=3).digest() != ExperimentConfig(trials=4).digest()


def test_from_settings_applies_overrides():
    cfg = ExperimentConfig.from_settings({'TRIALS': 7, 'HORIZON': 500}, horizon=300, seed=None)
    assert (cfg.trials, cfg.horizon, cfg.seed) == (7, 300, 0)


# Test cases for load_config() and load_synthesis_problem()
def test_load_config_custom_system(tmp_path):
    path = write_cfg(tmp_path, "preset = custom\n"
                               "A = 1.01 0; 0 1.01   # slightly unstable\n"
                               "B = 1 0; 0 1\n"
                               "strategies = nominal, ofu\n"
                               "trials = 3\n"
                               "data_policies = nominal=all\n"
                               "exploration = variance\n"
                               "gamma = search\n")
    cfg = load_config(path)
    assert cfg.strategies == ('nominal', 'ofu')
    assert cfg.trials == 3
    assert cfg.gamma is None
    assert cfg.data_policy('nominal') == 'all'
    assert cfg.epoch_schedule().exploration == 'variance'
    np.testing.assert_array_equal(cfg.system().A, [[1.01, 0.0], [0.0, 1.01]])
    np.testing.assert_array_equal(cfg.system().R, np.eye(2))


def test_load_config_overrides_win(tmp_path):
    path = write_cfg(tmp_path, "trials = 3\nhorizon = 400\n")
    cfg = load_config(path, {'TRIALS': 50}, trials=5)
    assert (cfg.trials, cfg.horizon) == (5, 400)


def test_load_config_detects_encoding(tmp_path):
    path = tmp_path / 'latin1.cfg'
    path.write_bytes("# réglage très précis\ntrials = 3\nhorizon = 250\n".encode('latin-1'))
    cfg = load_config(path)
    assert (cfg.trials, cfg.horizon) == (3, 250)


def test_load_config_unknown_key(tmp_path):
    with pytest.raises(ConfigError, match="unknown key 'noise'"):
        load_config(write_cfg(tmp_path, "noise = cauchy\n"))


def test_load_config_bad_value(tmp_path):
    with pytest.raises(ConfigError, match="bad value for 'trials'"):
        load_config(write_cfg(tmp_path, "trials = many\n"))


def test_load_config_missing_equals(tmp_path):
    with pytest.raises(ConfigError, match="expected 'key = value'"):
        load_config(write_cfg(tmp_path, "trials 3\n"))


def test_load_synthesis_problem(tmp_path):
    path = write_cfg(tmp_path, "A = 1.01\nB = 1\neps_A = 0.05\nF = 6\ngamma = 0.9\n", 'problem.cfg')
    est, cfg, Q, R = load_synthesis_problem(path)
    assert est.eps_A == 0.05
    assert est.eps_B == 0.0
    assert cfg.F == 6
    assert cfg.gamma_fixed == 0.9
    np.testing.assert_array_equal(Q, np.eye(1))


def test_load_synthesis_problem_needs_B(tmp_path):
    with pytest.raises(ConfigError, match="missing B"):
        load_synthesis_problem(write_cfg(tmp_path, "A = 1\n", 'problem.cfg'))


# Test cases for sample_times()
def test_sample_times_span_horizon():
    times = sample_times(10_000)
    assert times[0] == 1
    assert times[-1] == 10_000
    assert np.all(np.diff(times) > 0)


# Test cases for aggregate()
def test_aggregate_percentiles(outcomes, curve, times):
    regret = curve.panel('regret')
    robust = np.array([o.panels['regret'] for o in outcomes if o.label == 'robust'])
    rows = regret[regret['strategy'] == 'robust']
    np.testing.assert_array_equal(rows['time'], times)
    np.testing.assert_allclose(rows['median'], np.median(robust, axis=0))
    np.testing.assert_allclose(rows['p90'], np.percentile(robust, 90, axis=0))
    assert curve.strategies == ['robust', 'ofu']


def test_aggregate_skips_failed_trials(outcomes, times):
    failed = TrialOutcome('robust', 'robust', 1.0, 99, 99, error="synthesis infeasible")
    with_failure = aggregate(outcomes + [failed], times)
    pd.testing.assert_frame_equal(with_failure.table, aggregate(outcomes, times).table)


def test_aggregate_of_nothing_is_empty(times):
    curve = aggregate([], times)
    assert curve.table.empty
    assert curve.panels == ('regret', 'cost')


# Test cases for emit_plotdata() and read_plotdata()
def test_plotdata_round_trip(curve, tmp_path):
    emit_plotdata(curve, tmp_path)
    restored = read_plotdata(tmp_path)
    assert restored.panels == curve.panels
    pd.testing.assert_frame_equal(restored.table, curve.table, check_dtype=False)


def test_plotdata_is_byte_identical(curve, tmp_path):
    emit_plotdata(curve, tmp_path / 'first')
    emit_plotdata(curve, tmp_path / 'second')
    for name in ('regret.csv', 'cost.csv', 'manifest.json'):
        assert (tmp_path / 'first' / name).read_bytes() == (tmp_path / 'second' / name).read_bytes()


def test_empty_curve_writes_headers(tmp_path):
    emit_plotdata(AggregateCurve.empty(), tmp_path)
    assert (tmp_path / 'regret.csv').read_text().strip() == ','.join(PANEL_COLUMNS)
    assert read_plotdata(tmp_path).table.empty


# Test cases for run_experiment() and write_experiment()
def test_small_nominal_experiment(tmp_path):
    cfg = ExperimentConfig(strategies=('nominal',), trials=2, horizon=200, warmup_steps=50, sample_points=10,
                           output_dir=str(tmp_path))
    result = run_experiment(cfg)
    assert result.failures == []
    assert result.curve.strategies == ['nominal']
    assert len(result.trials) == 2
    assert set(result.trials['steps']) == {200}
    np.testing.assert_array_equal(result.curve.panel('regret')['time'], sample_times(200, 10))
    written = write_experiment(result)
    assert tmp_path / 'trials.csv' in written
    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    assert manifest['config_hash'] == cfg.digest()
    assert manifest['panels'] == ['regret', 'cost']
    assert manifest['data_policies'] == {'nominal': 'epoch'}
    assert manifest['config']['data_policies'] == {'nominal': 'epoch'}


def test_failed_trials_are_reported():
    cfg = ExperimentConfig(preset='custom', A=[[2.0]], B=[[0.0]], strategies=('nominal',), trials=1, horizon=20)
    result = run_experiment(cfg)
    assert len(result.failures) == 1
    assert result.curve.table.empty
    assert result.diverged == []


def test_linear_algebra_failures_do_not_abort_the_batch(monkeypatch):
    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr('lqr_lab.harness.run_baseline', singular)
    result = run_experiment(ExperimentConfig(strategies=('nominal',), trials=2, horizon=20))
    assert [reason for _, _, reason in result.failures] == ["LinAlgError: Singular matrix"] * 2
    assert result.curve.table.empty
