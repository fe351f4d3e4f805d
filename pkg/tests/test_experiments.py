import os

import numpy as np
import pytest

from lqr_lab.adaptive import EpochSchedule
from lqr_lab.harness import ExperimentConfig, preset_system, run_experiment, write_experiment
from lqr_lab.linsys import INFINITE_COST, StateSpaceController, dare_solve, simulate_rollout, spectral_norm
from lqr_lab.sls import constrained_gamma
from lqr_lab.sysid import ols_estimate

WORKERS = os.cpu_count() or 1


def loglog_slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])


def final_medians(result, panel):
    return result.curve.final(panel)['median'].to_dict()


# Test cases for the regret and estimation rates
@pytest.mark.slow
def test_robust_regret_grows_like_two_thirds_power(tmp_path):
    cfg = ExperimentConfig(strategies=('robust',), trials=20, horizon=10_000, warmup_steps=100, C_eta=0.1,
                           workers=WORKERS, output_dir=str(tmp_path))
    result = run_experiment(cfg)
    assert result.failures == []
    regret = result.curve.panel('regret')
    last_decade = regret[regret['time'] >= cfg.horizon // 10]
    assert np.all(last_decade['median'] > 0)
    assert 0.55 <= loglog_slope(last_decade['time'], last_decade['median']) <= 0.85


@pytest.mark.slow
def test_estimation_error_decays_like_cube_root(laplacian):
    sched = EpochSchedule(C_T=25, C_eta=1.0, exploration='variance')
    controller = StateSpaceController.static(dare_solve(laplacian).K)
    theta_star = np.hstack([laplacian.A, laplacian.B])
    epochs = range(3, 10)
    lengths = [sched.length(i) for i in epochs]
    errors = []
    for i, T in zip(epochs, lengths):
        sigma = sched.sigma_eta(i, laplacian.sigma_w)
        trial_errors = [spectral_norm(ols_estimate(simulate_rollout(laplacian, controller, T, sigma, seed)).theta
                                      - theta_star) for seed in range(50)]
        errors.append(np.mean(trial_errors))
    assert -0.48 <= loglog_slope(lengths, errors) <= -0.18


# Test cases for the demand study
@pytest.mark.slow
def test_constrained_demand_controller_keeps_the_state_cap(tmp_path):
    cfg = ExperimentConfig(experiment='demand', trials=100, horizon=1000, workers=WORKERS, output_dir=str(tmp_path))
    result = run_experiment(cfg)
    assert result.failures == []
    cap = cfg.c * preset_system('demand').sigma_w / (1 - constrained_gamma(cfg.synthesis()))
    peaks = result.trials.groupby('label')['max_state']
    assert len(peaks.get_group('constrained')) == 100
    assert peaks.get_group('constrained').max() <= cap
    assert peaks.get_group('unconstrained').median() >= 2 * peaks.get_group('constrained').median()


# Test cases for the strategy comparison
@pytest.mark.slow
def test_robust_final_cost_is_competitive(tmp_path):
    cfg = ExperimentConfig(strategies=('robust', 'ofu', 'ts'), trials=20, horizon=5000, workers=WORKERS,
                           output_dir=str(tmp_path))
    result = run_experiment(cfg)
    costs = final_medians(result, 'cost')
    assert costs['robust'] <= max(costs['ofu'], costs['ts'])
    robust_epochs = result.epochs[result.epochs['label'] == 'robust']
    assert np.all(robust_epochs['cost'] < INFINITE_COST)


@pytest.mark.slow
def test_error_multipliers_degrade_regret_modestly(tmp_path):
    cfg = ExperimentConfig(experiment='error_scaling', strategies=('robust',), trials=5, horizon=10_000,
                           workers=WORKERS, output_dir=str(tmp_path))
    result = run_experiment(cfg)
    assert result.failures == []
    first = result.epochs[result.epochs['epoch'] == 0].set_index(['label', 'trial'])['eps_A']
    for trial in range(cfg.trials):
        base = first[('robust@1', trial)]
        assert first[('robust@2', trial)] == pytest.approx(2 * base, rel=1e-12)
        assert first[('robust@5', trial)] == pytest.approx(5 * base, rel=1e-12)
    regret = final_medians(result, 'regret')
    assert regret['robust@1'] > 0
    assert regret['robust@2'] <= 2 * regret['robust@1']
    assert regret['robust@5'] <= 2 * regret['robust@1']


# Test cases for reproducibility
@pytest.mark.slow
def test_rerun_writes_identical_files(tmp_path):
    cfg = ExperimentConfig(strategies=('robust', 'nominal', 'ofu', 'ts'), trials=3, horizon=800, workers=WORKERS)
    first = write_experiment(run_experiment(cfg), tmp_path / 'first')
    second = write_experiment(run_experiment(cfg), tmp_path / 'second')
    assert [p.name for p in first] == [p.name for p in second]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()
