"""Adaptive control loops and regret accounting.

Every runner starts with a warmup rollout under a stabilizing gain plus input noise. The warmup
data seeds the first estimate but is not charged to regret. Each epoch record keeps the
trajectory, the controller that produced it and how that controller was obtained.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .baselines import OFUConfig, SwitchState, TSConfig, epoch_switch, nominal_controller, ofu_select, ts_select
from .exceptions import ConfigError, Degenerate, Diverged, NoStabilizablePoint, SynthesisInfeasible, Unstable, Unstabilizable
from .linsys import (
    OVERFLOW_GUARD,
    LinearSystem,
    StateSpaceController,
    Trajectory,
    dare_solve,
    infinite_horizon_cost,
    make_rng,
    simulate_rollout,
    spectral_norm,
    spectral_radius,
)
from .sls import SynthesisConfig, augmented_model, constrained_gamma, realize_controller, synthesize_constrained, synthesize_robust
from .sysid import ERROR_POLICIES, RLSState, ellipsoid_radius, ols_estimate, rls_extend, rls_update, theoretical_constants

logger = logging.getLogger(__name__)

SCHEDULE_MODES = ('doubling', 'linear')
EXPLORATION_DECAYS = ('std', 'variance')
DATA_POLICIES = ('epoch', 'all')
BASELINES = ('ofu', 'ts', 'nominal')


@dataclass(frozen=True)
class EpochSchedule:
    """Epoch lengths T_i and exploration levels sigma_eta,i.

    With ``exploration='std'`` the standard deviation decays: sigma_eta,i = C_eta sigma_w T_i^(-1/3).
    With ``'variance'`` the variance does: sigma_eta,i^2 = C_eta^2 sigma_w^2 (T_i / C_T)^(-1/3), which
    puts the estimation error of epoch i at T_i^(-1/3).
    """

    mode: str = 'doubling'
    C_T: int = 100
    C_eta: float = 0.1
    exploration: str = 'std'

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ConfigError(f"Unknown epoch schedule: {self.mode}")
        if self.C_T < 1:
            raise ConfigError(f"C_T must be at least 1, got {self.C_T}")
        if self.C_eta < 0:
            raise ConfigError(f"C_eta must be nonnegative, got {self.C_eta}")
        if self.exploration not in EXPLORATION_DECAYS:
            raise ConfigError(f"Unknown exploration decay: {self.exploration}")

    def length(self, i):
        if self.mode == 'doubling':
            return self.C_T * 2 ** i
        return self.C_T * (i + 1)

    def sigma_eta(self, i, sigma_w):
        if self.exploration == 'variance':
            return self.C_eta * sigma_w * (self.length(i) / self.C_T) ** (-1.0 / 6.0)
        return self.C_eta * sigma_w * self.length(i) ** (-1.0 / 3.0)

    @staticmethod
    def theoretical_C_T(constants, n, p, fir=True):
        """Epoch length constant of the regret analysis: (n + p) C*^4 (1 + ||K*||)^4 / (1 - rho*)^8.

        FIR synthesis squares the denominator. Far too large to size epochs with; reported only.
        """
        c = constants
        power = 16 if fir else 8
        return (n + p) * c.C_star ** 4 * (1.0 + c.K_norm) ** 4 / (1.0 - c.rho_star) ** power


@dataclass(frozen=True)
class WarmupConfig:
    steps: int = 100
    sigma_u: float = 1.0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"warmup length must be nonnegative, got {self.steps}")
        if self.sigma_u < 0:
            raise ConfigError(f"warmup input noise must be nonnegative, got {self.sigma_u}")


@dataclass
class Design:
    """Outcome of one controller update."""

    controller: StateSpaceController
    status: str
    estimate: object = None
    gamma: float = math.nan
    error: float = math.nan
    radius: float = math.nan


@dataclass(eq=False)
class EpochRecord:
    index: int
    start: int
    sigma_eta: float
    controller: dict
    status: str
    cost: float
    trajectory: Trajectory
    estimate: object = None
    eps_A: float = 0.0
    eps_B: float = 0.0
    estimation_error: float = math.nan
    gamma: float = math.nan
    radius: float = math.nan
    cause: str = 'schedule'
    # Cumulative regret at the end of this epoch.
    regret: float = 0.0

    @property
    def length(self):
        return self.trajectory.length

    @property
    def samples(self):
        return 0 if self.estimate is None else self.estimate.samples

    def as_row(self):
        return {
            'epoch': self.index,
            'start': self.start,
            'length': self.length,
            'sigma_eta': self.sigma_eta,
            'status': self.status,
            'cause': self.cause,
            'controller': self.controller.get('kind'),
            'cost': self.cost,
            'eps_A': self.eps_A,
            'eps_B': self.eps_B,
            'estimation_error': self.estimation_error,
            'samples': self.samples,
            'gamma': self.gamma,
            'radius': self.radius,
            'regret': self.regret,
            'diverged': self.trajectory.diverged,
        }


@dataclass(eq=False)
class EpochTrace:
    strategy: str
    J_star: float
    Q: np.ndarray
    R: np.ndarray
    horizon: int
    warmup: Trajectory
    epochs: list = field(default_factory=list)
    # Leading state coordinates that belong to the plant; the rest are disturbance states.
    plant_dim: Optional[int] = None
    state_cap: Optional[float] = None

    def add(self, record):
        previous = self.epochs[-1].regret if self.epochs else 0.0
        record.regret = previous + float(np.sum(record.trajectory.stage_costs(self.Q, self.R) - self.J_star))
        self.epochs.append(record)
        return record

    @property
    def steps(self):
        return sum(e.length for e in self.epochs)

    @property
    def diverged(self):
        return any(e.trajectory.diverged for e in self.epochs)

    def trajectory(self):
        if not self.epochs:
            return Trajectory.empty(self.Q.shape[0], self.R.shape[0], self.warmup.final_state)
        return Trajectory.concatenate([e.trajectory for e in self.epochs])

    def stage_costs(self):
        if not self.epochs:
            return np.zeros(0)
        return np.concatenate([e.trajectory.stage_costs(self.Q, self.R) for e in self.epochs])

    def state_peaks(self):
        """||x_t||_inf over the plant coordinates for t = 1..steps."""
        states = self.trajectory().states[1:]
        dim = states.shape[1] if self.plant_dim is None else self.plant_dim
        return np.max(np.abs(states[:, :dim]), axis=1) if states.size else np.zeros(0)

    def records(self):
        return [{'strategy': self.strategy, **e.as_row()} for e in self.epochs]


def regret_of(trace, J_star=None, times=None):
    """Cumulative regret sum_{t<=k} (x_t'Qx_t + u_t'Ru_t - J*) at steps k = ``times`` (1-based).

    A diverged trial is clamped at the overflow guard and padded to the horizon.
    """
    J_star = trace.J_star if J_star is None else J_star
    costs = trace.stage_costs()
    if costs.size == 0:
        return np.zeros(0)
    curve = np.cumsum(costs - J_star)
    if trace.diverged:
        curve = np.minimum(curve, OVERFLOW_GUARD)
        curve = np.concatenate([curve, np.full(max(trace.horizon - curve.size, 0), OVERFLOW_GUARD)])
    if times is None:
        return curve
    times = np.asarray(times, dtype=int)
    if times.size and (times.min() < 1 or times.max() > curve.size):
        raise ValueError(f"sample times must lie in [1, {curve.size}]")
    return curve[times - 1]


def _as_controller(K):
    if isinstance(K, StateSpaceController):
        return K
    return StateSpaceController.static(K)


def initial_controller(truth, K0=None):
    """The warmup controller: K0 when given (it must stabilize ``truth``), else the optimal gain."""
    if K0 is None:
        return StateSpaceController.static(dare_solve(truth).K)
    controller = _as_controller(K0)
    radius = spectral_radius(controller.closed_loop(truth.A, truth.B))
    if radius >= 1:
        raise Unstable(f"the initial controller does not stabilize the system (spectral radius {radius:.4f})")
    return controller


def warmup_rollout(truth, K0=None, warmup=None, rng_seed=0, noise_dist='gaussian'):
    warmup = warmup or WarmupConfig()
    controller = initial_controller(truth, K0)
    if warmup.steps == 0:
        return Trajectory.empty(truth.n, truth.p)
    return simulate_rollout(truth, controller, warmup.steps, warmup.sigma_u, rng_seed, noise_dist=noise_dist)


def _estimation_error(est, truth):
    return spectral_norm(est.theta - np.hstack([truth.A, truth.B]))


def _fallback(strategy, reason, previous, **kwargs):
    logger.warning(f"{strategy}: keeping the previous controller ({reason})")
    return Design(previous, 'fallback', **kwargs)


def _check_run(horizon, data_policy):
    if horizon < 1:
        raise ConfigError(f"horizon must be at least 1, got {horizon}")
    if data_policy not in DATA_POLICIES:
        raise ConfigError(f"Unknown data policy: {data_policy}")


def _make_record(index, start, sigma, design, traj, truth, cause='schedule'):
    est = design.estimate
    return EpochRecord(
        index=index,
        start=start,
        sigma_eta=sigma,
        controller=design.controller.describe(),
        status=design.status,
        cost=infinite_horizon_cost(truth, design.controller),
        trajectory=traj,
        estimate=est,
        eps_A=getattr(est, 'eps_A', 0.0),
        eps_B=getattr(est, 'eps_B', 0.0),
        estimation_error=design.error,
        gamma=design.gamma,
        radius=design.radius,
        cause=cause,
    )


def _run_schedule(trace, truth, controller, design, sched, horizon, rng, data_policy, warm_sigma,
                  explore=True, noise_dist='gaussian', x0=None):
    """Fixed-schedule epochs: roll out, re-estimate, redesign. A fallback epoch doubles its exploration variance.

    The first epoch continues from the end of the warmup unless ``x0`` is given.
    """
    data = trace.warmup if trace.warmup.length else None
    current = Design(controller, 'initial')
    if data is not None:
        current = design(data, warm_sigma, controller)
    x = trace.warmup.final_state if x0 is None else np.asarray(x0, dtype=float)
    t = i = 0
    while t < horizon:
        length = min(sched.length(i), horizon - t)
        sigma = sched.sigma_eta(i, truth.sigma_w) if explore else 0.0
        if current.status == 'fallback':
            sigma *= math.sqrt(2.0)
        try:
            traj = simulate_rollout(truth, current.controller, length, sigma, rng, x0=x, noise_dist=noise_dist,
                                    raise_on_divergence=True)
        except Diverged as e:
            logger.warning(f"{trace.strategy}: epoch {i} diverged: {e}")
            traj = e.trajectory
        record = trace.add(_make_record(i, t, sigma, current, traj, truth))
        logger.info(f"{trace.strategy} epoch {i}: {traj.length} steps, {current.status} controller, "
                    f"cost {record.cost:.4f}, regret {record.regret:.2f}")
        if traj.diverged:
            break
        t += traj.length
        i += 1
        x = traj.final_state
        if t >= horizon:
            break
        data = traj if data_policy == 'epoch' or data is None else Trajectory.concatenate([data, traj])
        current = design(data, sigma, current.controller)
    return trace


def _new_trace(strategy, truth, horizon, warm, J_star=None, plant_dim=None):
    J_star = dare_solve(truth).J_star if J_star is None else J_star
    return EpochTrace(strategy, J_star, truth.Q, truth.R, horizon, warm, plant_dim=plant_dim)


def run_robust_adaptive(truth, K0=None, sched=None, cfg=None, horizon=10_000, seed=0, *, warmup=None,
                        error_policy='actual', multiplier=1.0, data_policy='epoch'):
    """Epochs of robust FIR synthesis on least-squares estimates.

    Epoch i runs u = K_i x + eta with eta ~ N(0, sigma_eta,i^2 I). After it, the model is refit on
    that epoch's data (or all data with ``data_policy='all'``), the error radii are set by
    ``error_policy`` and a new controller is synthesized. An infeasible synthesis keeps the
    current controller for the next epoch.
    """
    sched = sched or EpochSchedule()
    cfg = cfg or SynthesisConfig()
    warmup = warmup or WarmupConfig()
    _check_run(horizon, data_policy)
    if error_policy not in ERROR_POLICIES:
        raise ConfigError(f"Unknown error policy: {error_policy}")
    rng = make_rng(seed)
    constants = None
    try:
        constants = theoretical_constants(truth)
        logger.debug(f"Theoretical epoch constant C_T = "
                     f"{EpochSchedule.theoretical_C_T(constants, truth.n, truth.p):.3g}")
    except ValueError as e:
        if error_policy == 'theoretical':
            raise ConfigError(f"theoretical error radii are unavailable: {e}") from e

    def design(data, sigma_eta, previous):
        try:
            est = ols_estimate(data, policy=error_policy, truth=truth, multiplier=multiplier,
                               constants=constants, sigma_eta=sigma_eta)
        except Degenerate as e:
            return _fallback('robust', e, previous)
        error = _estimation_error(est, truth)
        try:
            resp, _ = synthesize_robust(est, cfg, truth.Q, truth.R)
        except SynthesisInfeasible as e:
            return _fallback('robust', e, previous, estimate=est, error=error)
        return Design(realize_controller(resp), 'synthesized', est, resp.gamma, error)

    controller = initial_controller(truth, K0)
    warm = warmup_rollout(truth, controller, warmup, rng)
    trace = _new_trace('robust', truth, horizon, warm)
    return _run_schedule(trace, truth, controller, design, sched, horizon, rng, data_policy, warmup.sigma_u)


class _SwitchMonitor:
    """Feeds each transition to the running least squares and reports when the epoch should end."""

    def __init__(self, rls, rule, min_epoch, det_factor, tau=None):
        self.rls = rls
        self.rule = rule
        self.min_epoch = min_epoch
        self.det_factor = det_factor
        self.tau = tau
        self.logdet_switch = rls.logdet
        self.cause = None

    def __call__(self, k, x, u, x_next):
        self.rls = rls_update(self.rls, x, u, x_next)
        state = SwitchState(t=k + 1, t_switch=0, logdet=self.rls.logdet, logdet_switch=self.logdet_switch,
                            min_epoch=self.min_epoch, det_factor=self.det_factor, tau=self.tau)
        if epoch_switch('det', state):
            self.cause = 'det'
        elif self.rule == 'det_plus_tau' and epoch_switch(self.rule, state):
            self.cause = 'tau'
        return self.cause is not None


def _run_switching(trace, truth, controller, strategy, cfg, horizon, rng, lam, multiplier):
    """OFU / TS loop: select a model from the confidence set over all data, play its gain until the switch rule fires."""
    theta_star = np.hstack([truth.A, truth.B])
    rls = rls_extend(RLSState.initial(truth.n, truth.p, lam), trace.warmup)
    rule, tau = ('det', None) if strategy == 'ofu' else ('det_plus_tau', cfg.tau)
    current = Design(controller, 'initial')
    previous_theta = None
    x = trace.warmup.final_state
    t = i = 0
    while t < horizon:
        radius = ellipsoid_radius(rls.theta, theta_star, rls.Z, multiplier)
        ell = rls.ellipsoid(radius)
        est = rls.estimate()
        error = _estimation_error(est, truth)
        try:
            if strategy == 'ofu':
                selection = ofu_select(ell, cfg, truth.Q, truth.R, previous=previous_theta, rng=rng)
                theta, K = selection.theta, selection.K
            else:
                theta, K = ts_select(ell, rng, truth.Q, truth.R, cfg)
            previous_theta = theta
            current = Design(StateSpaceController.static(K), 'selected', est, error=error, radius=radius)
        except NoStabilizablePoint as e:
            current = _fallback(strategy, e, current.controller, estimate=est, error=error, radius=radius)
        monitor = _SwitchMonitor(rls, rule, cfg.min_epoch, cfg.det_factor, tau)
        try:
            traj = simulate_rollout(truth, current.controller, horizon - t, 0.0, rng, x0=x, stop=monitor,
                                    raise_on_divergence=True)
        except Diverged as e:
            logger.warning(f"{strategy}: epoch {i} diverged: {e}")
            traj = e.trajectory
        cause = monitor.cause or ('diverged' if traj.diverged else 'horizon')
        record = trace.add(_make_record(i, t, 0.0, current, traj, truth, cause=cause))
        logger.info(f"{strategy} epoch {i}: {traj.length} steps ended by {cause}, cost {record.cost:.4f}")
        if traj.diverged:
            break
        rls = monitor.rls
        t += traj.length
        i += 1
        x = traj.final_state
    return trace


def run_baseline(strategy, truth, warmup=None, horizon=10_000, seed=0, *, K0=None, sched=None, ofu=None,
                 ts=None, lam=1e-5, multiplier=1.0, data_policy='epoch'):
    """Runs one of the comparison strategies with the same warmup and bookkeeping as the robust runner.

    ``nominal`` follows the robust epoch and noise schedule with certainty-equivalent gains;
    ``ofu`` and ``ts`` use the Gram-determinant switch rules and no exploration noise.
    """
    if strategy not in BASELINES:
        raise ConfigError(f"Unknown strategy: {strategy}")
    warmup = warmup or WarmupConfig()
    _check_run(horizon, data_policy)
    rng = make_rng(seed)
    controller = initial_controller(truth, K0)
    warm = warmup_rollout(truth, controller, warmup, rng)
    trace = _new_trace(strategy, truth, horizon, warm)
    if strategy == 'nominal':
        def design(data, sigma_eta, previous):
            try:
                est = ols_estimate(data)
                return Design(nominal_controller(est, truth.Q, truth.R), 'synthesized', est,
                              error=_estimation_error(est, truth))
            except (Degenerate, Unstabilizable) as e:
                return _fallback('nominal', e, previous)

        return _run_schedule(trace, truth, controller, design, sched or EpochSchedule(), horizon, rng,
                             data_policy, warmup.sigma_u)
    cfg = (ofu or OFUConfig()) if strategy == 'ofu' else (ts or TSConfig())
    return _run_switching(trace, truth, controller, strategy, cfg, horizon, rng, lam, multiplier)


def demand_system(plant, A_d):
    """The plant augmented with the disturbance states d+ = A_d d + w; noise enters through d only."""
    n = plant.n
    A_z, B_z = augmented_model(plant.A, plant.B, np.asarray(A_d, dtype=float))
    Q_z = scipy.linalg.block_diag(plant.Q, np.zeros((n, n)))
    E = np.vstack([np.zeros((n, n)), np.eye(n)])
    return LinearSystem(A_z, B_z, Q_z, plant.R, plant.sigma_w, noise_input=E)


def _disturbance_data(traj, n):
    steps = traj.length
    return Trajectory(traj.states[:, n:], np.zeros((steps, 0)), traj.process_noise[:, n:], np.zeros((steps, 0)),
                      diverged=traj.diverged)


def run_demand(plant, A_d, cfg=None, horizon=2000, seed=0, *, c=0.1, constrained=True, sched=None,
               warmup=None, noise_dist='uniform', data_policy='all'):
    """Regulates a known plant against disturbances from an unknown stable filter A_d.

    A_d is refit by least squares on the disturbance states after each epoch; its l_inf-induced
    error feeds the constrained synthesis. With bounded noise |w| <= b = sigma_w the constrained
    controller keeps ||x||_inf <= a = c b / (1 - gamma). No exploration noise is injected.

    The warmup only supplies identification data: the state cap holds for a plant started from
    rest, so the first epoch starts at x = 0.
    """
    cfg = cfg or SynthesisConfig()
    warmup = warmup or WarmupConfig()
    sched = sched or EpochSchedule()
    _check_run(horizon, data_policy)
    n = plant.n
    A_d = np.asarray(A_d, dtype=float)
    b = plant.sigma_w
    a = c * b / (1.0 - constrained_gamma(cfg))
    truth = demand_system(plant, A_d)
    rng = make_rng(seed)
    sol = dare_solve(truth)
    controller = StateSpaceController.static(sol.K)
    warm = warmup_rollout(truth, controller, warmup, rng, noise_dist=noise_dist)
    strategy = 'constrained' if constrained else 'unconstrained'
    trace = _new_trace(strategy, truth, horizon, warm, J_star=sol.J_star, plant_dim=n)
    trace.state_cap = a

    def design(data, sigma_eta, previous):
        try:
            est = ols_estimate(_disturbance_data(data, n))
        except Degenerate as e:
            return _fallback(strategy, e, previous)
        eps = float(np.linalg.norm(est.A_hat - A_d, np.inf))
        est = est.with_errors(eps, 0.0)
        try:
            resp = synthesize_constrained(est, plant, cfg, a, b, constrained=constrained)
        except SynthesisInfeasible as e:
            return _fallback(strategy, e, previous, estimate=est, error=eps)
        return Design(realize_controller(resp), 'synthesized', est, resp.gamma, eps)

    logger.info(f"Demand study ({strategy}): state cap a = {a:.4g} for noise bound b = {b:.4g}")
    return _run_schedule(trace, truth, controller, design, sched, horizon, rng, data_policy, warmup.sigma_u,
                         explore=False, noise_dist=noise_dist, x0=np.zeros(truth.n))
