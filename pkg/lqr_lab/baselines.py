"""Baseline strategies: OFU by projected gradient descent, Thompson sampling and certainty equivalence."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize

from .exceptions import NoStabilizablePoint, NonConvergent, Unstabilizable
from .linsys import LinearSystem, StateSpaceController, dare_solve, lqr_gain, lyapunov_solve, spectral_radius

logger = logging.getLogger(__name__)

SWITCH_RULES = ('det', 'det_plus_tau')
# Riccati iterations allowed per candidate model inside the OFU and TS searches.
LQR_MAX_ITER = 100_000


@dataclass(frozen=True)
class OFUConfig:
    step0: float = 1e-2
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-12
    max_iters: int = 200
    grad_tol: float = 1e-6
    proj_tol: float = 1e-12
    samples: int = 20
    min_epoch: int = 10
    det_factor: float = 2.0

    def __post_init__(self):
        if self.det_factor <= 1:
            raise ValueError(f"determinant factor must exceed 1, got {self.det_factor}")
        if self.min_epoch < 1:
            raise ValueError(f"minimum epoch length must be at least 1, got {self.min_epoch}")
        if not 0 < self.backtrack < 1:
            raise ValueError(f"backtracking factor must lie in (0, 1), got {self.backtrack}")


@dataclass(frozen=True)
class TSConfig:
    tau: int = 500
    min_epoch: int = 10
    det_factor: float = 2.0
    max_resamples: int = 50

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be at least 1, got {self.tau}")
        if self.det_factor <= 1:
            raise ValueError(f"determinant factor must exceed 1, got {self.det_factor}")
        if self.min_epoch < 1:
            raise ValueError(f"minimum epoch length must be at least 1, got {self.min_epoch}")


@dataclass(frozen=True)
class SwitchState:
    """Step counts and Gram log-determinants at the current time and at the last switch."""

    t: int
    t_switch: int
    logdet: float
    logdet_switch: float
    min_epoch: int = 10
    det_factor: float = 2.0
    tau: Optional[int] = None


@dataclass
class OFUSelection:
    theta: np.ndarray
    K: np.ndarray
    cost: float
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def n(self):
        return self.theta.shape[0]

    @property
    def A(self):
        return self.theta[:, :self.n]

    @property
    def B(self):
        return self.theta[:, self.n:]


def lqr_at(theta, Q, R, max_iter=LQR_MAX_ITER):
    """Returns (P, K) for the model theta = [A B], or raises Unstabilizable.

    Uses the same value iteration as the true-system Riccati solve; a model whose iteration
    has not settled after ``max_iter`` steps counts as unstabilizable.
    """
    n = theta.shape[0]
    A, B = theta[:, :n], theta[:, n:]
    try:
        sol = dare_solve(LinearSystem(A, B, Q, R), max_iter=max_iter)
    except NonConvergent as e:
        raise Unstabilizable(f"no stabilizing LQR solution: {e}") from e
    P = sol.P
    K = lqr_gain(P, A, B, R)
    if spectral_radius(A + B @ K) >= 1:
        raise Unstabilizable("Riccati solution does not stabilize the model")
    return P, K


def ofu_cost(theta, Q, R):
    P, _ = lqr_at(theta, Q, R)
    return float(np.trace(P))


def ofu_cost_gradient(theta, Q, R):
    """Gradient of Tr P(A, B) with respect to [A B]: 2 P A_c L [I K'], L = A_c L A_c' + I."""
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    P, K = lqr_at(theta, Q, R)
    A_c = theta[:, :n] + theta[:, n:] @ K
    L = lyapunov_solve(A_c, np.eye(n))
    return 2.0 * P @ A_c @ L @ np.hstack([np.eye(n), K.T])


def project_ellipsoid(theta, ell, tol=1e-12):
    """Frobenius projection of theta onto the confidence ellipsoid."""
    theta = np.asarray(theta, dtype=float)
    if ell.value(theta) <= ell.eps:
        return theta.copy()
    if ell.eps == 0:
        return ell.Theta_hat.copy()
    lam, U = np.linalg.eigh(ell.Z)
    C = (theta - ell.Theta_hat) @ U
    weights = np.sum(C ** 2, axis=0)

    def secular(mu):
        return float(np.sum(lam * weights / (1.0 + mu * lam) ** 2) - ell.eps)

    def slope(mu):
        return float(-2.0 * np.sum(lam ** 2 * weights / (1.0 + mu * lam) ** 3))

    mu = 0.0
    for _ in range(100):
        value = secular(mu)
        if abs(value) <= tol * max(1.0, ell.eps):
            break
        step = value / slope(mu)
        if not np.isfinite(step):
            break
        mu -= step
    else:
        mu = None
    if mu is None or mu < 0 or abs(secular(mu)) > tol * max(1.0, ell.eps) * 1e3:
        hi = 1.0
        while secular(hi) > 0:
            hi *= 2.0
        mu = scipy.optimize.brentq(secular, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps)
    Y = (C / (1.0 + mu * lam)) @ U.T
    return ell.Theta_hat + Y


def _inverse_sqrt(Z):
    lam, U = np.linalg.eigh(Z)
    return (U / np.sqrt(lam)) @ U.T


def ts_sample(ell, rng):
    """Uniform draw from the ellipsoid: Theta_hat + sqrt(eps) U^(1/d) eta Z^-1/2 / ||eta||_F."""
    n, d = ell.Theta_hat.shape
    eta = rng.standard_normal((n, d))
    radius = rng.uniform() ** (1.0 / (n * d))
    if ell.eps == 0:
        return ell.Theta_hat.copy()
    return ell.Theta_hat + math.sqrt(ell.eps) * radius * (eta @ _inverse_sqrt(ell.Z)) / np.linalg.norm(eta)


def ts_select(ell, rng, Q, R, cfg=None):
    """Draws until a sample admits a stabilizing LQR gain; returns (theta, K)."""
    cfg = cfg or TSConfig()
    for attempt in range(cfg.max_resamples):
        theta = ts_sample(ell, rng)
        try:
            _, K = lqr_at(theta, Q, R)
        except Unstabilizable:
            continue
        if attempt:
            logger.debug(f"Thompson sample accepted after {attempt + 1} draws")
        return theta, K
    raise NoStabilizablePoint(f"no stabilizable sample in {cfg.max_resamples} draws")


def _safe_cost(theta, Q, R):
    try:
        return ofu_cost(theta, Q, R)
    except Unstabilizable:
        return float('inf')


def ofu_select(ell, cfg, Q, R, previous=None, rng=None):
    """Optimistic model selection by projected gradient descent on Tr P over the ellipsoid.

    Starts from the cheapest stabilizable point among the center, the previous selection and
    random ellipsoid samples.
    """
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(0))
    candidates = [ell.Theta_hat.copy()]
    if previous is not None:
        candidates.append(project_ellipsoid(previous, ell, cfg.proj_tol))
    candidates += [ts_sample(ell, rng) for _ in range(cfg.samples)]
    costs = [_safe_cost(theta, Q, R) for theta in candidates]
    best = int(np.argmin(costs))
    if not np.isfinite(costs[best]):
        raise NoStabilizablePoint("no stabilizable point among the OFU starting candidates")
    theta, J = candidates[best], costs[best]
    history = [J]
    it = 0
    for it in range(1, cfg.max_iters + 1):
        grad = ofu_cost_gradient(theta, Q, R)
        stationarity = np.linalg.norm(theta - project_ellipsoid(theta - grad, ell, cfg.proj_tol))
        if stationarity < cfg.grad_tol * (1.0 + abs(J)):
            break
        step = cfg.step0
        accepted = False
        while step >= cfg.min_step:
            cand = project_ellipsoid(theta - step * grad, ell, cfg.proj_tol)
            J_cand = _safe_cost(cand, Q, R)
            moved = np.sum((cand - theta) ** 2)
            if J_cand <= J - cfg.armijo * moved / step:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            break
        theta, J = cand, J_cand
        history.append(J)
    _, K = lqr_at(theta, Q, R)
    return OFUSelection(theta=theta, K=K, cost=J, iterations=it, history=history)


def epoch_switch(rule, state):
    """Gram-determinant switch: fire once the determinant grew past the factor after the minimum
    epoch length; 'det_plus_tau' also fires after tau steps."""
    if rule not in SWITCH_RULES:
        raise ValueError(f"Unknown switch rule: {rule}")
    elapsed = state.t - state.t_switch
    if elapsed >= state.min_epoch and state.logdet > math.log(state.det_factor) + state.logdet_switch:
        return True
    if rule == 'det_plus_tau':
        if state.tau is None:
            raise ValueError("the det_plus_tau rule needs tau")
        return elapsed >= state.tau
    return False


def nominal_controller(est, Q, R):
    """Certainty-equivalent LQR gain of the estimate."""
    try:
        sol = dare_solve(LinearSystem(est.A_hat, est.B_hat, Q, R))
    except NonConvergent as e:
        raise Unstabilizable(f"estimate is not stabilizable: {e}") from e
    return StateSpaceController.static(sol.K)
