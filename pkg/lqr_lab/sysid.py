"""Least-squares identification, Gram bookkeeping and model-error schedules."""

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .exceptions import Degenerate, MissingTruth, NonConvergent, Unstable
from .linsys import dare_solve, fit_decay_bound, spectral_norm

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
ERROR_POLICIES = ('actual', 'scaled', 'theoretical')


@dataclass(frozen=True, eq=False)
class ParamEstimate:
    A_hat: np.ndarray
    B_hat: np.ndarray
    eps_A: float = 0.0
    eps_B: float = 0.0
    samples: int = 0

    def __post_init__(self):
        for name in ('eps_A', 'eps_B'):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {value}")
            object.__setattr__(self, name, value)

    @property
    def theta(self):
        return np.hstack([self.A_hat, self.B_hat])

    def with_errors(self, eps_A, eps_B):
        return replace(self, eps_A=eps_A, eps_B=eps_B)

    @classmethod
    def from_theta(cls, theta, n, **kwargs):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:, :n].copy(), theta[:, n:].copy(), **kwargs)


@dataclass(frozen=True, eq=False)
class ConfidenceEllipsoid:
    """The set {Theta : Tr((Theta - Theta_hat) Z (Theta - Theta_hat)') <= eps}."""

    Theta_hat: np.ndarray
    Z: np.ndarray
    eps: float

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        if not np.allclose(Z, Z.T, rtol=1e-10, atol=1e-12):
            raise ValueError("Z must be symmetric")
        if np.min(np.linalg.eigvalsh(Z)) <= 0:
            raise ValueError("Z must be positive definite")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        object.__setattr__(self, 'Z', 0.5 * (Z + Z.T))
        object.__setattr__(self, 'Theta_hat', np.asarray(self.Theta_hat, dtype=float))

    @property
    def n(self):
        return self.Theta_hat.shape[0]

    @property
    def p(self):
        return self.Theta_hat.shape[1] - self.n

    def value(self, Theta):
        D = np.asarray(Theta) - self.Theta_hat
        return float(np.trace(D @ self.Z @ D.T))

    def contains(self, Theta, tol=1e-8):
        return self.value(Theta) <= self.eps + tol * max(1.0, self.eps)

    def split(self, Theta):
        return Theta[:, :self.n], Theta[:, self.n:]


@dataclass(frozen=True, eq=False)
class RLSState:
    """Running regularized least squares: theta, P = Z^-1, Z and log det Z."""

    theta: np.ndarray
    P: np.ndarray
    Z: np.ndarray
    logdet: float
    count: int = 0

    @classmethod
    def initial(cls, n, p, lam):
        if lam <= 0:
            raise ValueError(f"RLS needs a positive regularization, got {lam}")
        d = n + p
        return cls(theta=np.zeros((n, d)), P=np.eye(d) / lam, Z=lam * np.eye(d),
                   logdet=d * float(np.log(lam)))

    @property
    def n(self):
        return self.theta.shape[0]

    def estimate(self):
        return ParamEstimate.from_theta(self.theta, self.n, samples=self.count)

    def ellipsoid(self, eps):
        return ConfidenceEllipsoid(self.theta.copy(), self.Z.copy(), eps)


def _regressors(traj):
    return np.hstack([traj.states[:-1], traj.inputs]), traj.states[1:]


def gram_matrix(traj, lam):
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    Zs, _ = _regressors(traj)
    G = lam * np.eye(Zs.shape[1]) + Zs.T @ Zs
    return 0.5 * (G + G.T)


def ols_estimate(traj, lam=0.0, *, policy=None, truth=None, multiplier=1.0, **schedule_kwargs):
    """Least-squares fit of x_{k+1} = A x_k + B u_k, optionally ridge-regularized.

    Solved by QR of the stacked regressor; with ``policy`` set, the error radii are filled in
    by :func:`error_schedule`.
    """
    Zs, Y = _regressors(traj)
    n = Y.shape[1]
    d = Zs.shape[1]
    if lam == 0 and Zs.shape[0] < d:
        raise Degenerate(f"{Zs.shape[0]} samples cannot identify {d} regressors")
    if lam > 0:
        Zs = np.vstack([Zs, np.sqrt(lam) * np.eye(d)])
        Y = np.vstack([Y, np.zeros((d, n))])
    q, r = scipy.linalg.qr(Zs, mode='economic')
    singular = np.abs(np.diag(r))
    if singular.size and (np.min(singular) == 0 or np.linalg.cond(r) ** 2 > MAX_CONDITION):
        raise Degenerate("regressor Gram matrix is too ill-conditioned; the data lacks excitation")
    theta = scipy.linalg.solve_triangular(r, q.T @ Y).T
    est = ParamEstimate.from_theta(theta, n, samples=traj.length)
    if policy is not None:
        eps_A, eps_B = error_schedule(policy, truth, est, multiplier, **schedule_kwargs)
        est = est.with_errors(eps_A, eps_B)
    return est


def rls_update(state, x, u, x_next):
    """Rank-one update of an RLSState (Sherman-Morrison and the determinant lemma)."""
    z = np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]).astype(float)
    Pz = state.P @ z
    denom = 1.0 + z @ Pz
    gain = Pz / denom
    err = np.asarray(x_next, dtype=float) - state.theta @ z
    P = state.P - np.outer(gain, Pz)
    return RLSState(
        theta=state.theta + np.outer(err, gain),
        P=0.5 * (P + P.T),
        Z=state.Z + np.outer(z, z),
        logdet=state.logdet + float(np.log(denom)),
        count=state.count + 1,
    )


def rls_extend(state, traj):
    for k in range(traj.length):
        state = rls_update(state, traj.states[k], traj.inputs[k], traj.states[k + 1])
    return state


@dataclass(frozen=True)
class TheoryConstants:
    """Constants of the theoretical error rate: decay bound of the optimal loop and ||K*||."""

    C_star: float
    rho_star: float
    K_norm: float
    sigma_w: float
    scale: float = 1.0


def theoretical_constants(truth, scale=1.0):
    try:
        sol = dare_solve(truth)
        bound = fit_decay_bound(truth.A + truth.B @ sol.K)
    except (NonConvergent, Unstable) as e:
        raise ValueError(f"theoretical constants need a stabilizable system: {e}") from e
    return TheoryConstants(C_star=bound.C, rho_star=bound.rho, K_norm=spectral_norm(sol.K),
                           sigma_w=truth.sigma_w, scale=scale)


def theoretical_error(constants, n, p, samples, sigma_eta):
    """c * sigma_w ||K*|| C* / (sigma_eta (1 - rho*)^3) * sqrt((n + p) / T)."""
    if samples < 1 or sigma_eta <= 0:
        return float('inf')
    c = constants
    return float(c.scale * c.sigma_w * max(c.K_norm, 1.0) * c.C_star
                 / (sigma_eta * (1 - c.rho_star) ** 3) * np.sqrt((n + p) / samples))


def error_schedule(policy, truth, est, multiplier=1.0, *, constants: Optional[TheoryConstants] = None,
                   sigma_eta=None, samples=None):
    if policy not in ERROR_POLICIES:
        raise ValueError(f"Unknown error policy: {policy}")
    if policy in ('actual', 'scaled'):
        if truth is None:
            raise MissingTruth(f"the '{policy}' error policy needs the true system")
        eps_A = spectral_norm(est.A_hat - truth.A)
        eps_B = spectral_norm(est.B_hat - truth.B)
        if policy == 'scaled':
            eps_A, eps_B = multiplier * eps_A, multiplier * eps_B
        return eps_A, eps_B
    if constants is None:
        if truth is None:
            raise MissingTruth("the theoretical error policy needs constants or the true system")
        constants = theoretical_constants(truth)
    n, p = est.B_hat.shape
    samples = est.samples if samples is None else samples
    eps = theoretical_error(constants, n, p, samples, sigma_eta or 0.0)
    return eps, eps


def ellipsoid_radius(theta_hat, theta_star, Z, multiplier=1.0):
    """Squared radius Tr(D Z D') that just contains the true parameters.

    The multiplier stretches the ellipsoid's axes, as it stretches the operator-norm radii of
    the robust method, so it enters squared.
    """
    D = np.asarray(theta_hat) - np.asarray(theta_star)
    return float(multiplier ** 2 * np.trace(D @ Z @ D.T))
