"""Linear systems: data types, rollouts, Riccati and Lyapunov solvers, decay bounds."""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .exceptions import Diverged, NonConvergent, Unstable

logger = logging.getLogger(__name__)

OVERFLOW_GUARD = 1e10
INFINITE_COST = float('inf')


def spectral_radius(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(scipy.linalg.eigvals(M))))


def spectral_norm(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def make_rng(seed):
    """Returns a PCG64 generator; a Generator passed in is used as is."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _matrix(value, rows=None, cols=None, name='matrix'):
    M = np.asarray(value, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(-1, 1) if cols == 1 else M.reshape(1, -1)
    if M.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {M.shape}")
    if rows is not None and M.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got shape {M.shape}")
    if cols is not None and M.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got shape {M.shape}")
    return M


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Dynamics x+ = A x + B u + E w with stage cost x'Qx + u'Ru and w ~ sigma_w."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    sigma_w: float = 1.0
    noise_input: Optional[np.ndarray] = None

    def __post_init__(self):
        A = _matrix(self.A, name='A')
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {A.shape}")
        B = np.asarray(self.B, dtype=float)
        B = B.reshape(n, -1) if B.size else np.zeros((n, 0))
        p = B.shape[1]
        Q = _matrix(self.Q, n, n, 'Q')
        R = np.asarray(self.R, dtype=float).reshape(p, p) if p else np.zeros((0, 0))
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if p:
            if not np.allclose(R, R.T, atol=1e-12):
                raise ValueError("R must be symmetric")
            if np.min(np.linalg.eigvalsh(R)) <= 0:
                raise ValueError("R must be positive definite")
        if self.sigma_w < 0:
            raise ValueError(f"sigma_w must be nonnegative, got {self.sigma_w}")
        E = None if self.noise_input is None else _matrix(self.noise_input, rows=n, name='noise_input')
        object.__setattr__(self, 'A', A)
        object.__setattr__(self, 'B', B)
        object.__setattr__(self, 'Q', Q)
        object.__setattr__(self, 'R', R)
        object.__setattr__(self, 'sigma_w', float(self.sigma_w))
        object.__setattr__(self, 'noise_input', E)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def noise_map(self):
        return np.eye(self.n) if self.noise_input is None else self.noise_input

    @property
    def noise_covariance(self):
        E = self.noise_map
        return self.sigma_w ** 2 * (E @ E.T)

    def with_dynamics(self, A, B):
        return replace(self, A=A, B=B)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x_0..x_T, inputs u_0..u_{T-1} and the noise that produced them."""

    states: np.ndarray
    inputs: np.ndarray
    process_noise: np.ndarray
    exploration_noise: np.ndarray
    diverged: bool = False

    def __post_init__(self):
        steps = self.inputs.shape[0]
        if self.states.shape[0] != steps + 1:
            raise ValueError("a trajectory needs exactly one more state than inputs")
        if self.process_noise.shape[0] != steps or self.exploration_noise.shape[0] != steps:
            raise ValueError("noise sequences must match the number of inputs")

    @property
    def length(self):
        return self.inputs.shape[0]

    @property
    def final_state(self):
        return self.states[-1]

    def replay(self, sys):
        """Rebuilds the states from x_0, the inputs and the process noise."""
        states = np.empty_like(self.states)
        states[0] = self.states[0]
        for k in range(self.length):
            states[k + 1] = sys.A @ states[k] + sys.B @ self.inputs[k] + self.process_noise[k]
        return states

    def stage_costs(self, Q, R):
        x = self.states[:-1]
        u = self.inputs
        return np.einsum('ti,ij,tj->t', x, Q, x) + np.einsum('ti,ij,tj->t', u, R, u)

    @classmethod
    def empty(cls, n, p, x0=None):
        x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        return cls(x0.reshape(1, n), np.zeros((0, p)), np.zeros((0, n)), np.zeros((0, p)))

    @classmethod
    def concatenate(cls, trajectories):
        """Joins consecutive rollouts; each must start where the previous one ended."""
        trajectories = list(trajectories)
        if not trajectories:
            raise ValueError("nothing to concatenate")
        states = [trajectories[0].states]
        for prev, nxt in zip(trajectories, trajectories[1:]):
            if not np.array_equal(prev.final_state, nxt.states[0]):
                raise ValueError("trajectories are not contiguous")
            states.append(nxt.states[1:])
        return cls(
            np.concatenate(states),
            np.concatenate([t.inputs for t in trajectories]),
            np.concatenate([t.process_noise for t in trajectories]),
            np.concatenate([t.exploration_noise for t in trajectories]),
            diverged=any(t.diverged for t in trajectories),
        )


@dataclass(frozen=True)
class LQRSolution:
    P: np.ndarray
    K: np.ndarray
    J_star: float
    iterations: int = 0


@dataclass(frozen=True)
class DecayBound:
    C: float
    rho: float
    k_max: int = 200

    def holds(self, M, k_max=None):
        k_max = self.k_max if k_max is None else k_max
        power = np.eye(M.shape[0])
        for k in range(1, k_max + 1):
            power = power @ M
            if spectral_norm(power) > self.C * self.rho ** k * (1 + 1e-12):
                return False
        return True


@dataclass(frozen=True, eq=False)
class StateSpaceController:
    """xi+ = A_K xi + B_K x,  u = C_K xi + D_K x. A static gain has an empty state."""

    A_K: np.ndarray
    B_K: np.ndarray
    C_K: np.ndarray
    D_K: np.ndarray

    @classmethod
    def static(cls, K):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        p, n = K.shape
        return cls(np.zeros((0, 0)), np.zeros((0, n)), np.zeros((p, 0)), K)

    @property
    def order(self):
        return self.A_K.shape[0]

    @property
    def is_static(self):
        return self.order == 0

    def initial_state(self):
        return np.zeros(self.order)

    def act(self, xi, x):
        u = self.C_K @ xi + self.D_K @ x
        return u, self.A_K @ xi + self.B_K @ x

    def output_map(self):
        return np.hstack([self.D_K, self.C_K])

    def closed_loop(self, A, B):
        top = np.hstack([A + B @ self.D_K, B @ self.C_K])
        bottom = np.hstack([self.B_K, self.A_K])
        return np.vstack([top, bottom])

    def describe(self):
        if self.is_static:
            return {'kind': 'static', 'gain_norm': spectral_norm(self.D_K)}
        return {'kind': 'dynamic', 'order': self.order}


def riccati_step(P, A, B, Q, R):
    """One step of the Riccati map P -> A'PA - A'PB(R + B'PB)^-1 B'PA + Q."""
    if B.shape[1] == 0:
        nxt = A.T @ P @ A + Q
    else:
        BtPA = B.T @ P @ A
        gain = scipy.linalg.solve(R + B.T @ P @ B, BtPA, assume_a='pos')
        nxt = A.T @ P @ A - BtPA.T @ gain + Q
    return 0.5 * (nxt + nxt.T)


def lqr_gain(P, A, B, R):
    return -scipy.linalg.solve(R + B.T @ P @ B, B.T @ P @ A, assume_a='pos')


def dare_solve(sys, tol=1e-10, max_iter=1_000_000):
    """Solves the DARE by value iteration from P = 0."""
    A, B, Q, R = sys.A, sys.B, sys.Q, sys.R
    P = np.zeros_like(A)
    for it in range(1, max_iter + 1):
        nxt = riccati_step(P, A, B, Q, R)
        if not np.all(np.isfinite(nxt)) or np.trace(nxt) > 1e15:
            raise NonConvergent(f"Riccati iteration diverged after {it} steps; the pair is not stabilizable")
        residual = np.max(np.abs(nxt - P))
        if residual <= tol:
            K = lqr_gain(P, A, B, R)
            J_star = float(np.trace(P @ sys.noise_covariance))
            logger.debug(f"DARE converged in {it} iterations (residual {residual:.3e})")
            return LQRSolution(P=P, K=K, J_star=J_star, iterations=it)
        P = nxt
    raise NonConvergent(f"Riccati iteration did not reach {tol:g} within {max_iter} iterations")


def lyapunov_solve(M, W):
    """Returns P with P = M P M' + W."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    radius = spectral_radius(M)
    if radius >= 1:
        raise Unstable(f"Lyapunov equation needs a stable matrix, spectral radius is {radius:.6f}")
    if M.size == 0:
        return W.copy()
    P = scipy.linalg.solve_discrete_lyapunov(M, W)
    return 0.5 * (P + P.T)


def simulate_rollout(sys, controller, horizon, eta_std=0.0, rng_seed=0, *, x0=None,
                     noise_dist='gaussian', stop: Optional[Callable] = None, raise_on_divergence=False):
    """Rolls the closed loop forward with u_k = controller(x_k) + eta_k.

    ``stop(k, x_k, u_k, x_next)`` may end the rollout early; returning True keeps step k.
    Divergence past the overflow guard ends the rollout and is flagged on the trajectory, or
    raises Diverged carrying that trajectory with ``raise_on_divergence``.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    if eta_std < 0:
        raise ValueError(f"eta_std must be nonnegative, got {eta_std}")
    rng = make_rng(rng_seed)
    n, p = sys.n, sys.p
    E = sys.noise_map
    if noise_dist == 'gaussian':
        source = rng.standard_normal((horizon, E.shape[1])) * sys.sigma_w
    elif noise_dist == 'uniform':
        source = rng.uniform(-1.0, 1.0, size=(horizon, E.shape[1])) * sys.sigma_w
    else:
        raise ValueError(f"Unsupported noise distribution: {noise_dist}")
    eta = rng.standard_normal((horizon, p)) * eta_std
    w = source @ E.T

    states = np.empty((horizon + 1, n))
    inputs = np.empty((horizon, p))
    states[0] = np.zeros(n) if x0 is None else x0
    xi = controller.initial_state()
    diverged = False
    steps = horizon
    for k in range(horizon):
        x = states[k]
        u_fb, xi = controller.act(xi, x)
        inputs[k] = u_fb + eta[k]
        states[k + 1] = sys.A @ x + sys.B @ inputs[k] + w[k]
        if not np.linalg.norm(states[k + 1]) <= OVERFLOW_GUARD:
            diverged = True
            steps = k + 1
            logger.warning(f"Rollout crossed the overflow guard at step {k + 1}")
            break
        if stop is not None and stop(k, x, inputs[k], states[k + 1]):
            steps = k + 1
            break
    traj = Trajectory(states[:steps + 1].copy(), inputs[:steps].copy(), w[:steps].copy(),
                      eta[:steps].copy(), diverged=diverged)
    if diverged and raise_on_divergence:
        raise Diverged(f"state norm exceeded {OVERFLOW_GUARD:g} at step {steps}", traj)
    return traj


def infinite_horizon_cost(sys, controller):
    """Steady-state average cost of the closed loop, or INFINITE_COST when it is unstable."""
    A_cl = controller.closed_loop(sys.A, sys.B)
    if spectral_radius(A_cl) >= 1:
        return INFINITE_COST
    q = controller.order
    W = scipy.linalg.block_diag(sys.noise_covariance, np.zeros((q, q)))
    Sigma = lyapunov_solve(A_cl, W)
    out = controller.output_map()
    cost_matrix = scipy.linalg.block_diag(sys.Q, np.zeros((q, q))) + out.T @ sys.R @ out
    return float(np.trace(cost_matrix @ Sigma))


def fit_decay_bound(M, k_max=200):
    """Fits ||M^k|| <= C rho^k with rho halfway between rho(M) and 1."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    radius = spectral_radius(M)
    if radius >= 1:
        raise Unstable(f"cannot fit a decay bound, spectral radius is {radius:.6f}")
    rho = (radius + 1) / 2
    C = 1.0
    power = np.eye(M.shape[0])
    for k in range(1, k_max + 1):
        power = power @ M
        C = max(C, spectral_norm(power) / rho ** k)
    return DecayBound(C=C, rho=rho, k_max=k_max)
