"""Numerical checks of the identities and bounds behind the regret analysis.

Each check returns the statistic it computes together with the bound it is compared to, so
tests and the ``validate`` command can assert on both.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg

from .linsys import LinearSystem, lqr_gain, lyapunov_solve, make_rng, riccati_step, spectral_norm, spectral_radius
from .sls import hinf_norm

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CancelCheck:
    """Excess finite-horizon cost of playing u = K* x + nu, computed and predicted.

    ``rhs`` is sum_j nu_j'(B'PB + R) nu_j. ``coupled_rhs`` adds the cross terms
    2 sum_{i<j} nu_i' B'(M')^(j-i) P B nu_j; the moment computation shows they cancel against
    the R-weighted coupling of earlier inputs with later feedback, so only ``rhs`` is exact.
    """

    lhs: float
    rhs: float
    coupled_rhs: float

    @property
    def deviation(self):
        return abs(self.lhs - self.rhs)


def _finite_horizon_cost(sys, K, P, nu, Sigma0):
    """E[sum_t x'Qx + u'Ru + x_T'P x_T] with u = K x + nu_t, by mean and covariance recursion."""
    A, B, Q, R = sys.A, sys.B, sys.Q, sys.R
    M = A + B @ K
    W = sys.noise_covariance
    mean = np.zeros(sys.n)
    cov = Sigma0.copy()
    total = 0.0
    for v in nu:
        u_mean = K @ mean + v
        total += mean @ Q @ mean + np.trace(Q @ cov) + u_mean @ R @ u_mean + np.trace(K.T @ R @ K @ cov)
        mean = M @ mean + B @ v
        cov = M @ cov @ M.T + W
    return float(total + mean @ P @ mean + np.trace(P @ cov))


def check_cancel_identity(sys, nu, T=None):
    """Compares J_T(nu) - J_T(0) under the optimal gain with its closed form.

    x_0 is drawn from the stationary distribution of the optimal closed loop; nu is deterministic,
    which makes every expectation exact.
    """
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    if nu.shape[1] != sys.p:
        nu = nu.reshape(-1, sys.p)
    if T is not None:
        nu = nu[:T]
    P = scipy.linalg.solve_discrete_are(sys.A, sys.B, sys.Q, sys.R)
    P = 0.5 * (P + P.T)
    K = lqr_gain(P, sys.A, sys.B, sys.R)
    M = sys.A + sys.B @ K
    Sigma0 = lyapunov_solve(M, sys.noise_covariance)
    lhs = _finite_horizon_cost(sys, K, P, nu, Sigma0) - _finite_horizon_cost(sys, K, P, np.zeros_like(nu), Sigma0)
    G = sys.B.T @ P @ sys.B + sys.R
    rhs = float(sum(v @ G @ v for v in nu))
    cross = 0.0
    for j in range(len(nu)):
        power = np.eye(sys.n)
        for i in range(j - 1, -1, -1):
            power = power @ M.T
            cross += nu[i] @ sys.B.T @ power @ P @ sys.B @ nu[j]
    return CancelCheck(lhs=float(lhs), rhs=rhs, coupled_rhs=rhs + 2.0 * float(cross))


def check_exploration_cost(sys, nu):
    """Excess cost of exploration against lambda_min(R) sum ||nu_t||^2; returns (excess, bound)."""
    result = check_cancel_identity(sys, nu)
    nu = np.atleast_2d(np.asarray(nu, dtype=float)).reshape(-1, sys.p)
    bound = float(np.min(np.linalg.eigvalsh(sys.R)) * np.sum(nu ** 2))
    return result.lhs, bound


def psd_block_matrix(M, N, T):
    """The nT x nT block matrix D(T): D_ij = (M')^(j-i) S_(T-j) for i <= j, S_(T-i) M^(i-j) below,
    with S_m = sum_{k=0..m} (M')^k N M^k."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    n = M.shape[0]
    S = [N.copy()]
    power = np.eye(n)
    for _ in range(1, T):
        power = power @ M
        S.append(S[-1] + power.T @ N @ power)
    powers = [np.eye(n)]
    for _ in range(1, T):
        powers.append(powers[-1] @ M)
    D = np.zeros((n * T, n * T))
    for i in range(1, T + 1):
        for j in range(1, T + 1):
            if i <= j:
                block = powers[j - i].T @ S[T - j]
            else:
                block = S[T - i] @ powers[i - j]
            D[(i - 1) * n:i * n, (j - 1) * n:j * n] = block
    return D


def check_psd_block(M, N, T):
    """Minimum eigenvalue of D(T); nonnegative up to rounding."""
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    if spectral_radius(M) >= 1:
        raise ValueError("M must be stable")
    D = psd_block_matrix(M, N, T)
    return float(np.min(np.linalg.eigvalsh(0.5 * (D + D.T))))


def check_perturbation_bound(states, inputs, K):
    """For u_t = K x_t + nu_t: returns (sum ||nu_t||^2, (1 + sigma_min(K)^2) lambda_min(sum z_t z_t'))."""
    X = np.atleast_2d(np.asarray(states, dtype=float))
    U = np.atleast_2d(np.asarray(inputs, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if X.shape[0] != U.shape[0]:
        raise ValueError("states and inputs must have the same number of rows")
    nu = U - X @ K.T
    Z = np.hstack([X, U])
    gram_min = max(float(np.min(np.linalg.eigvalsh(Z.T @ Z))), 0.0)
    # K' has a nontrivial kernel when there are more inputs than states.
    sigma_min = float(np.min(np.linalg.svd(K, compute_uv=False))) if K.shape[0] <= K.shape[1] else 0.0
    return float(np.sum(nu ** 2)), (1.0 + sigma_min ** 2) * gram_min


@dataclass(frozen=True)
class RiccatiRate:
    errors: np.ndarray
    tail_ratio: float

    @property
    def decays(self):
        return self.tail_ratio < 1


def check_riccati_rate(sys, T):
    """||P_t - P*|| for the Riccati recursion from P_0 = 0, and the largest error ratio over the
    second half of the run (errors at rounding level are ignored)."""
    P_star = scipy.linalg.solve_discrete_are(sys.A, sys.B, sys.Q, sys.R)
    P = np.zeros_like(sys.A)
    errors = np.empty(T)
    for t in range(T):
        P = riccati_step(P, sys.A, sys.B, sys.Q, sys.R)
        errors[t] = spectral_norm(P - P_star)
    floor = 1e-11 * (1.0 + spectral_norm(P_star))
    tail = errors[T // 2:]
    ratios = [b / a for a, b in zip(tail, tail[1:]) if a > floor and b > floor]
    return RiccatiRate(errors=errors, tail_ratio=float(max(ratios)) if ratios else 0.0)


def check_hinf_decay_bound(taps, C, rho, grid=4096):
    """Grid Hinf norm of sum_k G(k) z^-k against C / (1 - rho) for ||G(k)|| <= C rho^k."""
    taps = np.asarray(taps, dtype=float)
    if taps.ndim == 1:
        taps = taps.reshape(-1, 1, 1)
    for k, tap in enumerate(taps):
        if spectral_norm(tap) > C * rho ** k * (1 + 1e-12):
            raise ValueError(f"coefficient {k} exceeds the decay envelope")
    return hinf_norm(taps, grid), C / (1.0 - rho)


def check_schur_lemma(Sigma, K, sigma_u):
    """lambda_min of [[S, S K'], [K S, K S K' + sigma_u^2 I]] against
    sigma_u^2 min(1/2, lambda_min(S) / (2 ||K S K'|| + sigma_u^2))."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    p = K.shape[0]
    KS = K @ Sigma
    KSK = KS @ K.T
    block = np.block([[Sigma, KS.T], [KS, KSK + sigma_u ** 2 * np.eye(p)]])
    lhs = float(np.min(np.linalg.eigvalsh(0.5 * (block + block.T))))
    if sigma_u == 0:
        return lhs, 0.0
    lam = float(np.min(np.linalg.eigvalsh(Sigma)))
    rhs = sigma_u ** 2 * min(0.5, lam / (2.0 * spectral_norm(KSK) + sigma_u ** 2))
    return lhs, float(rhs)


def random_stable(rng, n, radius=0.9):
    M = rng.standard_normal((n, n))
    return M * (radius * rng.uniform(0.2, 1.0) / max(spectral_radius(M), 1e-12))


def random_pd(rng, n):
    G = rng.standard_normal((n, n))
    return G @ G.T + 0.1 * np.eye(n)


def random_system(rng, n, p):
    return LinearSystem(rng.standard_normal((n, n)) * 0.6, rng.standard_normal((n, p)), random_pd(rng, n),
                        random_pd(rng, p), sigma_w=1.0)


def _decaying_filter(rng, length, rows, cols, C, rho):
    taps = rng.standard_normal((length, rows, cols))
    for k in range(length):
        taps[k] *= C * rho ** k * rng.uniform(0.1, 1.0) / max(spectral_norm(taps[k]), 1e-12)
    return taps


def run_suite(seed=0, instances=20):
    """Runs every check on random instances; returns one row per (check, instance)."""
    rng = make_rng(seed)
    rows = []

    def record(check, instance, statistic, bound, passed):
        rows.append({'check': check, 'instance': instance, 'statistic': float(statistic),
                     'bound': float(bound), 'passed': bool(passed)})

    for i in range(instances):
        n, p = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        sys = random_system(rng, n, p)
        nu = rng.standard_normal((int(rng.integers(1, 8)), p))
        try:
            result = check_cancel_identity(sys, nu)
        except Exception:
            logger.error(f"cancel identity failed on instance {i}", exc_info=True)
            record('cancel_identity', i, np.nan, np.nan, False)
        else:
            tol = 1e-8 * (1.0 + abs(result.rhs))
            record('cancel_identity', i, result.deviation, tol, result.deviation <= tol)
            excess, bound = check_exploration_cost(sys, nu)
            record('exploration_cost', i, excess, bound, excess >= bound - tol)

        M, N = random_stable(rng, n), random_pd(rng, n)
        min_eig = check_psd_block(M, N, int(rng.integers(1, 7)))
        record('psd_block', i, min_eig, -1e-8, min_eig >= -1e-8)

        K = rng.standard_normal((p, n))
        X = rng.standard_normal((50, n))
        U = X @ K.T + rng.standard_normal((50, p))
        lhs, rhs = check_perturbation_bound(X, U, K)
        record('perturbation_bound', i, lhs, rhs, lhs >= rhs * (1 - 1e-10))

        rate = check_riccati_rate(sys, 60)
        record('riccati_rate', i, rate.tail_ratio, 1.0, rate.decays)

        C, rho = rng.uniform(1.0, 3.0), rng.uniform(0.3, 0.9)
        norm, bound = check_hinf_decay_bound(_decaying_filter(rng, int(rng.integers(1, 7)), n, p, C, rho), C, rho)
        record('hinf_decay_bound', i, norm, bound, norm <= bound + 1e-9)

        lhs, rhs = check_schur_lemma(random_pd(rng, n), rng.standard_normal((p, n)), rng.uniform(0.1, 2.0))
        record('schur_lemma', i, lhs, rhs, lhs >= rhs - 1e-10)

    report = pd.DataFrame(rows, columns=['check', 'instance', 'statistic', 'bound', 'passed'])
    failed = int((~report['passed']).sum())
    if failed:
        logger.warning(f"Validation suite: {failed} of {len(report)} checks failed")
    else:
        logger.info(f"Validation suite: all {len(report)} checks passed")
    return report
