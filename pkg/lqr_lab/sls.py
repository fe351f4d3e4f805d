"""FIR-truncated System Level Synthesis.

Robust synthesis optimizes over finite impulse responses Phi_x(1..F), Phi_u(1..F) of the
closed loop on the estimated model, with the truncation residual V absorbed by the
robustness margin. The outer search over gamma wraps a conic program solved in-repo.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .conic import ConicBuilder, ConicSolver, Expr, SolverSettings, hinf_lmi_block, spectral_norm_constraint
from .exceptions import ConfigError, SynthesisInfeasible
from .linsys import StateSpaceController, dare_solve, infinite_horizon_cost

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# A point that stopped at the iteration cap is still used when it is this close to tolerance.
INACCURATE_FACTOR = 100.0
CONSTRAINED_GAMMA = 0.98


@dataclass(frozen=True)
class SynthesisConfig:
    C_x: float = 5.0
    C_u: float = 5.0
    rho: float = 0.7
    F: int = 12
    eps_A: Optional[float] = None
    eps_B: Optional[float] = None
    alpha: float = 0.5
    gamma_points: int = 20
    gamma_max: float = 0.995
    refine_iters: int = 12
    gamma_fixed: Optional[float] = None
    tol: float = 1e-6
    max_iters: int = 20_000

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}")
        if self.F < 1:
            raise ConfigError(f"FIR length must be at least 1, got {self.F}")
        if self.C_x < 1 or self.C_u < 1:
            raise ConfigError(f"decay magnitudes must be at least 1, got C_x={self.C_x}, C_u={self.C_u}")
        if self.C_x * self.rho < 1:
            raise ConfigError("C_x * rho must be at least 1 since Phi_x(1) = I")
        if self.tail >= 1:
            raise ConfigError(f"C_x * rho^(F+1) = {self.tail:.4f} must be below 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.gamma_max < 1:
            raise ConfigError(f"gamma_max must lie in (0, 1), got {self.gamma_max}")
        if self.gamma_points < 2:
            raise ConfigError("the gamma grid needs at least two points")
        if self.gamma_fixed is not None and not 0 <= self.gamma_fixed < 1:
            raise ConfigError(f"gamma_fixed must lie in [0, 1), got {self.gamma_fixed}")

    @property
    def tail(self):
        """Bound on the truncation residual, C_x rho^(F+1)."""
        return self.C_x * self.rho ** (self.F + 1)

    @property
    def solver_settings(self):
        return SolverSettings(tol=self.tol, max_iters=self.max_iters)


@dataclass(frozen=True, eq=False)
class FIRResponse:
    phi_x: np.ndarray
    phi_u: np.ndarray
    V: np.ndarray
    gamma: float = 0.0
    eps_A: float = 0.0
    eps_B: float = 0.0
    objective: float = float('nan')

    @property
    def F(self):
        return self.phi_x.shape[0]

    @property
    def n(self):
        return self.phi_x.shape[1]

    @property
    def p(self):
        return self.phi_u.shape[1]

    def taps(self):
        """Stacked taps [Phi_x(k); Phi_u(k)] for k = 0..F (tap 0 is zero)."""
        stacked = np.concatenate([self.phi_x, self.phi_u], axis=1)
        return np.concatenate([np.zeros((1,) + stacked.shape[1:]), stacked])

    def h2_cost(self, Q, R):
        Qh, Rh = psd_sqrt(Q), psd_sqrt(R)
        total = sum(np.sum((Qh @ X) ** 2) for X in self.phi_x) + sum(np.sum((Rh @ U) ** 2) for U in self.phi_u)
        return float(np.sqrt(total))

    def subspace_residual(self, A_hat, B_hat):
        worst = np.max(np.abs(self.phi_x[0] - np.eye(self.n)))
        for k in range(self.F - 1):
            worst = max(worst, np.max(np.abs(self.phi_x[k + 1] - A_hat @ self.phi_x[k] - B_hat @ self.phi_u[k])))
        return float(max(worst, np.max(np.abs(self.V - A_hat @ self.phi_x[-1] - B_hat @ self.phi_u[-1]))))

    def to_dict(self):
        return {
            'F': self.F,
            'n': self.n,
            'p': self.p,
            'gamma': self.gamma,
            'eps_A': self.eps_A,
            'eps_B': self.eps_B,
            'objective': self.objective,
            'phi_x': [X.tolist() for X in self.phi_x],
            'phi_u': [U.tolist() for U in self.phi_u],
            'V': self.V.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        n, p = int(data['n']), int(data['p'])
        return cls(
            phi_x=np.asarray(data['phi_x'], dtype=float).reshape(-1, n, n),
            phi_u=np.asarray(data['phi_u'], dtype=float).reshape(-1, p, n),
            V=np.asarray(data['V'], dtype=float).reshape(n, n),
            gamma=float(data['gamma']),
            eps_A=float(data.get('eps_A', 0.0)),
            eps_B=float(data.get('eps_B', 0.0)),
            objective=float(data.get('objective', float('nan'))),
        )


@dataclass(frozen=True, eq=False)
class RealizedController(StateSpaceController):
    """State-space form of u = Phi_u Phi_x^-1 x, driven by disturbance estimates."""

    response: Optional[FIRResponse] = None

    def describe(self):
        info = {'kind': 'fir', 'order': self.order}
        if self.response is not None:
            info.update(F=self.response.F, gamma=self.response.gamma)
        return info


@dataclass
class GammaResult:
    gamma: float
    value: float
    payload: object = None
    evaluations: list = field(default_factory=list)


def psd_sqrt(M):
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    return (U * np.sqrt(np.maximum(w, 0.0))) @ U.T


def hinf_norm(taps, grid=4096):
    """Largest singular value of sum_k H_k z^-k over a unit-circle grid."""
    taps = np.asarray(taps, dtype=float)
    if taps.size == 0:
        return 0.0
    freq = np.fft.fft(taps, n=max(grid, taps.shape[0]), axis=0)
    return float(np.max(np.linalg.svd(freq, compute_uv=False)[..., 0]))


def l1_norm(taps):
    """l_inf to l_inf gain of an FIR map: max absolute row sum of the stacked taps."""
    taps = np.asarray(taps, dtype=float)
    if taps.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(taps), axis=(0, 2))))


def l1_norm_constraint(builder, taps, bound):
    """Adds ||sum_k M_k z^-k||_L1 <= bound via elementwise magnitude bounds."""
    row_sums = None
    for tap in taps:
        tap = Expr.wrap(tap)
        mag = builder.variable(*tap.shape)
        builder.nonneg(mag - tap)
        builder.nonneg(mag + tap)
        sums = mag @ np.ones((tap.shape[1], 1))
        row_sums = sums if row_sums is None else row_sums + sums
    builder.nonneg(bound - row_sums)


def robust_scales(eps_A, eps_B, cfg):
    """Weights on Phi_x and Phi_u inside the Hinf margin, including 1 / (1 - C_x rho^(F+1))."""
    if eps_A == 0 and eps_B == 0:
        return 0.0, 0.0
    alpha = 1.0 if eps_B == 0 else 0.0 if eps_A == 0 else cfg.alpha
    denom = 1.0 - cfg.tail
    scale_x = eps_A / math.sqrt(alpha) / denom if eps_A else 0.0
    scale_u = eps_B / math.sqrt(1.0 - alpha) / denom if eps_B else 0.0
    return scale_x, scale_u


def _accepted(sol, tol):
    if sol.status == 'optimal':
        return True
    if sol.status == 'max_iters' and max(sol.primal_residual, sol.dual_residual, sol.gap) <= INACCURATE_FACTOR * tol:
        logger.warning(f"Using an inaccurate conic solution (residuals {sol.primal_residual:.1e}, "
                       f"{sol.dual_residual:.1e}, gap {sol.gap:.1e})")
        return True
    return False


class _ResponseProgram:
    """The FIR synthesis program on a model (A_hat, B_hat), built once per estimate.

    With a robustness margin, the program carries a variable g standing for gamma squared and
    a first row ``g <= level``; changing gamma only rewrites that right-hand side.
    """

    def __init__(self, A_hat, B_hat, Q, R, cfg, scales=(0.0, 0.0), l1_caps=()):
        n, p = B_hat.shape
        F = cfg.F
        self.cfg = cfg
        builder = ConicBuilder()
        self.robust = any(scales)
        if self.robust:
            self.g = builder.variable(1)
            builder.nonneg(Expr.constant(1.0) - self.g)
        self.phi_x = [builder.variable(n, n) for _ in range(F)]
        self.phi_u = [builder.variable(p, n) for _ in range(F)]
        self.V = builder.variable(n, n)
        self.t = builder.variable(1)
        builder.equal(self.phi_x[0], np.eye(n))
        for k in range(F - 1):
            builder.equal(self.phi_x[k + 1], A_hat @ self.phi_x[k] + B_hat @ self.phi_u[k])
        builder.equal(self.V, A_hat @ self.phi_x[-1] + B_hat @ self.phi_u[-1])
        Qh, Rh = psd_sqrt(Q), psd_sqrt(R)
        builder.soc(self.t, Expr.vstack([Qh @ X for X in self.phi_x] + [Rh @ U for U in self.phi_u]))
        for k in range(1, F + 1):
            spectral_norm_constraint(builder, self.phi_x[k - 1], cfg.C_x * cfg.rho ** k)
            spectral_norm_constraint(builder, self.phi_u[k - 1], cfg.C_u * cfg.rho ** k)
        spectral_norm_constraint(builder, self.V, cfg.tail)
        if self.robust:
            scale_x, scale_u = scales
            taps = [np.zeros((n, n + p))]
            taps += [Expr.hstack([scale_x * X.T, scale_u * U.T]) for X, U in zip(self.phi_x, self.phi_u)]
            hinf_lmi_block(builder, taps, gamma_sq=self.g)
        for rows, cols, bound in l1_caps:
            l1_norm_constraint(builder, [X[rows, cols] for X in self.phi_x], bound)
        builder.minimize(self.t)
        self.problem = builder.build()
        self.solver = ConicSolver(self.problem, cfg.solver_settings)
        self._cost_c = self.problem.c.copy()
        self._warm = None
        logger.debug(f"Synthesis program: {self.problem.num_vars} variables, {self.problem.num_rows} rows")

    def _solve(self, level=None, c=None):
        b = None
        if self.robust:
            b = self.problem.b.copy()
            b[0] = level
        self.solver.update_data(b=b, c=c)
        sol = self.solver.solve(warm_start=self._warm)
        if not _accepted(sol, self.cfg.tol):
            return None
        self._warm = (sol.x, sol.y, sol.s)
        return sol

    def solve_cost(self, gamma=None):
        level = None if gamma is None else gamma ** 2
        return self._solve(level=level, c=self._cost_c)

    def minimal_gamma(self, upper):
        """Smallest certifiable gamma below ``upper``, or None when there is none."""
        c = np.zeros_like(self._cost_c)
        c[self.g.coef[0].nonzero()[0]] = 1.0
        sol = self._solve(level=upper ** 2, c=c)
        if sol is None:
            return None
        return math.sqrt(max(float(self.g.value(sol.x)[0, 0]), 0.0))

    def response(self, sol, A_hat, B_hat):
        """Reads the solution back, rebuilding Phi_x and V from Phi_u so the model equations hold exactly."""
        phi_u = np.array([U.value(sol.x) for U in self.phi_u])
        n = A_hat.shape[0]
        phi_x = np.empty((len(phi_u), n, n))
        phi_x[0] = np.eye(n)
        for k in range(len(phi_u) - 1):
            phi_x[k + 1] = A_hat @ phi_x[k] + B_hat @ phi_u[k]
        V = A_hat @ phi_x[-1] + B_hat @ phi_u[-1]
        return phi_x, phi_u, V


def _evaluate(inner, gamma):
    result = inner(gamma)
    if result is None:
        return float('inf'), None
    value, payload = result if isinstance(result, tuple) else (result, None)
    return value / (1.0 - gamma), payload


def gamma_search(inner_solve: Callable, points=20, upper=0.995, refine_iters=12):
    """Minimizes inner(gamma) / (1 - gamma) over [0, upper].

    ``inner_solve`` returns None when gamma is infeasible, otherwise a value or a
    (value, payload) pair. A coarse grid is refined by golden-section search around its best point.
    """
    grid = np.linspace(0.0, upper, points)
    evaluations = []
    best = GammaResult(float('nan'), float('inf'))

    def visit(gamma):
        nonlocal best
        value, payload = _evaluate(inner_solve, gamma)
        evaluations.append((float(gamma), value))
        if value < best.value:
            best = GammaResult(float(gamma), value, payload)
        return value

    values = [visit(gamma) for gamma in grid]
    if not np.isfinite(best.value):
        raise SynthesisInfeasible(f"no gamma in [0, {upper}] admits a solution")
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
    x1, x2 = hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo)
    f1, f2 = visit(x1), visit(x2)
    for _ in range(refine_iters):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = visit(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = visit(x2)
    best.evaluations = evaluations
    return best


def _resolve_eps(est, cfg):
    eps_A = est.eps_A if cfg.eps_A is None else cfg.eps_A
    eps_B = est.eps_B if cfg.eps_B is None else cfg.eps_B
    if eps_A < 0 or eps_B < 0:
        raise ConfigError("model-error radii must be nonnegative")
    return float(eps_A), float(eps_B)


def synthesize_robust(est, cfg, Q, R):
    """Robust FIR synthesis on the estimate; returns the response and its objective.

    The objective is the H2 cost of the response divided by (1 - gamma).
    """
    A_hat, B_hat = est.A_hat, est.B_hat
    eps_A, eps_B = _resolve_eps(est, cfg)
    scales = robust_scales(eps_A, eps_B, cfg)
    # Phi_x(1) = I forces ||scale_x Phi_x||_Hinf >= scale_x, so smaller gammas are skipped.
    screen = scales[0]
    if screen >= cfg.gamma_max:
        raise SynthesisInfeasible(f"model error {eps_A:.4g} leaves no certifiable gamma below {cfg.gamma_max}")
    program = _ResponseProgram(A_hat, B_hat, Q, R, cfg, scales)

    def inner(gamma):
        if program.robust and gamma < lower:
            return None
        sol = program.solve_cost(gamma if program.robust else None)
        if sol is None:
            return None
        phi_x, phi_u, V = program.response(sol, A_hat, B_hat)
        partial = FIRResponse(phi_x, phi_u, V, gamma, eps_A, eps_B)
        return partial.h2_cost(Q, R), partial

    if not program.robust:
        lower = 0.0
        found = inner(None)
        if found is None:
            raise SynthesisInfeasible("the nominal FIR program has no solution")
        value, partial = found
        result = GammaResult(0.0, value, partial)
    elif cfg.gamma_fixed is not None:
        lower = screen
        value, partial = _evaluate(inner, cfg.gamma_fixed)
        if partial is None:
            raise SynthesisInfeasible(f"gamma = {cfg.gamma_fixed} is not certifiable")
        result = GammaResult(cfg.gamma_fixed, value, partial)
    else:
        minimal = program.minimal_gamma(cfg.gamma_max)
        if minimal is None:
            raise SynthesisInfeasible(f"no response certifies gamma below {cfg.gamma_max}")
        lower = max(screen, minimal - 1e-4)
        result = gamma_search(inner, cfg.gamma_points, cfg.gamma_max, cfg.refine_iters)
    partial = result.payload
    gamma = result.gamma
    objective = partial.h2_cost(Q, R) / (1.0 - gamma)
    resp = FIRResponse(partial.phi_x, partial.phi_u, partial.V, gamma, eps_A, eps_B, objective)
    logger.debug(f"Synthesized F={cfg.F} response with gamma={gamma:.4f}, objective={objective:.4f}")
    return resp, objective


def constrained_gamma(cfg):
    return CONSTRAINED_GAMMA if cfg.gamma_fixed is None else cfg.gamma_fixed


def synthesize_constrained(est_Ad, known, cfg, a, b, Q=None, R=None, constrained=True):
    """Synthesis for a known plant driven by disturbances d+ = A_d d + w with A_d estimated.

    The augmented state is z = [x; d]. ``est_Ad.eps_A`` is an l_inf-induced error bound on
    A_d. With ``constrained`` the response from w to x obeys the L1 cap (a / b)(1 - gamma),
    which keeps ||x||_inf <= a whenever ||w||_inf <= b.
    """
    if a <= 0 or b <= 0:
        raise ConfigError("state and noise caps must be positive")
    gamma = constrained_gamma(cfg)
    A_z, B_z = augmented_model(known.A, known.B, est_Ad.A_hat)
    n = known.n
    Q = known.Q if Q is None else Q
    R = known.R if R is None else R
    Q_z = np.zeros((2 * n, 2 * n))
    Q_z[:n, :n] = Q
    caps = []
    eps = float(est_Ad.eps_A)
    if eps > 0:
        caps.append((slice(n, 2 * n), slice(n, 2 * n), gamma / eps))
    if constrained:
        caps.append((slice(0, n), slice(n, 2 * n), a / b * (1.0 - gamma)))
    program = _ResponseProgram(A_z, B_z, Q_z, R, cfg, l1_caps=caps)
    sol = program.solve_cost()
    if sol is None:
        raise SynthesisInfeasible(f"L1 cap {a / b * (1.0 - gamma):.4g} on the disturbance response is unattainable")
    phi_x, phi_u, V = program.response(sol, A_z, B_z)
    partial = FIRResponse(phi_x, phi_u, V, gamma, eps, 0.0)
    return FIRResponse(phi_x, phi_u, V, gamma, eps, 0.0, partial.h2_cost(Q_z, R) / (1.0 - gamma))


def augmented_model(A, B, A_d):
    n, p = B.shape
    A_z = np.block([[A, np.eye(n)], [np.zeros((n, n)), A_d]])
    B_z = np.vstack([B, np.zeros((n, p))])
    return A_z, B_z


def realize_controller(resp):
    """State-space realization of K = Phi_u Phi_x^-1 with the truncation residual as internal model.

    The state stacks the last F disturbance estimates delta, where
    delta_k = x_k - sum_{t=2..F} Phi_x(t) delta_{k-t+1} - V delta_{k-F} and
    u_k = sum_{t=1..F} Phi_u(t) delta_{k-t+1}. On the model the closed loop is then
    delta = (zI - A V z^-F)^-1 w. A zero V drops the oldest estimate from the state.
    """
    n, p = resp.n, resp.p
    D_K = resp.phi_u[0].copy()
    taps_x, taps_u = list(resp.phi_x[1:]), list(resp.phi_u[1:])
    if np.any(resp.V):
        taps_x.append(resp.V)
        taps_u.append(np.zeros((p, n)))
    if not taps_x:
        return RealizedController(np.zeros((0, 0)), np.zeros((0, n)), np.zeros((p, 0)), D_K, response=resp)
    q = n * len(taps_x)
    C_x = np.hstack(taps_x)
    C_u = np.hstack(taps_u)
    shift = np.eye(q, k=-n)
    E = np.zeros((q, n))
    E[:n] = np.eye(n)
    return RealizedController(A_K=shift - E @ C_x, B_K=E, C_K=C_u - D_K @ C_x, D_K=D_K, response=resp)


def validate_realization(resp, est):
    """Replays unit impulses through the realized controller on the model; returns the worst deviation
    from the stored response, including x_{F+1} against V."""
    controller = realize_controller(resp)
    A_hat, B_hat = est.A_hat, est.B_hat
    n, F = resp.n, resp.F
    worst = 0.0
    for j in range(n):
        xi = controller.initial_state()
        x = np.zeros(n)
        _, xi = controller.act(xi, x)
        x = np.eye(n)[j]
        for k in range(1, F + 1):
            u, xi = controller.act(xi, x)
            worst = max(worst, np.max(np.abs(x - resp.phi_x[k - 1][:, j])),
                        np.max(np.abs(u - resp.phi_u[k - 1][:, j])))
            x = A_hat @ x + B_hat @ u
        worst = max(worst, np.max(np.abs(x - resp.V[:, j])))
    return float(worst)


def implied_cost_gap(sys, controller, J_star=None):
    """Returns (J(K) / J*, C_J) with J(K) / J* = (1 + C_J)^2 on the true system."""
    J_star = dare_solve(sys).J_star if J_star is None else J_star
    ratio = infinite_horizon_cost(sys, controller) / J_star
    return ratio, math.sqrt(ratio) - 1.0 if np.isfinite(ratio) else float('inf')


def robustness_margin(resp, cfg):
    """Grid estimate of the scaled Hinf norm that gamma certifies."""
    scale_x, scale_u = robust_scales(resp.eps_A, resp.eps_B, cfg)
    taps = resp.taps()
    n = resp.n
    weighted = np.concatenate([scale_x * taps[:, :n], scale_u * taps[:, n:]], axis=1)
    return hinf_norm(weighted)
