"""Conic programs: a small dense modeling layer and a sparse operator-splitting solver.

Problems take the standard form

    minimize    c'x
    subject to  A x + s = b,   s in K

with K a product of zero, nonnegative, second-order and PSD cones. PSD blocks are stored as
the scaled lower triangle (off-diagonal entries times sqrt(2)) so the vector inner product
matches the trace inner product. The solver runs ADMM on the homogeneous self-dual embedding
with Ruiz equilibration, normalized b and c, over-relaxation and infeasibility certificates.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

CONE_KINDS = ('zero', 'nonneg', 'soc', 'psd')
STATUSES = ('optimal', 'infeasible', 'unbounded', 'max_iters')
DENSE_LIMIT = 5000
SQRT2 = np.sqrt(2.0)
MIN_SCALE = 1e-4


@dataclass(frozen=True)
class Cone:
    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in CONE_KINDS:
            raise ValueError(f"Unknown cone kind: {self.kind}")
        if self.dim < 1:
            raise ValueError(f"cone dimension must be positive, got {self.dim}")

    @property
    def rows(self):
        if self.kind == 'psd':
            return self.dim * (self.dim + 1) // 2
        return self.dim


def psd_rows(d):
    return d * (d + 1) // 2


def svec(X):
    """Scaled lower triangle of a symmetric matrix (or a stack of them)."""
    X = np.asarray(X, dtype=float)
    d = X.shape[-1]
    il, jl = np.tril_indices(d)
    scale = np.where(il == jl, 1.0, SQRT2)
    return X[..., il, jl] * scale


def smat(v, d):
    v = np.asarray(v, dtype=float)
    il, jl = np.tril_indices(d)
    scaled = v * np.where(il == jl, 1.0, 1.0 / SQRT2)
    X = np.zeros(v.shape[:-1] + (d, d))
    X[..., il, jl] = scaled
    X[..., jl, il] = scaled
    return X


@dataclass(eq=False)
class ConicProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: tuple
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(self.b.size, self.c.size)
        self.cones = tuple(self.cones)
        rows = sum(cone.rows for cone in self.cones)
        if rows != self.b.size:
            raise ValueError(f"cones cover {rows} rows but the problem has {self.b.size}")
        if self.c.size > DENSE_LIMIT:
            raise ConfigError(f"{self.c.size} variables exceed the dense solver limit of {DENSE_LIMIT}")

    @property
    def num_vars(self):
        return self.c.size

    @property
    def num_rows(self):
        return self.b.size

    def cone_slices(self):
        start = 0
        for cone in self.cones:
            yield cone, slice(start, start + cone.rows)
            start += cone.rows

    def dump(self, path):
        """Writes the problem in the sparse-triplet text format read by :meth:`load`."""
        lines = [f"conic {self.num_vars} {self.num_rows} {self.offset!r}"]
        lines += [f"cone {cone.kind} {cone.dim}" for cone in self.cones]
        lines += [f"c {j} {self.c[j]!r}" for j in np.flatnonzero(self.c)]
        rows, cols = np.nonzero(self.A)
        lines += [f"A {i} {j} {self.A[i, j]!r}" for i, j in zip(rows, cols)]
        lines += [f"b {i} {self.b[i]!r}" for i in np.flatnonzero(self.b)]
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write('\n'.join(lines) + '\n')

    @classmethod
    def load(cls, path):
        with open(path, encoding='utf-8') as handle:
            rows = [line.split() for line in handle if line.strip() and not line.startswith('#')]
        if not rows or rows[0][0] != 'conic':
            raise ValueError(f"{path} is not a conic problem dump")
        N, M, offset = int(rows[0][1]), int(rows[0][2]), float(rows[0][3])
        c, A, b, cones = np.zeros(N), np.zeros((M, N)), np.zeros(M), []
        for row in rows[1:]:
            tag = row[0]
            if tag == 'cone':
                cones.append(Cone(row[1], int(row[2])))
            elif tag == 'c':
                c[int(row[1])] = float(row[2])
            elif tag == 'A':
                A[int(row[1]), int(row[2])] = float(row[3])
            elif tag == 'b':
                b[int(row[1])] = float(row[2])
            else:
                raise ValueError(f"Unknown record '{tag}' in {path}")
        return cls(c, A, b, cones, offset)


@dataclass(eq=False)
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    objective: float = float('nan')
    dual_objective: float = float('nan')

    @property
    def primal(self):
        return self.x

    @property
    def dual(self):
        return self.y

    @property
    def optimal(self):
        return self.status == 'optimal'


class _ConeProjector:
    """Projects onto the dual cone K* (zero rows are free, the rest are self-dual)."""

    def __init__(self, cones):
        nonneg, self.soc, psd_groups = [], [], {}
        start = 0
        for cone in cones:
            stop = start + cone.rows
            if cone.kind == 'nonneg':
                nonneg.append(np.arange(start, stop))
            elif cone.kind == 'soc':
                self.soc.append((start, stop))
            elif cone.kind == 'psd':
                psd_groups.setdefault(cone.dim, []).append(np.arange(start, stop))
            start = stop
        self.nonneg = np.concatenate(nonneg) if nonneg else np.zeros(0, dtype=int)
        self.psd = {d: np.vstack(idx) for d, idx in psd_groups.items()}

    def __call__(self, y):
        y = y.copy()
        if self.nonneg.size:
            y[self.nonneg] = np.maximum(y[self.nonneg], 0.0)
        for start, stop in self.soc:
            y[start:stop] = project_soc(y[start:stop])
        for d, idx in self.psd.items():
            y[idx] = project_psd(y[idx], d)
        return y


def project_soc(v):
    t, z = v[0], v[1:]
    norm = np.linalg.norm(z)
    if norm <= t:
        return v.copy()
    if norm <= -t:
        return np.zeros_like(v)
    alpha = 0.5 * (t + norm)
    return np.concatenate([[alpha], alpha * z / norm])


def project_psd(v, d):
    """Clips negative eigenvalues of svec-stored matrices; ``v`` may be a stack."""
    X = smat(v, d)
    w, U = np.linalg.eigh(X)
    X = (U * np.maximum(w, 0.0)[..., None, :]) @ np.swapaxes(U, -1, -2)
    return svec(X)


def _block_slices(cones):
    start, blocks = 0, []
    for cone in cones:
        stop = start + cone.rows
        if cone.kind in ('soc', 'psd'):
            blocks.append(slice(start, stop))
        start = stop
    return blocks


def _equilibrate(A, cones, iters=25, lo=1e-4, hi=1e4):
    """Ruiz scaling D A E; rows of an SOC or PSD block share one scale so cones are preserved."""
    M, N = A.shape
    D, E = np.ones(M), np.ones(N)
    if M == 0 or N == 0:
        return D, E
    blocks = _block_slices(cones)
    scaled = A.copy()
    for _ in range(iters):
        row = np.max(np.abs(scaled), axis=1)
        col = np.max(np.abs(scaled), axis=0)
        for block in blocks:
            row[block] = np.mean(row[block])
        row = np.where(row > 1e-12, row, 1.0)
        col = np.where(col > 1e-12, col, 1.0)
        D = np.clip(D / np.sqrt(row), lo, hi)
        E = np.clip(E / np.sqrt(col), lo, hi)
        scaled = D[:, None] * A * E[None, :]
    return D, E


@dataclass
class SolverSettings:
    tol: float = 1e-7
    max_iters: int = 200_000
    alpha: float = 1.5
    # weight of the x block in the linear step; small values favor progress on the constraints
    rho_x: float = 1e-3
    scale: float = 1.0
    infeas_tol: float = 1e-7
    infeas_patience: int = 100
    check_every: int = 10


class ConicSolver:
    """ADMM on the homogeneous self-dual embedding of a ConicProblem.

    The constraint matrix is held sparse and ``rho_x I + A'A`` is factored once per instance,
    so every iteration costs two sparse triangular solves and a few sparse products. The
    instance keeps its factorization across :meth:`update_data`, so repeated solves of the same
    problem (for example along a parameter grid) can warm start from the previous answer.
    """

    def __init__(self, prob, settings=None):
        self.prob = prob
        self.settings = settings or SolverSettings()
        self.D, self.E = _equilibrate(prob.A, prob.cones)
        self._A_orig = scipy.sparse.csr_matrix(prob.A)
        self.A = scipy.sparse.csr_matrix(self.D[:, None] * prob.A * self.E[None, :])
        self.AT = self.A.T.tocsr()
        self.project = _ConeProjector(prob.cones)
        N = prob.num_vars
        kkt = scipy.sparse.csc_matrix(self.settings.rho_x * scipy.sparse.identity(N) + self.AT @ self.A)
        self._lu = scipy.sparse.linalg.splu(kkt)
        norms = scipy.sparse.linalg.norm(self.A, axis=1), scipy.sparse.linalg.norm(self.A, axis=0)
        self._row_norm = float(np.mean(norms[0])) if norms[0].size else 1.0
        self._col_norm = float(np.mean(norms[1])) if norms[1].size else 1.0
        self._refresh()

    def _refresh(self):
        """Rescales b and c to unit-order norms and recomputes the embedding column."""
        prob = self.prob
        scale = self.settings.scale
        b, c = self.D * prob.b, self.E * prob.c
        nb, nc = np.linalg.norm(b), np.linalg.norm(c)
        self.sc_b = scale * (self._col_norm / nb if nb > MIN_SCALE else 1.0)
        self.sc_c = scale * (self._row_norm / nc if nc > MIN_SCALE else 1.0)
        self.b = self.sc_b * b
        self.c = self.sc_c * c
        self._h = np.concatenate([self.c, self.b])
        self._g = self._solve_block(self._h)
        self._g_denom = 1.0 + self._h @ self._g
        self._bnorm = np.linalg.norm(prob.b)
        self._cnorm = np.linalg.norm(prob.c)

    def update_data(self, b=None, c=None):
        """Swaps in a new right-hand side or objective, keeping the scaling and factorization."""
        prob = self.prob
        b = prob.b if b is None else np.asarray(b, dtype=float)
        c = prob.c if c is None else np.asarray(c, dtype=float)
        self.prob = ConicProblem(c, prob.A, b, prob.cones, prob.offset)
        self._refresh()

    def _solve_block(self, w):
        """Solves [[rho_x I, A'], [-A, I]] z = w."""
        N = self.prob.num_vars
        wx, wy = w[:N], w[N:]
        zx = self._lu.solve(wx - self.AT @ wy)
        return np.concatenate([zx, wy + self.A @ zx])

    def _solve_linear(self, w):
        rhs = w[:-1].copy()
        rhs[:self.prob.num_vars] *= self.settings.rho_x
        z = self._solve_block(rhs)
        tau = (w[-1] + self._h @ z) / self._g_denom
        return np.concatenate([z - tau * self._g, [tau]])

    def _project(self, u):
        N = self.prob.num_vars
        out = u.copy()
        out[N:-1] = self.project(u[N:-1])
        out[-1] = max(u[-1], 0.0)
        return out

    def _initial_point(self, warm_start):
        N, M = self.prob.num_vars, self.prob.num_rows
        u = np.zeros(N + M + 1)
        v = np.zeros(N + M + 1)
        u[-1] = 1.0
        if warm_start is not None:
            x, y, s = (np.asarray(part, dtype=float) for part in warm_start)
            finite = all(np.all(np.isfinite(part)) for part in (x, y, s))
            if x.shape == (N,) and y.shape == (M,) and s.shape == (M,) and finite:
                u[:N] = self.sc_b * x / self.E
                u[N:-1] = self.sc_c * y / self.D
                v[N:-1] = self.sc_b * s * self.D
                return u, v
            logger.debug("Ignoring a warm start whose shape does not match the problem")
        v[-1] = 1.0
        return u, v

    def _unscale(self, u, v, tau):
        N = self.prob.num_vars
        x = self.E * u[:N] / (tau * self.sc_b)
        y = self.D * u[N:-1] / (tau * self.sc_c)
        s = v[N:-1] / self.D / (tau * self.sc_b)
        return x, y, s

    def _residuals(self, x, y, s):
        prob = self.prob
        A = self._A_orig
        pres = np.linalg.norm(A @ x + s - prob.b) / (1.0 + self._bnorm)
        dres = np.linalg.norm(A.T @ y + prob.c) / (1.0 + self._cnorm)
        cx, by = prob.c @ x, prob.b @ y
        gap = abs(cx + by) / (1.0 + abs(cx) + abs(by))
        return pres, dres, gap

    def solve(self, tol=None, max_iters=None, warm_start=None):
        st = self.settings
        tol = st.tol if tol is None else tol
        max_iters = st.max_iters if max_iters is None else max_iters
        prob = self.prob
        A = self._A_orig
        u, v = self._initial_point(warm_start)
        alpha = st.alpha
        infeasible_since = unbounded_since = None
        pres = dres = gap = float('inf')
        it = 0
        for it in range(1, max_iters + 1):
            ut = self._solve_linear(u + v)
            ut = alpha * ut + (1.0 - alpha) * u
            u_next = self._project(ut - v)
            v = v - ut + u_next
            u = u_next
            if it % st.check_every and it != max_iters:
                continue

            tau = u[-1]
            if tau > 0:
                xs, ys, ss = self._unscale(u, v, tau)
                pres, dres, gap = self._residuals(xs, ys, ss)
                if max(pres, dres, gap) <= tol:
                    logger.debug(f"Conic solve converged in {it} iterations")
                    return ConicSolution(xs, ys, ss, 'optimal', pres, dres, gap, it,
                                         float(prob.c @ xs) + prob.offset,
                                         float(-prob.b @ ys) + prob.offset)

            # certificates are rays, so only directions matter here
            x, y, s = self._unscale(u, v, 1.0)
            by = prob.b @ y
            if by < 0 and np.linalg.norm(A.T @ y) / -by < st.infeas_tol:
                infeasible_since = it if infeasible_since is None else infeasible_since
                if it - infeasible_since >= st.infeas_patience:
                    logger.debug(f"Primal infeasibility certificate after {it} iterations")
                    return ConicSolution(np.full(prob.num_vars, np.nan), y / -by, np.full(prob.num_rows, np.nan),
                                         'infeasible', pres, dres, gap, it, float('inf'))
            else:
                infeasible_since = None
            cx = prob.c @ x
            if cx < 0 and np.linalg.norm(A @ x + s) / -cx < st.infeas_tol:
                unbounded_since = it if unbounded_since is None else unbounded_since
                if it - unbounded_since >= st.infeas_patience:
                    logger.debug(f"Dual infeasibility certificate after {it} iterations")
                    return ConicSolution(x / -cx, np.full(prob.num_rows, np.nan), s / -cx,
                                         'unbounded', pres, dres, gap, it, float('-inf'))
            else:
                unbounded_since = None

        tau = u[-1]
        x, y, s = self._unscale(u, v, tau if tau > 0 else 1.0)
        logger.debug(f"Conic solve stopped at {max_iters} iterations "
                     f"(pres {pres:.2e}, dres {dres:.2e}, gap {gap:.2e})")
        return ConicSolution(x, y, s, 'max_iters', pres, dres, gap, it,
                             float(prob.c @ x) + prob.offset)


def solve_conic(prob, tol=1e-7, max_iters=200_000, warm_start=None, settings=None):
    settings = settings or SolverSettings(tol=tol, max_iters=max_iters)
    return ConicSolver(prob, settings).solve(tol=tol, max_iters=max_iters, warm_start=warm_start)


class Expr:
    """Dense affine expression: a matrix of shape ``shape`` equal to coef @ x + const (row-major)."""

    # numpy defers binary operators to the reflected methods below
    __array_ufunc__ = None

    def __init__(self, shape, coef, const):
        self.shape = tuple(shape)
        self.coef = coef
        self.const = const

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    @property
    def width(self):
        return self.coef.shape[1]

    @staticmethod
    def constant(value):
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return Expr(value.shape, np.zeros((value.size, 0)), value.ravel().copy())

    @staticmethod
    def wrap(value):
        return value if isinstance(value, Expr) else Expr.constant(value)

    def _padded(self, width):
        if self.width == width:
            return self.coef
        return np.hstack([self.coef, np.zeros((self.coef.shape[0], width - self.width))])

    def _combine(self, other, sign):
        other = Expr.wrap(other)
        if other.shape == (1, 1) and self.shape != (1, 1) and not other.width:
            other = Expr.constant(np.full(self.shape, other.const[0]))
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch: {self.shape} vs {other.shape}")
        width = max(self.width, other.width)
        return Expr(self.shape, self._padded(width) + sign * other._padded(width),
                    self.const + sign * other.const)

    def __add__(self, other):
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return Expr(self.shape, -self.coef, -self.const)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            raise TypeError("expressions only support scalar multiplication")
        return Expr(self.shape, scalar * self.coef, scalar * self.const)

    __rmul__ = __mul__

    def _cube(self):
        r, c = self.shape
        return self.coef.reshape(r, c, -1), self.const.reshape(r, c)

    def __matmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        coef, const = self._cube()
        rows, cols = self.shape[0], M.shape[1]
        return Expr((rows, cols), np.einsum('rcn,ck->rkn', coef, M).reshape(rows * cols, -1),
                    (const @ M).ravel())

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        coef, const = self._cube()
        rows, cols = M.shape[0], self.shape[1]
        return Expr((rows, cols), np.einsum('kr,rcn->kcn', M, coef).reshape(rows * cols, -1),
                    (M @ const).ravel())

    @property
    def T(self):
        coef, const = self._cube()
        r, c = self.shape
        return Expr((c, r), np.ascontiguousarray(coef.transpose(1, 0, 2)).reshape(r * c, -1),
                    const.T.ravel())

    def __getitem__(self, index):
        coef, const = self._cube()
        sub = const[index]
        if sub.ndim != 2:
            raise IndexError("expression indexing must keep both dimensions; use slices")
        return Expr(sub.shape, coef[index].reshape(sub.size, -1), sub.ravel().copy())

    def vec(self):
        return Expr((self.size, 1), self.coef, self.const)

    def entries(self, flat_indices):
        """Column expression of the given row-major entries."""
        return Expr((len(flat_indices), 1), self.coef[flat_indices], self.const[flat_indices])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return (self.coef @ x[:self.width] + self.const).reshape(self.shape)

    @staticmethod
    def vstack(items):
        items = [Expr.wrap(item) for item in items]
        width = max(item.width for item in items)
        cols = items[0].shape[1]
        if any(item.shape[1] != cols for item in items):
            raise ValueError("vstack needs equal column counts")
        return Expr((sum(item.shape[0] for item in items), cols),
                    np.vstack([item._padded(width) for item in items]),
                    np.concatenate([item.const for item in items]))

    @staticmethod
    def hstack(items):
        return Expr.vstack([Expr.wrap(item).T for item in items]).T

    @staticmethod
    def block(rows):
        return Expr.vstack([Expr.hstack(row) for row in rows])

    def times_identity(self, d):
        """A scalar expression times the d x d identity."""
        if self.shape != (1, 1):
            raise ValueError("times_identity needs a scalar expression")
        coef = np.zeros((d * d, self.width))
        const = np.zeros(d * d)
        diag = np.arange(d) * (d + 1)
        coef[diag] = self.coef[0]
        const[diag] = self.const[0]
        return Expr((d, d), coef, const)


@dataclass
class ConicBuilder:
    """Collects variables and constraints and emits a ConicProblem."""

    num_vars: int = 0
    _rows: list = field(default_factory=list)
    _objective: Optional[Expr] = None

    def variable(self, rows, cols=1):
        size = rows * cols
        coef = np.zeros((size, self.num_vars + size))
        coef[:, self.num_vars:] = np.eye(size)
        self.num_vars += size
        return Expr((rows, cols), coef, np.zeros(size))

    def symmetric(self, d):
        """A d x d symmetric matrix variable with d(d+1)/2 free entries."""
        k = psd_rows(d)
        il, jl = np.tril_indices(d)
        coef = np.zeros((d * d, self.num_vars + k))
        coef[il * d + jl, self.num_vars + np.arange(k)] = 1.0
        coef[jl * d + il, self.num_vars + np.arange(k)] = 1.0
        self.num_vars += k
        return Expr((d, d), coef, np.zeros(d * d))

    def _add_rows(self, expr, cone):
        self._rows.append((-expr.coef, expr.const.copy(), cone))

    def equal(self, lhs, rhs=0.0):
        expr = Expr.wrap(lhs) - rhs
        if expr.size:
            self._add_rows(expr.vec(), Cone('zero', expr.size))

    def nonneg(self, expr):
        expr = Expr.wrap(expr)
        if expr.size:
            self._add_rows(expr.vec(), Cone('nonneg', expr.size))

    def soc(self, t, z):
        """||z||_F <= t."""
        stacked = Expr.vstack([Expr.wrap(t).vec(), Expr.wrap(z).vec()])
        self._add_rows(stacked, Cone('soc', stacked.size))

    def psd(self, X):
        X = Expr.wrap(X)
        d = X.shape[0]
        if X.shape != (d, d):
            raise ValueError(f"PSD constraint needs a square expression, got {X.shape}")
        il, jl = np.tril_indices(d)
        scale = np.where(il == jl, 1.0, SQRT2)
        lower = il * d + jl
        upper = jl * d + il
        sym_coef = 0.5 * (X.coef[lower] + X.coef[upper]) * scale[:, None]
        sym_const = 0.5 * (X.const[lower] + X.const[upper]) * scale
        self._rows.append((-sym_coef, sym_const, Cone('psd', d)))

    def minimize(self, expr):
        expr = Expr.wrap(expr)
        if expr.shape != (1, 1):
            raise ValueError("the objective must be a scalar expression")
        self._objective = expr

    def build(self):
        N = self.num_vars
        c = np.zeros(N)
        offset = 0.0
        if self._objective is not None:
            c[:self._objective.width] = self._objective.coef[0]
            offset = float(self._objective.const[0])
        blocks, rhs, cones = [], [], []
        for coef, const, cone in self._rows:
            blocks.append(np.hstack([coef, np.zeros((coef.shape[0], N - coef.shape[1]))]))
            rhs.append(const)
            cones.append(cone)
        A = np.vstack(blocks) if blocks else np.zeros((0, N))
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        return ConicProblem(c, A, b, cones, offset)


def spectral_norm_constraint(builder, V, bound):
    """Adds [[cI, V], [V', cI]] >= 0, which holds iff ||V||_2 <= c."""
    V = Expr.wrap(V)
    r, k = V.shape
    if isinstance(bound, Expr):
        top, bottom = bound.times_identity(r), bound.times_identity(k)
    else:
        if bound < 0:
            raise ValueError(f"a norm bound must be nonnegative, got {bound}")
        top, bottom = bound * np.eye(r), bound * np.eye(k)
    builder.psd(Expr.block([[top, V], [V.T, bottom]]))


def hinf_lmi_block(builder, taps, gamma=None, gamma_sq=None):
    """Adds the LMI certifying ||sum_k H_k z^-k||_Hinf <= gamma for taps H_0..H_T.

    Exactly one of ``gamma`` (a number) or ``gamma_sq`` (a scalar expression standing for
    gamma squared) must be given. Returns the block-Toeplitz multiplier Q.
    """
    if (gamma is None) == (gamma_sq is None):
        raise ValueError("pass exactly one of gamma or gamma_sq")
    taps = [Expr.wrap(tap) for tap in taps]
    p, m = taps[0].shape
    T = len(taps) - 1
    Q = builder.symmetric(p * (T + 1))
    if gamma is not None:
        if gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {gamma}")
        level = gamma ** 2 * np.eye(p)
    else:
        level = gamma_sq.times_identity(p)

    def block(i, j):
        return Q[i * p:(i + 1) * p, j * p:(j + 1) * p]

    diag = block(0, 0)
    for t in range(1, T + 1):
        diag = diag + block(t, t)
    il, jl = np.tril_indices(p)
    builder.equal((diag - level).entries(il * p + jl))
    for k in range(1, T + 1):
        off = block(0, k)
        for t in range(1, T + 1 - k):
            off = off + block(t, t + k)
        builder.equal(off)
    H = Expr.vstack(taps)
    builder.psd(Expr.block([[Q, H], [H.T, np.eye(m)]]))
    return Q
