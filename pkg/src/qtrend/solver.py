"""Single-block multi-quantile trend filtering.

The block problem is

    minimize  sum_j [ rho_{tau_j}(y - theta_j) + lambda_j * ||D theta_j||_1 ]
              + <Theta - A, Omega> + gamma/2 ||Theta - A||_F^2      (optional)
    subject to theta_{i,1} <= ... <= theta_{i,J}   for every row i

with D the difference operator of order k + 1.

Two inner methods are available. The default ``"ipm"`` is a primal-dual
interior point method on the epigraph reformulation (see
:mod:`qtrend._ipm`); it reaches 1e-9 relative accuracy in a few dozen
banded factorisations. ``"admm"`` is the proximal splitting of
:func:`qtrend._kernels.admm`. ADMM on a piecewise-linear objective reaches
moderate accuracy quickly and high accuracy slowly, so uncoupled ADMM solves
are finished by an active-set polish: the exact zeros of the split variables
identify a face of the feasible polyhedron, the iterate is projected onto
that face, and the result is accepted once a bounded least-squares dual
certificate proves it optimal.
"""
from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import lsq_linear

from . import _ipm, _kernels
from .errors import ConvergenceError, DimensionError, FactorizationError
from .operators import DEFAULT_K, apply, build_diff

NONCROSS_SLACK = 1e-8
KNOT_TOL = 1e-6
CERT_TOL = 1e-8
# dense dual certificates are cheap up to about this many trend entries
CERT_AUTO_SIZE = 400


def _want_certificate(mode, n, J):
    if mode == "auto":
        return n * J <= CERT_AUTO_SIZE
    return bool(mode)


@dataclass(frozen=True)
class QuantileSpec:
    taus: tuple
    lambdas: tuple
    k: int = DEFAULT_K

    def __post_init__(self):
        taus = tuple(float(t) for t in np.atleast_1d(self.taus))
        lams = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if len(taus) == 0:
            raise ValueError("at least one quantile level is required")
        if lams.size == 1 and len(taus) > 1:
            lams = np.repeat(lams, len(taus))
        if lams.size != len(taus):
            raise DimensionError(f"{len(taus)} levels but {lams.size} penalties")
        if any(not 0.0 < t < 1.0 for t in taus):
            raise ValueError(f"quantile levels must lie in (0, 1): {taus}")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ValueError(f"quantile levels must be strictly increasing: {taus}")
        if not np.all(np.isfinite(lams)) or np.any(lams < 0):
            raise ValueError(f"penalties must be finite and >= 0: {lams.tolist()}")
        if int(self.k) < 0:
            raise ValueError("k must be >= 0")
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "lambdas", tuple(lams.tolist()))
        object.__setattr__(self, "k", int(self.k))

    @property
    def J(self):
        return len(self.taus)

    @property
    def order(self):
        return self.k + 1

    def with_lambdas(self, lambdas):
        return QuantileSpec(self.taus, lambdas, self.k)


@dataclass(frozen=True)
class WeightMask:
    """Per-observation 0/1 weights; zeros mark missing or held-out points."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1).copy()
        if not np.all((w == 0.0) | (w == 1.0)):
            raise ValueError("mask weights must be 0 or 1")
        if not np.any(w == 1.0):
            raise ValueError("mask must keep at least one observation")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def full(cls, n):
        return cls(np.ones(int(n)))

    @classmethod
    def from_missing(cls, y):
        return cls(np.isfinite(np.asarray(y, dtype=float)).astype(float))

    @property
    def n(self):
        return self.weights.shape[0]

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class CouplingTerm:
    """Proximity to a consensus block: <Theta - anchor, duals> + gamma/2 ||Theta - anchor||^2."""

    anchor: np.ndarray
    duals: np.ndarray
    gamma: float

    def __post_init__(self):
        a = np.asarray(self.anchor, dtype=float)
        d = np.asarray(self.duals, dtype=float)
        if a.shape != d.shape or a.ndim != 2:
            raise DimensionError(f"anchor {a.shape} and duals {d.shape} must be equal 2-D shapes")
        if not self.gamma > 0:
            raise ValueError("coupling gamma must be > 0")
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "duals", d)
        object.__setattr__(self, "gamma", float(self.gamma))


@dataclass(frozen=True)
class InnerControls:
    """Settings of the inner solver.

    ``method`` is ``"ipm"`` (default) or ``"admm"``. For the interior point
    method ``tol`` bounds the scaled primal, dual and gap residuals and
    ``ipm_max_iter`` caps the Newton steps; the remaining fields configure
    ADMM. ``split`` chooses how the penalty is split off: ``"tv"`` takes z = D^(k)
    theta and applies the exact total-variation prox, ``"diff"`` takes
    z = D^(k+1) theta and soft-thresholds it. Both solve the same problem;
    the TV split typically needs several times fewer iterations.
    """

    method: str = "ipm"
    tol: float = 1e-8
    max_iter: int = 10_000
    ipm_max_iter: int = 300
    penalty: float = 1.0
    adapt: bool = True
    adapt_until: int = 5_000
    alpha: float = 1.0
    split: str = "tv"
    polish: bool = True
    polish_start: int = 100
    strict: bool = True
    record_objective: bool = False
    certify: object = "auto"
    z_weight: object = "auto"

    def __post_init__(self):
        if self.method not in ("ipm", "admm"):
            raise ValueError(f"unknown inner method {self.method!r}")
        if self.split not in ("tv", "diff"):
            raise ValueError(f"unknown split {self.split!r}")
        if not self.tol > 0 or self.max_iter < 1 or not self.penalty > 0:
            raise ValueError("tol, max_iter and penalty must be positive")
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("relaxation alpha must lie in (0, 2)")


@dataclass
class FitResult:
    theta: np.ndarray
    inner_iterations: int
    objective: float
    knots: tuple
    converged: bool = True
    certified: bool = False
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    objective_trace: np.ndarray | None = None
    state: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th.ndim != 2:
            raise DimensionError("theta must be an n x J matrix")
        if th.shape[1] > 1:
            worst = float(np.max(th[:, :-1] - th[:, 1:]))
            if worst > NONCROSS_SLACK:
                raise AssertionError(f"quantile trends cross by {worst:.3g}")
        if not math.isfinite(self.objective):
            raise AssertionError("objective is not finite")
        self.theta = th


# --------------------------------------------------------------------------
# elementwise pieces

def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def check_loss(r, tau, mask=None):
    """Masked check loss sum_i w_i r_i (tau - 1(r_i < 0))."""
    _check_tau(tau)
    r = np.asarray(r, dtype=float)
    vals = r * (tau - (r < 0))
    if mask is not None:
        w = mask.weights if isinstance(mask, WeightMask) else np.asarray(mask, dtype=float)
        if w.shape != r.shape:
            raise DimensionError("mask and residual lengths differ")
        vals = np.where(w > 0, vals, 0.0)
    return float(np.sum(vals))


def prox_check(v, tau, c):
    """Proximal map of c * rho_tau, elementwise on scalars or arrays."""
    _check_tau(tau)
    if not c > 0:
        raise ValueError("c must be > 0")
    v = np.asarray(v, dtype=float)
    flat = np.ascontiguousarray(v.reshape(-1, 1))
    out = np.empty_like(flat)
    _kernels.prox_check(flat, np.array([tau]), np.ones(flat.shape[0]), float(c), out)
    out = out.reshape(v.shape)
    return float(out) if out.ndim == 0 else out


def soft_threshold(v, t):
    if t < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=float)
    flat = np.ascontiguousarray(v.reshape(-1, 1))
    out = np.empty_like(flat)
    _kernels.soft_threshold(flat, np.array([float(t)]), out)
    out = out.reshape(v.shape)
    return float(out) if out.ndim == 0 else out


def project_noncrossing(row):
    """Euclidean projection of a vector onto the nondecreasing cone (PAVA)."""
    row = np.asarray(row, dtype=float)
    if row.ndim != 1 or row.size == 0:
        raise DimensionError("expected a non-empty vector")
    out = np.empty((1, row.size))
    _kernels.pava_rows(np.ascontiguousarray(row[None, :]), out)
    return out[0]


def project_rows(theta):
    theta = np.ascontiguousarray(theta, dtype=float)
    out = np.empty_like(theta)
    return _kernels.pava_rows(theta, out)


def count_knots(theta_col, k=DEFAULT_K, tol=KNOT_TOL):
    """Number of entries of D^(k+1) theta that are nonzero relative to tol."""
    if isinstance(k, QuantileSpec):
        k = k.k
    theta_col = np.asarray(theta_col, dtype=float)
    d = np.abs(apply(build_diff(theta_col.size, k + 1), theta_col))
    if d.size == 0:
        return 0
    return int(np.count_nonzero(d > tol * max(1.0, float(d.max()))))


def objective(y, theta, spec, mask=None):
    """Value of the penalised multi-quantile objective (no coupling terms)."""
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    w = _weights(mask, y.size)
    op = build_diff(y.size, spec.order)
    yf = np.where(w > 0, y, 0.0)
    total = 0.0
    for j, (tau, lam) in enumerate(zip(spec.taus, spec.lambdas)):
        total += check_loss(yf - theta[:, j], tau, w)
        total += lam * float(np.sum(np.abs(apply(op, theta[:, j]))))
    return total


# --------------------------------------------------------------------------
# block solve

def _weights(mask, n):
    if mask is None:
        return np.ones(n)
    w = mask.weights if isinstance(mask, WeightMask) else np.asarray(mask, dtype=float)
    if w.shape != (n,):
        raise DimensionError(f"mask length {w.shape} does not match n={n}")
    return np.asarray(w, dtype=float)


def _fill_masked(y, w):
    # masked values never enter the objective; replace them by linear
    # interpolation so the starting point and scaling stay sensible
    y = y.copy()
    bad = (w == 0) | ~np.isfinite(y)
    if bad.any():
        idx = np.arange(y.size)
        good = ~bad
        y[bad] = np.interp(idx[bad], idx[good], y[good])
    return y


def _sparse_diff(n, order):
    d = sp.eye(n, format="csr")
    for _ in range(order):
        d = d[1:] - d[:-1]
    return d.tocsr()


def _coupled_objective(theta, coupling):
    if coupling is None:
        return 0.0
    g = theta - coupling.anchor
    return float(np.sum(g * coupling.duals) + 0.5 * coupling.gamma * np.sum(g * g))


def _face_projection(y, phi, r_zero, z_zero, ties, dfull):
    """Project phi onto the affine face defined by the active constraints."""
    n, J = phi.shape
    rows, rhs = [], []
    for j in range(J):
        sel = np.flatnonzero(r_zero[:, j])
        rows.append(sp.csr_matrix((np.ones(sel.size), (np.arange(sel.size), j * n + sel)),
                                  shape=(sel.size, n * J)))
        rhs.append(y[sel])
        selz = np.flatnonzero(z_zero[:, j])
        block = dfull[selz]
        rows.append(sp.hstack([sp.csr_matrix((selz.size, j * n)), block,
                               sp.csr_matrix((selz.size, (J - 1 - j) * n))]))
        rhs.append(np.zeros(selz.size))
    for j in range(J - 1):
        sel = np.flatnonzero(ties[:, j])
        q = sel.size
        rows.append(sp.csr_matrix(
            (np.r_[np.ones(q), -np.ones(q)],
             (np.r_[np.arange(q), np.arange(q)], np.r_[j * n + sel, (j + 1) * n + sel])),
            shape=(q, n * J)))
        rhs.append(np.zeros(q))
    E = sp.vstack(rows).tocsr()
    b = np.concatenate(rhs)
    nr = E.shape[0]
    x0 = phi.T.ravel()
    if nr == 0:
        return phi.copy()
    eye = sp.identity(n * J, format="csr")
    # small negative regularisation keeps the KKT matrix nonsingular when
    # the active rows are dependent; refinement against the exact system
    # removes the bias
    K = sp.bmat([[eye, E.T], [E, -1e-10 * sp.identity(nr)]], format="csc")
    K0 = sp.bmat([[eye, E.T], [E, None]], format="csc")
    full = np.concatenate([x0, b])
    lu = spla.splu(K)
    sol = lu.solve(full)
    for _ in range(3):
        sol += lu.solve(full - K0 @ sol)
    return np.ascontiguousarray(sol[:n * J].reshape(J, n).T)


def certificate_residual(y, w, spec, theta, dfull=None):
    """Largest stationarity residual of the best dual certificate for theta.

    Unknowns are the loss subgradients u (box w*[tau-1, tau]), the penalty
    subgradients v (box [-lambda, lambda]) and the crossing multipliers
    mu >= 0; inactive pieces have their subgradient fixed. Stationarity reads
    u_j = D'v_j + mu_j - mu_{j-1}. A residual near zero proves optimality.
    """
    n, J = theta.shape
    if dfull is None:
        dfull = _sparse_diff(n, spec.order)
    scale = max(1.0, float(np.max(np.abs(y))))
    eta = 1e-9 * scale
    lb, ub = [], []
    for j, tau in enumerate(spec.taus):
        res = y - theta[:, j]
        act = (np.abs(res) <= eta) & (w > 0)
        lo = np.where(res > 0, tau, tau - 1.0)
        hi = np.where(act, tau, lo)
        lo = np.where(act, tau - 1.0, lo)
        lb.append(lo * w)
        ub.append(hi * w)
    for j, lam in enumerate(spec.lambdas):
        d = dfull @ theta[:, j]
        act = np.abs(d) <= eta
        lo = np.where(act, -lam, lam * np.sign(d))
        hi = np.where(act, lam, lo)
        lb.append(lo)
        ub.append(hi)
    for j in range(J - 1):
        act = theta[:, j + 1] - theta[:, j] <= eta
        lb.append(np.zeros(n))
        ub.append(np.where(act, np.inf, 0.0))
    lb = np.concatenate(lb)
    ub = np.concatenate(ub)
    blocks = [sp.identity(n * J, format="csr"), sp.block_diag([-dfull.T] * J, format="csr")]
    if J > 1:
        idx = np.arange(n * (J - 1))
        blocks.append(sp.csr_matrix(
            (np.r_[-np.ones(idx.size), np.ones(idx.size)], (np.r_[idx, idx + n], np.r_[idx, idx])),
            shape=(n * J, n * (J - 1))))
    A = sp.hstack(blocks).tocsc()
    fixed = lb == ub
    rhs = -(A[:, fixed] @ lb[fixed])
    free = ~fixed
    if not free.any():
        return float(np.max(np.abs(rhs)))
    Af = A[:, free]
    if Af.shape[0] * Af.shape[1] <= 4_000_000:
        Af = Af.toarray()
        sol = lsq_linear(Af, rhs, bounds=(lb[free], ub[free]), method="bvls", tol=1e-13)
    else:
        sol = lsq_linear(Af, rhs, bounds=(lb[free], ub[free]), method="trf",
                         tol=1e-12, lsmr_tol="auto", max_iter=500)
    return float(np.max(np.abs(Af @ sol.x - rhs)))


def _robust_centre_scale(y, w):
    obs = y[w > 0]
    c = float(np.median(obs))
    s = float(np.median(np.abs(obs - c)))
    if not s > 0:
        s = float(np.max(np.abs(obs - c)))
    return c, (s if s > 0 else 1.0)


def _z_weights(lams, y, w, mode):
    # the z-block penalty is pen * zw_j; scaling it with lambda_j / scale(y)
    # keeps the soft threshold lambda_j / (pen * zw_j) commensurate with the
    # data, which ADMM needs once lambda_j is large
    if mode != "auto":
        return np.full(lams.size, float(mode))
    return np.maximum(lams / _robust_centre_scale(y, w)[1], 1e-3)


class _BlockState:
    __slots__ = ("theta", "r", "z", "phi", "u1", "u2", "u3", "pen", "info")

    @classmethod
    def start(cls, y, J, split_stencil, penalty, theta0=None):
        n = y.size
        st = cls()
        th = np.tile(y[:, None], (1, J)) if theta0 is None else np.array(theta0, dtype=float)
        st.theta = np.ascontiguousarray(th)
        st.r = np.ascontiguousarray(y[:, None] - st.theta)
        m = n - (split_stencil.size - 1)
        st.z = np.empty((m, J))
        col = np.empty(m)
        for j in range(J):
            st.z[:, j] = _kernels.diff_apply(split_stencil, np.ascontiguousarray(st.theta[:, j]), col)
        st.phi = project_rows(st.theta)
        st.u1 = np.zeros((n, J))
        st.u2 = np.zeros((m, J))
        st.u3 = np.zeros((n, J))
        st.pen = float(penalty)
        st.info = np.zeros(7)
        return st

    def as_dict(self):
        return {s: getattr(self, s) for s in self.__slots__}

    @classmethod
    def from_dict(cls, d):
        st = cls()
        for s in cls.__slots__:
            v = d[s]
            setattr(st, s, np.array(v, dtype=float) if isinstance(v, np.ndarray) else v)
        return st


def solve_block(y, spec, mask=None, coupling=None, controls=None, warm_start=None):
    """Solve the multi-quantile block problem.

    ``warm_start`` may be a previous :class:`FitResult` for a problem of the
    same shape or an n x J starting trend. The interior point method only
    uses its trend as a starting point; ADMM resumes from the full saved
    state when there is one. Raises :class:`ConvergenceError` when
    ``controls.strict`` is set and the inner method does not converge.
    """
    controls = controls or InnerControls()
    y = np.asarray(y, dtype=float).reshape(-1)
    n, J = y.size, spec.J
    if n < spec.k + 2:
        raise DimensionError(f"need at least k + 2 = {spec.k + 2} observations, got {n}")
    w = _weights(mask, n)
    if not np.any(w > 0):
        raise ValueError("mask removes every observation")
    if np.any(~np.isfinite(y) & (w > 0)):
        raise ValueError("unmasked observations must be finite")
    y = _fill_masked(y, w)
    if coupling is not None and coupling.anchor.shape != (n, J):
        raise DimensionError(f"coupling shape {coupling.anchor.shape} != {(n, J)}")
    if isinstance(warm_start, FitResult):
        theta0 = warm_start.theta
    else:
        theta0 = warm_start
    if theta0 is not None and np.shape(theta0) != (n, J):
        raise DimensionError(f"warm start shape {np.shape(theta0)} != {(n, J)}")
    if controls.method == "ipm":
        return _solve_ipm(y, w, spec, coupling, controls, theta0)
    return _solve_admm(y, w, spec, coupling, controls, warm_start, theta0)


def _solve_ipm(y, w, spec, coupling, controls, theta0):
    n, J = y.size, spec.J
    # work on (y - c) / s: the check loss and the penalty are both
    # positively homogeneous and shift invariant, so only the coupling
    # needs rescaling (gamma picks up a factor s, the anchor moves with y)
    c, s = _robust_centre_scale(y, w)
    ys = (y - c) / s
    lin = np.zeros((n, J))
    gamma = 0.0
    if coupling is not None:
        gamma = coupling.gamma * s
        lin = coupling.duals - gamma * (coupling.anchor - c) / s
    if theta0 is None:
        theta = np.tile(ys[:, None], (1, J))
    else:
        theta = (np.array(theta0, dtype=float) - c) / s
    theta = np.ascontiguousarray(theta)
    stencil = _kernels.diff_stencil(spec.order)
    info = np.zeros(5)
    it = _ipm.ipm(ys, w, np.asarray(spec.taus), np.asarray(spec.lambdas), stencil, gamma,
                  np.ascontiguousarray(lin), theta, controls.tol, controls.ipm_max_iter, info,
                  *_ipm.layout(n, J, stencil.size))
    if info[3] == _ipm.STATUS_BREAKDOWN:
        raise FactorizationError("interior point Newton system became singular")
    converged = info[3] == _ipm.STATUS_CONVERGED
    # the crossing rows hold to the feasibility tolerance; the row projection
    # makes them exact at a cost far below the solve accuracy
    theta = project_rows(c + s * theta) if J > 1 else c + s * theta
    f = objective(y, theta, spec, w)
    result = FitResult(
        theta=theta,
        inner_iterations=int(it),
        objective=f,
        knots=tuple(count_knots(theta[:, j], spec.k) for j in range(J)),
        converged=converged,
        primal_residual=float(info[0]),
        dual_residual=float(info[1]),
    )
    if not converged and controls.strict:
        raise ConvergenceError(
            f"interior point method stopped after {it} iterations "
            f"(primal {info[0]:.3g}, dual {info[1]:.3g}, gap {info[2]:.3g})",
            iterations=int(it), primal_residual=float(info[0]),
            dual_residual=float(info[1]), result=result)
    return result


def _solve_admm(y, w, spec, coupling, controls, warm_start, theta0):
    n, J = y.size, spec.J
    taus = np.asarray(spec.taus)
    lams = np.asarray(spec.lambdas)
    if coupling is not None:
        anchor = np.ascontiguousarray(coupling.anchor)
        omega = np.ascontiguousarray(coupling.duals)
        gamma_c = coupling.gamma
    else:
        anchor = np.zeros((n, J))
        omega = np.zeros((n, J))
        gamma_c = 0.0

    tv = controls.split == "tv"
    split_order = spec.k if tv else spec.order
    split_stencil = _kernels.diff_stencil(split_order)
    zw = _z_weights(lams, y, w, controls.z_weight)

    state = None
    if isinstance(warm_start, FitResult) and warm_start.state is not None:
        cand = _BlockState.from_dict(warm_start.state)
        if cand.theta.shape == (n, J) and cand.z.shape[0] == n - split_order:
            state = cand
            state.info[4] = 0.0
    if state is None:
        state = _BlockState.start(y, J, split_stencil, controls.penalty, theta0)

    yscale = max(1.0, float(np.max(np.abs(y))))
    eps_abs = controls.tol * yscale
    eps_rel = controls.tol
    can_polish = controls.polish and coupling is None
    # with either split the exact zeros found by the prox steps are rows of
    # D^(k+1) theta: diff(z) for the TV split, z itself for the diff split
    dfull = _sparse_diff(n, spec.order) if can_polish else None

    trace = [] if controls.record_objective else None
    best = None
    prev_f = None
    certified = False
    stable = False
    admm_done = False
    total = 0
    next_polish = controls.polish_start
    while total < controls.max_iter:
        if trace is not None:
            chunk = 1
        elif can_polish:
            chunk = max(1, min(next_polish, controls.max_iter) - total)
        else:
            chunk = controls.max_iter - total
        it = _kernels.admm(y, w, taus, lams, zw, split_stencil, tv, anchor, omega, gamma_c,
                           state.theta, state.r, state.z, state.phi,
                           state.u1, state.u2, state.u3, state.pen, controls.alpha, chunk,
                           eps_abs, eps_rel, controls.adapt, controls.adapt_until, state.info)
        state.pen = float(state.info[0])
        total += it
        if state.info[5] < 0:
            raise FactorizationError("inner system lost positive definiteness")
        if trace is not None:
            trace.append(objective(y, state.phi, spec, w) + _coupled_objective(state.phi, coupling))
        admm_done = state.info[5] > 0
        if can_polish and (total >= next_polish or admm_done or total >= controls.max_iter):
            next_polish = int(math.ceil(1.5 * next_polish))
            cand = _polish_candidate(y, w, spec, state, dfull)
            if cand is None:
                prev_f = None
                continue
            f_cand = objective(y, cand, spec, w)
            f_phi = objective(y, state.phi, spec, w)
            slack = controls.tol * max(1.0, abs(f_cand))
            if best is None or f_cand <= best[1]:
                best = (cand, f_cand)
            # the face projection of an optimal active set is an exact
            # minimiser, so it cannot be beaten by the feasible ADMM iterate
            # and does not move between polishes
            improves = f_cand <= f_phi + slack
            stable = prev_f is not None and abs(f_cand - prev_f) <= slack and improves
            prev_f = f_cand
            if improves and _want_certificate(controls.certify, n, J):
                certified = certificate_residual(y, w, spec, cand, dfull) <= \
                    CERT_TOL * max(1.0, float(lams.max()))
                stable = certified
            if stable:
                best = (cand, f_cand)
                break
        if admm_done:
            break

    theta = state.phi.copy()
    f = objective(y, theta, spec, w)
    if best is not None and best[1] <= f + 1e-12 * max(1.0, abs(f)):
        theta, f = best
    converged = stable or admm_done
    result = FitResult(
        theta=theta,
        inner_iterations=total,
        objective=f,
        knots=tuple(count_knots(theta[:, j], spec.k) for j in range(J)),
        converged=converged,
        certified=certified,
        primal_residual=float(state.info[1]),
        dual_residual=float(state.info[2]),
        objective_trace=None if trace is None else np.asarray(trace),
        state=state.as_dict(),
    )
    if not converged and controls.strict:
        raise ConvergenceError(
            f"inner ADMM did not converge in {total} iterations "
            f"(primal {result.primal_residual:.3g}, dual {result.dual_residual:.3g})",
            iterations=total, primal_residual=result.primal_residual,
            dual_residual=result.dual_residual, result=result)
    return result


def _polish_candidate(y, w, spec, state, dfull):
    r_zero = (state.r == 0.0) & (w[:, None] > 0)
    if state.z.shape[0] == dfull.shape[0] + 1:
        z_zero = np.diff(state.z, axis=0) == 0.0
    else:
        z_zero = state.z == 0.0
    ties = state.phi[:, 1:] == state.phi[:, :-1]
    try:
        cand = _face_projection(y, state.phi, r_zero, z_zero, ties, dfull)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(cand)):
        return None
    return project_rows(cand)
