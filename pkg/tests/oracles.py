"""Reference implementations used only by the tests.

Nothing here imports the package's solvers or kernels: each oracle is a
separate code path (dense matrices, LP reformulation, brute force search,
textbook recursions) so agreement with the package is evidence, not echo.
"""
import itertools
from math import comb

import numba
import numpy as np
from scipy.optimize import linprog


def dense_diff(n, order):
    """D^(order) by repeated first differencing of the identity."""
    d = np.eye(n)
    for _ in range(order):
        d = d[1:] - d[:-1]
    return d


def rho(r, tau):
    r = np.asarray(r, dtype=float)
    return np.where(r >= 0, tau * r, (tau - 1.0) * r)


def dense_objective(y, theta, taus, lams, k, w=None):
    y = np.asarray(y, dtype=float)
    w = np.ones(y.size) if w is None else np.asarray(w, dtype=float)
    d = dense_diff(y.size, k + 1)
    total = 0.0
    for j, (tau, lam) in enumerate(zip(taus, lams)):
        total += float(np.sum(w * rho(y - theta[:, j], tau)))
        total += lam * float(np.sum(np.abs(d @ theta[:, j])))
    return total


def lp_reference(y, taus, lams, k, w=None):
    """Solve the penalised problem as one dense LP with scipy's HiGHS.

    Variables per level: theta (n), u+, u- (loss parts), p+, p- (penalty parts).
    """
    y = np.asarray(y, dtype=float)
    n, J = y.size, len(taus)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    d = dense_diff(n, k + 1)
    m = d.shape[0]
    nv = n + 2 * n + 2 * m
    c = np.zeros(nv * J)
    a_eq, b_eq, a_ub = [], [], []
    for j, (tau, lam) in enumerate(zip(taus, lams)):
        o = j * nv
        c[o + n:o + 2 * n] = tau * w
        c[o + 2 * n:o + 3 * n] = (1.0 - tau) * w
        c[o + 3 * n:o + 3 * n + m] = lam
        c[o + 3 * n + m:o + 3 * n + 2 * m] = lam
        # theta + u+ - u- = y
        blk = np.zeros((n, nv * J))
        blk[:, o:o + n] = np.eye(n)
        blk[:, o + n:o + 2 * n] = np.eye(n)
        blk[:, o + 2 * n:o + 3 * n] = -np.eye(n)
        a_eq.append(blk)
        b_eq.append(y)
        # D theta - p+ + p- = 0
        blk = np.zeros((m, nv * J))
        blk[:, o:o + n] = d
        blk[:, o + 3 * n:o + 3 * n + m] = -np.eye(m)
        blk[:, o + 3 * n + m:o + 3 * n + 2 * m] = np.eye(m)
        a_eq.append(blk)
        b_eq.append(np.zeros(m))
    for j in range(J - 1):
        blk = np.zeros((n, nv * J))
        blk[:, j * nv:j * nv + n] = np.eye(n)
        blk[:, (j + 1) * nv:(j + 1) * nv + n] = -np.eye(n)
        a_ub.append(blk)
    bounds = []
    for _ in range(J):
        bounds += [(None, None)] * n + [(0, None)] * (2 * n + 2 * m)
    res = linprog(c, A_ub=np.vstack(a_ub) if a_ub else None,
                  b_ub=np.zeros(n * (J - 1)) if a_ub else None,
                  A_eq=np.vstack(a_eq), b_eq=np.concatenate(b_eq), bounds=bounds,
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    theta = np.column_stack([res.x[j * nv:j * nv + n] for j in range(J)])
    return float(res.fun), theta


@numba.njit(cache=True)
def _subgradient(y, taus, lams, stencil, iters, step0):
    n = y.size
    J = taus.size
    q = stencil.size
    m = n - q + 1
    th = np.empty((n, J))
    for i in range(n):
        for j in range(J):
            th[i, j] = y[i]
    best = np.inf
    bestth = th.copy()
    g = np.zeros((n, J))
    d = np.zeros(m)
    vals = np.empty(J)
    wts = np.empty(J)
    for t in range(1, iters + 1):
        f = 0.0
        for j in range(J):
            tau = taus[j]
            for i in range(n):
                r = y[i] - th[i, j]
                if r > 0:
                    f += tau * r
                    g[i, j] = -tau
                elif r < 0:
                    f += (tau - 1.0) * r
                    g[i, j] = 1.0 - tau
                else:
                    g[i, j] = 0.0
            for r_ in range(m):
                s = 0.0
                for a in range(q):
                    s += stencil[a] * th[r_ + a, j]
                d[r_] = s
                f += lams[j] * abs(s)
            for r_ in range(m):
                sg = 1.0 if d[r_] > 0 else (-1.0 if d[r_] < 0 else 0.0)
                if sg != 0.0:
                    for a in range(q):
                        g[r_ + a, j] += lams[j] * sg * stencil[a]
        if f < best:
            best = f
            bestth[:, :] = th
        gn = 0.0
        for i in range(n):
            for j in range(J):
                gn += g[i, j] * g[i, j]
        gn = np.sqrt(gn)
        if gn == 0.0:
            break
        step = step0 / np.sqrt(t) / gn
        for i in range(n):
            for j in range(J):
                th[i, j] -= step * g[i, j]
            # Euclidean projection of the row onto the nondecreasing cone
            nb = 0
            for j in range(J):
                vals[nb] = th[i, j]
                wts[nb] = 1.0
                nb += 1
                while nb > 1 and vals[nb - 2] > vals[nb - 1]:
                    tot = wts[nb - 2] + wts[nb - 1]
                    vals[nb - 2] = (vals[nb - 2] * wts[nb - 2] + vals[nb - 1] * wts[nb - 1]) / tot
                    wts[nb - 2] = tot
                    nb -= 1
            j = 0
            for b in range(nb):
                for _ in range(int(wts[b])):
                    th[i, j] = vals[b]
                    j += 1
    return best, bestth


def subgradient_reference(y, taus, lams, k, iters=1_000_000):
    """Best objective of projected subgradient descent with steps ~ 1/sqrt(t)."""
    y = np.asarray(y, dtype=float)
    stencil = dense_diff(k + 2, k + 1)[0].copy()
    start = _subgradient(y, np.asarray(taus, dtype=float), np.asarray(lams, dtype=float),
                         stencil, iters, float(np.std(y)) or 1.0)
    return float(start[0]), start[1]


def grid_argmin(fun, lo, hi, points=20001, refine=3):
    """Scalar minimiser by repeated grid refinement."""
    for _ in range(refine):
        xs = np.linspace(lo, hi, points)
        i = int(np.argmin(fun(xs)))
        step = xs[1] - xs[0]
        lo, hi = xs[max(i - 1, 0)] - step, xs[min(i + 1, points - 1)] + step
    return 0.5 * (lo + hi)


def brute_monotone_projection(v, grid):
    """Closest nondecreasing vector with entries on ``grid`` (exhaustive)."""
    v = np.asarray(v, dtype=float)
    best, arg = np.inf, None
    for combo in itertools.combinations_with_replacement(grid, v.size):
        d = float(np.sum((np.asarray(combo) - v) ** 2))
        if d < best:
            best, arg = d, np.asarray(combo)
    return arg, best


def cox_de_boor(x, knots, i, p):
    """Value of the i-th B-spline of degree p at x (right-continuous, closed at the end)."""
    t = knots
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # the last nonempty interval is closed on the right
        if x == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    left = 0.0
    if t[i + p] != t[i]:
        left = (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(x, knots, i, p - 1)
    right = 0.0
    if t[i + p + 1] != t[i + 1]:
        right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(x, knots, i + 1, p - 1)
    return left + right


def cox_de_boor_second_derivative(x, knots, i, p):
    """Second derivative of B_{i,p} through the derivative recursion."""
    t = knots

    def dcoef(i, p):
        a = p / (t[i + p] - t[i]) if t[i + p] != t[i] else 0.0
        b = p / (t[i + p + 1] - t[i + 1]) if t[i + p + 1] != t[i + 1] else 0.0
        return a, b

    a, b = dcoef(i, p)
    a1, b1 = dcoef(i, p - 1)
    a2, b2 = dcoef(i + 1, p - 1)
    # B'' = a (a1 B_{i,p-2} - b1 B_{i+1,p-2}) - b (a2 B_{i+1,p-2} - b2 B_{i+2,p-2})
    f = lambda j: cox_de_boor(x, knots, j, p - 2)
    return a * (a1 * f(i) - b1 * f(i + 1)) - b * (a2 * f(i + 1) - b2 * f(i + 2))


def log_comb(p, k):
    return float(np.log(comb(p, k)))


def brute_block_projection(v):
    """Exact monotone projection by enumerating every split into consecutive blocks.

    The projection is block-wise constant with each block at its mean, so the
    closest monotone candidate among the 2^(J-1) splits is the answer.
    """
    v = np.asarray(v, dtype=float)
    J = v.size
    best, arg = np.inf, None
    for cuts in itertools.product((False, True), repeat=J - 1):
        out = np.empty(J)
        start = 0
        for i in range(J):
            if i == J - 1 or cuts[i]:
                out[start:i + 1] = v[start:i + 1].mean()
                start = i + 1
        if np.all(np.diff(out) >= 0):
            d = float(np.sum((out - v) ** 2))
            if d < best:
                best, arg = d, out
    return arg
