"""Primal-dual interior point kernels for the block problem.

Epigraph form with x = (theta, e, g)::

    min  sum_ij e_ij + sum_j lam_j 1'g_j + gamma/2 ||theta||^2 + lin'theta
    s.t. -tau_j theta_ij - e_ij      <= -tau_j y_i            (L1, observed i)
         (1 - tau_j) theta_ij - e_ij <= (1 - tau_j) y_i       (L2, observed i)
         (D theta_j)_r - g_rj <= 0,  -(D theta_j)_r - g_rj <= 0   (P3, P4, lam_j > 0)
         theta_ij - theta_i,j+1 <= 0                           (C5)

Each Mehrotra predictor-corrector step eliminates e and g and solves the
remaining Newton system in augmented quasi-definite form

    [ Hd   N'      D'    ] [d theta]   [b]
    [ N   -W5^-1   0     ] [d mu   ] = [0]
    [ D    0      -C^-1  ] [d nu   ]   [0]

Keeping the penalty and crossing rows as multipliers avoids forming D'CD,
whose entries grow without bound near the solution and wreck a plain
Cholesky factorisation. The multiplier steps also give the dual updates
of those rows directly, instead of multiplying a slightly inexact d theta
by a huge C. Unknowns are interleaved by time index so the matrix is
banded. Both paths factor it by banded LU with partial pivoting; an
unpivoted LDL' loses all accuracy once both diagonal blocks get tiny.
"""
import numpy as np
from scipy import linalg, sparse

from ._backend import USE_NUMBA, njit

STATUS_CONVERGED = 1.0
STATUS_MAXITER = 0.0
STATUS_BREAKDOWN = -1.0

STEP_FRACTION = 0.99
REG = 1e-11
REFINE = 2


def layout(n, J, q):
    """Positions of theta, mu and nu unknowns in the interleaved system.

    ``q`` is the stencil length (difference order + 1). Block ``i`` holds
    theta(i, :), then mu(i, :J-1), then nu(i - h, :) for the difference row
    centred on i, which keeps the half-bandwidth near q/2 blocks.
    """
    m = n - q + 1
    h = (q - 1) // 2
    base = np.empty(n + 1, dtype=np.int64)
    base[0] = 0
    for i in range(n):
        has_nu = h <= i < m + h
        base[i + 1] = base[i] + 2 * J - 1 + (J if has_nu else 0)
    theta_idx = base[:n, None] + np.arange(J)[None, :]
    mu_idx = base[:n, None] + J + np.arange(J - 1)[None, :]
    nu_idx = base[h:m + h, None] + 2 * J - 1 + np.arange(J)[None, :]
    size = int(base[n])
    bw = 1
    if J > 1:
        bw = max(bw, int(np.max(np.abs(mu_idx - theta_idx[:, :-1]))),
                 int(np.max(np.abs(mu_idx - theta_idx[:, 1:]))))
    if m > 0:
        for a in range(q):
            bw = max(bw, int(np.max(np.abs(theta_idx[a:a + m, :] - nu_idx))))
    return (np.ascontiguousarray(theta_idx), np.ascontiguousarray(mu_idx),
            np.ascontiguousarray(nu_idx), size, bw)


# --------------------------------------------------------------------------
# banded LU with partial pivoting

@njit
def nb_band_lu(ab, rows, piv, mult):
    """Factor the symmetric band matrix held in lower form ``ab``.

    ``rows[i, c - i + bw]`` holds entry (i, c) with room for the upper fill
    that row interchanges create (up to 2 bw above the diagonal). Mirrors
    LAPACK's gbtrf: multipliers of step j go to ``mult[j]`` and are never
    permuted afterwards. Returns False on an exactly singular pivot.
    """
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    rows[:, :] = 0.0
    for j in range(n):
        for d in range(bw + 1):
            if j + d < n:
                v = ab[d, j]
                rows[j + d, j - (j + d) + bw] = v
                rows[j, j + d - j + bw] = v
    # ext[i] is one past the last column row i can hold a nonzero in; rows
    # only grow past i + bw through interchanges, so most updates stay short
    ext = np.empty(n, dtype=np.int64)
    for i in range(n):
        ext[i] = min(n, i + bw + 1)
    for j in range(n):
        last = min(n, j + bw + 1)
        p = j
        best = abs(rows[j, bw])
        for i in range(j + 1, last):
            v = abs(rows[i, j - i + bw])
            if v > best:
                best = v
                p = i
        piv[j] = p
        if best == 0.0:
            return False
        if p != j:
            hi = max(ext[j], ext[p])
            for c in range(j, hi):
                t = rows[j, c - j + bw]
                rows[j, c - j + bw] = rows[p, c - p + bw]
                rows[p, c - p + bw] = t
            ext[j] = hi
            ext[p] = hi
        hi = ext[j]
        inv = 1.0 / rows[j, bw]
        for i in range(j + 1, last):
            l = rows[i, j - i + bw] * inv
            mult[j, i - j - 1] = l
            if l != 0.0:
                for c in range(j + 1, hi):
                    rows[i, c - i + bw] -= l * rows[j, c - j + bw]
                if hi > ext[i]:
                    ext[i] = hi
    return True


@njit
def nb_band_lu_solve(rows, piv, mult, x):
    n = rows.shape[0]
    bw = mult.shape[1]
    for j in range(n):
        p = piv[j]
        if p != j:
            t = x[j]
            x[j] = x[p]
            x[p] = t
        xj = x[j]
        for i in range(j + 1, min(n, j + bw + 1)):
            x[i] -= mult[j, i - j - 1] * xj
    for j in range(n - 1, -1, -1):
        s = x[j]
        for c in range(j + 1, min(n, j + 2 * bw + 1)):
            s -= rows[j, c - j + bw] * x[c]
        x[j] = s / rows[j, bw]
    return x


@njit
def nb_band_symv(ab, x, out):
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    for i in range(n):
        out[i] = ab[0, i] * x[i]
    for d in range(1, bw + 1):
        for j in range(n - d):
            v = ab[d, j]
            out[j + d] += v * x[j]
            out[j] += v * x[j + d]
    return out


@njit
def _nb_refined_solve(ab, rows, piv, mult, b, x, r, steps):
    x[:] = b
    nb_band_lu_solve(rows, piv, mult, x)
    for _ in range(steps):
        nb_band_symv(ab, x, r)
        for i in range(r.shape[0]):
            r[i] = b[i] - r[i]
        nb_band_lu_solve(rows, piv, mult, r)
        for i in range(r.shape[0]):
            x[i] += r[i]


# --------------------------------------------------------------------------
# numba solver

@njit
def _nb_apply(stencil, v, out):
    q = stencil.shape[0]
    for r in range(out.shape[0]):
        acc = 0.0
        for a in range(q):
            acc += stencil[a] * v[r + a]
        out[r] = acc


@njit
def _nb_apply_t(stencil, u, out):
    q = stencil.shape[0]
    out[:] = 0.0
    for r in range(u.shape[0]):
        ur = u[r]
        for a in range(q):
            out[r + a] += stencil[a] * ur


@njit
def nb_ipm(y, w, taus, lams, stencil, gamma, lin, theta, tol, max_iter, info,
           theta_idx, mu_idx, nu_idx, size, bw):
    n, J = theta.shape
    q = stencil.shape[0]
    m = n - q + 1
    JC = max(J - 1, 1)
    act = np.empty(n, dtype=np.bool_)
    for i in range(n):
        act[i] = w[i] > 0.0
    pen = np.empty(J, dtype=np.bool_)
    for j in range(J):
        pen[j] = lams[j] > 0.0

    e = np.zeros((n, J)); g = np.zeros((m, J))
    s1 = np.ones((n, J)); s2 = np.ones((n, J)); z1 = np.zeros((n, J)); z2 = np.zeros((n, J))
    s3 = np.ones((m, J)); s4 = np.ones((m, J)); z3 = np.zeros((m, J)); z4 = np.zeros((m, J))
    s5 = np.ones((n, JC)); z5 = np.zeros((n, JC))
    rp1 = np.zeros((n, J)); rp2 = np.zeros((n, J)); rp3 = np.zeros((m, J)); rp4 = np.zeros((m, J))
    rp5 = np.zeros((n, JC))
    rdt = np.zeros((n, J)); rde = np.zeros((n, J)); rdg = np.zeros((m, J))
    t1 = np.zeros((n, J)); t2 = np.zeros((n, J)); t3 = np.zeros((m, J)); t4 = np.zeros((m, J))
    t5 = np.zeros((n, JC))
    ds1 = np.zeros((n, J)); ds2 = np.zeros((n, J)); ds3 = np.zeros((m, J)); ds4 = np.zeros((m, J))
    ds5 = np.zeros((n, JC))
    dz1 = np.zeros((n, J)); dz2 = np.zeros((n, J)); dz3 = np.zeros((m, J)); dz4 = np.zeros((m, J))
    dz5 = np.zeros((n, JC))
    as1 = np.zeros((n, J)); as2 = np.zeros((n, J)); as3 = np.zeros((m, J)); as4 = np.zeros((m, J))
    as5 = np.zeros((n, JC))
    az1 = np.zeros((n, J)); az2 = np.zeros((n, J)); az3 = np.zeros((m, J)); az4 = np.zeros((m, J))
    az5 = np.zeros((n, JC))
    dth = np.zeros((n, J)); de = np.zeros((n, J)); dg = np.zeros((m, J))
    be = np.zeros((n, J)); bg = np.zeros((m, J))
    dt = np.zeros((m, J))
    col_n = np.empty(n); col_m = np.empty(m)
    ab = np.zeros((bw + 1, size))
    rows = np.zeros((size, 3 * bw + 1)); piv = np.zeros(size, dtype=np.int64)
    mult = np.zeros((size, bw))
    x = np.zeros(size); rhs = np.zeros(size); work = np.zeros(size)

    # starting point: strictly feasible slacks around the given theta
    for j in range(J):
        for i in range(n):
            col_n[i] = theta[i, j]
        _nb_apply(stencil, col_n, col_m)
        for r in range(m):
            dt[r, j] = col_m[r]
    ncon = 0
    hn2 = 0.0
    cn2 = 0.0
    for j in range(J):
        tau = taus[j]
        for i in range(n):
            cn2 += lin[i, j] ** 2
            if act[i]:
                res = y[i] - theta[i, j]
                e[i, j] = max(tau * res, (tau - 1.0) * res) + 1.0
                s1[i, j] = -tau * y[i] + tau * theta[i, j] + e[i, j]
                s2[i, j] = (1.0 - tau) * y[i] - (1.0 - tau) * theta[i, j] + e[i, j]
                z1[i, j] = 0.5
                z2[i, j] = 0.5
                ncon += 2
                hn2 += (tau * y[i]) ** 2 + ((1.0 - tau) * y[i]) ** 2
                cn2 += 1.0
        if pen[j]:
            for r in range(m):
                g[r, j] = abs(dt[r, j]) + 1.0
                s3[r, j] = g[r, j] - dt[r, j]
                s4[r, j] = g[r, j] + dt[r, j]
                z3[r, j] = 0.5 * lams[j]
                z4[r, j] = 0.5 * lams[j]
                ncon += 2
                cn2 += lams[j] ** 2
    for j in range(J - 1):
        for i in range(n):
            s5[i, j] = max(theta[i, j + 1] - theta[i, j], 0.0) + 1.0
            z5[i, j] = 1.0
            ncon += 1
    hnorm = max(1.0, np.sqrt(hn2))
    cnorm = max(1.0, np.sqrt(cn2))

    status = STATUS_MAXITER
    pres = 0.0
    dres = 0.0
    rgap = 0.0
    pobj = 0.0
    it = 0
    while True:
        for j in range(J):
            for i in range(n):
                col_n[i] = theta[i, j]
            _nb_apply(stencil, col_n, col_m)
            for r in range(m):
                dt[r, j] = col_m[r]
        # residuals
        pr2 = 0.0
        gap = 0.0
        pobj = 0.0
        dr2 = 0.0
        for j in range(J):
            tau = taus[j]
            for i in range(n):
                pobj += theta[i, j] * (0.5 * gamma * theta[i, j] + lin[i, j])
                if act[i]:
                    rp1[i, j] = -tau * theta[i, j] - e[i, j] + s1[i, j] + tau * y[i]
                    rp2[i, j] = (1.0 - tau) * theta[i, j] - e[i, j] + s2[i, j] - (1.0 - tau) * y[i]
                    pr2 += rp1[i, j] ** 2 + rp2[i, j] ** 2
                    gap += s1[i, j] * z1[i, j] + s2[i, j] * z2[i, j]
                    pobj += e[i, j]
            if pen[j]:
                for r in range(m):
                    rp3[r, j] = dt[r, j] - g[r, j] + s3[r, j]
                    rp4[r, j] = -dt[r, j] - g[r, j] + s4[r, j]
                    pr2 += rp3[r, j] ** 2 + rp4[r, j] ** 2
                    gap += s3[r, j] * z3[r, j] + s4[r, j] * z4[r, j]
                    pobj += lams[j] * g[r, j]
                    col_m[r] = z3[r, j] - z4[r, j]
                    rdg[r, j] = lams[j] - z3[r, j] - z4[r, j]
                    dr2 += rdg[r, j] ** 2
                _nb_apply_t(stencil, col_m, col_n)
            else:
                col_n[:] = 0.0
            for i in range(n):
                v = gamma * theta[i, j] + lin[i, j] + col_n[i]
                if act[i]:
                    v += -tau * z1[i, j] + (1.0 - tau) * z2[i, j]
                    rde[i, j] = 1.0 - z1[i, j] - z2[i, j]
                    dr2 += rde[i, j] ** 2
                if j < J - 1:
                    v += z5[i, j]
                if j > 0:
                    v -= z5[i, j - 1]
                rdt[i, j] = v
                dr2 += v * v
        for j in range(J - 1):
            for i in range(n):
                rp5[i, j] = theta[i, j] - theta[i, j + 1] + s5[i, j]
                pr2 += rp5[i, j] ** 2
                gap += s5[i, j] * z5[i, j]
        pres = np.sqrt(pr2) / hnorm
        dres = np.sqrt(dr2) / cnorm
        rgap = gap / max(1.0, abs(pobj))
        if pres <= tol and dres <= tol and rgap <= tol:
            status = STATUS_CONVERGED
            break
        if it >= max_iter:
            break
        it += 1
        mu = gap / max(ncon, 1)

        # augmented matrix
        ab[:, :] = 0.0
        for j in range(J):
            for i in range(n):
                p = theta_idx[i, j]
                hd = gamma + REG
                if act[i]:
                    w1 = z1[i, j] / s1[i, j]
                    w2 = z2[i, j] / s2[i, j]
                    hd += w1 * w2 / (w1 + w2)
                ab[0, p] = hd
            for r in range(m):
                pnu = nu_idx[r, j]
                if pen[j]:
                    ab[0, pnu] = -0.25 * (s3[r, j] / z3[r, j] + s4[r, j] / z4[r, j])
                    for a in range(q):
                        pt = theta_idx[r + a, j]
                        if pt < pnu:
                            ab[pnu - pt, pt] = stencil[a]
                        else:
                            ab[pt - pnu, pnu] = stencil[a]
                else:
                    ab[0, pnu] = -1.0
        for j in range(J - 1):
            for i in range(n):
                pm = mu_idx[i, j]
                ab[0, pm] = -s5[i, j] / z5[i, j]
                pa = theta_idx[i, j]
                pb = theta_idx[i, j + 1]
                ab[pm - pa, pa] = 1.0
                ab[pm - pb, pb] = -1.0
        if not nb_band_lu(ab, rows, piv, mult):
            status = STATUS_BREAKDOWN
            break

        sigma = 0.0
        alpha = 1.0
        for phase in range(2):
            for j in range(J):
                for i in range(n):
                    if act[i]:
                        rc1 = s1[i, j] * z1[i, j]
                        rc2 = s2[i, j] * z2[i, j]
                        if phase == 1:
                            rc1 += as1[i, j] * az1[i, j] - sigma * mu
                            rc2 += as2[i, j] * az2[i, j] - sigma * mu
                        t1[i, j] = (-rc1 + z1[i, j] * rp1[i, j]) / s1[i, j]
                        t2[i, j] = (-rc2 + z2[i, j] * rp2[i, j]) / s2[i, j]
                if pen[j]:
                    for r in range(m):
                        rc3 = s3[r, j] * z3[r, j]
                        rc4 = s4[r, j] * z4[r, j]
                        if phase == 1:
                            rc3 += as3[r, j] * az3[r, j] - sigma * mu
                            rc4 += as4[r, j] * az4[r, j] - sigma * mu
                        t3[r, j] = (-rc3 + z3[r, j] * rp3[r, j]) / s3[r, j]
                        t4[r, j] = (-rc4 + z4[r, j] * rp4[r, j]) / s4[r, j]
            for j in range(J - 1):
                for i in range(n):
                    rc5 = s5[i, j] * z5[i, j]
                    if phase == 1:
                        rc5 += as5[i, j] * az5[i, j] - sigma * mu
                    t5[i, j] = (-rc5 + z5[i, j] * rp5[i, j]) / s5[i, j]
            # right-hand side on the theta rows
            rhs[:] = 0.0
            for j in range(J):
                tau = taus[j]
                if pen[j]:
                    for r in range(m):
                        w3 = z3[r, j] / s3[r, j]
                        w4 = z4[r, j] / s4[r, j]
                        bg[r, j] = -rdg[r, j] + t3[r, j] + t4[r, j]
                        col_m[r] = (t3[r, j] - t4[r, j]) + (w4 - w3) * bg[r, j] / (w3 + w4)
                    _nb_apply_t(stencil, col_m, col_n)
                else:
                    col_n[:] = 0.0
                for i in range(n):
                    b = -rdt[i, j] - col_n[i]
                    if act[i]:
                        w1 = z1[i, j] / s1[i, j]
                        w2 = z2[i, j] / s2[i, j]
                        be[i, j] = -rde[i, j] + t1[i, j] + t2[i, j]
                        b -= -tau * t1[i, j] + (1.0 - tau) * t2[i, j]
                        b -= (tau * w1 - (1.0 - tau) * w2) * be[i, j] / (w1 + w2)
                    if j < J - 1:
                        b -= t5[i, j]
                    if j > 0:
                        b += t5[i, j - 1]
                    rhs[theta_idx[i, j]] = b
            _nb_refined_solve(ab, rows, piv, mult, rhs, x, work, REFINE)
            for j in range(J):
                for i in range(n):
                    dth[i, j] = x[theta_idx[i, j]]
            # recover the eliminated blocks, slacks and duals
            for j in range(J):
                tau = taus[j]
                for i in range(n):
                    if act[i]:
                        w1 = z1[i, j] / s1[i, j]
                        w2 = z2[i, j] / s2[i, j]
                        g1 = -(be[i, j] + w2 * dth[i, j]) / (w1 + w2)
                        g2 = (w1 * dth[i, j] - be[i, j]) / (w1 + w2)
                        de[i, j] = -tau * dth[i, j] - g1
                        ds1[i, j] = -rp1[i, j] - g1
                        ds2[i, j] = -rp2[i, j] - g2
                        dz1[i, j] = t1[i, j] + w1 * g1
                        dz2[i, j] = t2[i, j] + w2 * g2
                if pen[j]:
                    # the nu unknowns carry C D dtheta without the cancellation
                    # that recomputing it from dtheta would suffer
                    for r in range(m):
                        w3 = z3[r, j] / s3[r, j]
                        w4 = z4[r, j] / s4[r, j]
                        half = 0.5 * x[nu_idx[r, j]]
                        g3 = half / w3 - bg[r, j] / (w3 + w4)
                        g4 = -half / w4 - bg[r, j] / (w3 + w4)
                        dg[r, j] = -0.5 * (g3 + g4)
                        ds3[r, j] = -rp3[r, j] - g3
                        ds4[r, j] = -rp4[r, j] - g4
                        dz3[r, j] = t3[r, j] + w3 * g3
                        dz4[r, j] = t4[r, j] + w4 * g4
            for j in range(J - 1):
                for i in range(n):
                    dmu = x[mu_idx[i, j]]
                    ds5[i, j] = -rp5[i, j] - dmu * s5[i, j] / z5[i, j]
                    dz5[i, j] = t5[i, j] + dmu
            # largest step keeping s and z nonnegative
            alpha = 1.0
            for j in range(J):
                for i in range(n):
                    if act[i]:
                        if ds1[i, j] < 0.0:
                            alpha = min(alpha, -s1[i, j] / ds1[i, j])
                        if ds2[i, j] < 0.0:
                            alpha = min(alpha, -s2[i, j] / ds2[i, j])
                        if dz1[i, j] < 0.0:
                            alpha = min(alpha, -z1[i, j] / dz1[i, j])
                        if dz2[i, j] < 0.0:
                            alpha = min(alpha, -z2[i, j] / dz2[i, j])
                if pen[j]:
                    for r in range(m):
                        if ds3[r, j] < 0.0:
                            alpha = min(alpha, -s3[r, j] / ds3[r, j])
                        if ds4[r, j] < 0.0:
                            alpha = min(alpha, -s4[r, j] / ds4[r, j])
                        if dz3[r, j] < 0.0:
                            alpha = min(alpha, -z3[r, j] / dz3[r, j])
                        if dz4[r, j] < 0.0:
                            alpha = min(alpha, -z4[r, j] / dz4[r, j])
            for j in range(J - 1):
                for i in range(n):
                    if ds5[i, j] < 0.0:
                        alpha = min(alpha, -s5[i, j] / ds5[i, j])
                    if dz5[i, j] < 0.0:
                        alpha = min(alpha, -z5[i, j] / dz5[i, j])
            if phase == 0:
                gap_aff = 0.0
                for j in range(J):
                    for i in range(n):
                        if act[i]:
                            as1[i, j] = ds1[i, j]; az1[i, j] = dz1[i, j]
                            as2[i, j] = ds2[i, j]; az2[i, j] = dz2[i, j]
                            gap_aff += (s1[i, j] + alpha * ds1[i, j]) * (z1[i, j] + alpha * dz1[i, j])
                            gap_aff += (s2[i, j] + alpha * ds2[i, j]) * (z2[i, j] + alpha * dz2[i, j])
                    if pen[j]:
                        for r in range(m):
                            as3[r, j] = ds3[r, j]; az3[r, j] = dz3[r, j]
                            as4[r, j] = ds4[r, j]; az4[r, j] = dz4[r, j]
                            gap_aff += (s3[r, j] + alpha * ds3[r, j]) * (z3[r, j] + alpha * dz3[r, j])
                            gap_aff += (s4[r, j] + alpha * ds4[r, j]) * (z4[r, j] + alpha * dz4[r, j])
                for j in range(J - 1):
                    for i in range(n):
                        as5[i, j] = ds5[i, j]; az5[i, j] = dz5[i, j]
                        gap_aff += (s5[i, j] + alpha * ds5[i, j]) * (z5[i, j] + alpha * dz5[i, j])
                ratio = gap_aff / max(gap, 1e-300)
                sigma = ratio * ratio * ratio
        alpha = min(1.0, STEP_FRACTION * alpha)
        for j in range(J):
            for i in range(n):
                theta[i, j] += alpha * dth[i, j]
                if act[i]:
                    e[i, j] += alpha * de[i, j]
                    s1[i, j] += alpha * ds1[i, j]; s2[i, j] += alpha * ds2[i, j]
                    z1[i, j] += alpha * dz1[i, j]; z2[i, j] += alpha * dz2[i, j]
            if pen[j]:
                for r in range(m):
                    g[r, j] += alpha * dg[r, j]
                    s3[r, j] += alpha * ds3[r, j]; s4[r, j] += alpha * ds4[r, j]
                    z3[r, j] += alpha * dz3[r, j]; z4[r, j] += alpha * dz4[r, j]
        for j in range(J - 1):
            for i in range(n):
                s5[i, j] += alpha * ds5[i, j]
                z5[i, j] += alpha * dz5[i, j]
    info[0] = pres
    info[1] = dres
    info[2] = rgap
    info[3] = status
    info[4] = pobj
    return it


# --------------------------------------------------------------------------
# numpy solver

def _np_apply(stencil, v, m):
    out = stencil[0] * v[:m]
    for a in range(1, stencil.shape[0]):
        out = out + stencil[a] * v[a:a + m]
    return out


def _np_apply_t(stencil, u, n):
    out = np.zeros((n,) + u.shape[1:])
    m = u.shape[0]
    for a in range(stencil.shape[0]):
        out[a:a + m] += stencil[a] * u
    return out


def _max_step(v, dv, mask):
    neg = mask & (dv < 0.0)
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def np_ipm(y, w, taus, lams, stencil, gamma, lin, theta, tol, max_iter, info,
           theta_idx, mu_idx, nu_idx, size, bw):
    n, J = theta.shape
    q = stencil.shape[0]
    m = n - q + 1
    act = np.broadcast_to((w > 0.0)[:, None], (n, J))
    pen = np.broadcast_to((lams > 0.0)[None, :], (m, J))
    cross = np.ones((n, max(J - 1, 0)), dtype=bool)
    tau = taus[None, :]
    yv = y[:, None]
    lam = np.broadcast_to(lams[None, :], (m, J))

    dt = _np_apply(stencil, theta, m)
    res = yv - theta
    e = np.where(act, np.maximum(tau * res, (tau - 1.0) * res) + 1.0, 0.0)
    s1 = np.where(act, -tau * yv + tau * theta + e, 1.0)
    s2 = np.where(act, (1.0 - tau) * yv - (1.0 - tau) * theta + e, 1.0)
    z1 = np.where(act, 0.5, 0.0)
    z2 = z1.copy()
    g = np.where(pen, np.abs(dt) + 1.0, 0.0)
    s3 = np.where(pen, g - dt, 1.0)
    s4 = np.where(pen, g + dt, 1.0)
    z3 = np.where(pen, 0.5 * lam, 0.0)
    z4 = z3.copy()
    s5 = np.maximum(theta[:, 1:] - theta[:, :-1], 0.0) + 1.0
    z5 = np.ones_like(s5)
    ncon = 2 * int(act.sum()) + 2 * int(pen.sum()) + s5.size
    hnorm = max(1.0, float(np.sqrt(np.sum(np.where(act, (tau * yv) ** 2 + ((1.0 - tau) * yv) ** 2, 0.0)))))
    cnorm = max(1.0, float(np.sqrt(np.sum(lin ** 2) + act.sum() + np.sum(np.where(pen, lam ** 2, 0.0)))))

    # sparsity pattern of the augmented matrix (values refilled each iteration)
    nu_rows = np.repeat(nu_idx[:, :, None], q, axis=2)
    th_cols = np.stack([theta_idx[a:a + m, :] for a in range(q)], axis=2)
    st_vals = np.broadcast_to(stencil[None, None, :], (m, J, q))
    pen3 = np.broadcast_to(pen[:, :, None], (m, J, q))
    off_r = np.concatenate([nu_rows.ravel(), mu_idx.ravel(), mu_idx.ravel()])
    off_c = np.concatenate([th_cols.ravel(), theta_idx[:, :-1].ravel(), theta_idx[:, 1:].ravel()])
    off_v = np.concatenate([np.where(pen3, st_vals, 0.0).ravel(),
                            np.ones(mu_idx.size), -np.ones(mu_idx.size)])
    rows_all = np.concatenate([np.arange(size), off_r, off_c])
    cols_all = np.concatenate([np.arange(size), off_c, off_r])
    band = np.zeros((3 * bw + 1, size))
    gbtrf, gbtrs = linalg.lapack.get_lapack_funcs(("gbtrf", "gbtrs"), (band,))

    status = STATUS_MAXITER
    it = 0
    while True:
        dt = _np_apply(stencil, theta, m)
        rp1 = np.where(act, -tau * theta - e + s1 + tau * yv, 0.0)
        rp2 = np.where(act, (1.0 - tau) * theta - e + s2 - (1.0 - tau) * yv, 0.0)
        rp3 = np.where(pen, dt - g + s3, 0.0)
        rp4 = np.where(pen, -dt - g + s4, 0.0)
        rp5 = theta[:, :-1] - theta[:, 1:] + s5
        gap = float(np.sum(s1 * z1 + s2 * z2) + np.sum(s3 * z3 + s4 * z4) + np.sum(s5 * z5))
        pobj = float(np.sum(theta * (0.5 * gamma * theta + lin)) + np.sum(np.where(act, e, 0.0))
                     + np.sum(np.where(pen, lam * g, 0.0)))
        rdt = (gamma * theta + lin + _np_apply_t(stencil, z3 - z4, n)
               + np.where(act, -tau * z1 + (1.0 - tau) * z2, 0.0))
        rdt[:, :-1] += z5
        rdt[:, 1:] -= z5
        rde = np.where(act, 1.0 - z1 - z2, 0.0)
        rdg = np.where(pen, lam - z3 - z4, 0.0)
        pres = float(np.sqrt(np.sum(rp1 ** 2) + np.sum(rp2 ** 2) + np.sum(rp3 ** 2)
                             + np.sum(rp4 ** 2) + np.sum(rp5 ** 2))) / hnorm
        dres = float(np.sqrt(np.sum(rdt ** 2) + np.sum(rde ** 2) + np.sum(rdg ** 2))) / cnorm
        rgap = gap / max(1.0, abs(pobj))
        if pres <= tol and dres <= tol and rgap <= tol:
            status = STATUS_CONVERGED
            break
        if it >= max_iter:
            break
        it += 1
        mu = gap / max(ncon, 1)

        w1 = np.where(act, z1 / s1, 0.0)
        w2 = np.where(act, z2 / s2, 0.0)
        w12 = np.where(act, w1 + w2, 1.0)
        w3 = np.where(pen, z3 / s3, 0.0)
        w4 = np.where(pen, z4 / s4, 0.0)
        w34 = np.where(pen, w3 + w4, 1.0)
        diag = np.empty(size)
        diag[theta_idx.ravel()] = (gamma + REG + w1 * w2 / w12).ravel()
        diag[nu_idx.ravel()] = np.where(pen, -0.25 * (s3 / np.where(pen, z3, 1.0) + s4 / np.where(pen, z4, 1.0)),
                                        -1.0).ravel()
        diag[mu_idx.ravel()] = (-s5 / z5).ravel()
        vals = np.concatenate([diag, off_v, off_v])
        kmat = sparse.csr_matrix((vals, (rows_all, cols_all)), shape=(size, size))
        band[:] = 0.0
        band[2 * bw + rows_all - cols_all, cols_all] = vals
        lu, piv, flag = gbtrf(band, bw, bw)
        if flag != 0:
            status = STATUS_BREAKDOWN
            break

        def solve(b):
            x, _ = gbtrs(lu, bw, bw, b, piv)
            for _ in range(REFINE):
                r, _ = gbtrs(lu, bw, bw, b - kmat @ x, piv)
                x = x + r
            return x

        sigma = 0.0
        for phase in range(2):
            rc1 = s1 * z1
            rc2 = s2 * z2
            rc3 = s3 * z3
            rc4 = s4 * z4
            rc5 = s5 * z5
            if phase == 1:
                rc1 = rc1 + as1 * az1 - sigma * mu
                rc2 = rc2 + as2 * az2 - sigma * mu
                rc3 = rc3 + as3 * az3 - sigma * mu
                rc4 = rc4 + as4 * az4 - sigma * mu
                rc5 = rc5 + as5 * az5 - sigma * mu
            t1 = np.where(act, (-rc1 + z1 * rp1) / s1, 0.0)
            t2 = np.where(act, (-rc2 + z2 * rp2) / s2, 0.0)
            t3 = np.where(pen, (-rc3 + z3 * rp3) / s3, 0.0)
            t4 = np.where(pen, (-rc4 + z4 * rp4) / s4, 0.0)
            t5 = (-rc5 + z5 * rp5) / s5
            bg = -rdg + t3 + t4
            cm = np.where(pen, (t3 - t4) + (w4 - w3) * bg / w34, 0.0)
            be = -rde + t1 + t2
            b = -rdt - _np_apply_t(stencil, cm, n)
            b -= np.where(act, -tau * t1 + (1.0 - tau) * t2 + (tau * w1 - (1.0 - tau) * w2) * be / w12, 0.0)
            b[:, :-1] -= t5
            b[:, 1:] += t5
            rhs = np.zeros(size)
            rhs[theta_idx.ravel()] = b.ravel()
            x = solve(rhs)
            dth = x[theta_idx]
            g1 = np.where(act, -(be + w2 * dth) / w12, 0.0)
            g2 = np.where(act, (w1 * dth - be) / w12, 0.0)
            de = np.where(act, -tau * dth - g1, 0.0)
            ds1 = np.where(act, -rp1 - g1, 0.0)
            ds2 = np.where(act, -rp2 - g2, 0.0)
            dz1 = t1 + w1 * g1
            dz2 = t2 + w2 * g2
            half = 0.5 * x[nu_idx]
            w3s = np.where(pen, w3, 1.0)
            w4s = np.where(pen, w4, 1.0)
            g3 = np.where(pen, half / w3s - bg / w34, 0.0)
            g4 = np.where(pen, -half / w4s - bg / w34, 0.0)
            dg = -0.5 * (g3 + g4)
            ds3 = np.where(pen, -rp3 - g3, 0.0)
            ds4 = np.where(pen, -rp4 - g4, 0.0)
            dz3 = t3 + w3 * g3
            dz4 = t4 + w4 * g4
            dmu = x[mu_idx]
            ds5 = -rp5 - dmu * s5 / z5
            dz5 = t5 + dmu
            alpha = min(_max_step(s1, ds1, act), _max_step(s2, ds2, act),
                        _max_step(z1, dz1, act), _max_step(z2, dz2, act),
                        _max_step(s3, ds3, pen), _max_step(s4, ds4, pen),
                        _max_step(z3, dz3, pen), _max_step(z4, dz4, pen),
                        _max_step(s5, ds5, cross), _max_step(z5, dz5, cross))
            if phase == 0:
                as1, az1, as2, az2 = ds1, dz1, ds2, dz2
                as3, az3, as4, az4 = ds3, dz3, ds4, dz4
                as5, az5 = ds5, dz5
                gap_aff = float(np.sum((s1 + alpha * ds1) * (z1 + alpha * dz1) * act)
                                + np.sum((s2 + alpha * ds2) * (z2 + alpha * dz2) * act)
                                + np.sum((s3 + alpha * ds3) * (z3 + alpha * dz3) * pen)
                                + np.sum((s4 + alpha * ds4) * (z4 + alpha * dz4) * pen)
                                + np.sum((s5 + alpha * ds5) * (z5 + alpha * dz5)))
                sigma = (gap_aff / max(gap, 1e-300)) ** 3
        alpha = min(1.0, STEP_FRACTION * alpha)
        theta += alpha * dth
        e += alpha * de
        g += alpha * dg
        s1 += alpha * ds1; s2 += alpha * ds2; z1 += alpha * dz1; z2 += alpha * dz2
        s3 += alpha * ds3; s4 += alpha * ds4; z3 += alpha * dz3; z4 += alpha * dz4
        s5 += alpha * ds5; z5 += alpha * dz5
    info[0] = pres
    info[1] = dres
    info[2] = rgap
    info[3] = status
    info[4] = pobj
    return it


ipm = nb_ipm if USE_NUMBA else np_ipm
