"""Low-level numeric kernels.

Every kernel exists twice: a loop version compiled by numba (``nb_*``) and a
vectorised numpy/scipy version (``np_*``). The public aliases at the bottom of
the module pick one according to :mod:`qtrend._backend`.
"""
import numpy as np
from scipy import linalg

from ._backend import USE_NUMBA, njit


def diff_stencil(order):
    """Coefficients of the forward difference of the given order, e.g. [1, -2, 1]."""
    s = np.array([1.0])
    for _ in range(order):
        s = np.concatenate([-s, [0.0]]) + np.concatenate([[0.0], s])
    return s


# --------------------------------------------------------------------------
# difference operator products

@njit
def nb_diff_apply(stencil, v, out):
    p = stencil.shape[0]
    m = out.shape[0]
    for r in range(m):
        acc = 0.0
        for q in range(p):
            acc += stencil[q] * v[r + q]
        out[r] = acc
    return out


@njit
def nb_diff_apply_t(stencil, u, out):
    p = stencil.shape[0]
    m = u.shape[0]
    out[:] = 0.0
    for r in range(m):
        ur = u[r]
        for q in range(p):
            out[r + q] += stencil[q] * ur
    return out


def np_diff_apply(stencil, v, out):
    m = out.shape[0]
    out[:] = 0.0
    for q in range(stencil.shape[0]):
        out += stencil[q] * v[q:q + m]
    return out


def np_diff_apply_t(stencil, u, out):
    m = u.shape[0]
    out[:] = 0.0
    for q in range(stencil.shape[0]):
        out[q:q + m] += stencil[q] * u
    return out


# --------------------------------------------------------------------------
# banded SPD systems, lower storage: ab[d, i] = A[i + d, i]

@njit
def nb_gram_band(stencil, n, diag_shift, scale, ab):
    """Fill ``ab`` with the lower band of ``diag_shift*I + scale*D'D``."""
    order = stencil.shape[0] - 1
    m = n - order
    ab[:, :] = 0.0
    for r in range(m):
        for a in range(order + 1):
            for b in range(a, order + 1):
                ab[b - a, r + a] += scale * stencil[a] * stencil[b]
    for i in range(n):
        ab[0, i] += diag_shift
    return ab


def np_gram_band(stencil, n, diag_shift, scale, ab):
    order = stencil.shape[0] - 1
    m = n - order
    ab[:, :] = 0.0
    for a in range(order + 1):
        for b in range(a, order + 1):
            ab[b - a, a:a + m] += scale * stencil[a] * stencil[b]
    ab[0] += diag_shift
    return ab


@njit
def nb_band_cholesky(ab, cb):
    """Lower banded Cholesky factor. Returns False if a pivot is not positive."""
    bw = ab.shape[0] - 1
    n = ab.shape[1]
    cb[:, :] = 0.0
    for j in range(n):
        s = ab[0, j]
        for k in range(max(0, j - bw), j):
            lk = cb[j - k, k]
            s -= lk * lk
        if not s > 0.0:
            return False
        d = np.sqrt(s)
        cb[0, j] = d
        for i in range(j + 1, min(n, j + bw + 1)):
            s = ab[i - j, j]
            for k in range(max(0, i - bw), j):
                s -= cb[i - k, k] * cb[j - k, k]
            cb[i - j, j] = s / d
    return True


@njit
def nb_band_solve(cb, rhs):
    """Solve L L' x = rhs in place for every column of the 2-D array ``rhs``."""
    bw = cb.shape[0] - 1
    n = cb.shape[1]
    ncol = rhs.shape[1]
    for c in range(ncol):
        for i in range(n):
            s = rhs[i, c]
            for k in range(max(0, i - bw), i):
                s -= cb[i - k, k] * rhs[k, c]
            rhs[i, c] = s / cb[0, i]
        for i in range(n - 1, -1, -1):
            s = rhs[i, c]
            for k in range(i + 1, min(n, i + bw + 1)):
                s -= cb[k - i, i] * rhs[k, c]
            rhs[i, c] = s / cb[0, i]
    return rhs


def np_band_cholesky(ab, cb):
    try:
        cb[:, :] = linalg.cholesky_banded(ab, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return False
    return True


def np_band_solve(cb, rhs):
    rhs[...] = linalg.cho_solve_banded((cb, True), rhs, check_finite=False)
    return rhs


# --------------------------------------------------------------------------
# proximal maps

@njit
def nb_prox_check(v, taus, weights, c, out):
    """Row i, column j: prox of c*w_i*rho_{tau_j} evaluated at v[i, j]."""
    n, J = v.shape
    for j in range(J):
        tau = taus[j]
        for i in range(n):
            cw = c * weights[i]
            x = v[i, j]
            if x > cw * tau:
                out[i, j] = x - cw * tau
            elif x < cw * (tau - 1.0):
                out[i, j] = x - cw * (tau - 1.0)
            else:
                out[i, j] = 0.0
    return out


def np_prox_check(v, taus, weights, c, out):
    cw = c * weights[:, None]
    hi = cw * taus[None, :]
    lo = cw * (taus[None, :] - 1.0)
    out[...] = np.where(v > hi, v - hi, np.where(v < lo, v - lo, 0.0))
    return out


@njit
def nb_soft_threshold(v, t, out):
    """Column j thresholded at t[j]."""
    n, J = v.shape
    for j in range(J):
        tj = t[j]
        for i in range(n):
            x = v[i, j]
            if x > tj:
                out[i, j] = x - tj
            elif x < -tj:
                out[i, j] = x + tj
            else:
                out[i, j] = 0.0
    return out


def np_soft_threshold(v, t, out):
    out[...] = np.sign(v) * np.maximum(np.abs(v) - t[None, :], 0.0)
    return out


# --------------------------------------------------------------------------
# isotonic projection of each row (pool adjacent violators)

@njit
def nb_pava_rows(v, out):
    n, J = v.shape
    vals = np.empty(J)
    wts = np.empty(J)
    for i in range(n):
        nb = 0
        for j in range(J):
            vals[nb] = v[i, j]
            wts[nb] = 1.0
            nb += 1
            while nb > 1 and vals[nb - 2] > vals[nb - 1]:
                w = wts[nb - 2] + wts[nb - 1]
                vals[nb - 2] = (wts[nb - 2] * vals[nb - 2] + wts[nb - 1] * vals[nb - 1]) / w
                wts[nb - 2] = w
                nb -= 1
        j = 0
        for b in range(nb):
            for _ in range(int(wts[b])):
                out[i, j] = vals[b]
                j += 1
    return out


def np_pava_rows(v, out):
    # max-min formula: x_i = max_{a<=i} min_{b>=i} mean(v[a..b])
    n, J = v.shape
    if J == 1:
        out[...] = v
        return out
    csum = np.concatenate([np.zeros((n, 1)), np.cumsum(v, axis=1)], axis=1)
    a = np.arange(J)[:, None]
    b = np.arange(J)[None, :]
    upper = b >= a
    cnt = np.where(upper, b - a + 1, 1).astype(float)
    avg = (csum[:, None, 1:] - csum[:, :J, None]) / cnt
    avg = np.where(upper[None], avg, np.inf)
    suffix_min = np.minimum.accumulate(avg[:, :, ::-1], axis=2)[:, :, ::-1]
    suffix_min = np.where(upper[None], suffix_min, -np.inf)
    out[...] = suffix_min.max(axis=1)
    # pooled blocks must hold bit-identical values for tie detection
    return _equalize_pools(v, out)


def _equalize_pools(v, out):
    n, J = out.shape
    same = np.isclose(out[:, 1:], out[:, :-1], rtol=1e-13, atol=1e-13)
    if not same.any():
        return out
    for i in np.nonzero(same.any(axis=1))[0]:
        j = 0
        while j < J:
            k = j
            while k + 1 < J and same[i, k]:
                k += 1
            if k > j:
                out[i, j:k + 1] = v[i, j:k + 1].mean()
            j = k + 1
    return out


# --------------------------------------------------------------------------
# total-variation prox of a single vector (Condat's direct algorithm)

@njit
def nb_tv_prox(inp, lam, out):
    """argmin_x 0.5*||x - inp||^2 + lam*sum|x[i+1] - x[i]|."""
    width = inp.shape[0]
    if width == 0:
        return out
    if lam <= 0.0:
        out[:] = inp
        return out
    k = 0
    k0 = 0
    umin = lam
    umax = -lam
    vmin = inp[0] - lam
    vmax = inp[0] + lam
    kplus = 0
    kminus = 0
    twolam = 2.0 * lam
    minlam = -lam
    while True:
        while k == width - 1:
            if umin < 0.0:
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                if k0 >= width:
                    return out
                k = k0
                kminus = k0
                vmin = inp[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                if k0 >= width:
                    return out
                k = k0
                kplus = k0
                vmax = inp[k0]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return out
        umin += inp[k + 1] - vmin
        if umin < minlam:
            while True:
                out[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kplus = k0
            kminus = k0
            vmin = inp[k0]
            vmax = vmin + twolam
            umin = lam
            umax = minlam
        else:
            umax += inp[k + 1] - vmax
            if umax > lam:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                kminus = k0
                vmax = inp[k0]
                vmin = vmax - twolam
                umin = lam
                umax = minlam
            else:
                k += 1
                if umin >= lam:
                    kminus = k
                    vmin += (umin - lam) / (kminus - k0 + 1)
                    umin = lam
                if umax <= minlam:
                    kplus = k
                    vmax += (umax + lam) / (kplus - k0 + 1)
                    umax = minlam


def np_tv_prox(inp, lam, out):
    # no vectorised form of the taut-string pass exists; reuse the loop
    return nb_tv_prox.py_func(inp, lam, out) if hasattr(nb_tv_prox, "py_func") \
        else nb_tv_prox(inp, lam, out)


# --------------------------------------------------------------------------
# fused inner ADMM for the multi-quantile block problem
#
# constraints:  theta + r = y,   S theta - z = 0,   theta - phi = 0
# S is the difference operator of order `order` ("diff" split) or of order
# `order - 1` followed by an exact TV prox on z ("tv" split).

@njit
def _nb_factor_all(split_stencil, n, gamma_c, pen, zw, ab, cbs):
    for j in range(zw.shape[0]):
        nb_gram_band(split_stencil, n, gamma_c + 2.0 * pen, pen * zw[j], ab)
        if not nb_band_cholesky(ab, cbs[j]):
            return False
    return True


@njit
def nb_admm(y, w, taus, lams, zw, split_stencil, use_tv, anchor, omega, gamma_c,
            theta, r, z, phi, u1, u2, u3, pen, alpha, max_iter,
            eps_abs, eps_rel, adapt, adapt_until, info):
    n, J = theta.shape
    m = z.shape[0]
    bw = split_stencil.shape[0] - 1
    ab = np.empty((bw + 1, n))
    cbs = np.empty((J, bw + 1, n))
    if not _nb_factor_all(split_stencil, n, gamma_c, pen, zw, ab, cbs):
        info[5] = -1.0
        return 0
    rhs = np.empty((n, 1))
    st = np.empty((m, J))
    col_n = np.empty(n)
    col_m = np.empty(m)
    h1 = np.empty((n, J))
    h2 = np.empty((m, J))
    h3 = np.empty((n, J))
    v = np.empty((n, J))
    vz = np.empty((m, J))
    r_old = np.empty((n, J))
    z_old = np.empty((m, J))
    phi_old = np.empty((n, J))
    tcol_in = np.empty(m)
    tcol_out = np.empty(m)
    thr = np.empty(J)
    dres = np.empty(n)
    rp = 0.0
    sd = 0.0
    eps_p = 0.0
    eps_d = 0.0
    ynorm2 = 0.0
    for i in range(n):
        ynorm2 += y[i] * y[i]
    ynorm = np.sqrt(ynorm2 * J)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        # theta update
        for j in range(J):
            for i in range(m):
                col_m[i] = z[i, j] + u2[i, j]
            nb_diff_apply_t(split_stencil, col_m, col_n)
            for i in range(n):
                rhs[i, 0] = gamma_c * anchor[i, j] - omega[i, j] + pen * (
                    (y[i] - r[i, j] - u1[i, j]) + zw[j] * col_n[i] + (phi[i, j] + u3[i, j]))
            nb_band_solve(cbs[j], rhs)
            for i in range(n):
                theta[i, j] = rhs[i, 0]
                col_n[i] = rhs[i, 0]
            nb_diff_apply(split_stencil, col_n, col_m)
            for i in range(m):
                st[i, j] = col_m[i]
        # relaxation
        for j in range(J):
            for i in range(n):
                h1[i, j] = alpha * theta[i, j] + (1.0 - alpha) * (y[i] - r[i, j])
                h3[i, j] = alpha * theta[i, j] + (1.0 - alpha) * phi[i, j]
                r_old[i, j] = r[i, j]
                phi_old[i, j] = phi[i, j]
                v[i, j] = y[i] - h1[i, j] - u1[i, j]
            for i in range(m):
                h2[i, j] = alpha * st[i, j] + (1.0 - alpha) * z[i, j]
                z_old[i, j] = z[i, j]
                vz[i, j] = h2[i, j] - u2[i, j]
        # separable block
        nb_prox_check(v, taus, w, 1.0 / pen, r)
        for j in range(J):
            thr[j] = lams[j] / (pen * zw[j])
        if use_tv:
            for j in range(J):
                for i in range(m):
                    tcol_in[i] = vz[i, j]
                nb_tv_prox(tcol_in, thr[j], tcol_out)
                for i in range(m):
                    z[i, j] = tcol_out[i]
        else:
            nb_soft_threshold(vz, thr, z)
        for j in range(J):
            for i in range(n):
                v[i, j] = h3[i, j] - u3[i, j]
        nb_pava_rows(v, phi)
        # duals and residuals
        rp2 = 0.0
        an2 = 0.0
        bn2 = 0.0
        for j in range(J):
            for i in range(n):
                u1[i, j] += h1[i, j] + r[i, j] - y[i]
                u3[i, j] += phi[i, j] - h3[i, j]
                a = theta[i, j] + r[i, j] - y[i]
                b = phi[i, j] - theta[i, j]
                rp2 += a * a + b * b
                an2 += 2.0 * theta[i, j] * theta[i, j]
                bn2 += r[i, j] * r[i, j] + phi[i, j] * phi[i, j]
            for i in range(m):
                u2[i, j] += z[i, j] - h2[i, j]
                a = z[i, j] - st[i, j]
                rp2 += zw[j] * a * a
                an2 += zw[j] * st[i, j] * st[i, j]
                bn2 += zw[j] * z[i, j] * z[i, j]
        sd2 = 0.0
        au2 = 0.0
        for j in range(J):
            for i in range(m):
                col_m[i] = z[i, j] - z_old[i, j]
            nb_diff_apply_t(split_stencil, col_m, dres)
            for i in range(n):
                a = (r[i, j] - r_old[i, j]) - zw[j] * dres[i] - (phi[i, j] - phi_old[i, j])
                sd2 += a * a
            for i in range(m):
                col_m[i] = u2[i, j]
            nb_diff_apply_t(split_stencil, col_m, dres)
            for i in range(n):
                a = u1[i, j] - zw[j] * dres[i] - u3[i, j]
                au2 += a * a
        rp = np.sqrt(rp2)
        sd = pen * np.sqrt(sd2)
        pnorm = max(np.sqrt(an2), max(np.sqrt(bn2), ynorm))
        dnorm = pen * np.sqrt(au2)
        eps_p = np.sqrt(2.0 * n * J + m * J) * eps_abs + eps_rel * pnorm
        eps_d = np.sqrt(1.0 * n * J) * eps_abs + eps_rel * dnorm
        if rp <= eps_p and sd <= eps_d:
            converged = True
            break
        if adapt and info[4] < adapt_until and it % 20 == 0:
            scale = 0.0
            if rp > 10.0 * sd and pen < 1e6:
                scale = 2.0
            elif sd > 10.0 * rp and pen > 1e-6:
                scale = 0.5
            if scale != 0.0:
                pen *= scale
                for j in range(J):
                    for i in range(n):
                        u1[i, j] /= scale
                        u3[i, j] /= scale
                    for i in range(m):
                        u2[i, j] /= scale
                if not _nb_factor_all(split_stencil, n, gamma_c, pen, zw, ab, cbs):
                    info[5] = -1.0
                    return it
        info[4] += 1.0
    info[0] = pen
    info[1] = rp
    info[2] = sd
    info[3] = eps_p
    info[6] = eps_d
    info[5] = 1.0 if converged else 0.0
    return it


def np_admm(y, w, taus, lams, zw, split_stencil, use_tv, anchor, omega, gamma_c,
            theta, r, z, phi, u1, u2, u3, pen, alpha, max_iter,
            eps_abs, eps_rel, adapt, adapt_until, info):
    n, J = theta.shape
    m = z.shape[0]
    bw = split_stencil.shape[0] - 1
    ab = np.empty((bw + 1, n))
    cbs = np.empty((J, bw + 1, n))

    def factor(p):
        for j in range(J):
            np_gram_band(split_stencil, n, gamma_c + 2.0 * p, p * zw[j], ab)
            if not np_band_cholesky(ab, cbs[j]):
                return False
        return True

    def s_apply(x):
        out = np.zeros((m, x.shape[1]))
        for q in range(bw + 1):
            out += split_stencil[q] * x[q:q + m]
        return out

    def s_apply_t(x):
        out = np.zeros((n, x.shape[1]))
        for q in range(bw + 1):
            out[q:q + m] += split_stencil[q] * x
        return out

    if not factor(pen):
        info[5] = -1.0
        return 0
    yc = y[:, None]
    ynorm = np.sqrt(np.dot(y, y) * J)
    rp = sd = eps_p = eps_d = 0.0
    tv_out = np.empty(m)
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        rhs = gamma_c * anchor - omega + pen * ((yc - r - u1) + zw * s_apply_t(z + u2) + (phi + u3))
        for j in range(J):
            col = np.ascontiguousarray(rhs[:, j:j + 1])
            np_band_solve(cbs[j], col)
            theta[:, j] = col[:, 0]
        st = s_apply(theta)
        h1 = alpha * theta + (1.0 - alpha) * (yc - r)
        h2 = alpha * st + (1.0 - alpha) * z
        h3 = alpha * theta + (1.0 - alpha) * phi
        r_old, z_old, phi_old = r.copy(), z.copy(), phi.copy()
        np_prox_check(yc - h1 - u1, taus, w, 1.0 / pen, r)
        thr = lams / (pen * zw)
        if use_tv:
            vz = h2 - u2
            for j in range(J):
                np_tv_prox(np.ascontiguousarray(vz[:, j]), thr[j], tv_out)
                z[:, j] = tv_out
        else:
            np_soft_threshold(h2 - u2, thr, z)
        np_pava_rows(h3 - u3, phi)
        u1 += h1 + r - yc
        u2 += z - h2
        u3 += phi - h3
        rp = np.sqrt(np.sum((theta + r - yc) ** 2) + np.sum(zw * (z - st) ** 2)
                     + np.sum((phi - theta) ** 2))
        sd = pen * np.sqrt(np.sum(((r - r_old) - zw * s_apply_t(z - z_old) - (phi - phi_old)) ** 2))
        an = np.sqrt(2.0 * np.sum(theta ** 2) + np.sum(zw * st ** 2))
        bn = np.sqrt(np.sum(r ** 2) + np.sum(zw * z ** 2) + np.sum(phi ** 2))
        pnorm = max(an, bn, ynorm)
        dnorm = pen * np.sqrt(np.sum((u1 - zw * s_apply_t(u2) - u3) ** 2))
        eps_p = np.sqrt(2.0 * n * J + m * J) * eps_abs + eps_rel * pnorm
        eps_d = np.sqrt(1.0 * n * J) * eps_abs + eps_rel * dnorm
        if rp <= eps_p and sd <= eps_d:
            converged = True
            break
        if adapt and info[4] < adapt_until and it % 20 == 0:
            scale = 0.0
            if rp > 10.0 * sd and pen < 1e6:
                scale = 2.0
            elif sd > 10.0 * rp and pen > 1e-6:
                scale = 0.5
            if scale != 0.0:
                pen *= scale
                u1 /= scale
                u2 /= scale
                u3 /= scale
                if not factor(pen):
                    info[5] = -1.0
                    return it
        info[4] += 1.0
    info[0] = pen
    info[1] = rp
    info[2] = sd
    info[3] = eps_p
    info[6] = eps_d
    info[5] = 1.0 if converged else 0.0
    return it


if USE_NUMBA:
    diff_apply, diff_apply_t = nb_diff_apply, nb_diff_apply_t
    gram_band, band_cholesky, band_solve = nb_gram_band, nb_band_cholesky, nb_band_solve
    prox_check, soft_threshold = nb_prox_check, nb_soft_threshold
    pava_rows, tv_prox, admm = nb_pava_rows, nb_tv_prox, nb_admm
else:
    diff_apply, diff_apply_t = np_diff_apply, np_diff_apply_t
    gram_band, band_cholesky, band_solve = np_gram_band, np_band_cholesky, np_band_solve
    prox_check, soft_threshold = np_prox_check, np_soft_threshold
    pava_rows, tv_prox, admm = np_pava_rows, np_tv_prox, np_admm

