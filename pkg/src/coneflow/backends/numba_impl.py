"""Numba-compiled implementations of the hot per-step kernels.

Same contracts and ray packing as :mod:`coneflow.backends.numpy_impl`;
the banded solver is a port of the classic partial-pivoting band LU
(LINPACK dgbfa/dgbsl) so the whole step runs inside one jitted call.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
ERR_DEGENERATE = 1
ERR_SINGULAR = 2

KL = 5
KU = 5


@njit(cache=True)
def _extend(xy, rp):
    n1 = xy.shape[0]
    ext = np.empty((n1 + 4, 2))
    for i in range(n1):
        ext[i + 2, 0] = xy[i, 0]
        ext[i + 2, 1] = xy[i, 1]
    c1, s1 = rp[4], rp[5]
    c2, s2 = rp[10], rp[11]
    ext[1, 0] = c1 * xy[1, 0] + s1 * xy[1, 1]
    ext[1, 1] = s1 * xy[1, 0] - c1 * xy[1, 1]
    ext[0, 0] = c1 * xy[2, 0] + s1 * xy[2, 1]
    ext[0, 1] = s1 * xy[2, 0] - c1 * xy[2, 1]
    ext[n1 + 2, 0] = c2 * xy[n1 - 2, 0] + s2 * xy[n1 - 2, 1]
    ext[n1 + 2, 1] = s2 * xy[n1 - 2, 0] - c2 * xy[n1 - 2, 1]
    ext[n1 + 3, 0] = c2 * xy[n1 - 3, 0] + s2 * xy[n1 - 3, 1]
    ext[n1 + 3, 1] = s2 * xy[n1 - 3, 0] - c2 * xy[n1 - 3, 1]
    return ext


@njit(cache=True)
def _ext_geometry(ext):
    m = ext.shape[0]
    s = np.empty(m)
    s[0] = 0.0
    for i in range(1, m):
        dx = ext[i, 0] - ext[i - 1, 0]
        dy = ext[i, 1] - ext[i - 1, 1]
        s[i] = s[i - 1] + np.sqrt(dx * dx + dy * dy)
    k = np.empty(m - 2)
    nu = np.empty((m - 2, 2))
    for i in range(1, m - 1):
        hl = s[i] - s[i - 1]
        hr = s[i + 1] - s[i]
        denom = hl * hr * (hl + hr)
        tx = (hl * hl * ext[i + 1, 0] - hr * hr * ext[i - 1, 0] + (hr * hr - hl * hl) * ext[i, 0]) / denom
        ty = (hl * hl * ext[i + 1, 1] - hr * hr * ext[i - 1, 1] + (hr * hr - hl * hl) * ext[i, 1]) / denom
        tn = np.sqrt(tx * tx + ty * ty)
        tx /= tn
        ty /= tn
        ax = 2.0 * (hr * ext[i - 1, 0] + hl * ext[i + 1, 0] - (hl + hr) * ext[i, 0]) / denom
        ay = 2.0 * (hr * ext[i - 1, 1] + hl * ext[i + 1, 1] - (hl + hr) * ext[i, 1]) / denom
        nux = -ty
        nuy = tx
        nu[i - 1, 0] = nux
        nu[i - 1, 1] = nuy
        k[i - 1] = -(ax * nux + ay * nuy)
    return s, k, nu


@njit(cache=True)
def _speed_core(ext, s, kk, nu_all, mode, lam):
    """V, nu, k at the curve nodes plus the multiplier actually used."""
    nk = kk.shape[0]  # n + 3
    n1 = nk - 2  # curve nodes
    v = np.empty(n1)
    nu = np.empty((n1, 2))
    k = np.empty(n1)
    lam_used = 0.0
    ok = OK
    if mode == 1:
        lam_used = lam
    elif mode == 2:
        i_k2 = 0.0
        i_k4 = 0.0
        i_ks2 = 0.0
        prev_k2 = 0.0
        prev_k4 = 0.0
        prev_ks2 = 0.0
        for i in range(n1):
            j = i + 1  # index into kk / sk
            hl = s[j + 1] - s[j]
            hr = s[j + 2] - s[j + 1]
            denom = hl * hr * (hl + hr)
            ks = (hl * hl * kk[j + 1] - hr * hr * kk[j - 1] + (hr * hr - hl * hl) * kk[j]) / denom
            k2 = kk[j] * kk[j]
            k4 = k2 * k2
            ks2 = ks * ks
            if i > 0:
                w = 0.5 * (s[j + 1] - s[j])
                i_k2 += w * (k2 + prev_k2)
                i_k4 += w * (k4 + prev_k4)
                i_ks2 += w * (ks2 + prev_ks2)
            prev_k2 = k2
            prev_k4 = k4
            prev_ks2 = ks2
        if i_k2 < 1.0e-14:
            ok = ERR_DEGENERATE
        else:
            lam_used = (-i_ks2 + 0.5 * i_k4) / i_k2
    for i in range(n1):
        j = i + 1
        hl = s[j + 1] - s[j]
        hr = s[j + 2] - s[j + 1]
        denom = hl * hr * (hl + hr)
        kss = 2.0 * (hr * kk[j - 1] + hl * kk[j + 1] - (hl + hr) * kk[j]) / denom
        ki = kk[j]
        v[i] = kss + 0.5 * ki * ki * ki - lam_used * ki
        k[i] = ki
        nu[i, 0] = nu_all[j, 0]
        nu[i, 1] = nu_all[j, 1]
    return v, nu, k, lam_used, ok


@njit(cache=True)
def flow_speed(xy, rp, mode, lam):
    ext = _extend(xy, rp)
    s, kk, nu_all = _ext_geometry(ext)
    return _speed_core(ext, s, kk, nu_all, mode, lam)


@njit(cache=True)
def energy_scalars(xy, rp):
    """Length and elastic energy ``E0 = int k^2 / 2`` of a node array."""
    ext = _extend(xy, rp)
    s, kk, _ = _ext_geometry(ext)
    n1 = xy.shape[0]
    e0 = 0.0
    for i in range(1, n1):
        w = 0.5 * (s[i + 2] - s[i + 1])
        e0 += w * (kk[i + 1] * kk[i + 1] + kk[i] * kk[i])
    return s[n1 + 1] - s[2], 0.5 * e0


@njit(cache=True)
def _d4_row(s, i0, ic, w):
    """Fourth-derivative weights from the five grid points s[i0..i0+4] about s[ic]."""
    a = np.empty((5, 5))
    b = np.empty(5)
    hbar = (s[i0 + 4] - s[i0]) / 4.0
    for m in range(5):
        d = (s[i0 + m] - s[ic]) / hbar
        p = 1.0
        for q in range(5):
            a[q, m] = p
            p *= d
    for q in range(5):
        b[q] = 0.0
    b[4] = 24.0
    # dense 5x5 gaussian elimination with partial pivoting
    for col in range(5):
        piv = col
        amax = abs(a[col, col])
        for r in range(col + 1, 5):
            if abs(a[r, col]) > amax:
                amax = abs(a[r, col])
                piv = r
        if piv != col:
            for c in range(5):
                t = a[col, c]
                a[col, c] = a[piv, c]
                a[piv, c] = t
            t = b[col]
            b[col] = b[piv]
            b[piv] = t
        inv = 1.0 / a[col, col]
        for r in range(col + 1, 5):
            f = a[r, col] * inv
            if f != 0.0:
                for c in range(col, 5):
                    a[r, c] -= f * a[col, c]
                b[r] -= f * b[col]
    for r in range(4, -1, -1):
        acc = b[r]
        for c in range(r + 1, 5):
            acc -= a[r, c] * w[c]
        w[r] = acc / a[r, r]
    h4 = hbar * hbar * hbar * hbar
    for m in range(5):
        w[m] /= h4


@njit(cache=True)
def _gbtrf(afb, n, ipvt):
    """Band LU with partial pivoting, LAPACK-style storage (2*KL+KU+1 rows)."""
    m = KL + KU
    info = -1
    ju = -1
    for kcol in range(n - 1):
        lm = min(KL, n - 1 - kcol)
        l = m
        amax = abs(afb[m, kcol])
        for i in range(1, lm + 1):
            v = abs(afb[m + i, kcol])
            if v > amax:
                amax = v
                l = m + i
        ipvt[kcol] = l - m + kcol
        if afb[l, kcol] == 0.0:
            info = kcol
            continue
        if l != m:
            t = afb[l, kcol]
            afb[l, kcol] = afb[m, kcol]
            afb[m, kcol] = t
        t = -1.0 / afb[m, kcol]
        for i in range(1, lm + 1):
            afb[m + i, kcol] *= t
        ju = min(max(ju, KU + ipvt[kcol]), n - 1)
        mm = m
        ll = l
        for j in range(kcol + 1, ju + 1):
            ll -= 1
            mm -= 1
            t = afb[ll, j]
            if ll != mm:
                afb[ll, j] = afb[mm, j]
                afb[mm, j] = t
            if t != 0.0:
                for i in range(1, lm + 1):
                    afb[mm + i, j] += t * afb[m + i, kcol]
    ipvt[n - 1] = n - 1
    if afb[m, n - 1] == 0.0:
        info = n - 1
    return info


@njit(cache=True)
def _gbtrs(afb, n, ipvt, b):
    m = KL + KU
    for kcol in range(n - 1):
        lm = min(KL, n - 1 - kcol)
        l = ipvt[kcol]
        t = b[l]
        if l != kcol:
            b[l] = b[kcol]
            b[kcol] = t
        for i in range(1, lm + 1):
            b[kcol + i] += t * afb[m + i, kcol]
    for kb in range(n):
        kcol = n - 1 - kb
        b[kcol] /= afb[m, kcol]
        lm = min(kcol, m)
        t = -b[kcol]
        for i in range(1, lm + 1):
            b[kcol - i] += t * afb[m - i, kcol]


@njit(cache=True)
def semi_implicit_step(xy, rp, mode, lam, dt):
    n = xy.shape[0] - 1
    ext = _extend(xy, rp)
    s, kk, nu_all = _ext_geometry(ext)
    v, nu, k, lam_used, ok = _speed_core(ext, s, kk, nu_all, mode, lam)
    if ok != OK:
        return xy, lam_used, 0.0, ok

    mrows = 2 * (n + 1)
    diag = KL + KU
    afb = np.zeros((2 * KL + KU + 1, mrows))
    rhs = np.empty(mrows)
    w = np.empty(5)
    c1, s1 = rp[4], rp[5]
    c2, s2 = rp[10], rp[11]
    vmax = 0.0
    for i in range(n + 1):
        _d4_row(s, i, i + 2, w)
        d4x = 0.0
        d4y = 0.0
        for m in range(5):
            d4x += w[m] * ext[i + m, 0]
            d4y += w[m] * ext[i + m, 1]
        rhs[2 * i] = xy[i, 0] + dt * (v[i] * nu[i, 0] + d4x)
        rhs[2 * i + 1] = xy[i, 1] + dt * (v[i] * nu[i, 1] + d4y)
        av = abs(v[i])
        if av > vmax:
            vmax = av
        r = 2 * i
        afb[diag, r] += 1.0
        afb[diag, r + 1] += 1.0
        for m in range(5):
            j = i + m - 2
            wc = dt * w[m]
            if 0 <= j <= n:
                c = 2 * j
                afb[diag + r - c, c] += wc
                afb[diag + r - c, c + 1] += wc
            else:
                if j < 0:
                    c = -2 * j
                    rc, rs = c1, s1
                else:
                    c = 2 * (2 * n - j)
                    rc, rs = c2, s2
                afb[diag + r - c, c] += wc * rc
                afb[diag + r - (c + 1), c + 1] += wc * rs
                afb[diag + (r + 1) - c, c] += wc * rs
                afb[diag + (r + 1) - (c + 1), c + 1] += wc * (-rc)

    # Endpoint rows: ray-tangential update plus exact on-ray constraint.
    d1x, d1y, n1x, n1y = rp[0], rp[1], rp[2], rp[3]
    d2x, d2y, n2x, n2y = rp[6], rp[7], rp[8], rp[9]
    for c in range(6):
        rx = afb[diag - c, c]
        ry = afb[diag + 1 - c, c]
        afb[diag - c, c] = d1x * rx + d1y * ry
        afb[diag + 1 - c, c] = 0.0
    afb[diag + 1, 0] = n1x
    afb[diag, 1] = n1y
    t = d1x * rhs[0] + d1y * rhs[1]
    rhs[0] = t
    rhs[1] = 0.0

    rlast = mrows - 1
    for c in range(mrows - 6, mrows):
        rx = afb[diag + (rlast - 1) - c, c]
        ry = afb[diag + rlast - c, c]
        afb[diag + (rlast - 1) - c, c] = d2x * rx + d2y * ry
        afb[diag + rlast - c, c] = 0.0
    afb[diag + 1, mrows - 2] = n2x
    afb[diag, mrows - 1] = n2y
    t = d2x * rhs[mrows - 2] + d2y * rhs[mrows - 1]
    rhs[mrows - 2] = t
    rhs[mrows - 1] = 0.0

    ipvt = np.empty(mrows, dtype=np.int64)
    info = _gbtrf(afb, mrows, ipvt)
    if info != -1:
        return xy, lam_used, vmax, ERR_SINGULAR
    _gbtrs(afb, mrows, ipvt, rhs)
    out = np.empty_like(xy)
    for i in range(n + 1):
        out[i, 0] = rhs[2 * i]
        out[i, 1] = rhs[2 * i + 1]
    return out, lam_used, vmax, OK


@njit(cache=True)
def rk4_step(xy, rp, mode, lam, dt):
    v1, nu1, _, lam_used, ok = flow_speed(xy, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, 0.0, ok
    n1 = xy.shape[0]
    stage = np.empty_like(xy)
    acc = np.empty_like(xy)
    vmax = 0.0
    for i in range(n1):
        fx = v1[i] * nu1[i, 0]
        fy = v1[i] * nu1[i, 1]
        acc[i, 0] = fx
        acc[i, 1] = fy
        stage[i, 0] = xy[i, 0] + 0.5 * dt * fx
        stage[i, 1] = xy[i, 1] + 0.5 * dt * fy
        if abs(v1[i]) > vmax:
            vmax = abs(v1[i])
    v2, nu2, _, _, ok = flow_speed(stage, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, vmax, ok
    for i in range(n1):
        fx = v2[i] * nu2[i, 0]
        fy = v2[i] * nu2[i, 1]
        acc[i, 0] += 2.0 * fx
        acc[i, 1] += 2.0 * fy
        stage[i, 0] = xy[i, 0] + 0.5 * dt * fx
        stage[i, 1] = xy[i, 1] + 0.5 * dt * fy
    v3, nu3, _, _, ok = flow_speed(stage, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, vmax, ok
    for i in range(n1):
        fx = v3[i] * nu3[i, 0]
        fy = v3[i] * nu3[i, 1]
        acc[i, 0] += 2.0 * fx
        acc[i, 1] += 2.0 * fy
        stage[i, 0] = xy[i, 0] + dt * fx
        stage[i, 1] = xy[i, 1] + dt * fy
    v4, nu4, _, _, ok = flow_speed(stage, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, vmax, ok
    out = np.empty_like(xy)
    for i in range(n1):
        acc[i, 0] += v4[i] * nu4[i, 0]
        acc[i, 1] += v4[i] * nu4[i, 1]
        out[i, 0] = xy[i, 0] + (dt / 6.0) * acc[i, 0]
        out[i, 1] = xy[i, 1] + (dt / 6.0) * acc[i, 1]
    return out, lam_used, vmax, OK
