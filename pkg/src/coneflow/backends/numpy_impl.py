"""Pure-numpy implementations of the hot per-step kernels.

This is the fallback path (``CONEFLOW_BACKEND=numpy``) and the reference
the numba kernels are tested against.  All functions operate on plain
arrays; geometry conventions match :mod:`coneflow.curve`.

Ray data is packed as a flat float64 array of 12 entries per cone:
``[d1x, d1y, n1x, n1y, c1, s1, d2x, d2y, n2x, n2y, c2, s2]`` where ``d``
are ray directions, ``n`` ray normals and ``(c, s) = (cos 2*theta,
sin 2*theta)`` define the reflection across each ray.

Flow modes: 0 = free, 1 = length-penalised (constant lambda),
2 = length-constrained (lambda recomputed from the current curve).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import solve_banded

OK = 0
ERR_DEGENERATE = 1
ERR_SINGULAR = 2

KL = 5
KU = 5


def extend_with_ghosts(xy: np.ndarray, rp: np.ndarray) -> np.ndarray:
    """Reflect the near-boundary nodes across their rays: (N+5, 2) array."""
    ext = np.empty((xy.shape[0] + 4, 2))
    ext[2:-2] = xy
    c1, s1 = rp[4], rp[5]
    c2, s2 = rp[10], rp[11]
    for row, src, c, s in ((1, 1, c1, s1), (0, 2, c1, s1), (-2, -2, c2, s2), (-1, -3, c2, s2)):
        x, y = xy[src]
        ext[row, 0] = c * x + s * y
        ext[row, 1] = s * x - c * y
    return ext


def _ext_geometry(ext: np.ndarray):
    """Arc parameter, curvature and normals on the extended polyline.

    ``k`` and ``nu`` cover extended indices 1..len-2; with two ghost layers
    that is every curve node plus one ghost layer each side.
    """
    s = np.empty(ext.shape[0])
    s[0] = 0.0
    np.cumsum(np.linalg.norm(np.diff(ext, axis=0), axis=1), out=s[1:])
    hl = (s[1:-1] - s[:-2])[:, None]
    hr = (s[2:] - s[1:-1])[:, None]
    tau = (hl * hl * ext[2:] - hr * hr * ext[:-2] + (hr * hr - hl * hl) * ext[1:-1]) / (
        hl * hr * (hl + hr)
    )
    tau /= np.linalg.norm(tau, axis=1, keepdims=True)
    nu = np.column_stack([-tau[:, 1], tau[:, 0]])
    acc = 2.0 * (hr * ext[:-2] + hl * ext[2:] - (hl + hr) * ext[1:-1]) / (hl * hr * (hl + hr))
    k = -np.sum(acc * nu, axis=1)
    return s, k, nu


def _scalar_d(s: np.ndarray, f: np.ndarray, second: bool) -> np.ndarray:
    hl = s[1:-1] - s[:-2]
    hr = s[2:] - s[1:-1]
    denom = hl * hr * (hl + hr)
    if second:
        return 2.0 * (hr * f[:-2] + hl * f[2:] - (hl + hr) * f[1:-1]) / denom
    return (hl * hl * f[2:] - hr * hr * f[:-2] + (hr * hr - hl * hl) * f[1:-1]) / denom


def flow_speed(xy: np.ndarray, rp: np.ndarray, mode: int, lam: float):
    """Normal speed ``V = k_ss + k^3/2 - lambda k`` and unit normals at the nodes.

    Returns ``(V, nu, k, lambda_used, ok)``.
    """
    ext = extend_with_ghosts(xy, rp)
    s, kk, nu_all = _ext_geometry(ext)
    sk = s[1:-1]
    k = kk[1:-1]
    nu = nu_all[1:-1]
    kss = _scalar_d(sk, kk, second=True)
    if mode == 2:
        s_real = s[2:-2]
        i_k2 = np.trapezoid(k * k, s_real)
        if i_k2 < 1.0e-14:
            return k, nu, k, 0.0, ERR_DEGENERATE
        ks = _scalar_d(sk, kk, second=False)
        i_k4 = np.trapezoid(k**4, s_real)
        i_ks2 = np.trapezoid(ks * ks, s_real)
        lam_used = (-i_ks2 + 0.5 * i_k4) / i_k2
    elif mode == 1:
        lam_used = lam
    else:
        lam_used = 0.0
    v = kss + 0.5 * k**3 - lam_used * k
    return v, nu, k, lam_used, OK


def energy_scalars(xy: np.ndarray, rp: np.ndarray):
    """Length and elastic energy ``E0 = int k^2 / 2`` of a node array."""
    ext = extend_with_ghosts(xy, rp)
    s, kk, _ = _ext_geometry(ext)
    k = kk[1:-1]
    s_real = s[2:-2]
    return float(s_real[-1] - s_real[0]), 0.5 * float(np.trapezoid(k * k, s_real))


def _d4_weights(s: np.ndarray, n: int):
    """Five-point fourth-derivative weights at each node of the extended grid."""
    s5 = sliding_window_view(s, 5)[: n + 1]
    off = s5 - s5[:, 2:3]
    hbar = (off[:, 4] - off[:, 0]) / 4.0
    offn = off / hbar[:, None]
    powers = offn[:, None, :] ** np.arange(5)[None, :, None]
    rhs = np.zeros((n + 1, 5))
    rhs[:, 4] = 24.0
    w = np.linalg.solve(powers, rhs)
    return w / hbar[:, None] ** 4


def _band_row_get(ab: np.ndarray, i: int, cols: range) -> np.ndarray:
    return np.array([ab[KU + i - c, c] for c in cols])


def _band_row_set(ab: np.ndarray, i: int, cols: range, vals) -> None:
    for c, v in zip(cols, vals):
        ab[KU + i - c, c] = v


def semi_implicit_system(xy: np.ndarray, rp: np.ndarray, mode: int, lam: float, dt: float):
    """Banded system ``(I + dt*D4) z = alpha + dt*(V nu + D4 alpha)`` for the next positions.

    The fourth arc-length derivative acts on positions through the metric
    frozen at the current curve; ghost columns fold back onto interior
    nodes via the ray reflections, and the two scalar rows at each endpoint
    are replaced by the ray-tangential part of the update plus the on-ray
    constraint.

    Returns ``(ab, rhs, lambda_used, ok)`` with ``ab`` in
    ``scipy.linalg.solve_banded`` layout for bandwidths (5, 5).
    """
    n = xy.shape[0] - 1
    ext = extend_with_ghosts(xy, rp)
    s, kk, nu_all = _ext_geometry(ext)
    sk = s[1:-1]
    k = kk[1:-1]
    nu = nu_all[1:-1]
    kss = _scalar_d(sk, kk, second=True)
    if mode == 2:
        s_real = s[2:-2]
        i_k2 = np.trapezoid(k * k, s_real)
        if i_k2 < 1.0e-14:
            return None, None, 0.0, ERR_DEGENERATE
        ks = _scalar_d(sk, kk, second=False)
        lam_used = (-np.trapezoid(ks * ks, s_real) + 0.5 * np.trapezoid(k**4, s_real)) / i_k2
    elif mode == 1:
        lam_used = lam
    else:
        lam_used = 0.0
    v = kss + 0.5 * k**3 - lam_used * k

    w = _d4_weights(s, n)
    windows = sliding_window_view(ext, 5, axis=0)[: n + 1]  # (n+1, 2, 5)
    d4 = np.einsum("iw,icw->ic", w, windows)
    rhs2 = xy + dt * (v[:, None] * nu + d4)

    m = 2 * (n + 1)
    ab = np.zeros((KL + KU + 1, m))
    ab[KU, :] = 1.0
    idx = np.arange(n + 1)
    c1, s1 = rp[4], rp[5]
    c2, s2 = rp[10], rp[11]
    for mm in range(5):
        j = idx + mm - 2
        wc = dt * w[:, mm]
        unf = (j >= 0) & (j <= n)
        if np.any(unf):
            r, c = 2 * idx[unf], 2 * j[unf]
            ab[KU + r - c, c] += wc[unf]
            ab[KU + r - c, c + 1] += wc[unf]
        for mask, cfold, rc, rs in ((j < 0, -j, c1, s1), (j > n, 2 * n - j, c2, s2)):
            if np.any(mask):
                r, c = 2 * idx[mask], 2 * cfold[mask]
                ww = wc[mask]
                ab[KU + r - c, c] += ww * rc
                ab[KU + r - (c + 1), c + 1] += ww * rs
                ab[KU + (r + 1) - c, c] += ww * rs
                ab[KU + (r + 1) - (c + 1), c + 1] += ww * (-rc)

    rhs = rhs2.reshape(-1)

    # Endpoint rows: tangential update along the ray plus on-ray constraint.
    d1x, d1y, n1x, n1y = rp[0], rp[1], rp[2], rp[3]
    d2x, d2y, n2x, n2y = rp[6], rp[7], rp[8], rp[9]
    cols0 = range(0, 6)
    rx = _band_row_get(ab, 0, cols0)
    ry = _band_row_get(ab, 1, cols0)
    _band_row_set(ab, 0, cols0, d1x * rx + d1y * ry)
    _band_row_set(ab, 1, cols0, [n1x, n1y, 0.0, 0.0, 0.0, 0.0])
    rhs0 = d1x * rhs[0] + d1y * rhs[1]
    rhs[0], rhs[1] = rhs0, 0.0

    colsn = range(m - 6, m)
    rx = _band_row_get(ab, m - 2, colsn)
    ry = _band_row_get(ab, m - 1, colsn)
    _band_row_set(ab, m - 2, colsn, d2x * rx + d2y * ry)
    _band_row_set(ab, m - 1, colsn, [0.0, 0.0, 0.0, 0.0, n2x, n2y])
    rhsn = d2x * rhs[m - 2] + d2y * rhs[m - 1]
    rhs[m - 2], rhs[m - 1] = rhsn, 0.0

    return (ab, rhs), lam_used, float(np.max(np.abs(v))), OK


def semi_implicit_step(xy: np.ndarray, rp: np.ndarray, mode: int, lam: float, dt: float):
    """One semi-implicit update of the node positions.

    Returns ``(xy_new, lambda_used, max_speed, ok)``.
    """
    system, lam_used, vmax, ok = semi_implicit_system(xy, rp, mode, lam, dt)
    if ok != OK:
        return xy, lam_used, vmax, ok
    ab, rhs = system
    try:
        z = solve_banded((KL, KU), ab, rhs)
    except np.linalg.LinAlgError:
        return xy, lam_used, vmax, ERR_SINGULAR
    return z.reshape(-1, 2), lam_used, vmax, OK


def rk4_step(xy: np.ndarray, rp: np.ndarray, mode: int, lam: float, dt: float):
    """Classical four-stage explicit update of ``d alpha/dt = V nu``.

    Ghosts (and for the constrained mode the multiplier) are rebuilt at
    every stage.  Returns ``(xy_new, lambda_used, max_speed, ok)``.
    """
    v1, nu1, _, lam_used, ok = flow_speed(xy, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, 0.0, ok
    f1 = v1[:, None] * nu1
    v2, nu2, _, _, ok = flow_speed(xy + 0.5 * dt * f1, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, 0.0, ok
    f2 = v2[:, None] * nu2
    v3, nu3, _, _, ok = flow_speed(xy + 0.5 * dt * f2, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, 0.0, ok
    f3 = v3[:, None] * nu3
    v4, nu4, _, _, ok = flow_speed(xy + dt * f3, rp, mode, lam)
    if ok != OK:
        return xy, lam_used, 0.0, ok
    f4 = v4[:, None] * nu4
    out = xy + (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
    return out, lam_used, float(np.max(np.abs(v1))), OK
