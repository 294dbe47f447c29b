"""Discrete open planar curves and their pointwise/integral geometry.

A curve is an ordered polyline ``alpha_0 .. alpha_N`` traversed from the
first boundary ray towards the second.  The unit normal ``nu`` is the +90
degree rotation of the unit tangent, which points away from the cone tip on
arcs centred at the origin, so centred arcs have curvature ``+1/r``.

All derivatives are taken with respect to the chord-length arc parameter
using three-point stencils that are exact for quadratics, hence second
order on the near-uniform grids maintained by the flow engine.  Integrals
use the trapezoidal rule on the same parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidCurveError, InvalidInputError, UnsupportedOrderError

MIN_SEGMENTS = 8

# Relative spread of segment lengths below which a polyline counts as
# uniform (resampling is then the identity).
UNIFORM_EPS = 1.0e-12


@dataclass(frozen=True)
class ScalarField:
    """One real value per curve node, tagged with what the values mean."""

    values: np.ndarray
    meaning: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise InvalidInputError("scalar field must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError(f"scalar field '{self.meaning}' contains non-finite entries")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[0]


class DiscreteCurve:
    """Ordered polyline sampling of an open planar curve.

    Parameters
    ----------
    nodes : (N+1, 2) array_like
        Node coordinates, ``N >= 8``.  Node 0 sits on the first boundary
        ray, node N on the second (when used with a cone).
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        arr = np.array(nodes, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidCurveError("curve nodes must form an (N+1, 2) array")
        if arr.shape[0] < MIN_SEGMENTS + 1:
            raise InvalidCurveError(
                f"curve needs at least {MIN_SEGMENTS} segments, got {arr.shape[0] - 1}"
            )
        if not np.all(np.isfinite(arr)):
            raise InvalidCurveError("curve nodes contain non-finite coordinates")
        seg = np.linalg.norm(np.diff(arr, axis=0), axis=1)
        if np.any(seg <= 0.0):
            raise InvalidCurveError("consecutive curve nodes coincide")
        arr.setflags(write=False)
        self.nodes = arr

    @property
    def n(self) -> int:
        """Number of segments N."""
        return self.nodes.shape[0] - 1

    def __len__(self):
        return self.nodes.shape[0]

    def __repr__(self):
        return f"DiscreteCurve(N={self.n}, length={arc_length(self):.6g})"


def chord_lengths(curve: DiscreteCurve) -> np.ndarray:
    return np.linalg.norm(np.diff(curve.nodes, axis=0), axis=1)


def arclength_coords(curve: DiscreteCurve) -> np.ndarray:
    """Cumulative chord-length parameter, zero at node 0."""
    s = np.empty(len(curve))
    s[0] = 0.0
    np.cumsum(chord_lengths(curve), out=s[1:])
    return s


def arc_length(curve: DiscreteCurve) -> float:
    """Total polyline length."""
    return float(np.sum(chord_lengths(curve)))


def _d1_coeffs(hl: np.ndarray, hr: np.ndarray):
    """Three-point first-derivative weights (left, centre, right) for gaps hl, hr."""
    denom = hl * hr * (hl + hr)
    return -hr * hr / denom, (hr * hr - hl * hl) / denom, hl * hl / denom


def _d2_coeffs(hl: np.ndarray, hr: np.ndarray):
    """Three-point second-derivative weights for gaps hl, hr."""
    denom = hl * hr * (hl + hr)
    return 2.0 * hr / denom, -2.0 * (hl + hr) / denom, 2.0 * hl / denom


def _central_d1(s: np.ndarray, f: np.ndarray) -> np.ndarray:
    """First derivative of f(s) at the interior points of the sample."""
    hl = s[1:-1] - s[:-2]
    hr = s[2:] - s[1:-1]
    wl, wc, wr = _d1_coeffs(hl, hr)
    if f.ndim == 2:
        wl, wc, wr = wl[:, None], wc[:, None], wr[:, None]
    return wl * f[:-2] + wc * f[1:-1] + wr * f[2:]


def _central_d2(s: np.ndarray, f: np.ndarray) -> np.ndarray:
    hl = s[1:-1] - s[:-2]
    hr = s[2:] - s[1:-1]
    wl, wc, wr = _d2_coeffs(hl, hr)
    if f.ndim == 2:
        wl, wc, wr = wl[:, None], wc[:, None], wr[:, None]
    return wl * f[:-2] + wc * f[1:-1] + wr * f[2:]


def _one_sided_d1(s0, s1, s2, f0, f1, f2):
    """Second-order first derivative at s0 from samples at s0 < s1 < s2."""
    a = s1 - s0
    b = s2 - s0
    w0 = -(a + b) / (a * b)
    w1 = b / (a * (b - a))
    w2 = -a / (b * (b - a))
    return w0 * f0 + w1 * f1 + w2 * f2


def tangent_normal(curve: DiscreteCurve):
    """Unit tangent and unit normal fields.

    Tangents are centred differences in arc length at interior nodes and
    second-order one-sided at the endpoints; the normal is the tangent
    rotated by +90 degrees.

    Returns
    -------
    tau, nu : (N+1, 2) ndarray
    """
    xy = curve.nodes
    s = arclength_coords(curve)
    tau = np.empty_like(xy)
    tau[1:-1] = _central_d1(s, xy)
    tau[0] = _one_sided_d1(s[0], s[1], s[2], xy[0], xy[1], xy[2])
    tau[-1] = -_one_sided_d1(-s[-1], -s[-2], -s[-3], xy[-1], xy[-2], xy[-3])
    norms = np.linalg.norm(tau, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidCurveError("degenerate tangent encountered")
    tau /= norms
    nu = np.empty_like(tau)
    nu[:, 0] = -tau[:, 1]
    nu[:, 1] = tau[:, 0]
    return tau, nu


def curvature(curve: DiscreteCurve) -> ScalarField:
    """Scalar curvature ``k = -<alpha_ss, nu>`` at every node.

    Interior nodes use the centred three-point second derivative; the
    endpoint values reuse the adjacent stencil (the quadratic through the
    three outermost nodes has constant second derivative), paired with the
    one-sided endpoint normal.
    """
    xy = curve.nodes
    s = arclength_coords(curve)
    _, nu = tangent_normal(curve)
    k = np.empty(len(curve))
    acc = _central_d2(s, xy)
    k[1:-1] = -np.sum(acc * nu[1:-1], axis=1)
    k[0] = -float(np.dot(acc[0], nu[0]))
    k[-1] = -float(np.dot(acc[-1], nu[-1]))
    return ScalarField(k, meaning="curvature")


def curvature_derivative(field: ScalarField, curve: DiscreteCurve, order: int) -> ScalarField:
    """Iterated arc-length derivative of a nodal field.

    Ghost values beyond the endpoints are even reflections of the field
    (odd derivatives therefore vanish at the boundary), matching the
    no-flux behaviour the flows maintain for curvature.
    """
    if order < 1 or order > 4:
        raise UnsupportedOrderError(f"derivative order must be in 1..4, got {order}")
    vals = np.asarray(field.values, dtype=float)
    if vals.shape[0] != len(curve):
        raise InvalidInputError("field length does not match curve")
    s = arclength_coords(curve)
    m = order
    # Even-reflect both the parameter and the values through each endpoint.
    s_ext = np.concatenate([2.0 * s[0] - s[m:0:-1], s, 2.0 * s[-1] - s[-2 : -2 - m : -1]])
    f_ext = np.concatenate([vals[m:0:-1], vals, vals[-2 : -2 - m : -1]])
    for _ in range(order):
        f_ext = _central_d1(s_ext, f_ext)
        s_ext = s_ext[1:-1]
    return ScalarField(f_ext, meaning=f"{field.meaning}_s{order}" if field.meaning else f"d{order}")


def integrate(field: ScalarField, curve: DiscreteCurve) -> float:
    """Trapezoidal rule of a nodal field against arc length."""
    vals = np.asarray(field.values, dtype=float)
    if vals.shape[0] != len(curve):
        raise InvalidInputError("field length does not match curve")
    return float(np.trapezoid(vals, arclength_coords(curve)))


def average_curvature(curve: DiscreteCurve) -> float:
    """Mean of curvature against arc length."""
    return integrate(curvature(curve), curve) / arc_length(curve)


def rotation_number(curve: DiscreteCurve) -> float:
    """Net turning of the tangent, in full turns.

    Computed as the accumulated angle swept by the discrete tangent from
    the first endpoint to the last (segment directions plus the one-sided
    endpoint tangents).  This quadrature of the curvature integral is exact
    on circular arcs; positive for curves bending towards the cone tip.
    """
    xy = curve.nodes
    u = np.diff(xy, axis=0)
    cross = u[:-1, 0] * u[1:, 1] - u[:-1, 1] * u[1:, 0]
    dot = np.sum(u[:-1] * u[1:], axis=1)
    turning = float(np.sum(np.arctan2(cross, dot)))
    tau, _ = tangent_normal(curve)
    t0, tn = tau[0], tau[-1]
    turning += float(np.arctan2(t0[0] * u[0, 1] - t0[1] * u[0, 0], np.dot(t0, u[0])))
    turning += float(np.arctan2(u[-1, 0] * tn[1] - u[-1, 1] * tn[0], np.dot(u[-1], tn)))
    return -turning / (2.0 * np.pi)


def enclosed_area(curve: DiscreteCurve) -> float:
    """Area of the region bounded by the curve and the two rays: ``(1/2) int <alpha, nu> ds``."""
    _, nu = tangent_normal(curve)
    f = ScalarField(np.sum(curve.nodes * nu, axis=1), meaning="<alpha,nu>")
    return 0.5 * integrate(f, curve)


def divergence_form_residual(curve: DiscreteCurve) -> float:
    """Mismatch between the two discrete forms of the elastic gradient.

    Compares ``d/ds(-k_s nu + k^2/2 tau)`` with ``-(k_ss + k^3/2) nu`` at
    interior nodes and returns the max vector norm of the sum; both agree
    analytically, so the residual converges at second order.
    """
    xy = curve.nodes
    s = arclength_coords(curve)
    tau, nu = tangent_normal(curve)
    k = curvature(curve)
    ks = curvature_derivative(k, curve, 1).values
    kss = curvature_derivative(k, curve, 2).values
    kv = k.values
    w = -ks[:, None] * nu + 0.5 * kv[:, None] ** 2 * tau
    dw = _central_d1(s, w)
    resid = dw + (kss[1:-1, None] + 0.5 * kv[1:-1, None] ** 3) * nu[1:-1]
    return float(np.max(np.linalg.norm(resid, axis=1)))


def psw_l2_gap(curve: DiscreteCurve, k: ScalarField | None = None) -> float:
    """Slack of the L2 Poincare inequality for curvature about its mean.

    Returns ``(L^2/pi^2) int k_s^2 - int (k - kbar)^2`` so nonnegative
    values (up to quadrature tolerance) mean the inequality holds.
    """
    if k is None:
        k = curvature(curve)
    L = arc_length(curve)
    kbar = integrate(k, curve) / L
    dev = ScalarField((k.values - kbar) ** 2, meaning="(k-kbar)^2")
    ks = curvature_derivative(k, curve, 1)
    ks2 = integrate(ScalarField(ks.values**2, meaning="k_s^2"), curve)
    return (L * L / np.pi**2) * ks2 - integrate(dev, curve)


def psw_sup_gap(curve: DiscreteCurve, k: ScalarField | None = None) -> float:
    """Slack of the sup-norm Poincare inequality: ``(2L/pi) int k_s^2 - ||k - kbar||_inf^2``."""
    if k is None:
        k = curvature(curve)
    L = arc_length(curve)
    kbar = integrate(k, curve) / L
    sup2 = float(np.max(np.abs(k.values - kbar))) ** 2
    ks = curvature_derivative(k, curve, 1)
    ks2 = integrate(ScalarField(ks.values**2, meaning="k_s^2"), curve)
    return (2.0 * L / np.pi) * ks2 - sup2


def _spline_through(curve: DiscreteCurve) -> tuple[CubicSpline, np.ndarray]:
    """Interpolating cubic through the nodes on the centripetal parameter."""
    seg = chord_lengths(curve)
    t = np.empty(len(curve))
    t[0] = 0.0
    np.cumsum(np.sqrt(seg), out=t[1:])
    return CubicSpline(t, curve.nodes, axis=0, bc_type="not-a-knot"), t


def resample_uniform(curve: DiscreteCurve, n: int) -> DiscreteCurve:
    """Redistribute nodes to equal spacing along an interpolant of the curve.

    Builds a centripetal piecewise-cubic through the input nodes, places
    ``n+1`` nodes on it and iterates the placement until consecutive chord
    lengths agree to better than one part in 1e12.  Endpoints are kept
    exactly; an already-uniform polyline with the same ``n`` is returned
    unchanged.
    """
    if n < MIN_SEGMENTS:
        raise InvalidInputError(f"resampling needs n >= {MIN_SEGMENTS}, got {n}")
    seg = chord_lengths(curve)
    if n == curve.n:
        spread = float(np.max(seg) / np.min(seg)) - 1.0
        if spread <= UNIFORM_EPS:
            return DiscreteCurve(curve.nodes)

    spline, t = _spline_through(curve)
    # Fine arc-length table for the initial placement.
    fine_per_seg = max(8, 4000 // curve.n)
    tf = np.concatenate(
        [np.linspace(t[i], t[i + 1], fine_per_seg, endpoint=False) for i in range(curve.n)]
        + [t[-1:]]
    )
    pf = spline(tf)
    sf = np.empty(tf.shape[0])
    sf[0] = 0.0
    np.cumsum(np.linalg.norm(np.diff(pf, axis=0), axis=1), out=sf[1:])
    targets = np.linspace(0.0, sf[-1], n + 1)
    ti = np.interp(targets, sf, tf)
    ti[0], ti[-1] = t[0], t[-1]
    pts = spline(ti)
    pts[0], pts[-1] = curve.nodes[0], curve.nodes[-1]

    # Chord-equalising fixed point: re-place interior parameters at equal
    # cumulative chord length until the segment spread is at round-off.
    for _ in range(100):
        c = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        spread = float(np.max(c) / np.min(c)) - 1.0
        if spread <= 0.5 * UNIFORM_EPS:
            break
        u = np.empty(n + 1)
        u[0] = 0.0
        np.cumsum(c, out=u[1:])
        ti = np.interp(np.linspace(0.0, u[-1], n + 1), u, ti)
        ti[0], ti[-1] = t[0], t[-1]
        pts = spline(ti)
        pts[0], pts[-1] = curve.nodes[0], curve.nodes[-1]
    return DiscreteCurve(pts)
