"""Supporting cone, boundary rays, ghost nodes and compliant reference arcs.

The cone is bounded by two rays from the origin at polar angles
``theta1 > theta2``.  Curves meet the ``theta1`` ray at node 0 ("minus"
side) and the ``theta2`` ray at node N ("plus" side), perpendicularly and
with zero curvature flux.  Ghost nodes realise both conditions at once by
reflecting the first interior nodes across the ray: the reflection is an
isometry, so the discrete endpoint tangent is forced perpendicular to the
ray and the curvature extension is even (hence ``k_s = 0``) whenever the
endpoint sits on the ray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curve import (
    DiscreteCurve,
    ScalarField,
    _central_d1,
    _central_d2,
    _one_sided_d1,
    arc_length,
)
from .errors import BoundaryViolationError, InvalidInputError, TipCollisionError

SIDES = ("minus", "plus")

# Endpoints must sit on their rays to this fraction of the length before
# ghosts may be built.
ON_RAY_TOL = 1.0e-9

# Fraction of the curve length below which an endpoint counts as having
# reached the cone tip.
TIP_MARGIN = 1.0e-3


@dataclass(frozen=True)
class Cone:
    """Cone ``{rho (cos t, sin t): theta2 < t < theta1}`` with tip at the origin."""

    theta1: float
    theta2: float

    def __post_init__(self):
        if not (0.0 <= self.theta2 < self.theta1 < 2.0 * np.pi):
            raise InvalidInputError(
                f"cone angles must satisfy 0 <= theta2 < theta1 < 2*pi, "
                f"got theta1={self.theta1}, theta2={self.theta2}"
            )

    @property
    def omega(self) -> float:
        """Opening angle in full turns, in (0, 1)."""
        return (self.theta1 - self.theta2) / (2.0 * np.pi)

    def angle(self, side: str) -> float:
        _check_side(side)
        return self.theta1 if side == "minus" else self.theta2


@dataclass(frozen=True)
class BoundaryResiduals:
    """Magnitudes of the boundary-condition defects at both endpoints."""

    neumann_minus: float
    neumann_plus: float
    flux_minus: float
    flux_plus: float
    on_ray_minus: float
    on_ray_plus: float

    def as_dict(self) -> dict:
        return {
            "neumann_minus": self.neumann_minus,
            "neumann_plus": self.neumann_plus,
            "flux_minus": self.flux_minus,
            "flux_plus": self.flux_plus,
            "on_ray_minus": self.on_ray_minus,
            "on_ray_plus": self.on_ray_plus,
        }

    def max(self) -> float:
        return max(self.as_dict().values())


def _check_side(side: str):
    if side not in SIDES:
        raise InvalidInputError(f"side must be one of {SIDES}, got {side!r}")


def ray_unit(cone: Cone, side: str) -> np.ndarray:
    """Unit direction of the boundary ray on the given side."""
    th = cone.angle(side)
    return np.array([np.cos(th), np.sin(th)])


def ray_normal(cone: Cone, side: str) -> np.ndarray:
    """Unit vector perpendicular to the ray, pointing into the cone opening."""
    th = cone.angle(side)
    if side == "minus":
        return np.array([np.sin(th), -np.cos(th)])
    return np.array([-np.sin(th), np.cos(th)])


def reflection_matrix(cone: Cone, side: str) -> np.ndarray:
    """Reflection across the ray line through the origin."""
    th = cone.angle(side)
    c, s = np.cos(2.0 * th), np.sin(2.0 * th)
    return np.array([[c, s], [s, -c]])


def project_to_ray(p, cone: Cone, side: str) -> np.ndarray:
    """Nearest point on the closed ray; idempotent and nonexpansive."""
    d = ray_unit(cone, side)
    t = float(np.dot(np.asarray(p, dtype=float), d))
    if t <= 0.0:
        raise TipCollisionError(
            f"point {tuple(np.asarray(p))} projects onto the {side} ray at/behind the tip"
        )
    return t * d


def tip_distance(curve: DiscreteCurve) -> float:
    """Minimum endpoint distance to the cone tip at the origin."""
    return float(min(np.linalg.norm(curve.nodes[0]), np.linalg.norm(curve.nodes[-1])))


def _ray_distance(p: np.ndarray, d: np.ndarray) -> float:
    t = float(np.dot(p, d))
    if t > 0.0:
        return float(np.linalg.norm(p - t * d))
    return float(np.linalg.norm(p))


def apply_boundary_ghosts(curve: DiscreteCurve, cone: Cone) -> np.ndarray:
    """Ghost-extended node array of shape (N+5, 2).

    Rows 0..1 are the two ghosts before node 0 (reflections of nodes 2 and
    1 across the first ray), rows 2..N+2 the curve nodes, rows N+3..N+4 the
    ghosts past node N.  Requires both endpoints to sit on their rays to
    within ``ON_RAY_TOL`` times the curve length.
    """
    xy = curve.nodes
    L = arc_length(curve)
    d1 = ray_unit(cone, "minus")
    d2 = ray_unit(cone, "plus")
    off1 = _ray_distance(xy[0], d1)
    off2 = _ray_distance(xy[-1], d2)
    tol = ON_RAY_TOL * L
    if off1 > tol or off2 > tol:
        raise BoundaryViolationError(
            f"endpoints off their rays by ({off1:.3e}, {off2:.3e}), tolerance {tol:.3e}"
        )
    r1 = reflection_matrix(cone, "minus")
    r2 = reflection_matrix(cone, "plus")
    ext = np.empty((len(curve) + 4, 2))
    ext[2:-2] = xy
    ext[1] = r1 @ xy[1]
    ext[0] = r1 @ xy[2]
    ext[-2] = r2 @ xy[-2]
    ext[-1] = r2 @ xy[-3]
    return ext


def _ext_arclength(ext: np.ndarray) -> np.ndarray:
    s = np.empty(ext.shape[0])
    s[0] = 0.0
    np.cumsum(np.linalg.norm(np.diff(ext, axis=0), axis=1), out=s[1:])
    return s


def _ext_curvature(ext: np.ndarray):
    """Curvature and normals at the interior of a ghost-extended polyline.

    Returns ``(k, nu, s)`` where ``k`` and ``nu`` cover extended indices
    1..len-2 (curve nodes plus one ghost layer each side).
    """
    s = _ext_arclength(ext)
    tau = _central_d1(s, ext)
    tau /= np.linalg.norm(tau, axis=1, keepdims=True)
    nu = np.empty_like(tau)
    nu[:, 0] = -tau[:, 1]
    nu[:, 1] = tau[:, 0]
    acc = _central_d2(s, ext)
    k = -np.sum(acc * nu, axis=1)
    return k, nu, s


def curvature_with_ghosts(curve: DiscreteCurve, cone: Cone) -> ScalarField:
    """Curvature at every node with centred stencils throughout.

    The ghost construction supplies the off-curve neighbours, so endpoint
    values are as accurate as interior ones and the discrete curvature flux
    vanishes there for compliant curves.
    """
    ext = apply_boundary_ghosts(curve, cone)
    k, _, _ = _ext_curvature(ext)
    return ScalarField(k[1:-1], meaning="curvature")


def _end_defects(xy: np.ndarray, e: np.ndarray):
    """Neumann and flux defect at the start of a node array, local stencils only.

    Uses the same stencils as :func:`coneflow.curve.tangent_normal` and
    :func:`coneflow.curve.curvature` restricted to the four leading nodes;
    running it on the reversed array yields the other endpoint (the defects
    are invariant under orientation reversal).
    """
    p = xy[:4]
    s = np.empty(4)
    s[0] = 0.0
    np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1), out=s[1:])
    tau0 = _one_sided_d1(s[0], s[1], s[2], p[0], p[1], p[2])
    tau0 /= np.linalg.norm(tau0)
    nu0 = np.array([-tau0[1], tau0[0]])

    def _node(i):
        hl, hr = s[i] - s[i - 1], s[i + 1] - s[i]
        denom = hl * hr * (hl + hr)
        tau = (hl**2 * p[i + 1] - hr**2 * p[i - 1] + (hr**2 - hl**2) * p[i]) / denom
        tau /= np.linalg.norm(tau)
        nu = np.array([-tau[1], tau[0]])
        acc = 2.0 * (hr * p[i - 1] + hl * p[i + 1] - (hl + hr) * p[i]) / denom
        return acc, nu

    acc1, nu1 = _node(1)
    acc2, nu2 = _node(2)
    k0 = -float(np.dot(acc1, nu0))
    k1 = -float(np.dot(acc1, nu1))
    k2 = -float(np.dot(acc2, nu2))
    flux = _one_sided_d1(s[0], s[1], s[2], k0, k1, k2)
    return abs(float(np.dot(nu0, e))), abs(float(flux))


def boundary_residuals(curve: DiscreteCurve, cone: Cone) -> BoundaryResiduals:
    """Measured boundary-condition defects, all reported as magnitudes.

    Neumann residuals test the one-sided endpoint normal against the ray
    normal, flux residuals are one-sided estimates of ``k_s`` at the
    endpoints, and the on-ray residuals are endpoint distances to the rays.
    These are truncation-limited measurements of the data itself, not of
    the ghost construction.
    """
    xy = curve.nodes
    neu_m, flux_m = _end_defects(xy, ray_normal(cone, "minus"))
    neu_p, flux_p = _end_defects(xy[::-1], ray_normal(cone, "plus"))
    return BoundaryResiduals(
        neumann_minus=neu_m,
        neumann_plus=neu_p,
        flux_minus=flux_m,
        flux_plus=flux_p,
        on_ray_minus=_ray_distance(xy[0], ray_unit(cone, "minus")),
        on_ray_plus=_ray_distance(xy[-1], ray_unit(cone, "plus")),
    )


def centred_arc(cone: Cone, r: float, n: int) -> DiscreteCurve:
    """Circular arc of radius ``r`` centred at the cone tip, n+1 nodes.

    Sampled uniformly in angle from the first ray to the second, so the
    polyline is exactly uniform and satisfies the boundary conditions.
    """
    if r <= 0.0:
        raise InvalidInputError(f"arc radius must be positive, got {r}")
    theta = np.linspace(cone.theta1, cone.theta2, n + 1)
    return DiscreteCurve(r * np.column_stack([np.cos(theta), np.sin(theta)]))
