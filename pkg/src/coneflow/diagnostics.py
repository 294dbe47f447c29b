"""Scalar monitors, closed-form thresholds, bound checks and decay fits.

Everything the convergence statements speak about is computed here: the
elastic energies, the oscillation integrals ``int k_{s^l}^2``, the
scale-invariant monitors ``epsilon = L^3 int k_s^2`` and
``Gamma = int k_s^2 / (int k^2)^3``, the closed-form smallness thresholds
for each flow, and least-squares decay-rate fits over a time series.

Threshold formulas that subtract nearly equal square roots are evaluated
in rationalised form, so they stay accurate at extreme parameter values
without extended precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cone import BoundaryResiduals, Cone, boundary_residuals, curvature_with_ghosts, tip_distance
from .curve import (
    DiscreteCurve,
    ScalarField,
    arc_length,
    curvature,
    curvature_derivative,
    enclosed_area,
    integrate,
    rotation_number,
)
from .errors import DegenerateCurvatureError, InvalidInputError

OMEGA_BOUND_PENALISED = 1.0 / math.sqrt(28.0)
OMEGA_BOUND_CONSTRAINED = (15.0 / 6592.0) ** 0.25

CSV_FIELDS = (
    "t",
    "L",
    "A",
    "E0",
    "E_lambda",
    "ks2",
    "ks2_0",
    "ks2_1",
    "ks2_2",
    "ks2_3",
    "epsilon",
    "gamma",
    "kbar",
    "omega_num",
    "lambda_used",
    "neumann_minus",
    "neumann_plus",
    "flux_minus",
    "flux_plus",
    "on_ray_minus",
    "on_ray_plus",
    "tip_dist",
    "kmax_dev",
)


@dataclass(frozen=True)
class DiagnosticsFrame:
    """One timestamped row of every monitored quantity."""

    t: float
    L: float
    A: float
    E0: float
    E_lambda: float
    ks2: float
    ks2_l: tuple
    epsilon: float
    gamma: float
    kbar: float
    omega_num: float
    lambda_used: float
    residuals: BoundaryResiduals
    tip_dist: float
    kmax_dev: float

    def to_row(self) -> list:
        r = self.residuals
        return [
            self.t,
            self.L,
            self.A,
            self.E0,
            self.E_lambda,
            self.ks2,
            self.ks2_l[0],
            self.ks2_l[1],
            self.ks2_l[2],
            self.ks2_l[3],
            self.epsilon,
            self.gamma,
            self.kbar,
            self.omega_num,
            self.lambda_used,
            r.neumann_minus,
            r.neumann_plus,
            r.flux_minus,
            r.flux_plus,
            r.on_ray_minus,
            r.on_ray_plus,
            self.tip_dist,
            self.kmax_dev,
        ]

    @staticmethod
    def from_row(row: list) -> "DiagnosticsFrame":
        vals = dict(zip(CSV_FIELDS, row))
        return DiagnosticsFrame(
            t=vals["t"],
            L=vals["L"],
            A=vals["A"],
            E0=vals["E0"],
            E_lambda=vals["E_lambda"],
            ks2=vals["ks2"],
            ks2_l=(vals["ks2_0"], vals["ks2_1"], vals["ks2_2"], vals["ks2_3"]),
            epsilon=vals["epsilon"],
            gamma=vals["gamma"],
            kbar=vals["kbar"],
            omega_num=vals["omega_num"],
            lambda_used=vals["lambda_used"],
            residuals=BoundaryResiduals(
                neumann_minus=vals["neumann_minus"],
                neumann_plus=vals["neumann_plus"],
                flux_minus=vals["flux_minus"],
                flux_plus=vals["flux_plus"],
                on_ray_minus=vals["on_ray_minus"],
                on_ray_plus=vals["on_ray_plus"],
            ),
            tip_dist=vals["tip_dist"],
            kmax_dev=vals["kmax_dev"],
        )

    def value(self, name: str) -> float:
        row = self.to_row()
        return row[CSV_FIELDS.index(name)]


@dataclass
class Series:
    """Time-ordered diagnostics frames plus run metadata."""

    frames: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @staticmethod
    def empty(config=None) -> "Series":
        meta = {}
        if config is not None:
            meta["config"] = config.as_dict()
        return Series(frames=[], metadata=meta)

    def append(self, frame: DiagnosticsFrame) -> None:
        if self.frames and frame.t <= self.frames[-1].t:
            raise InvalidInputError("frame times must be strictly increasing")
        self.frames.append(frame)

    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])

    def values(self, name: str) -> np.ndarray:
        idx = CSV_FIELDS.index(name)
        return np.array([f.to_row()[idx] for f in self.frames])

    def __len__(self):
        return len(self.frames)


def energies(curve: DiscreteCurve, spec, cone: Cone | None = None):
    """Elastic energy ``E0`` and its length-augmented variant.

    ``E_lambda = E0 + lambda L`` in penalised mode; for the constrained and
    free flows the monitored energy is ``E0`` itself and is returned for
    both slots.
    """
    k = curvature_with_ghosts(curve, cone) if cone is not None else curvature(curve)
    e0 = 0.5 * integrate(ScalarField(k.values**2, "k^2"), curve)
    if spec.mode == "penalised":
        return e0, e0 + spec.lam * arc_length(curve)
    return e0, e0


def _ks2(curve: DiscreteCurve, k: ScalarField) -> float:
    ks = curvature_derivative(k, curve, 1)
    return integrate(ScalarField(ks.values**2, "k_s^2"), curve)


def epsilon(curve: DiscreteCurve, cone: Cone | None = None) -> float:
    """Scale-invariant oscillation measure ``L^3 int k_s^2``."""
    k = curvature_with_ghosts(curve, cone) if cone is not None else curvature(curve)
    return arc_length(curve) ** 3 * _ks2(curve, k)


def gamma(curve: DiscreteCurve, cone: Cone | None = None) -> float:
    """Scale-invariant monitor ``int k_s^2 / (int k^2)^3``."""
    k = curvature_with_ghosts(curve, cone) if cone is not None else curvature(curve)
    i_k2 = integrate(ScalarField(k.values**2, "k^2"), curve)
    if i_k2 <= 1.0e-14:
        raise DegenerateCurvatureError("int k^2 vanishes; Gamma undefined")
    return _ks2(curve, k) / i_k2**3


def rescaled_curvature_deviation(curve: DiscreteCurve, omega: float, cone: Cone | None = None) -> float:
    """Sup-norm distance of ``L k`` from the circular-arc value ``2 pi omega``."""
    k = curvature_with_ghosts(curve, cone) if cone is not None else curvature(curve)
    return float(np.max(np.abs(arc_length(curve) * k.values - 2.0 * np.pi * omega)))


def length_bounds(e_lambda_0: float, omega: float, lam: float):
    """The a-priori length window of the penalised flow.

    Lower bound ``2 pi^2 omega^2 / E_lambda(0)`` from the rotation number,
    upper bound ``E_lambda(0) / lambda`` from energy monotonicity.
    """
    if e_lambda_0 <= 0.0 or omega <= 0.0 or lam <= 0.0:
        raise InvalidInputError("length bounds need positive energy, omega and lambda")
    return 2.0 * math.pi**2 * omega**2 / e_lambda_0, e_lambda_0 / lam


def penalised_quadratic(omega: float, l_upper: float, lam: float):
    """Coefficients (c0, A, B) of ``c0 - A x^2 - B x`` bounding the dissipation bracket.

    ``x`` stands for the L2 norm of ``k_s``; the admissible region is where
    the quadratic is nonnegative, with every length factor taken at its
    upper bound.
    """
    b = 176.0 * omega**3 + 20.0 * omega
    a_coef = (28.0 * lam * l_upper**2 / math.pi**2 + 10.0) * l_upper**3 / math.pi**3
    b_coef = b * math.sqrt(2.0 * l_upper**3 / math.pi**3)
    return 0.125, a_coef, b_coef


def smallness_penalised(omega: float, l_lower: float, l_upper: float, lam: float) -> float:
    """Threshold on ``int k_s^2`` under which the penalised flow contracts.

    The square of the smallest positive root of
    ``1/8 - A x^2 - B x`` (see :func:`penalised_quadratic`); evaluated in
    rationalised form ``x = 1 / (4 (B + sqrt(B^2 + A/2)))``.  The value
    depends on ``omega``, ``l_upper`` and ``lam``; ``l_lower`` is accepted
    for signature completeness.
    """
    if omega <= 0.0 or l_upper <= 0.0 or lam <= 0.0:
        raise InvalidInputError("smallness threshold needs positive omega, lengths, lambda")
    _, a_coef, b_coef = penalised_quadratic(omega, l_upper, lam)
    x = 1.0 / (4.0 * (b_coef + math.sqrt(b_coef * b_coef + 0.5 * a_coef)))
    return x * x


def constrained_quartic(omega: float, l0: float):
    """Coefficients ``(delta, c1, c2, c3, c4)`` of the fixed-length dissipation quartic.

    The admissible region for ``x = ||k_s||_2`` is where
    ``delta - c4 x^4 - c3 x^3 - c2 x^2 - c1 x`` is nonnegative;
    ``delta = 15/8 - (103/2)(2 omega)^4`` is positive below the omega bound.
    """
    if omega <= 0.0 or l0 <= 0.0:
        raise InvalidInputError("quartic coefficients need positive omega and length")
    two_w = 2.0 * omega
    delta = 15.0 / 8.0 - 51.5 * two_w**4
    c4 = 28.0 * l0**6 / math.pi**6
    c3 = 14.0 * 2.0**2.5 * omega * (l0 / math.pi) ** 4.5
    c2 = (10.0 + 2.0 / (math.pi * two_w**2) + 22.0 * two_w**2) * l0**3 / math.pi**3
    c1 = (22.0 * two_w**3 + 10.0 * two_w) * math.sqrt(2.0 * l0**3 / math.pi**3)
    c1 += 14.0 * two_w**3 * l0 / math.pi
    return delta, c1, c2, c3, c4


def smallness_constrained(omega: float, l0: float) -> float:
    """Threshold on ``||k_s||_2`` under which the fixed-length flow contracts.

    Smallest positive root of the quartic from
    :func:`constrained_quartic`, found by bracketing and bisection to
    1e-12 relative.  Returns 0 when the omega bound fails (the quartic has
    no positive admissible region).
    """
    delta, c1, c2, c3, c4 = constrained_quartic(omega, l0)
    if delta <= 0.0:
        return 0.0

    def q(x):
        return delta - x * (c1 + x * (c2 + x * (c3 + x * c4)))

    hi = 1.0
    while q(hi) > 0.0:
        hi *= 2.0
        if hi > 1.0e60:  # pragma: no cover - impossible for positive coefficients
            raise AssertionError("constrained quartic never turns negative")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if q(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1.0e-12 * hi:
            break
    root = 0.5 * (lo + hi)
    assert q(root * (1.0 - 1.0e-9)) >= 0.0 or root < 1.0e-300
    return root


def epsilon_star(omega: float) -> float:
    """Compliance threshold on ``epsilon = L^3 int k_s^2`` for the free flow.

    ``(pi^3/200) (sqrt(b^2 + 5/4) - b)^2`` with ``b = 176 omega^3 +
    20 omega``, rationalised for stability at large ``omega``.
    """
    if omega <= 0.0:
        raise InvalidInputError("epsilon_star needs omega > 0")
    b = 176.0 * omega**3 + 20.0 * omega
    diff = 1.25 / (math.sqrt(b * b + 1.25) + b)
    return math.pi**3 / 200.0 * diff * diff


@dataclass(frozen=True)
class FreeFlowConstants:
    """Explicit constants of the free-flow length and Gamma-decay controls."""

    beta: float
    c_hat: float
    delta_star: float
    c1: float
    c2: float
    c3: float = math.nan  # decay-fit output, filled by the caller


def c_hat(beta: float, omega: float) -> float:
    """Growth-defect coefficient ``4 beta/pi^3 + 16 sqrt(2 omega^2/pi^3) sqrt(beta) + 48 omega^2``."""
    if beta <= 0.0 or omega <= 0.0:
        raise InvalidInputError("c_hat needs positive beta and omega")
    return (
        4.0 * beta / math.pi**3
        + 16.0 * math.sqrt(2.0 * omega**2 / math.pi**3) * math.sqrt(beta)
        + 48.0 * omega**2
    )


def free_flow_constants(beta: float, omega: float, epsilon1: float) -> FreeFlowConstants:
    """All explicit free-flow constants for budget ``beta`` and threshold ``epsilon1``.

    ``delta_star`` is the guaranteed-confinement horizon coefficient for a
    start at ``epsilon(0) = epsilon1``; it requires ``epsilon1 <= beta``.
    """
    if beta <= 0.0 or omega <= 0.0 or epsilon1 <= 0.0:
        raise InvalidInputError("free-flow constants need positive beta, omega, epsilon1")
    if epsilon1 > beta:
        raise InvalidInputError("delta_star needs epsilon <= beta")
    ch = c_hat(beta, omega)
    w4p4 = 32.0 * omega**4 * math.pi**4
    delta_star = ((beta / epsilon1) ** (4.0 / 3.0) - 1.0) / (beta * ch + w4p4)
    c2 = epsilon1 * c_hat(epsilon1, omega) + w4p4
    c1 = 48.0 * omega**4 * math.pi**4 / (5.0 * c2)
    return FreeFlowConstants(beta=beta, c_hat=ch, delta_star=delta_star, c1=c1, c2=c2)


def l4_residual(series: Series, omega: float) -> float:
    """Normalised defect of the fourth-power length growth law.

    ``max_t |L^4(t) - L^4(0) - 32 omega^4 pi^4 t| / max(1, 32 omega^4 pi^4 t)``.
    """
    if len(series) == 0:
        raise InvalidInputError("series is empty")
    t = series.times()
    l4 = series.values("L") ** 4
    drift = 32.0 * omega**4 * math.pi**4 * t
    defect = np.abs(l4 - l4[0] - drift)
    return float(np.max(defect / np.maximum(1.0, drift)))


def decay_fit(series: Series, name: str, window=None, mode: str = "exp"):
    """Least-squares decay rate of a positive monitored quantity.

    ``exp`` mode fits ``log v`` against ``t`` (rate is the slope), ``power``
    mode fits ``log v`` against ``log(1 + t / L^4(0))`` (rate is the
    exponent).  ``window = (tmin, tmax)`` restricts the frames; by default
    the first fifth of the frames (the transient) is dropped.  Returns
    ``(rate, quality)`` with quality the magnitude of the correlation
    coefficient of the fit.
    """
    if mode not in ("exp", "power"):
        raise InvalidInputError(f"unknown decay_fit mode {mode!r}")
    t = series.times()
    v = series.values(name)
    if window is None:
        start = len(t) // 5
        sel = np.arange(start, len(t))
    else:
        tmin, tmax = window
        sel = np.nonzero((t >= tmin) & (t <= tmax))[0]
    if sel.size < 10:
        raise InvalidInputError(f"decay fit needs at least 10 frames, got {sel.size}")
    tv, vv = t[sel], v[sel]
    if np.any(vv <= 0.0):
        raise InvalidInputError("decay fit needs positive samples")
    y = np.log(vv)
    if mode == "exp":
        x = tv
    else:
        l0 = float(series.values("L")[0])
        x = np.log1p(tv / l0**4)
    xm, ym = x - x.mean(), y - y.mean()
    sxx = float(np.dot(xm, xm))
    syy = float(np.dot(ym, ym))
    if sxx == 0.0:
        raise InvalidInputError("degenerate abscissa in decay fit")
    rate = float(np.dot(xm, ym)) / sxx
    quality = 1.0 if syy == 0.0 else abs(float(np.dot(xm, ym))) / math.sqrt(sxx * syy)
    return rate, quality


def derivative_bound_monitor(series: Series, lmax: int = 3) -> dict:
    """Boundedness and eventual-decrease flags for each ``int k_{s^l}^2``.

    A monitor is bounded when, past the first tenth of the frames, it never
    exceeds ten times its running median; it is eventually decreasing when
    the final value does not exceed the mid-run value (tiny float slack).
    """
    if lmax < 0 or lmax > 3:
        raise InvalidInputError("lmax must be in 0..3")
    out = {}
    n = len(series)
    for ell in range(lmax + 1):
        v = series.values(f"ks2_{ell}")
        bounded = True
        start = max(2, n // 10)
        for i in range(start, n):
            if v[i] > 10.0 * float(np.median(v[: i + 1])):
                bounded = False
                break
        mid = v[n // 2]
        decreasing = bool(v[-1] <= mid * (1.0 + 1.0e-6) + 1.0e-12)
        out[ell] = {"bounded": bounded, "eventually_decreasing": decreasing}
    return out


@dataclass(frozen=True)
class ThresholdReport:
    """Closed-form thresholds and hypothesis gates for one configuration."""

    omega_bound_penalised: float
    omega_bound_constrained: float
    L_lower: float
    L_upper: float
    smallness_penalised: float
    smallness_constrained: float
    epsilon_star: float
    hypotheses_met: dict
    measured: dict

    def as_dict(self) -> dict:
        return {
            "omega_bound_penalised": self.omega_bound_penalised,
            "omega_bound_constrained": self.omega_bound_constrained,
            "L_lower": self.L_lower,
            "L_upper": self.L_upper,
            "smallness_penalised": self.smallness_penalised,
            "smallness_constrained": self.smallness_constrained,
            "epsilon_star": self.epsilon_star,
            "hypotheses_met": dict(self.hypotheses_met),
            "measured": dict(self.measured),
        }


def threshold_report(cone: Cone, spec, curve: DiscreteCurve) -> ThresholdReport:
    """Evaluate every applicable threshold against the initial curve.

    A pure function of the initial data: the hypothesis gate for the
    configured mode holds iff the mode's omega bound is satisfied and the
    measured smallness quantity sits below its threshold.
    """
    omega = cone.omega
    k = curvature_with_ghosts(curve, cone)
    l0 = arc_length(curve)
    ks2 = _ks2(curve, k)
    e0 = 0.5 * integrate(ScalarField(k.values**2, "k^2"), curve)
    eps0 = l0**3 * ks2
    eps_star = epsilon_star(omega)
    small_c = smallness_constrained(omega, l0)

    l_lower = math.nan
    l_upper = math.nan
    small_p = math.nan
    flags = {
        "constrained": bool(omega < OMEGA_BOUND_CONSTRAINED and math.sqrt(ks2) < small_c),
        "free": bool(eps0 <= eps_star),
    }
    if spec.mode == "penalised":
        e_lam = e0 + spec.lam * l0
        l_lower, l_upper = length_bounds(e_lam, omega, spec.lam)
        small_p = smallness_penalised(omega, l_lower, l_upper, spec.lam)
        flags["penalised"] = bool(omega <= OMEGA_BOUND_PENALISED and ks2 <= small_p)
    else:
        flags["penalised"] = None

    return ThresholdReport(
        omega_bound_penalised=OMEGA_BOUND_PENALISED,
        omega_bound_constrained=OMEGA_BOUND_CONSTRAINED,
        L_lower=l_lower,
        L_upper=l_upper,
        smallness_penalised=small_p,
        smallness_constrained=small_c,
        epsilon_star=eps_star,
        hypotheses_met=flags,
        measured={"L0": l0, "E0": e0, "ks2": ks2, "epsilon0": eps0, "omega": omega},
    )


def compute_frame(state) -> DiagnosticsFrame:
    """Evaluate the full diagnostics row for a flow state."""
    curve, cone, spec = state.curve, state.cone, state.spec
    k = curvature_with_ghosts(curve, cone)
    L = arc_length(curve)
    i_k2 = integrate(ScalarField(k.values**2, "k^2"), curve)
    ks2_l = [i_k2]
    for ell in range(1, 4):
        d = curvature_derivative(k, curve, ell)
        ks2_l.append(integrate(ScalarField(d.values**2, f"k_s{ell}^2"), curve))
    e0 = 0.5 * i_k2
    e_lam = e0 + spec.lam * L if spec.mode == "penalised" else e0
    kbar = integrate(k, curve) / L
    gam = ks2_l[1] / i_k2**3 if i_k2 > 1.0e-14 else math.nan
    return DiagnosticsFrame(
        t=state.time,
        L=L,
        A=enclosed_area(curve),
        E0=e0,
        E_lambda=e_lam,
        ks2=ks2_l[1],
        ks2_l=tuple(ks2_l),
        epsilon=L**3 * ks2_l[1],
        gamma=gam,
        kbar=kbar,
        omega_num=rotation_number(curve),
        lambda_used=state.last_lambda,
        residuals=boundary_residuals(curve, cone),
        tip_dist=tip_distance(curve),
        kmax_dev=float(np.max(np.abs(k.values - kbar))),
    )
