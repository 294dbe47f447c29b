"""Time integration of the elastic flow family ``d alpha/dt = V nu``.

Three normal speeds are supported: ``V = k_ss + k^3/2 - lambda k`` with a
fixed positive ``lambda`` (length-penalised), with ``lambda(t)`` chosen so
the length stays constant (length-constrained), and with ``lambda = 0``
(free).

The default stepper treats the leading fourth arc-length derivative of the
position implicitly on the metric frozen at the current step and the rest
explicitly, which is stable at ``dt ~ h^2``; a classical four-stage
explicit stepper (stable only at ``dt ~ h^4``) is kept as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backends
from .backends import numpy_impl
from .cone import (
    TIP_MARGIN,
    BoundaryResiduals,
    Cone,
    boundary_residuals,
    project_to_ray,
    ray_normal,
    ray_unit,
    tip_distance,
)
from .curve import DiscreteCurve, ScalarField, arc_length, chord_lengths, resample_uniform
from .errors import (
    DegenerateCurvatureError,
    InvalidInputError,
    StepperFailureError,
    TipCollisionError,
)

MODES = ("penalised", "constrained", "free")
_MODE_CODES = {"free": 0, "penalised": 1, "constrained": 2}

# Default stepping policy; every value can be overridden per scenario.
SIGMA_EXPLICIT = 0.05  # dt = sigma * h_min^4 for the explicit stepper
SIGMA_SEMI_IMPLICIT = 0.2  # dt = sigma2 * h_min^2 for the default stepper
RESAMPLE_EVERY = 10  # accepted steps between reparametrizations
RESAMPLE_SKIP_SPREAD = 1.0e-9  # skip resampling below this segment spread
ON_RAY_REJECT = 1.0e-6  # endpoint drift off the rays that rejects a step
ENERGY_SLACK = 1.0e-6  # allowed relative uptick of the monitored energy
MAX_REJECTIONS = 20


@dataclass(frozen=True)
class FlowSpec:
    """Which normal speed drives the flow, plus its parameter."""

    mode: str
    lam: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"flow mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "penalised" and not self.lam > 0.0:
            raise InvalidInputError("penalised flow requires lambda > 0")
        if self.mode != "penalised":
            object.__setattr__(self, "lam", 0.0)

    @property
    def mode_code(self) -> int:
        return _MODE_CODES[self.mode]


@dataclass
class FlowState:
    """One evolving curve with its cone, flow and stepping bookkeeping."""

    curve: DiscreteCurve
    time: float
    cone: Cone
    spec: FlowSpec
    last_lambda: float = 0.0
    step_count: int = 0
    dt_current: float = 0.0
    monitored_energy: float = math.nan  # cache; NaN forces recomputation


@dataclass(frozen=True)
class StepReport:
    accepted: bool
    dt_used: float
    energy_delta: float
    max_speed: float
    residuals: BoundaryResiduals


def ray_pack(cone: Cone) -> np.ndarray:
    """Flat ray-geometry array consumed by the kernels."""
    rp = np.empty(12)
    rp[0:2] = ray_unit(cone, "minus")
    rp[2:4] = ray_normal(cone, "minus")
    rp[4] = np.cos(2.0 * cone.theta1)
    rp[5] = np.sin(2.0 * cone.theta1)
    rp[6:8] = ray_unit(cone, "plus")
    rp[8:10] = ray_normal(cone, "plus")
    rp[10] = np.cos(2.0 * cone.theta2)
    rp[11] = np.sin(2.0 * cone.theta2)
    return rp


def monitored_energy(curve: DiscreteCurve, cone: Cone, spec: FlowSpec) -> float:
    """The energy whose monotonicity the stepper enforces.

    ``E0 + lambda L`` for the penalised flow, plain ``E0`` otherwise (the
    constrained flow dissipates ``E0`` while ``lambda(t) L`` is not an
    energy).
    """
    L, e0 = backends.active.energy_scalars(curve.nodes, ray_pack(cone))
    if spec.mode == "penalised":
        return float(e0) + spec.lam * float(L)
    return float(e0)


def lambda_constrained(curve: DiscreteCurve, cone: Cone) -> float:
    """Multiplier ``(-int k_s^2 + int k^4 / 2) / int k^2`` that freezes the length."""
    _, _, _, lam, ok = backends.active.flow_speed(curve.nodes, ray_pack(cone), 2, 0.0)
    if ok == backends.ERR_DEGENERATE:
        raise DegenerateCurvatureError("int k^2 vanishes; constrained multiplier undefined")
    return float(lam)


def normal_speed(curve: DiscreteCurve, spec: FlowSpec, cone: Cone) -> ScalarField:
    """Normal speed ``V`` such that the curve moves by ``V nu``."""
    v, _, _, _, ok = backends.active.flow_speed(
        curve.nodes, ray_pack(cone), spec.mode_code, spec.lam
    )
    if ok == backends.ERR_DEGENERATE:
        raise DegenerateCurvatureError("int k^2 vanishes; constrained multiplier undefined")
    return ScalarField(np.asarray(v), meaning="normal_speed")


@dataclass(frozen=True)
class BandedSystem:
    """Semi-implicit update system in banded storage (two coupled components)."""

    ab: np.ndarray  # scipy solve_banded layout, bandwidths (5, 5)
    rhs: np.ndarray  # interleaved x0, y0, x1, y1, ...
    kl: int
    ku: int
    lambda_used: float

    def solve(self) -> np.ndarray:
        from scipy.linalg import solve_banded

        return solve_banded((self.kl, self.ku), self.ab, self.rhs).reshape(-1, 2)


def assemble_semi_implicit(state: FlowState, dt: float) -> BandedSystem:
    """Banded system for the next node positions (reference implementation)."""
    if dt <= 0.0:
        raise InvalidInputError("dt must be positive")
    system, lam_used, _, ok = numpy_impl.semi_implicit_system(
        state.curve.nodes, ray_pack(state.cone), state.spec.mode_code, state.spec.lam, dt
    )
    if ok == numpy_impl.ERR_DEGENERATE:
        raise DegenerateCurvatureError("int k^2 vanishes; constrained multiplier undefined")
    ab, rhs = system
    return BandedSystem(ab=ab, rhs=rhs, kl=numpy_impl.KL, ku=numpy_impl.KU, lambda_used=lam_used)


def stability_dt(state: FlowState, sigma: float | None = None) -> float:
    """Largest safe explicit step, ``sigma * (min segment length)^4``."""
    sig = SIGMA_EXPLICIT if sigma is None else sigma
    return sig * float(np.min(chord_lengths(state.curve))) ** 4


def semi_implicit_dt(state: FlowState, sigma2: float | None = None) -> float:
    """Default semi-implicit step, ``sigma2 * (min segment length)^2``."""
    sig = SIGMA_SEMI_IMPLICIT if sigma2 is None else sigma2
    return sig * float(np.min(chord_lengths(state.curve))) ** 2


def _segment_spread(curve: DiscreteCurve) -> float:
    seg = chord_lengths(curve)
    return float(np.max(seg) / np.min(seg)) - 1.0


def _snap_endpoints(xy: np.ndarray, cone: Cone) -> np.ndarray:
    xy = xy.copy()
    xy[0] = project_to_ray(xy[0], cone, "minus")
    xy[-1] = project_to_ray(xy[-1], cone, "plus")
    return xy


def _pre_snap_drift(xy: np.ndarray, rp: np.ndarray) -> float:
    d_m = abs(xy[0, 0] * rp[2] + xy[0, 1] * rp[3])
    d_p = abs(xy[-1, 0] * rp[8] + xy[-1, 1] * rp[9])
    return max(d_m, d_p)


def _check_tip(curve: DiscreteCurve) -> None:
    L = arc_length(curve)
    if tip_distance(curve) < TIP_MARGIN * L:
        raise TipCollisionError(
            f"endpoint within {TIP_MARGIN:g} * L of the cone tip "
            f"(distance {tip_distance(curve):.3e}, L {L:.3e})"
        )


def _finish_step(candidate: DiscreteCurve, new_count: int, resample_every: int) -> DiscreteCurve:
    """Tip guard plus cadence-based reparametrization of an accepted curve."""
    _check_tip(candidate)
    if resample_every > 0 and new_count % resample_every == 0:
        if _segment_spread(candidate) > RESAMPLE_SKIP_SPREAD:
            return resample_uniform(candidate, candidate.n)
    return candidate


def step(
    state: FlowState,
    dt: float,
    *,
    resample_every: int = RESAMPLE_EVERY,
    on_ray_reject: float = ON_RAY_REJECT,
    energy_slack: float = ENERGY_SLACK,
    max_rejections: int = MAX_REJECTIONS,
) -> tuple[FlowState, StepReport]:
    """One semi-implicit step with rejection control.

    The step is rejected and retried at half the step size when the update
    produces non-finite values, drifts the endpoints off their rays, or
    (penalised mode) raises the monitored energy beyond the slack.
    """
    if dt <= 0.0:
        raise InvalidInputError("dt must be positive")
    rp = ray_pack(state.cone)
    xy = state.curve.nodes
    gate_energy = state.spec.mode == "penalised"
    e_before = state.monitored_energy
    if math.isnan(e_before):
        e_before = monitored_energy(state.curve, state.cone, state.spec)
    dt_try = dt
    for _ in range(max_rejections + 1):
        xy_new, lam_used, vmax, ok = backends.active.semi_implicit_step(
            xy, rp, state.spec.mode_code, state.spec.lam, dt_try
        )
        if ok == backends.ERR_DEGENERATE:
            raise DegenerateCurvatureError("int k^2 vanishes along the flow")
        reject = ok != backends.OK
        if not reject:
            reject = not np.all(np.isfinite(xy_new))
        if not reject:
            reject = _pre_snap_drift(xy_new, rp) > on_ray_reject
        e_after = math.nan
        if not reject:
            xy_snapped = _snap_endpoints(xy_new, state.cone)
            candidate = DiscreteCurve(xy_snapped)
            e_after = monitored_energy(candidate, state.cone, state.spec)
            if gate_energy:
                reject = e_after > e_before + energy_slack * (1.0 + abs(e_before))
        if reject:
            dt_try *= 0.5
            continue
        curve = _finish_step(candidate, state.step_count + 1, resample_every)
        resampled = curve is not candidate
        new_state = FlowState(
            curve=curve,
            time=state.time + dt_try,
            cone=state.cone,
            spec=state.spec,
            last_lambda=lam_used,
            step_count=state.step_count + 1,
            dt_current=dt_try,
            monitored_energy=math.nan if resampled else e_after,
        )
        report = StepReport(
            accepted=True,
            dt_used=dt_try,
            energy_delta=e_after - e_before,
            max_speed=vmax,
            residuals=boundary_residuals(curve, state.cone),
        )
        return new_state, report
    raise StepperFailureError(
        f"step rejected {max_rejections} times starting from dt={dt:.3e} at t={state.time:.6g}"
    )


def step_explicit(
    state: FlowState, dt: float, *, resample_every: int = RESAMPLE_EVERY
) -> tuple[FlowState, StepReport]:
    """One classical four-stage explicit step; fails hard on instability."""
    if dt <= 0.0:
        raise InvalidInputError("dt must be positive")
    rp = ray_pack(state.cone)
    e_before = state.monitored_energy
    if math.isnan(e_before):
        e_before = monitored_energy(state.curve, state.cone, state.spec)
    xy_new, lam_used, vmax, ok = backends.active.rk4_step(
        state.curve.nodes, rp, state.spec.mode_code, state.spec.lam, dt
    )
    if ok == backends.ERR_DEGENERATE:
        raise DegenerateCurvatureError("int k^2 vanishes along the flow")
    if ok != backends.OK or not np.all(np.isfinite(xy_new)):
        raise StepperFailureError(f"explicit step produced non-finite values at dt={dt:.3e}")
    xy_snapped = _snap_endpoints(xy_new, state.cone)
    candidate = DiscreteCurve(xy_snapped)
    e_after = monitored_energy(candidate, state.cone, state.spec)
    curve = _finish_step(candidate, state.step_count + 1, resample_every)
    resampled = curve is not candidate
    new_state = FlowState(
        curve=curve,
        time=state.time + dt,
        cone=state.cone,
        spec=state.spec,
        last_lambda=lam_used,
        step_count=state.step_count + 1,
        dt_current=dt,
        monitored_energy=math.nan if resampled else e_after,
    )
    report = StepReport(
        accepted=True,
        dt_used=dt,
        energy_delta=e_after - e_before,
        max_speed=vmax,
        residuals=boundary_residuals(curve, state.cone),
    )
    return new_state, report


def run(config, on_frame=None):
    """Integrate one scenario to ``t_end``, emitting frames at the output cadence.

    Returns ``(series, state)``.  Tip collisions and stepper failures abort
    the run with :class:`coneflow.errors.RunAborted` carrying the frames
    emitted so far.
    """
    from .diagnostics import Series, compute_frame
    from .errors import RunAborted
    from .scenario import gen_initial

    cone = config.cone()
    spec = config.flow_spec()
    curve = gen_initial(config)
    state = FlowState(curve=curve, time=0.0, cone=cone, spec=spec)
    if spec.mode == "constrained":
        state.last_lambda = lambda_constrained(curve, cone)
    elif spec.mode == "penalised":
        state.last_lambda = spec.lam

    sigma = config.override("sigma", SIGMA_EXPLICIT)
    sigma2 = config.override("sigma2", SIGMA_SEMI_IMPLICIT)
    resample_every = int(config.override("resample_every", RESAMPLE_EVERY))
    on_ray_reject = config.override("on_ray_reject", ON_RAY_REJECT)
    energy_slack = config.override("energy_slack", ENERGY_SLACK)
    explicit = config.stepper == "explicit"

    series = Series.empty(config)
    frame = compute_frame(state)
    series.append(frame)
    if on_frame is not None:
        on_frame(state, frame)

    n_out = max(1, round(config.t_end / config.output_every))
    out_times = [min(config.t_end, (j + 1) * config.output_every) for j in range(n_out)]
    if out_times[-1] < config.t_end:
        out_times.append(config.t_end)

    dt_cap = math.inf
    try:
        for t_target in out_times:
            while state.time < t_target - 1.0e-12 * max(1.0, t_target):
                policy = (
                    stability_dt(state, sigma) if explicit else semi_implicit_dt(state, sigma2)
                )
                dt_req = min(policy, dt_cap, t_target - state.time)
                if explicit:
                    state, report = step_explicit(state, dt_req, resample_every=resample_every)
                else:
                    state, report = step(
                        state,
                        dt_req,
                        resample_every=resample_every,
                        on_ray_reject=on_ray_reject,
                        energy_slack=energy_slack,
                    )
                # Grow back gently after a rejection forced a smaller step.
                dt_cap = math.inf if report.dt_used >= dt_req else report.dt_used * 2.0
            state.time = t_target
            frame = compute_frame(state)
            series.append(frame)
            if on_frame is not None:
                on_frame(state, frame)
    except (TipCollisionError, StepperFailureError) as exc:
        raise RunAborted(exc, series, state) from exc
    return series, state
