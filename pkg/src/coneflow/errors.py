"""Exception types shared across the package."""


class ConeflowError(Exception):
    """Base class for all coneflow errors."""


class InvalidCurveError(ConeflowError, ValueError):
    """Curve data violates a structural invariant (too few nodes, NaN, coincident nodes)."""


class InvalidInputError(ConeflowError, ValueError):
    """Arguments are inconsistent with each other or with an operation's contract."""


class UnsupportedOrderError(ConeflowError, ValueError):
    """Requested derivative order above the supported maximum."""


class DegenerateCurvatureError(ConeflowError, ValueError):
    """A curvature integral required to be positive is numerically zero."""


class TipCollisionError(ConeflowError, RuntimeError):
    """An endpoint reached (or projected behind) the cone tip."""


class BoundaryViolationError(ConeflowError, ValueError):
    """Endpoints are too far off their boundary rays for ghost construction."""


class StepperFailureError(ConeflowError, RuntimeError):
    """Time stepper could not produce an acceptable step."""


class ConfigError(ConeflowError, ValueError):
    """Scenario configuration is malformed or violates an invariant.

    ``problems`` lists one message per offending field, each naming the
    field path and the violated rule.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SchemaVersionError(ConeflowError, ValueError):
    """Stored series file uses an incompatible schema version."""


class RunAborted(ConeflowError, RuntimeError):
    """A scenario run stopped early; the partial series is preserved.

    Attributes
    ----------
    cause : ConeflowError
        The underlying tip-collision or stepper failure.
    series : Series
        Frames emitted before the abort.
    state : FlowState
        Last accepted state.
    """

    def __init__(self, cause, series, state):
        self.cause = cause
        self.series = series
        self.state = state
        super().__init__(f"run aborted at t={state.time:.6g}: {cause}")
