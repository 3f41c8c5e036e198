"""Exception types shared across the volatix package."""


class VolatixError(Exception):
    """Base class for all volatix errors."""


class DegenerateSeries(VolatixError):
    """A series is too short to differentiate."""


class InsufficientData(VolatixError):
    """An event's retained prefix is too short to compute volatility."""

    def __init__(self, event_id, message=None):
        self.event_id = event_id
        super().__init__(message or f"event {event_id!r}: fewer than 2 samples retained after censoring")


class MissingComponent(VolatixError):
    """A coefficient of variation is undefined (short or zero-mean input)."""


class InvalidParameter(VolatixError):
    """A parameter value violates its domain (non-finite, out of range, ...)."""


class LayoutError(VolatixError):
    """Coefficient vectors and design vectors do not line up."""


class CollinearCovariate(VolatixError):
    """A design matrix is rank deficient (e.g. a constant covariate next to the intercept)."""


class NotFitted(VolatixError):
    """Post-estimation analysis was requested before a model was fit."""


class InvalidScenario(VolatixError):
    """A forecasting scenario perturbs a covariate absent from the targeted utility."""


class InvalidTarget(VolatixError):
    """A trace-generation target cannot be realized (e.g. positive CV on a constant series)."""


class SchemaError(VolatixError):
    """An input file violates its schema; carries row/column diagnostics in the message."""


class JoinError(VolatixError):
    """Feature and attribute tables do not join completely on event_id."""

    def __init__(self, orphans, message=None):
        self.orphans = list(orphans)
        shown = ", ".join(str(o) for o in self.orphans[:20])
        more = "" if len(self.orphans) <= 20 else f" (+{len(self.orphans) - 20} more)"
        super().__init__(message or f"unmatched event_ids: {shown}{more}")
