"""Exception types shared across the package."""


class RouteSimError(Exception):
    """Base class for all routesim errors."""


class NetworkFormatError(RouteSimError):
    """Malformed network file (bad header, bad value, dangling endpoint)."""


class NoRouteError(RouteSimError):
    """Destination unreachable from origin."""


class MissingRouteError(RouteSimError):
    """A precomputed-routes file has no entry for the requested trip."""


class RouteValidationError(RouteSimError):
    """A route violates connectivity or endpoint constraints."""


class NoMatchError(RouteSimError):
    """Map matching found no candidate edges for a GPS trace."""


class EmptyDemandError(RouteSimError):
    """All trips were filtered out while building or sampling demand."""


class CalibrationError(RouteSimError):
    """Traffic-load calibration could not find a congestion elbow."""


class FitError(RouteSimError):
    """Curve fitting failed to converge; carries best-effort parameters."""

    def __init__(self, message, best_params=None, best_cost=None):
        super().__init__(message)
        self.best_params = best_params
        self.best_cost = best_cost
