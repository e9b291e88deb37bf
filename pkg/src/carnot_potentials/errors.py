"""Exception hierarchy. The CLI maps these onto exit codes."""


class CarnotError(Exception):
    """Base class for all package errors."""


class StructureError(CarnotError):
    """Coefficient polynomial fails the homogeneity/structure rules."""

    def __init__(self, msg, key=None):
        super().__init__(msg)
        self.key = key


class HormanderError(CarnotError):
    """Horizontal fields do not bracket-generate the tangent space."""

    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class CapabilityError(CarnotError):
    """Requested operation is not available for this group/input."""


class UnsupportedDimensionError(CapabilityError):
    pass


class GeometryError(CarnotError):
    pass


class SingularityError(CarnotError):
    """Integrand produced non-finite values at quadrature nodes."""


class PVDivergenceError(CarnotError):
    pass


class LimitDivergenceError(CarnotError):
    pass


class GaugeInconsistencyError(CarnotError):
    pass


class ParameterError(CarnotError):
    pass


class PreconditionError(ParameterError):
    pass


class SupportError(PreconditionError):
    pass


class BoundingBoxError(CarnotError):
    pass


class ConfigError(CarnotError):
    pass
