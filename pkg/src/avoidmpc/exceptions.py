"""Exception types raised across the package."""


class AvoidMPCError(Exception):
    """Base class for all package errors."""


class DimensionError(AvoidMPCError, ValueError):
    pass


class AssumptionViolation(AvoidMPCError, ValueError):
    """A structural assumption (controllability, observability, ...) fails."""


class InfeasibleTarget(AvoidMPCError):
    pass


class NonEquilibrium(AvoidMPCError):
    pass


class RiccatiDivergence(AvoidMPCError):
    pass


class NotSchur(AvoidMPCError):
    pass


class NotNStepControllable(AvoidMPCError):
    pass


class UnsupportedExponent(AvoidMPCError):
    pass


class InfeasibleProblem(AvoidMPCError):
    """The finite-horizon problem has no feasible point for this state."""


class InitialInfeasible(InfeasibleProblem):
    pass


class PlantModelMismatch(AvoidMPCError):
    pass


class ConfigError(AvoidMPCError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ScenarioInfeasible(AvoidMPCError):
    pass
