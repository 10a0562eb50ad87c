"""Exception types raised by the solver pipeline."""


class SolverError(Exception):
    """Base class for all harvestopt errors."""


class NonPositiveVolatility(SolverError):
    def __init__(self, x):
        super().__init__(f"volatility is not strictly positive at x={x!r}")
        self.x = x


class DiscountFloorViolated(SolverError):
    def __init__(self, x, value, floor):
        super().__init__(f"discount rate {value!r} at x={x!r} violates floor {floor!r}")
        self.x = x


class NonFiniteCoefficient(SolverError):
    def __init__(self, name, x):
        super().__init__(f"{name} is not finite at x={x!r}")
        self.x = x


class QuadratureFailure(SolverError):
    pass


class SolutionBranchAmbiguous(SolverError):
    pass


class NaturalBoundaryViolated(SolverError):
    pass


class InconclusiveClassification(SolverError):
    pass


class UnimodalityViolated(SolverError):
    pass


class IntegrabilityCheckFailed(SolverError):
    pass


class TailBoundUnattainable(SolverError):
    pass


class LimitNotStabilized(SolverError):
    pass


class BracketNotFound(SolverError):
    pass


class RootNotBracketed(SolverError):
    pass


class ThresholdAmbiguity(SolverError):
    pass


class WrongCase(SolverError):
    pass


class StateEscapedDomain(SolverError):
    def __init__(self, path_index, t):
        super().__init__(
            f"simulated state left (0, inf) on path {path_index} near t={t:.6g} "
            "and step halving did not recover"
        )
        self.path_index = path_index
        self.t = t


class StencilTooCoarse(SolverError):
    pass


class ConfigError(SolverError):
    pass
