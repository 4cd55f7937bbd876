"""Exception types shared across the package."""


class BlanketLabError(Exception):
    """Base class for all library errors."""

    exit_code = 3


class ConfigError(BlanketLabError):
    exit_code = 2


class UnknownKey(ConfigError):
    def __init__(self, key, suggestion=None):
        self.key = key
        self.suggestion = suggestion
        msg = f"unknown configuration key {key!r}"
        if suggestion:
            msg += f" (did you mean {suggestion!r}?)"
        super().__init__(msg)


class InvalidGraph(BlanketLabError):
    pass


class Disconnected(InvalidGraph):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SolverNotConverged(BlanketLabError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"CG did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")


class SizeLimitExceeded(BlanketLabError):
    pass


class InvalidParameter(ConfigError):
    pass


class InvalidVertex(InvalidParameter):
    pass


class WalkTimeout(BlanketLabError):
    exit_code = 4

    def __init__(self, t_max, record=None):
        self.t_max = t_max
        self.record = record
        super().__init__(f"walk did not reach the stopping rule within {t_max} steps")


class InfeasibleSize(InvalidParameter):
    pass


class InvalidOffspringLaw(InvalidParameter):
    pass


class SamplingBudgetExceeded(BlanketLabError):
    pass


class InvalidSequence(InvalidParameter):
    pass


class CriticalityViolated(InvalidParameter):
    pass


class InvalidExcursion(InvalidParameter):
    pass


class HorizonTooShort(BlanketLabError):
    pass


class NotAWeightedTree(InvalidGraph):
    pass


class InvalidQuadruple(InvalidParameter):
    pass


class InvalidCorrespondence(InvalidParameter):
    pass


class TooManyBreakpoints(SizeLimitExceeded):
    pass


class InsufficientSamples(InvalidParameter):
    pass


class InvalidPlan(ConfigError):
    pass


class SeedCollision(BlanketLabError):
    pass


class DegenerateFit(BlanketLabError):
    pass
