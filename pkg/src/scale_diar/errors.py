"""Exception hierarchy shared by every module."""


class ScaleDiarError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(ScaleDiarError, ValueError):
    """Array shapes or lengths do not agree."""


class DomainError(ScaleDiarError, ValueError):
    """An argument lies outside the domain of the operation."""


class ContractError(ScaleDiarError, ValueError):
    """A documented precondition on structured input was violated."""


class DegenerateMaskError(ScaleDiarError, ValueError):
    """A mask selects no entries, so the masked mean is undefined."""


class SamplingError(ScaleDiarError, ValueError):
    pass


class GenerationError(ScaleDiarError, RuntimeError):
    pass


class TrainingError(ScaleDiarError, RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, step):
        super().__init__(f"step {step}: {message}")
        self.step = step


class ConfigError(ScaleDiarError, ValueError):
    pass


class DataError(ScaleDiarError, ValueError):
    pass


class RttmParseError(ScaleDiarError, ValueError):
    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
