"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for usage/config
problems, 3 for I/O, 4 for numerical or contract violations.
"""


class SegDesicError(Exception):
    exit_code = 4


class ConfigError(SegDesicError, ValueError):
    exit_code = 2


class InvalidCoordinateError(SegDesicError, ValueError):
    pass


class ProjectionConvergenceError(SegDesicError, ArithmeticError):
    pass


class OutOfDomainError(SegDesicError, ValueError):
    pass


class DegenerateVectorError(SegDesicError, ValueError):
    pass


class ShapeError(SegDesicError, ValueError):
    pass


class LabelError(SegDesicError, ValueError):
    pass


class BatchSizeError(SegDesicError, ValueError):
    pass


class ContractError(SegDesicError, RuntimeError):
    pass


class ScheduleError(SegDesicError, ValueError):
    pass


class DataError(SegDesicError, ValueError):
    pass


class UndefinedMetricError(SegDesicError, ValueError):
    pass


class CheckpointFormatError(SegDesicError, OSError):
    exit_code = 3
