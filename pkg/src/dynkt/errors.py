"""Exception hierarchy shared by every module."""


class DynKTError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(DynKTError, ValueError):
    pass


class StaleGraphError(DynKTError, RuntimeError):
    pass


class DataError(DynKTError, ValueError):
    pass


class ConfigError(DynKTError, ValueError):
    pass


class NumericError(DynKTError, ArithmeticError):
    pass
