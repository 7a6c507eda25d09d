"""Exception hierarchy. Each family maps to one CLI exit code."""


class HifuseError(Exception):
    exit_code = 1


class ConfigError(HifuseError, ValueError):
    exit_code = 2


class DataError(HifuseError, ValueError):
    exit_code = 3


class MalformedHeaderError(DataError):
    pass


class NonFiniteValueError(DataError):
    pass


class NonMonotoneTimeError(DataError):
    pass


class EmptyFileError(DataError):
    pass


class NumericalError(HifuseError, ArithmeticError):
    exit_code = 4
