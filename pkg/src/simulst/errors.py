"""Exception hierarchy shared by every module of the package."""


class SimulSTError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SimulSTError, ValueError):
    pass


class InvalidMask(InvalidArgument):
    """An attention mask has the wrong shape or a query row with no allowed key."""


class InvalidConfig(SimulSTError, ValueError):
    pass


class OutOfRange(SimulSTError, IndexError):
    pass


class NumericFailure(SimulSTError, ArithmeticError):
    pass


class InvalidSegment(InvalidArgument):
    pass


class InvalidLength(InvalidArgument):
    pass


class InvalidBlock(InvalidArgument):
    pass


class InvalidInput(InvalidArgument):
    pass


class InvalidAlignment(InvalidArgument):
    pass


class InvalidTarget(InvalidArgument):
    pass


class InvalidLog(InvalidArgument):
    pass


class InvalidProfile(InvalidArgument):
    pass


class InvalidReference(InvalidArgument):
    pass
