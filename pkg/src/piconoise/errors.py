"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses without a lookup table.
"""


class PicoError(Exception):
    exit_code = 1


class NumericError(PicoError):
    exit_code = 3


class NotPositiveDefinite(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class SingularAliasSet(NumericError):
    pass


class SingularSystem(NumericError):
    pass


class ZeroReference(NumericError):
    pass


class NotReached(NumericError):
    pass


class NotCertifiable(NumericError):
    pass


class ShapeMismatch(NumericError):
    pass


class TooLarge(NumericError):
    pass


class NonLinearSpec(NumericError):
    pass


class TraceMismatch(NumericError):
    pass


class ConfigError(PicoError):
    exit_code = 2

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class IoError(PicoError):
    exit_code = 4


class FormatError(IoError):
    pass
