"""Exception hierarchy.

Every error carries the process exit code the command line maps it to:
2 configuration, 3 data, 4 numeric, 5 shape.
"""


class HFDenoiseError(Exception):
    exit_code = 1


class ConfigError(HFDenoiseError, ValueError):
    exit_code = 2


class InvalidSigma(ConfigError):
    pass


class InvalidDose(ConfigError):
    pass


class DataError(HFDenoiseError):
    exit_code = 3


class FormatError(DataError, ValueError):
    pass


class NonFinite(DataError, ValueError):
    pass


class DegenerateRange(DataError, ValueError):
    pass


class NonFiniteLoss(HFDenoiseError, FloatingPointError):
    exit_code = 4


class ShapeError(HFDenoiseError, ValueError):
    exit_code = 5


class OddDimension(ShapeError):
    pass


class ShapeMismatch(ShapeError):
    pass


class IndivisibleGrid(ShapeError):
    pass


class IndivisiblePatch(ShapeError):
    pass


class TooSmall(ShapeError):
    pass


class CropTooLarge(ShapeError):
    pass


class EmptyPositiveSet(ValueError):
    pass
