"""Exception hierarchy shared by every litetok module."""


class LitetokError(Exception):
    pass


class DimensionError(LitetokError, ValueError):
    """Operand shapes are incompatible."""


class ShapeError(DimensionError):
    """A tensor extent violates a divisibility or size requirement."""


class NumericError(LitetokError, ArithmeticError):
    """A NaN or Inf was produced or consumed."""


class ContractError(LitetokError, ValueError):
    pass


class PartitionError(LitetokError, ValueError):
    pass


class TilingError(LitetokError, ValueError):
    pass


class ConfigError(LitetokError, ValueError):
    pass


class SamplingError(LitetokError, ValueError):
    pass
