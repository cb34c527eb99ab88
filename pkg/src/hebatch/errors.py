"""Exception types shared across the hebatch modules."""


class HebatchError(Exception):
    """Base class for all hebatch errors."""


class LengthExceedsSlots(HebatchError):
    """Input vector is longer than the ciphertext slot count."""


class MissingRotationKey(HebatchError):
    """A rotation was requested for an offset with no resident key."""

    def __init__(self, offset: int):
        self.offset = offset
        super().__init__(f"no rotation key resident for offset {offset}")


class ContextMismatch(HebatchError):
    """Operands belong to different engine contexts."""


class LevelExhausted(HebatchError):
    """Multiplicative level budget would go negative."""


class SlotConstraintViolated(HebatchError):
    """A packing layout does not fit the slot budget (m * b > n)."""


class ShapeMismatch(HebatchError):
    """Tensor or batch shapes disagree with the declared layout."""


class OverlappingRanges(HebatchError):
    """Mask intervals overlap."""


class UnsupportedKernel(HebatchError):
    """Kernel size outside the supported {1, 3} set."""


class UnsupportedStride(HebatchError):
    """Stride outside the supported {1, 2} set."""


class NonPowerOfTwoBlock(HebatchError):
    """Rotate-add trees require power-of-two block sizes."""


class OccupancyOverflow(HebatchError):
    """Accumulator would place data beyond the slot count."""


class InfeasibleBatch(HebatchError):
    """Requested batch size violates a slot-capacity constraint.

    ``constraint`` names the violated bound:
      - ``"packing"``:  m * b <= n at some spatial stage
      - ``"head_in"``:  b * d_in <= n at the classifier input
      - ``"head_out"``: b * d_out <= n at the classifier output
    """

    def __init__(self, message: str, constraint: str, stage: str | None = None):
        self.constraint = constraint
        self.stage = stage
        super().__init__(message)


class NonPositiveVariance(HebatchError):
    """Batch-norm variance plus eps is not positive."""


class ParseError(HebatchError):
    """A config or CSV file could not be parsed."""


class NonFiniteValue(HebatchError):
    """A loaded tensor contains NaN or infinity."""
