"""Exception types shared across the package.

Two families matter to the CLI: ValidationError subclasses map to exit
code 1 (bad inputs, caught before real work starts), everything else
derived from SegpromptError maps to exit code 2 (runtime failures).
"""


class SegpromptError(Exception):
    """Root of all package-specific errors."""


class ValidationError(SegpromptError):
    """Bad arguments or contract-violating inputs; CLI exit code 1."""


# --- numerics ---------------------------------------------------------------

class ShapeMismatch(ValidationError):
    pass


class NonFiniteValue(SegpromptError):
    """A tensor picked up a NaN or Inf; finite values are a hard contract."""


class NonScalarLoss(ValidationError):
    pass


class TapeConsumed(SegpromptError):
    """backward() was called twice on the same graph without a fresh forward."""


class ZeroVector(SegpromptError):
    pass


# --- images and masks -------------------------------------------------------

class MalformedHeader(SegpromptError):
    pass


class TruncatedPayload(SegpromptError):
    pass


class UnsupportedMaxval(SegpromptError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NoContrast(SegpromptError):
    """Single-bin histogram: thresholding is undefined."""


class EmptyMask(SegpromptError):
    pass


# --- archives and manifests --------------------------------------------------

class MalformedArchive(SegpromptError):
    pass


class SchemaViolation(SegpromptError):
    pass


# --- model / training --------------------------------------------------------

class IndivisibleDims(ValidationError):
    pass


class UnknownClass(ValidationError):
    pass


class NonNormalizedInput(ValidationError):
    pass


class LabelOutOfRange(ValidationError):
    pass


class LambdaOutOfRange(ValidationError):
    pass


class FractionOutOfRange(ValidationError):
    pass


class EmptySplit(ValidationError):
    pass


class MissingClass(ValidationError):
    pass


class ArchMismatch(ValidationError):
    pass
