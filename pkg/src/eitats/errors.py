"""Exception types shared across the package."""


class EitAtsError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteResult(EitAtsError):
    """A closed-form evaluation produced inf/nan (degenerate denominator)."""


class DegeneratePoles(EitAtsError):
    """The two dressed poles are too close for residues to be meaningful."""


class InvalidCorrection(EitAtsError):
    """Population correction undefined (gamma23 = 0 together with delta_c = 0)."""


class DegenerateData(EitAtsError):
    """Input data carries no usable structure (e.g. constant spectrum)."""


class FitDiverged(EitAtsError):
    """Every fit start produced non-finite residuals."""


class MismatchedSampleSize(EitAtsError):
    """Per-point weights require all fits to share the same number of points."""


class NonPhysicalParams(EitAtsError):
    """Parameters outside the physical domain of the integrator."""


class StepTooLarge(EitAtsError):
    """Integration step violated trace/positivity tolerances."""


class WindowTooShort(EitAtsError):
    """An averaging window holds too few samples."""


class ParseError(EitAtsError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(EitAtsError):
    """Structurally valid file with missing/invalid fields."""


class InvariantViolation(EitAtsError):
    """Ingested data violates a declared invariant."""


class ConfigError(EitAtsError):
    """Invalid or incomplete run configuration; names the offending field."""
