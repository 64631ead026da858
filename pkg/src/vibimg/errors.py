"""Exception and warning types shared across the package."""


class VibimgError(Exception):
    """Base class for all errors raised by this package."""


# --- file parsing (MAT-files and the model format share BadMagic semantics)

class BadMagicError(VibimgError):
    """File does not start with the expected magic/descriptive header."""


class UnsupportedVersionError(VibimgError):
    """MAT-file header declares a version other than the supported one."""


class TruncatedElementError(VibimgError):
    """A MAT-file element declares more bytes than remain in the stream."""


class DecompressFailureError(VibimgError):
    """A compressed MAT-file element could not be inflated."""


class ChannelMissingError(VibimgError):
    """No variable name ends with the requested channel suffix."""


class ChannelAmbiguousError(VibimgError):
    """More than one variable name ends with the requested channel suffix."""


# --- dataset catalog

class ManifestParseError(VibimgError):
    """Manifest file is not valid JSON or violates the manifest schema."""


class CatalogLoadError(VibimgError):
    """One or more manifest entries failed to load.

    Collects per-entry failures so a single bad file does not hide the rest.
    """

    def __init__(self, failures):
        self.failures = list(failures)  # (entry_id, exception) pairs
        lines = ", ".join(f"{eid}: {exc}" for eid, exc in self.failures)
        super().__init__(f"{len(self.failures)} catalog entries failed: {lines}")


# --- preprocessing

class NonFiniteInputError(VibimgError):
    """Signal contains NaN or infinite samples."""


class SignalTooShortError(VibimgError):
    """Signal has fewer samples than one full segment."""


class LengthMismatchError(VibimgError):
    """Segment length does not equal the expected l*l sample count."""


class RangeViolationError(VibimgError):
    """Pixel or sample values fall outside the normalized [-1, 1] range."""


# --- synthetic generation

class InvalidRateError(VibimgError):
    """Impulse repetition rate at or above the Nyquist frequency."""


# --- network

class ShapeMismatchError(VibimgError):
    """Tensor shapes are inconsistent with the operation's contract."""


class OddDimensionError(VibimgError):
    """Pooling input has an odd spatial dimension."""


class LabelOutOfRangeError(VibimgError):
    """Class label index outside [0, num_classes)."""


class VersionMismatchError(VibimgError):
    """Model file format version is not supported."""


class ArchitectureMismatchError(VibimgError):
    """Model file descriptor is inconsistent with its parameter payload."""


class TruncatedError(VibimgError):
    """Model file ends before the declared parameter blocks."""


class NumericalInstabilityError(VibimgError):
    """NaN or Inf appeared in parameters or activations during training."""


# --- experiment protocol

class DatasetTooSmallError(VibimgError):
    """Dataset too small to split with the requested fractions."""


# --- warnings

class CeilingReachedWarning(UserWarning):
    """Rotation augmentation hit the 4x ceiling below the target count."""


class SkippedVariableWarning(UserWarning):
    """A MAT-file variable was skipped because its class is unsupported."""
