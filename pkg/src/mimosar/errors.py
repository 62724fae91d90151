"""Exception hierarchy. The CLI maps these onto exit codes."""


class MimoSarError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MimoSarError, ValueError):
    """Invalid run configuration, parameters, or units."""


class LayoutError(ConfigError):
    """Antenna layout or TDM order is inconsistent."""


class DomainError(MimoSarError, ValueError):
    """An argument lies outside the domain of an operation."""


class StageError(MimoSarError):
    """A processing step was requested out of pipeline order."""


class FormatError(MimoSarError):
    """A data file is malformed or does not match the expected metadata."""


class AlignmentError(MimoSarError):
    """Range alignment found no dominant scatterer."""


class CalibrationError(MimoSarError):
    """Calibration could not be estimated on some channels."""

    def __init__(self, message, channels=()):
        self.channels = tuple(int(c) for c in channels)
        if self.channels:
            message = f"{message} (channels: {', '.join(map(str, self.channels))})"
        super().__init__(message)


class ResampleRequiredError(MimoSarError):
    """The virtual aperture is not on a uniform grid."""


class OutOfSwathError(DomainError):
    """A requested image plane is outside the unambiguous range swath."""


class MetricError(MimoSarError):
    """Impulse-response metrics cannot be computed (no dominant peak)."""
