"""Exception hierarchy shared across the package."""


class CorekitError(Exception):
    """Base class for all errors raised by this package."""


class DumpFormatError(CorekitError):
    """A cpuid dump file is malformed or internally inconsistent."""


class TopologyError(CorekitError):
    """Processor identification records cannot be decoded."""


class MsrError(CorekitError):
    """A model-specific register access failed or was rejected."""


class FixtureError(CorekitError):
    """An MSR fixture file is malformed."""


class EventSpecError(CorekitError):
    """An event string, event table, or group definition is invalid."""


class MeasurementError(CorekitError):
    """Counter programming or readout failed."""


class MarkerError(CorekitError):
    """Misuse of the in-process measurement marker API."""


class PinError(CorekitError):
    """Thread placement configuration or launch failed."""


class FeatureError(CorekitError):
    """Processor feature query or toggle failed."""
