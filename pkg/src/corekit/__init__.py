"""Node topology, hardware performance counters, thread pinning and
CPU feature control for x86 Linux, with recorded-fixture backends so
everything is testable off the machine that produced the data."""

from .cpuid import CpuidDump, CpuidRecord, LiveCpuidSource, load_dump, parse_dump
from .errors import (
    CorekitError,
    DumpFormatError,
    EventSpecError,
    FeatureError,
    FixtureError,
    MarkerError,
    MeasurementError,
    MsrError,
    PinError,
    TopologyError,
)
from .msr import DevMsrBackend, FixtureMsrBackend, MsrFixture, SimClock, load_fixture
from .topology import (
    CacheDescriptor,
    HWThread,
    TopologyMap,
    build_topology,
    decode_cache_topology,
    decode_thread_topology,
)

__version__ = "1.0.0"

__all__ = [
    "CacheDescriptor",
    "CorekitError",
    "CpuidDump",
    "CpuidRecord",
    "DevMsrBackend",
    "DumpFormatError",
    "EventSpecError",
    "FeatureError",
    "FixtureError",
    "FixtureMsrBackend",
    "HWThread",
    "LiveCpuidSource",
    "MarkerError",
    "MeasurementError",
    "MsrError",
    "MsrFixture",
    "PinError",
    "SimClock",
    "TopologyMap",
    "TopologyError",
    "build_topology",
    "decode_cache_topology",
    "decode_thread_topology",
    "load_dump",
    "load_fixture",
    "parse_dump",
    "__version__",
]
