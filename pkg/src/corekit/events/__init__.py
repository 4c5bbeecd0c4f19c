"""Performance event tables, groups, and the measurement engine."""

from .engine import (
    EventSetSpec,
    MeasurementResult,
    ProgramHandle,
    derive_metrics,
    measure,
    multiplex,
    parse_event_string,
    program,
    with_implicit_fixed,
)
from .groups import EventGroup, Metric, eval_formula, parse_formula, parse_groups
from .tables import (
    ArchTable,
    CounterSlot,
    EventDefinition,
    arch_for,
    detect_arch,
    get_arch_table,
    parse_event_table,
)

__all__ = [
    "ArchTable",
    "CounterSlot",
    "EventDefinition",
    "EventGroup",
    "EventSetSpec",
    "MeasurementResult",
    "Metric",
    "ProgramHandle",
    "arch_for",
    "derive_metrics",
    "detect_arch",
    "eval_formula",
    "get_arch_table",
    "measure",
    "multiplex",
    "parse_event_string",
    "parse_event_table",
    "parse_formula",
    "parse_groups",
    "program",
    "with_implicit_fixed",
]
