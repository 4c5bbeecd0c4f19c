import math

import pytest
from hypothesis import given, strategies as st

from corekit.errors import EventSpecError
from corekit.events.groups import (
    eval_formula,
    formula_variables,
    parse_formula,
    parse_groups,
)
from corekit.events.tables import get_arch_table


@pytest.fixture(scope="module")
def core2():
    return get_arch_table("core2")


@pytest.fixture(scope="module")
def nehalem():
    return get_arch_table("nehalem")


class TestFormula:
    def test_arithmetic(self):
        ast = parse_formula("(2 * A + B) / C / 1e6")
        value = eval_formula(ast, {"A": 8192000.0, "B": 1.0, "C": 0.01})
        assert value == (2 * 8192000.0 + 1.0) / 0.01 / 1e6

    def test_names_and_reserved_words(self):
        ast = parse_formula("CPU_CLK_UNHALTED_CORE / clock")
        assert formula_variables(ast) == {"CPU_CLK_UNHALTED_CORE", "clock"}
        assert eval_formula(ast, {"CPU_CLK_UNHALTED_CORE": 5e8,
                                  "clock": 1e9}) == 0.5

    def test_division_by_zero_is_undefined(self):
        ast = parse_formula("A / B")
        assert eval_formula(ast, {"A": 1.0, "B": 0.0}) is None

    def test_undefined_operand_propagates(self):
        ast = parse_formula("A / B + 1")
        assert eval_formula(ast, {"A": 1.0, "B": 0.0}) is None

    def test_missing_variable_is_undefined(self):
        ast = parse_formula("A + 1")
        assert eval_formula(ast, {}) is None

    def test_precedence(self):
        ast = parse_formula("1 + 2 * 3 - 4 / 2")
        assert eval_formula(ast, {}) == 5.0

    def test_unary_minus(self):
        assert eval_formula(parse_formula("-3 + 5"), {}) == 2.0

    @pytest.mark.parametrize("text", [
        "", "1 +", "(1", "1 ** 2", "foo bar", "2 @ 3",
    ])
    def test_malformed_formula(self, text):
        with pytest.raises(EventSpecError):
            parse_formula(text)

    @given(a=st.floats(1, 1e12), b=st.floats(1, 1e12), c=st.floats(1e-9, 1e3))
    def test_eval_matches_python_float_semantics(self, a, b, c):
        ast = parse_formula("64 * (A + B) / C / 1e6")
        expected = 64 * (a + b) / c / 1e6
        value = eval_formula(ast, {"A": a, "B": b, "C": c})
        assert value == expected or (math.isnan(expected) and value is None)


class TestGroupFiles:
    def test_core2_catalog(self, core2):
        assert set(core2.groups) >= {
            "FLOPS_DP", "FLOPS_SP", "L2", "MEM", "CACHE",
            "L2CACHE", "DATA", "BRANCH", "TLB",
        }

    def test_nehalem_catalog(self, nehalem):
        assert set(nehalem.groups) >= {
            "FLOPS_DP", "FLOPS_SP", "L2", "L3", "MEM", "CACHE", "L3CACHE",
            "DATA", "BRANCH", "TLB",
        }

    def test_flops_dp_structure(self, core2):
        g = core2.groups["FLOPS_DP"]
        assert g.event_names() == [
            "INSTR_RETIRED_ANY",
            "CPU_CLK_UNHALTED_CORE",
            "SIMD_COMP_INST_RETIRED_PACKED_DOUBLE",
            "SIMD_COMP_INST_RETIRED_SCALAR_DOUBLE",
        ]
        assert [m.name for m in g.metrics] == \
            ["Runtime [s]", "CPI", "DP MFlops/s"]

    def test_uncore_events_in_l3_group(self, nehalem):
        g = nehalem.groups["L3"]
        slots = dict(g.assignments)
        assert slots["UNC_L3_LINES_IN_ANY"] == "UPMC0"
        assert slots["UNC_L3_LINES_OUT_ANY"] == "UPMC1"

    def test_every_metric_references_only_measured_events(self, core2, nehalem):
        for arch in (core2, nehalem):
            for group in arch.groups.values():
                measured = set(group.event_names()) | {"runtime", "clock"}
                for metric in group.metrics:
                    assert formula_variables(metric.ast) <= measured


class TestGroupParsing:
    def test_counter_conflict_rejected(self, core2):
        text = (
            "group BAD\n"
            "use INSTR_RETIRED_ANY:PMC0\n"
            "use CPU_CLK_UNHALTED_CORE:PMC0\n"
        )
        with pytest.raises(EventSpecError, match="assigned twice"):
            parse_groups(text, core2)

    def test_incompatible_slot_rejected(self, core2):
        # the DP SIMD event only fits the programmable counters
        text = "group BAD\nuse SIMD_COMP_INST_RETIRED_PACKED_DOUBLE:FIXC0\n"
        with pytest.raises(EventSpecError, match="cannot be counted"):
            parse_groups(text, core2)

    def test_unknown_event_rejected(self, core2):
        with pytest.raises(EventSpecError, match="no event"):
            parse_groups("group BAD\nuse NOT_AN_EVENT:PMC0\n", core2)

    def test_metric_on_unmeasured_event_rejected(self, core2):
        text = (
            "group BAD\n"
            "use INSTR_RETIRED_ANY:FIXC0\n"
            "metric x = L2_LINES_IN_ANY / runtime\n"
        )
        with pytest.raises(EventSpecError, match="does not measure"):
            parse_groups(text, core2)

    def test_line_before_group_rejected(self, core2):
        with pytest.raises(EventSpecError, match="before any group"):
            parse_groups("use INSTR_RETIRED_ANY:FIXC0\n", core2)

    def test_duplicate_group_rejected(self, core2):
        with pytest.raises(EventSpecError, match="duplicate group"):
            parse_groups("group A\ngroup A\n", core2)

    def test_metric_names_may_contain_spaces_and_brackets(self, core2):
        text = (
            "group OK\n"
            "use CPU_CLK_UNHALTED_CORE:FIXC1\n"
            "metric Plain runtime [s] = CPU_CLK_UNHALTED_CORE / clock\n"
        )
        groups = parse_groups(text, core2)
        assert groups["OK"].metrics[0].name == "Plain runtime [s]"
