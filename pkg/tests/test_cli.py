"""End-to-end command line behavior against recorded fixtures."""

import os
import shutil
import subprocess
import sys

import pytest

from conftest import HELPERS, fixture_path, golden_text, run_main


def fixture_args(dump, msr=None):
    args = ["--backend", "fixture", "--cpuid-dump", fixture_path(dump)]
    if msr:
        args += ["--msr-fixture", fixture_path(msr)]
    return args


class TestTopology:
    def test_extended_report_matches_reference(self):
        rc, out, err = run_main(
            ["topology", "-c"] + fixture_args("westmere.dump")
        )
        assert rc == 0 and err == ""
        assert out == golden_text("topology_westmere_extended.txt")

    def test_plain_report_omits_cache_details(self):
        rc, out, _ = run_main(["topology"] + fixture_args("westmere.dump"))
        assert rc == 0
        assert "Associativity:" not in out
        assert "Type:" in out and "Cache groups:" in out

    def test_ascii_art(self):
        rc, out, _ = run_main(
            ["topology", "-g"] + fixture_args("westmere.dump")
        )
        assert rc == 0
        assert golden_text("topology_art_socket0.txt") in out


class TestPerfctrWrapper:
    def test_report_matches_reference(self):
        rc, out, err = run_main(
            ["perfctr", "-c", "0-3", "-g", "FLOPS_DP"]
            + fixture_args("core2_quad.dump", "core2_wrapper.msr")
            + ["--", "sh", "-c", "exit 0"]
        )
        assert rc == 0 and err == ""
        assert out == golden_text("perfctr_wrapper_core2.txt")

    def test_target_exit_status_propagates(self):
        rc, out, _ = run_main(
            ["perfctr", "-c", "0-3", "-g", "FLOPS_DP"]
            + fixture_args("core2_quad.dump", "core2_wrapper.msr")
            + ["--", "sh", "-c", "exit 7"]
        )
        assert rc == 7
        assert "INSTR_RETIRED_ANY" in out

    def test_custom_event_string_has_no_metric_table(self):
        rc, out, _ = run_main(
            ["perfctr", "-c", "0", "-g", "INSTR_RETIRED_ANY:FIXC0"]
            + fixture_args("core2_quad.dump", "core2_wrapper.msr")
            + ["--", "sh", "-c", "exit 0"]
        )
        assert rc == 0
        assert "Measuring events INSTR_RETIRED_ANY:FIXC0" in out
        assert "| Metric" not in out

    def test_uncore_counts_only_on_socket_owners(self):
        rc, out, _ = run_main(
            ["perfctr", "-c", "0,1,4,5", "-g", "L3"]
            + fixture_args("nehalem_ep.dump", "nehalem_uncore.msr")
            + ["--", "sh", "-c", "exit 0"]
        )
        assert rc == 0
        lines = out.splitlines()
        lines_in = next(l for l in lines if "UNC_L3_LINES_IN_ANY" in l)
        cells = [c.strip() for c in lines_in.split("|")[2:-1]]
        assert cells == ["5.91e+08", "-", "3.44e+08", "-"]
        volume = next(l for l in lines if "L3 data volume" in l)
        cells = [c.strip() for c in volume.split("|")[2:-1]]
        assert cells == ["75.392", "-", "43.968", "-"]


class TestPerfctrMarker:
    def test_region_report_matches_reference(self):
        target = os.path.join(HELPERS, "marker_target.py")
        rc, out, err = run_main(
            ["perfctr", "-c", "0-3", "-g", "FLOPS_DP", "-m"]
            + fixture_args("core2_quad.dump", "core2_marker.msr")
            + ["--", sys.executable, target]
        )
        assert rc == 0 and err == ""
        assert out == golden_text("perfctr_marker_core2.txt")

    def test_uninstrumented_target_is_an_error(self):
        rc, out, err = run_main(
            ["perfctr", "-c", "0", "-g", "FLOPS_DP", "-m"]
            + fixture_args("core2_quad.dump", "core2_marker.msr")
            + ["--", "sh", "-c", "exit 0"]
        )
        assert rc == 1
        assert "corekit:" in err and "instrumented" in err


class TestPerfctrMultiplexed:
    def test_two_groups_share_the_run(self):
        rc, out, _ = run_main(
            ["perfctr", "-c", "0", "-g", "FLOPS_DP", "-g", "L2", "-x", "50"]
            + fixture_args("core2_quad.dump", "core2_rates.msr")
            + ["--", "sh", "-c", "sleep 0.12"]
        )
        assert rc == 0
        assert "Measuring group FLOPS_DP" in out
        assert "Measuring group L2" in out
        assert "Multiplexed over 2 event sets with 50 ms slices" in out
        for name in (
            "INSTR_RETIRED_ANY",
            "CPU_CLK_UNHALTED_CORE",
            "SIMD_COMP_INST_RETIRED_PACKED_DOUBLE",
            "L2_LINES_IN_ANY",
            "L2_LINES_OUT_ANY",
        ):
            assert name in out
        # steady fixture rates: extrapolation scale cancels in the
        # per-second metrics, so these digits are deterministic
        mflops = next(l for l in out.splitlines() if "DP MFlops/s" in l)
        assert "2500" in mflops
        bandwidth = next(l for l in out.splitlines() if "L2 bandwidth" in l)
        assert "96000" in bandwidth
        cpi = next(l for l in out.splitlines() if " CPI " in l)
        assert "1.4167" in cpi


class TestPin:
    def test_exit_status_propagates(self):
        rc, _, _ = run_main(["pin", "-c", "0", "--", "sh", "-c", "exit 5"])
        assert rc == 5

    def test_duplicate_core_warning(self):
        rc, _, err = run_main(
            ["pin", "-c", "0,0", "--", "sh", "-c", "exit 0"]
        )
        assert rc == 0
        assert "repeats cores" in err

    def test_malformed_core_list(self):
        rc, _, err = run_main(["pin", "-c", "5-3", "--", "true"])
        assert rc == 1
        assert "corekit:" in err and "descending" in err


class TestFeatures:
    def test_report_matches_reference(self):
        rc, out, err = run_main(
            ["features"] + fixture_args("core2_duo.dump", "core2_features.msr")
        )
        assert rc == 0 and err == ""
        assert out == golden_text("features_core2.txt")

    def test_toggle_prints_confirmed_state(self):
        rc, out, _ = run_main(
            ["features", "--disable", "CL_PREFETCHER"]
            + fixture_args("core2_duo.dump", "core2_features.msr")
        )
        assert rc == 0
        assert out == "CL_PREFETCHER:  disabled\n"

    def test_unknown_core_is_rejected_before_writing(self):
        rc, _, err = run_main(
            ["features", "-c", "9", "--disable", "CL_PREFETCHER"]
            + fixture_args("core2_duo.dump", "core2_features.msr")
        )
        assert rc == 1
        assert "corekit:" in err


class TestErrorPaths:
    CORE2 = ("core2_quad.dump", "core2_wrapper.msr")

    @pytest.mark.parametrize(
        "argv, fragment",
        [
            (["perfctr", "-c", "0"], "no event group"),
            (
                ["perfctr", "-c", "0", "-g", "FLOPS_DP", "-g", "L2", "-m"],
                "exactly one event set",
            ),
            (
                ["perfctr", "-c", "0", "-g", "FLOPS_DP", "-m", "-x", "50"],
                "cannot be multiplexed",
            ),
            (
                ["perfctr", "-c", "0", "-g", "FLOPS_DP", "-g", "L2"],
                "need a multiplexing slice",
            ),
            (
                ["perfctr", "-c", "0", "-g", "FLOPS_DP", "-x", "0"],
                "must be positive",
            ),
            (["perfctr", "-c", "0", "-g", "NOGROUP"], "neither a group"),
            (["perfctr", "-c", "9", "-g", "FLOPS_DP"], "unknown hardware thread"),
        ],
    )
    def test_perfctr_rejections(self, argv, fragment):
        rc, _, err = run_main(
            argv + fixture_args(*self.CORE2) + ["--", "sh", "-c", "exit 0"]
        )
        assert rc == 1
        assert "corekit:" in err and fragment in err

    def test_no_target_command(self):
        rc, _, err = run_main(
            ["perfctr", "-c", "0", "-g", "FLOPS_DP"]
            + fixture_args(*self.CORE2)
        )
        assert rc == 1
        assert "no target command" in err

    def test_fixture_backend_needs_a_dump(self):
        rc, _, err = run_main(["topology", "--backend", "fixture"])
        assert rc == 1
        assert "needs --cpuid-dump" in err

    def test_fixture_backend_needs_an_msr_file(self):
        rc, _, err = run_main(
            ["perfctr", "-c", "0", "-g", "FLOPS_DP", "--backend", "fixture",
             "--cpuid-dump", fixture_path("core2_quad.dump"),
             "--", "sh", "-c", "exit 0"]
        )
        assert rc == 1
        assert "needs --msr-fixture" in err

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            run_main([])
        assert exc.value.code == 2


class TestConsoleScript:
    def test_installed_entry_point(self):
        exe = shutil.which("corekit")
        assert exe, "console script not installed"
        proc = subprocess.run(
            [exe, "topology", "-c", "--backend", "fixture",
             "--cpuid-dump", fixture_path("westmere.dump")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout == golden_text("topology_westmere_extended.txt")
