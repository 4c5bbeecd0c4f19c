"""Placement decisions, core list parsing, and the preload launcher."""

import os
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corekit.errors import PinError
from corekit.pinning import (
    ENV_PIN_LIST,
    ENV_PIN_MODEL,
    ENV_PIN_SKIP,
    MODEL_MASKS,
    PinConfig,
    PinState,
    decide,
    ensure_shim,
    is_static_elf,
    launch,
    parse_core_list,
    pin_initial,
)


@pytest.fixture(scope="module")
def shim_cache(tmp_path_factory):
    return str(tmp_path_factory.mktemp("shimcache"))


class TestParseCoreList:
    def test_mixed_singles_and_ranges_keep_order(self):
        assert parse_core_list("0,3-5,2") == [0, 3, 4, 5, 2]

    def test_single_core(self):
        assert parse_core_list("4") == [4]

    def test_plain_range(self):
        assert parse_core_list("0-3") == [0, 1, 2, 3]

    def test_duplicates_warn_but_parse(self):
        warnings = []
        cores = parse_core_list("0,2-4,0", warn=warnings.append)
        assert cores == [0, 2, 3, 4, 0]
        assert len(warnings) == 1
        assert "repeats cores" in warnings[0]

    def test_duplicates_silent_without_warn(self):
        assert parse_core_list("1,1") == [1, 1]

    def test_descending_range(self):
        with pytest.raises(PinError, match="descending"):
            parse_core_list("5-3")

    @pytest.mark.parametrize("text", ["a", "1-b", "0,,1", ""])
    def test_malformed_items(self, text):
        with pytest.raises(PinError):
            parse_core_list(text)


class TestPinConfig:
    def test_empty_core_list(self):
        with pytest.raises(PinError, match="empty"):
            PinConfig(())

    def test_unknown_model(self):
        with pytest.raises(PinError, match="unknown threading model"):
            PinConfig((0,), model="tbb")

    def test_negative_mask(self):
        with pytest.raises(PinError, match="non-negative"):
            PinConfig((0,), skip_mask=-1)

    def test_model_presets(self):
        assert MODEL_MASKS == {
            "none": 0x0, "posix": 0x0, "gnu": 0x0, "intel": 0x1
        }
        assert PinConfig((0,), model="intel").effective_mask() == 0x1
        assert PinConfig((0,), model="gnu").effective_mask() == 0x0

    def test_explicit_mask_beats_model(self):
        cfg = PinConfig((0,), skip_mask=0x6, model="intel")
        assert cfg.effective_mask() == 0x6


class TestDecide:
    def test_round_robin_with_wrap(self):
        cfg = PinConfig((2, 4, 6))
        state = PinState()
        placed = []
        for i in range(4):
            d = decide(i, cfg, state)
            placed.append((d.os_id, d.wrapped))
            state = d.state
        assert placed == [(2, False), (4, False), (6, False), (2, True)]

    def test_intel_preset_skips_first_creation(self):
        cfg = PinConfig((3, 5), model="intel")
        d0 = decide(0, cfg, PinState())
        assert d0.os_id is None
        d1 = decide(1, cfg, d0.state)
        assert d1.os_id == 3

    def test_out_of_order_events(self):
        cfg = PinConfig((0,))
        with pytest.raises(PinError, match="out of order"):
            decide(3, cfg, PinState())

    def test_mask_0x3_skips_two(self):
        cfg = PinConfig((7, 8), skip_mask=0x3)
        state = PinState()
        got = []
        for i in range(4):
            d = decide(i, cfg, state)
            got.append(d.os_id)
            state = d.state
        assert got == [None, None, 7, 8]

    @settings(max_examples=200)
    @given(
        mask=st.integers(min_value=0, max_value=0xFFF),
        cores=st.lists(
            st.integers(min_value=0, max_value=63), min_size=1, max_size=8
        ),
        events=st.integers(min_value=1, max_value=24),
    )
    def test_matches_closed_form(self, mask, cores, events):
        # the k-th unskipped event lands on cores[k % len(cores)]
        cfg = PinConfig(tuple(cores), skip_mask=mask)
        state = PinState()
        pinned = 0
        for i in range(events):
            d = decide(i, cfg, state)
            if (mask >> i) & 1:
                assert d.os_id is None
                assert d.wrapped is False
            else:
                assert d.os_id == cores[pinned % len(cores)]
                assert d.wrapped == (pinned >= len(cores))
                pinned += 1
            state = d.state
        assert state == PinState(events, pinned)


class TestPinInitial:
    def test_binds_and_reserves_slot_zero(self):
        before = os.sched_getaffinity(0)
        try:
            warnings = []
            state = pin_initial(PinConfig((0,)), warn=warnings.append)
            assert state == PinState(creation_counter=0, assignment_cursor=1)
            assert warnings == []
            assert os.sched_getaffinity(0) == {0}
        finally:
            os.sched_setaffinity(0, before)

    def test_unbindable_core_warns(self):
        warnings = []
        state = pin_initial(PinConfig((4096,)), warn=warnings.append)
        assert state == PinState(0, 1)
        assert len(warnings) == 1
        assert "cannot bind main thread" in warnings[0]


class TestShim:
    def test_compiles_once_and_caches(self, shim_cache):
        shim = ensure_shim(shim_cache)
        assert shim.endswith(".so") and os.path.exists(shim)
        stamp = os.stat(shim).st_mtime_ns
        again = ensure_shim(shim_cache)
        assert again == shim
        assert os.stat(shim).st_mtime_ns == stamp

    def test_compiler_failure_is_reported(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CC", "false")
        with pytest.raises(PinError, match="cannot build pin shim"):
            ensure_shim(str(tmp_path))

    def test_static_elf_detection(self, tmp_path):
        assert is_static_elf(sys.executable) is False
        plain = tmp_path / "script.sh"
        plain.write_text("#!/bin/sh\n")
        assert is_static_elf(str(plain)) is False
        assert is_static_elf(str(tmp_path / "missing")) is False


class TestLaunch:
    def test_exit_status_propagates(self, shim_cache):
        cfg = PinConfig((0,))
        assert launch(cfg, ["sh", "-c", "exit 7"], cache_dir=shim_cache) == 7

    def test_signal_death_maps_to_128_plus_signum(self, shim_cache):
        cfg = PinConfig((0,))
        rc = launch(cfg, ["sh", "-c", "kill -TERM $$"], cache_dir=shim_cache)
        assert rc == 143

    def test_child_environment(self, shim_cache, tmp_path):
        out = tmp_path / "env.txt"
        cfg = PinConfig((0,), model="intel")
        rc = launch(cfg, ["sh", "-c", "env > %s" % out], cache_dir=shim_cache)
        assert rc == 0
        env = dict(
            line.split("=", 1)
            for line in out.read_text().splitlines()
            if "=" in line
        )
        assert env[ENV_PIN_LIST] == "0"
        assert env[ENV_PIN_SKIP] == "0x1"
        assert env[ENV_PIN_MODEL] == "intel"
        assert env["KMP_AFFINITY"] == "disabled"
        assert env["LD_PRELOAD"].split(":")[0].endswith(".so")

    def test_child_runs_inside_the_affinity_set(self, shim_cache, tmp_path):
        out = tmp_path / "affinity.txt"
        cfg = PinConfig((0,))
        code = "import os; print(sorted(os.sched_getaffinity(0)))"
        rc = launch(
            cfg,
            ["sh", "-c", "%s -c '%s' > %s" % (sys.executable, code, out)],
            cache_dir=shim_cache,
        )
        assert rc == 0
        assert out.read_text().strip() == "[0]"

    def test_missing_executable(self, shim_cache):
        with pytest.raises(PinError, match="not found"):
            launch(
                PinConfig((0,)), ["no-such-binary-zzz"], cache_dir=shim_cache
            )

    def test_empty_command(self, shim_cache):
        with pytest.raises(PinError, match="no command"):
            launch(PinConfig((0,)), [], cache_dir=shim_cache)
