import pytest

from corekit import CpuidDump, CpuidRecord, load_dump, parse_dump
from corekit.errors import DumpFormatError

from conftest import fixture_path

MINIMAL = """\
# comment line
hw_threads: 1
clock_hz: 1000000000
vendor: GenuineIntel
cpu_name: Test Processor
thread 0 leaf 0x0 subleaf 0x0 a 0x2 b 0x756e6547 c 0x6c65746e d 0x49656e69
thread 0 leaf 0x1 subleaf 0x0 a 0x6d8 b 0x800 c 0x0 d 0x0  # trailing comment
"""


def test_parse_minimal_dump():
    dump = parse_dump(MINIMAL)
    assert dump.hw_threads == 1
    assert dump.clock_hz == 1e9
    assert dump.vendor == "GenuineIntel"
    assert dump.cpu_name == "Test Processor"
    assert dump.os_ids() == [0]
    rec = dump.get(0, 1)
    assert rec.eax == 0x6D8 and rec.ebx == 0x800


def test_get_and_require():
    dump = parse_dump(MINIMAL)
    assert dump.get(0, 0xB) is None
    with pytest.raises(DumpFormatError, match="missing cpuid record"):
        dump.require(0, 0xB)
    assert dump.require(0, 0).eax == 0x2


def test_duplicate_record_rejected():
    text = MINIMAL + "thread 0 leaf 0x1 subleaf 0x0 a 0x1 b 0x2 c 0x3 d 0x4\n"
    with pytest.raises(DumpFormatError):
        parse_dump(text)


def test_missing_hw_threads_header():
    with pytest.raises(DumpFormatError, match="hw_threads"):
        parse_dump("clock_hz: 5\n")


@pytest.mark.parametrize("line", [
    "thread 0 leaf 0x0 a 0x0 b 0x0 c 0x0 d 0x0",       # no subleaf
    "thread x leaf 0x0 subleaf 0x0 a 0 b 0 c 0 d 0",   # bad thread id
    "thread 0 leaf 0xZZ subleaf 0x0 a 0 b 0 c 0 d 0",  # bad integer
    "unknown: header",
    "stray words",
])
def test_malformed_lines_rejected(line):
    with pytest.raises(DumpFormatError):
        parse_dump("hw_threads: 1\n%s\n" % line)


def test_thread_count_must_match_records():
    text = MINIMAL.replace("hw_threads: 1", "hw_threads: 2")
    with pytest.raises(DumpFormatError, match="records cover"):
        parse_dump(text)


def test_dump_add_overwrites_by_key():
    dump = CpuidDump(hw_threads=1)
    dump.add(CpuidRecord(0, 1, 0, 1, 2, 3, 4))
    dump.add(CpuidRecord(0, 1, 0, 9, 9, 9, 9))
    assert dump.get(0, 1).eax == 9
    assert len(dump.records) == 1


@pytest.mark.parametrize("name,threads,vendor", [
    ("westmere.dump", 24, "GenuineIntel"),
    ("core2_quad.dump", 4, "GenuineIntel"),
    ("nehalem_ep.dump", 8, "GenuineIntel"),
    ("pentium_m.dump", 1, "GenuineIntel"),
    ("amd_istanbul.dump", 12, "AuthenticAMD"),
])
def test_recorded_dumps_load(name, threads, vendor):
    dump = load_dump(fixture_path(name))
    assert dump.hw_threads == threads
    assert dump.vendor == vendor
    assert dump.os_ids() == list(range(threads))
