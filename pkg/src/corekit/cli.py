"""Command line frontends: topology, perfctr, pin, features.

All four share one backend seam: `--backend live` talks to the cpuid
and msr device files, `--backend fixture` replays a recorded cpuid
dump and MSR fixture file, which makes every report reproducible.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass

from . import marker, pinning
from .cpuid import LiveCpuidSource, load_dump
from .errors import CorekitError
from .events.engine import (
    derive_metrics,
    parse_event_string,
    program,
    with_implicit_fixed,
)
from .events.tables import arch_for
from .features import find_flag, flag_table, render_report, report, toggle
from .msr import DevMsrBackend, FixtureMsrBackend, SimClock, load_fixture
from .tablefmt import format_value, render_table  # noqa: F401  (render_table is API)
from .topology import TopologyMap, build_topology
from .toporender import format_clock, render_ascii_art, render_text

_NS = 10**9


@dataclass(frozen=True)
class InvocationConfig:
    """One parsed perfctr invocation; validation is separate from argparse
    so the mode rules are testable without a terminal."""

    cores: tuple[int, ...] = ()
    event_sets: tuple[str, ...] = ()
    marker_mode: bool = False
    slice_ms: float | None = None
    backend: str = "live"
    cpuid_dump: str | None = None
    msr_fixture: str | None = None

    def validate(self) -> None:
        if not self.cores:
            raise CorekitError("no cores selected (use -c)")
        if not self.event_sets:
            raise CorekitError("no event group or event string given (use -g)")
        if self.marker_mode and len(self.event_sets) > 1:
            raise CorekitError("marker mode takes exactly one event set")
        if self.marker_mode and self.slice_ms is not None:
            raise CorekitError("marker mode cannot be multiplexed")
        if len(self.event_sets) > 1 and self.slice_ms is None:
            raise CorekitError(
                "multiple event sets need a multiplexing slice (-x <ms>)"
            )
        if self.slice_ms is not None and self.slice_ms <= 0:
            raise CorekitError("slice duration must be positive")


def _warn(message: str) -> None:
    print("corekit: warning: %s" % message, file=sys.stderr)


def _strip_separator(command: list[str]) -> list[str]:
    if command and command[0] == "--":
        return command[1:]
    return command


def _topology_from(args) -> TopologyMap:
    if args.backend == "fixture":
        if not args.cpuid_dump:
            raise CorekitError("fixture backend needs --cpuid-dump")
        return build_topology(load_dump(args.cpuid_dump))
    source = LiveCpuidSource()
    if not source.available():
        raise CorekitError(
            "cpuid device files not accessible; load the cpuid driver or "
            "use --backend fixture"
        )
    return build_topology(source.collect())


def _msr_backend(args, topo: TopologyMap):
    if args.backend == "fixture":
        if not args.msr_fixture:
            raise CorekitError("fixture backend needs --msr-fixture")
        return FixtureMsrBackend(
            load_fixture(args.msr_fixture),
            socket_of={t.os_id: t.socket_id for t in topo.threads},
        )
    backend = DevMsrBackend()
    if not backend.available():
        raise CorekitError(
            "msr device files not accessible; load the msr driver or "
            "use --backend fixture"
        )
    return backend


def _run_command(argv: list[str], env: dict[str, str] | None = None) -> int:
    try:
        proc = subprocess.run(argv, env=env)
    except FileNotFoundError:
        raise CorekitError("command not found: %s" % argv[0]) from None
    rc = proc.returncode
    return 128 - rc if rc < 0 else rc


def _header(topo: TopologyMap, set_lines: list[str]) -> str:
    sep = "-" * 61
    lines = [
        sep,
        "%-16s%s" % ("CPU type:", topo.cpu_name),
        "%-16s%s" % ("CPU clock:", format_clock(topo.clock_hz)),
        sep,
    ]
    lines.extend(set_lines)
    lines.append(sep)
    return "\n".join(lines) + "\n"


def _set_line(text: str, arch) -> str:
    if text in arch.groups:
        return "Measuring group %s" % text
    return "Measuring events %s" % text


def _event_table(names: list[str], cores: list[int],
                 counts: dict[int, dict[str, float]]) -> str:
    header = ["Event"] + ["core %d" % c for c in cores]
    rows = [
        [name] + [format_value(counts.get(c, {}).get(name)) for c in cores]
        for name in names
    ]
    return render_table(header, rows)


def _metric_table(group, cores: list[int], counts, runtime_s,
                  clock_hz: float) -> str:
    values = derive_metrics(group, counts, runtime_s, clock_hz)
    header = ["Metric"] + ["core %d" % c for c in cores]
    rows = [
        [metric.name]
        + [format_value(values.get(c, {}).get(metric.name)) for c in cores]
        for metric in group.metrics
    ]
    return render_table(header, rows)


def _display_order(specs) -> list[str]:
    names: list[str] = []
    for spec in specs:
        for name in spec.event_names():
            if name not in names:
                names.append(name)
    return names


def _run_wrapper(cfg: InvocationConfig, argv: list[str], topo, backend,
                 arch, cores: list[int]) -> int:
    spec = parse_event_string(cfg.event_sets[0], arch)
    handle = program(spec, cores, backend, topo)
    handle.start()
    t0 = time.monotonic_ns()
    status = _run_command(argv)
    wall_ns = time.monotonic_ns() - t0
    if isinstance(backend.clock, SimClock):
        backend.clock.sleep(wall_ns / _NS)
    result = handle.stop()

    sys.stdout.write(_header(topo, [_set_line(cfg.event_sets[0], arch)]))
    sys.stdout.write(_event_table(handle.spec.event_names(), cores, result.counts))
    if handle.spec.group is not None:
        sys.stdout.write(
            _metric_table(handle.spec.group, cores, result.counts,
                          result.runtime_s, result.clock_hz)
        )
    return status


def _run_multiplexed(cfg: InvocationConfig, argv: list[str], topo, backend,
                     arch, cores: list[int]) -> int:
    specs = [
        with_implicit_fixed(parse_event_string(text, arch), arch)
        for text in cfg.event_sets
    ]
    slice_s = cfg.slice_ms / 1000.0
    slice_ns = int(round(slice_s * _NS))
    simulated = isinstance(backend.clock, SimClock)

    try:
        proc = subprocess.Popen(argv)
    except FileNotFoundError:
        raise CorekitError("command not found: %s" % argv[0]) from None
    acc: list[dict[int, dict[str, float]]] = [
        {core: {} for core in cores} for _ in specs
    ]
    active_ns = [0] * len(specs)
    turn = 0
    t0 = time.monotonic_ns()
    while True:
        index = turn % len(specs)
        handle = program(specs[index], cores, backend, topo)
        handle.start()
        time.sleep(slice_s)
        if simulated:
            backend.clock.sleep(slice_s)
        result = handle.stop()
        for core in cores:
            bucket = acc[index][core]
            for name, value in result.counts[core].items():
                bucket[name] = bucket.get(name, 0.0) + value
        active_ns[index] += slice_ns
        turn += 1
        # every set gets at least one slice, even for a target that
        # exits immediately
        if proc.poll() is not None and turn >= len(specs):
            break
    total_ns = time.monotonic_ns() - t0
    rc = proc.returncode
    status = 128 - rc if rc < 0 else rc

    counts: dict[int, dict[str, float]] = {core: {} for core in cores}
    for index in range(len(specs)):
        scale = total_ns / active_ns[index]
        for core in cores:
            for name, value in acc[index][core].items():
                counts[core][name] = value * scale
    runtime_s = {core: total_ns / _NS for core in cores}

    set_lines = [_set_line(text, arch) for text in cfg.event_sets]
    set_lines.append(
        "Multiplexed over %d event sets with %g ms slices"
        % (len(specs), cfg.slice_ms)
    )
    sys.stdout.write(_header(topo, set_lines))
    sys.stdout.write(_event_table(_display_order(specs), cores, counts))
    for spec in specs:
        if spec.group is not None:
            sys.stdout.write(
                _metric_table(spec.group, cores, counts, runtime_s,
                              topo.clock_hz)
            )
    return status


def _run_marker(cfg: InvocationConfig, argv: list[str], topo, backend,
                arch, cores: list[int], core_text: str) -> int:
    spec = parse_event_string(cfg.event_sets[0], arch)
    handle = program(spec, cores, backend, topo)
    handle.start()  # zero and enable; the target reads the deltas itself

    fd, result_path = tempfile.mkstemp(prefix="corekit-marker-", suffix=".txt")
    os.close(fd)
    env = dict(os.environ)
    env[marker.ENV_RESULT] = result_path
    env[marker.ENV_EVENTS] = cfg.event_sets[0]
    env[marker.ENV_CORES] = core_text
    env[marker.ENV_BACKEND] = cfg.backend
    if cfg.backend == "fixture":
        env[marker.ENV_CPUID_DUMP] = cfg.cpuid_dump or ""
        env[marker.ENV_MSR_FIXTURE] = cfg.msr_fixture or ""
    try:
        status = _run_command(argv, env=env)
        if not os.path.getsize(result_path):
            raise CorekitError(
                "target wrote no marker results (is it instrumented?)"
            )
        result = marker.load_result(result_path)
    finally:
        try:
            os.unlink(result_path)
        except OSError:
            pass

    full = with_implicit_fixed(spec, arch)
    names = full.event_names()
    sys.stdout.write(_header(topo, [_set_line(cfg.event_sets[0], arch)]))
    for region in result.regions:
        counts: dict[int, dict[str, float]] = {core: {} for core in cores}
        cycles: dict[int, int] = {core: 0 for core in cores}
        for row in region.rows:
            os_id = row["os_id"]
            if os_id not in counts:
                continue
            per_core = counts[os_id]
            for name, value in row["counts"].items():
                per_core[name] = per_core.get(name, 0.0) + value
            cycles[os_id] += row["cycles"]
        runtime_s = {
            core: cycles[core] / topo.clock_hz if topo.clock_hz else 0.0
            for core in cores
        }
        sys.stdout.write(_event_table(names, cores, counts))
        if full.group is not None:
            sys.stdout.write(
                _metric_table(full.group, cores, counts, runtime_s,
                              topo.clock_hz)
            )
    for warning in result.warnings:
        _warn(warning)
    return status


def run_perfctr(cfg: InvocationConfig, argv: list[str],
                core_text: str) -> int:
    cfg.validate()
    if not argv:
        raise CorekitError("no target command given")
    topo = _topology_from(cfg)
    backend = _msr_backend(cfg, topo)
    arch = arch_for(topo)
    cores = list(cfg.cores)
    if cfg.marker_mode:
        return _run_marker(cfg, argv, topo, backend, arch, cores, core_text)
    if len(cfg.event_sets) > 1:
        return _run_multiplexed(cfg, argv, topo, backend, arch, cores)
    return _run_wrapper(cfg, argv, topo, backend, arch, cores)


def run_topology(args) -> int:
    topo = _topology_from(args)
    sys.stdout.write(render_text(topo, extended=args.caches))
    if args.graphical:
        sys.stdout.write(render_ascii_art(topo))
    return 0


def run_pin(args) -> int:
    core_list = pinning.parse_core_list(args.cores, warn=_warn)
    skip_mask = int(args.skip, 16) if args.skip is not None else None
    model = args.model if args.model is not None else "none"
    cfg = pinning.PinConfig(
        core_list=tuple(core_list), skip_mask=skip_mask, model=model
    )
    argv = _strip_separator(args.command)
    if not argv:
        raise CorekitError("no target command given")
    return pinning.launch(cfg, argv, warn=_warn)


def run_features(args) -> int:
    topo = _topology_from(args)
    backend = _msr_backend(args, topo)
    os_id = args.core
    topo.thread(os_id)  # unknown core ids fail here, not mid-write
    changes = [(name, True) for name in args.enable or []]
    changes += [(name, False) for name in args.disable or []]
    if not changes:
        states = report(os_id, backend, topo)
        sys.stdout.write(render_report(topo, os_id, states))
        return 0
    table = flag_table(topo)
    for name, enable in changes:
        flag = find_flag(table, name)
        state = toggle(os_id, name, enable, backend, topo)
        print("%-16s%s" % (flag.key + ":", state))
    return 0


def _add_backend_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend", choices=("live", "fixture"), default="live",
        help="read hardware (live) or recorded files (fixture)",
    )
    parser.add_argument(
        "--cpuid-dump", metavar="PATH",
        help="cpuid dump file for the fixture backend",
    )
    parser.add_argument(
        "--msr-fixture", metavar="PATH",
        help="MSR fixture file for the fixture backend",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corekit",
        description="Topology, performance counter, pinning and CPU "
        "feature tools.",
    )
    sub = parser.add_subparsers(dest="tool", required=True)

    topo = sub.add_parser("topology", help="report thread and cache topology")
    topo.add_argument("-c", dest="caches", action="store_true",
                      help="include detailed cache parameters")
    topo.add_argument("-g", dest="graphical", action="store_true",
                      help="append an ASCII art overview")
    _add_backend_options(topo)

    perf = sub.add_parser("perfctr", help="measure hardware event counts")
    perf.add_argument("-c", dest="cores", required=True, metavar="LIST",
                      help="cores to measure, e.g. 0-3 or 0,2")
    perf.add_argument("-g", dest="groups", action="append", metavar="SPEC",
                      help="event group name or EVENT:COUNTER list; repeat "
                      "and add -x to multiplex")
    perf.add_argument("-m", dest="marker_mode", action="store_true",
                      help="collect per-region counts from an instrumented "
                      "target")
    perf.add_argument("-x", dest="slice_ms", type=float, metavar="MS",
                      help="multiplexing time slice in milliseconds")
    _add_backend_options(perf)
    perf.add_argument("command", nargs=argparse.REMAINDER,
                      help="target command to run")

    pin = sub.add_parser("pin", help="run a command with threads pinned")
    pin.add_argument("-c", dest="cores", required=True, metavar="LIST",
                     help="ordered core list, e.g. 0-3")
    pin.add_argument("-s", dest="skip", metavar="MASK",
                     help="hex mask of thread creation events to skip")
    pin.add_argument("-t", dest="model", choices=("posix", "intel", "gnu"),
                     help="threading model preset for the skip mask")
    pin.add_argument("command", nargs=argparse.REMAINDER,
                     help="target command to run")

    feat = sub.add_parser("features", help="show or toggle CPU feature bits")
    feat.add_argument("-c", dest="core", type=int, default=0, metavar="CORE",
                      help="core to address (default 0)")
    feat.add_argument("--enable", action="append", metavar="NAME",
                      help="feature to enable; may repeat")
    feat.add_argument("--disable", action="append", metavar="NAME",
                      help="feature to disable; may repeat")
    _add_backend_options(feat)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.tool == "topology":
            return run_topology(args)
        if args.tool == "perfctr":
            cfg = InvocationConfig(
                cores=tuple(pinning.parse_core_list(args.cores, warn=_warn)),
                event_sets=tuple(args.groups or ()),
                marker_mode=args.marker_mode,
                slice_ms=args.slice_ms,
                backend=args.backend,
                cpuid_dump=args.cpuid_dump,
                msr_fixture=args.msr_fixture,
            )
            return run_perfctr(cfg, _strip_separator(args.command), args.cores)
        if args.tool == "pin":
            return run_pin(args)
        return run_features(args)
    except CorekitError as exc:
        print("corekit: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
