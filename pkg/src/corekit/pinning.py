"""Thread placement: core lists, skip masks, and the preload shim.

The decision logic (which creation event lands on which core) is a
pure function so it can be tested exhaustively; the C shim compiled
from data/pin_shim.c applies the same rules inside target processes.
"""

from __future__ import annotations

import hashlib
import os
import struct
import subprocess
import sys
from dataclasses import dataclass
from importlib import resources

from .errors import PinError

ENV_PIN_LIST = "COREKIT_PIN_LIST"
ENV_PIN_SKIP = "COREKIT_PIN_SKIP"
ENV_PIN_MODEL = "COREKIT_PIN_MODEL"

# Threading-model presets.  The Intel OpenMP runtime creates one extra
# management thread first, so its first creation event is skipped.
MODEL_MASKS = {"none": 0x0, "posix": 0x0, "gnu": 0x0, "intel": 0x1}


@dataclass(frozen=True)
class PinConfig:
    """Placement policy: ordered cores, skip mask, threading model."""

    core_list: tuple[int, ...]
    skip_mask: int | None = None  # None: use the model's preset
    model: str = "none"

    def __post_init__(self):
        if not self.core_list:
            raise PinError("core list is empty")
        if self.model not in MODEL_MASKS:
            raise PinError(
                "unknown threading model %r (choose from %s)"
                % (self.model, ", ".join(sorted(MODEL_MASKS)))
            )
        if self.skip_mask is not None and self.skip_mask < 0:
            raise PinError("skip mask must be non-negative")

    def effective_mask(self) -> int:
        if self.skip_mask is not None:
            return self.skip_mask
        return MODEL_MASKS[self.model]


@dataclass(frozen=True)
class PinState:
    """Progress through the core list as creation events arrive."""

    creation_counter: int = 0
    assignment_cursor: int = 0


@dataclass(frozen=True)
class PinDecision:
    os_id: int | None  # None: creation event skipped
    state: PinState
    wrapped: bool = False


def parse_core_list(text: str, warn=None) -> list[int]:
    """Expand "0,3-5,2" into [0, 3, 4, 5, 2], order preserved.

    Duplicates are allowed (deliberate oversubscription) but reported
    through `warn` when given.
    """
    cores: list[int] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            raise PinError("empty item in core list %r" % text)
        lo, sep, hi = token.partition("-")
        try:
            if sep:
                start, end = int(lo), int(hi)
                if end < start:
                    raise PinError(
                        "descending range %r in core list" % token
                    )
                cores.extend(range(start, end + 1))
            else:
                cores.append(int(token))
        except ValueError:
            raise PinError("malformed core list item %r" % token) from None
    if warn is not None and len(set(cores)) != len(cores):
        warn("core list %r repeats cores; threads will share them" % text)
    return cores


def decide(event_index: int, cfg: PinConfig, st: PinState) -> PinDecision:
    """Pure placement decision for one thread-creation event.

    Skipped events advance only the creation counter; pinned events
    consume the next core list entry, wrapping (with a flag) when the
    list is exhausted.  Mask bits beyond the event index are simply
    absent: high creation events are always pinned.
    """
    if event_index != st.creation_counter:
        raise PinError(
            "creation events out of order: got %d, expected %d"
            % (event_index, st.creation_counter)
        )
    if (cfg.effective_mask() >> event_index) & 1:
        return PinDecision(None, PinState(event_index + 1, st.assignment_cursor))
    cursor = st.assignment_cursor
    wrapped = cursor >= len(cfg.core_list)
    os_id = cfg.core_list[cursor % len(cfg.core_list)]
    return PinDecision(os_id, PinState(event_index + 1, cursor + 1), wrapped)


def pin_initial(cfg: PinConfig, warn=None) -> PinState:
    """Bind the calling thread to the first core of the list.

    Failure is a warning, not an error: measurement without pinning is
    degraded, not useless.  The returned state starts the assignment
    cursor at 1 because the main thread consumed slot 0.
    """
    try:
        os.sched_setaffinity(0, {cfg.core_list[0]})
    except OSError as exc:
        message = "cannot bind main thread to core %d: %s" % (cfg.core_list[0], exc)
        if warn is not None:
            warn(message)
        else:
            print("corekit-pin: %s" % message, file=sys.stderr)
    return PinState(creation_counter=0, assignment_cursor=1)


def _cache_dir() -> str:
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(
        os.path.expanduser("~"), ".cache"
    )
    path = os.path.join(base, "corekit")
    os.makedirs(path, exist_ok=True)
    return path


def ensure_shim(cache_dir: str | None = None) -> str:
    """Compile the preload shim if this source version isn't cached."""
    source = (
        resources.files("corekit").joinpath("data/pin_shim.c").read_text("utf-8")
    )
    digest = hashlib.sha256(source.encode()).hexdigest()[:16]
    directory = cache_dir or _cache_dir()
    shim = os.path.join(directory, "pin_shim_%s.so" % digest)
    if os.path.exists(shim):
        return shim
    src_path = os.path.join(directory, "pin_shim_%s.c" % digest)
    with open(src_path, "w", encoding="utf-8") as fh:
        fh.write(source)
    cc = os.environ.get("CC", "cc")
    cmd = [cc, "-O2", "-fPIC", "-shared", "-pthread",
           "-o", shim, src_path, "-ldl"]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise PinError(
            "cannot build pin shim with %r:\n%s" % (cc, proc.stderr.strip())
        )
    return shim


def is_static_elf(path: str) -> bool:
    """Best effort: an ELF executable without a PT_INTERP segment.

    Static targets ignore the dynamic loader, so the shim cannot reach
    them; callers warn and continue.
    """
    try:
        with open(path, "rb") as fh:
            ident = fh.read(16)
            if len(ident) < 16 or ident[:4] != b"\x7fELF":
                return False
            is64 = ident[4] == 2
            little = ident[5] == 1
            end = "<" if little else ">"
            if is64:
                fh.seek(32)
                (phoff,) = struct.unpack(end + "Q", fh.read(8))
                fh.seek(54)
                phentsize, phnum = struct.unpack(end + "HH", fh.read(4))
            else:
                fh.seek(28)
                (phoff,) = struct.unpack(end + "I", fh.read(4))
                fh.seek(42)
                phentsize, phnum = struct.unpack(end + "HH", fh.read(4))
            for i in range(phnum):
                fh.seek(phoff + i * phentsize)
                (p_type,) = struct.unpack(end + "I", fh.read(4))
                if p_type == 3:  # PT_INTERP
                    return False
        return True
    except OSError:
        return False


def launch(cfg: PinConfig, argv: list[str], env: dict[str, str] | None = None,
           warn=None, cache_dir: str | None = None) -> int:
    """Run argv with the shim preloaded and placement env populated.

    Returns the target's exit status (128+signal when killed).  The
    compiler-native pinning of Intel OpenMP is disabled so the shim is
    the only authority.
    """
    if not argv:
        raise PinError("no command given")
    shim = ensure_shim(cache_dir)
    child_env = dict(os.environ if env is None else env)
    child_env[ENV_PIN_LIST] = ",".join(str(c) for c in cfg.core_list)
    child_env[ENV_PIN_SKIP] = "%#x" % cfg.effective_mask()
    child_env[ENV_PIN_MODEL] = cfg.model
    child_env["KMP_AFFINITY"] = "disabled"
    preload = child_env.get("LD_PRELOAD", "")
    child_env["LD_PRELOAD"] = shim + (":" + preload if preload else "")

    target = argv[0]
    resolved = target if os.path.sep in target else _which(target, child_env)
    if resolved is None or not os.path.exists(resolved):
        raise PinError("executable %r not found" % target)
    if is_static_elf(resolved):
        message = "%r looks statically linked; only the initial pin applies" % target
        if warn is not None:
            warn(message)
        else:
            print("corekit-pin: %s" % message, file=sys.stderr)

    first_core = cfg.core_list[0]

    def bind_first():
        try:
            os.sched_setaffinity(0, {first_core})
        except OSError:
            pass

    try:
        proc = subprocess.run(argv, env=child_env, preexec_fn=bind_first)
    except FileNotFoundError:
        raise PinError("executable %r not found" % target) from None
    rc = proc.returncode
    return 128 - rc if rc < 0 else rc


def _which(name: str, env: dict[str, str]) -> str | None:
    for directory in env.get("PATH", "").split(os.pathsep):
        candidate = os.path.join(directory, name)
        if os.path.isfile(candidate) and os.access(candidate, os.X_OK):
            return candidate
    return None
