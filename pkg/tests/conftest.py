import contextlib
import io
import os

import pytest

from corekit import build_topology, load_dump

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
GOLDEN = os.path.join(os.path.dirname(__file__), "golden")
HELPERS = os.path.join(os.path.dirname(__file__), "helpers")


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def golden_text(name: str) -> str:
    with open(os.path.join(GOLDEN, name), "r", encoding="utf-8") as fh:
        return fh.read()


@pytest.fixture(scope="session")
def westmere_topo():
    return build_topology(load_dump(fixture_path("westmere.dump")))


@pytest.fixture(scope="session")
def core2_topo():
    return build_topology(load_dump(fixture_path("core2_quad.dump")))


@pytest.fixture(scope="session")
def core2_duo_topo():
    return build_topology(load_dump(fixture_path("core2_duo.dump")))


@pytest.fixture(scope="session")
def nehalem_topo():
    return build_topology(load_dump(fixture_path("nehalem_ep.dump")))


@pytest.fixture(scope="session")
def amd_topo():
    return build_topology(load_dump(fixture_path("amd_istanbul.dump")))


def run_main(argv):
    """Invoke the CLI in-process; returns (exit code, stdout, stderr)."""
    from corekit import cli

    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        rc = cli.main(argv)
    return rc, out.getvalue(), err.getvalue()
