import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tdprobe.trace import DashParams, synth_dash_trace  # noqa: E402

_criteria: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = next((m for m in report.keywords if m.startswith("criterion_")), None)
    if marker is None:
        return
    _criteria.setdefault(marker[len("criterion_"):], []).append(report.outcome)


def pytest_collection_modifyitems(items):
    # expose criterion ids as keywords so logreport can see them
    for item in items:
        for m in item.iter_markers("criterion"):
            item.keywords[f"criterion_{m.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_criteria, key=lambda c: int(c.lstrip("A"))):
        outcomes = _criteria[cid]
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{cid}: {status} ({len(outcomes)} check(s))")


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def small_trace():
    return synth_dash_trace(DashParams(12_500, 100, 20, request_bytes=100, seed=7),
                            "youtube", "r3---sn-x.googlevideo.com", 443)
