import json
import os
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def surrogate_run(tmp_path_factory):
    """One full surrogate step at n=64 through the command line, shared by all tests that need it."""
    from click.testing import CliRunner

    from wildflow.cli import main

    out = tmp_path_factory.mktemp("surrogate")
    t0 = time.perf_counter()
    res = CliRunner().invoke(main, ["surrogate", "--grid", "64", "--seed", "0", "--out", str(out)])
    seconds = time.perf_counter() - t0
    summary = {}
    if (out / "summary.jsonl").is_file():
        summary = json.loads((out / "summary.jsonl").read_text().splitlines()[0])
    return {"dir": Path(out), "exit_code": res.exit_code, "output": res.output, "seconds": seconds, "summary": summary}
