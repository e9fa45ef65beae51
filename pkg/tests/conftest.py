import json
import os

import numpy as np
import pytest

from lcmlora import kernels
from lcmlora.cli import run_command

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    """Run the test once per available kernel backend."""
    prev = kernels.BACKEND
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_CONFIG = {
    "data": {"n_samples": 512},
    "teacher_train": {"steps": 40, "batch": 64},
    "distill": {"steps": 30, "batch": 64},
    "style": {"steps": 30, "batch": 64},
    "bench": {"n_samples": 256},
    "seed": 3,
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


@pytest.fixture(scope="session")
def default_pipeline(tmp_path_factory):
    """Full pipeline on the default configuration, run once per session."""
    out = str(tmp_path_factory.mktemp("default_pipeline"))
    code = run_command(["pipeline", "--out", out])
    assert code == 0, "default pipeline failed"
    return out


def read_json(*parts):
    with open(os.path.join(*parts)) as fh:
        return json.load(fh)


def _strip_times(obj):
    if isinstance(obj, dict):
        return {k: _strip_times(v) for k, v in obj.items() if k not in ("wall_time", "time_s")}
    if isinstance(obj, list):
        return [_strip_times(v) for v in obj]
    return obj


def comparable_outputs(root):
    """Relative path -> content for every output file, with wall-time fields removed."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root)
            if name.endswith(".json"):
                out[rel] = _strip_times(read_json(path))
            elif rel.startswith("bench") and name.endswith(".csv"):
                with open(path) as fh:
                    out[rel] = [line.split(",")[:2] + line.split(",")[3:] for line in fh.read().splitlines()]
            elif name == "summary.md":
                with open(path) as fh:
                    out[rel] = [[c for i, c in enumerate(line.split("|")) if i != 4] for line in fh]
            else:
                with open(path, "rb") as fh:
                    out[rel] = fh.read()
    return out


ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record and print a PASS/FAIL line for an acceptance criterion, then assert it."""
    def check(number, title, ok, detail):
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
