"""Shared fixtures and the acceptance-criteria summary hook."""

from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from redec.compilebox import CompilerConfig

REPO_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = Path(__file__).resolve().parent / "data"
CORPUS_DIR = REPO_ROOT / "corpus"

_COMPILER = "g++"


def compiler_available() -> bool:
    return shutil.which(_COMPILER) is not None


requires_compiler = pytest.mark.skipif(
    not compiler_available(), reason=f"{_COMPILER} not on PATH"
)


@pytest.fixture(scope="session")
def compiler_config() -> CompilerConfig:
    if not compiler_available():
        pytest.skip(f"{_COMPILER} not on PATH")
    return CompilerConfig(path=_COMPILER)


@pytest.fixture()
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture()
def corpus_dir() -> Path:
    return CORPUS_DIR


# ---- acceptance criteria reporting ----------------------------------------
#
# tests/test_acceptance.py names its tests test_criterion_NN_*; after the run
# we print one PASS/FAIL line per criterion so the suite's gate is readable at
# a glance.

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "test_criterion" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _acceptance_results[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.skipped:
        _acceptance_results[name] = "SKIP"
    elif report.when == "setup" and report.failed:
        _acceptance_results[name] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_results):
        verdict = _acceptance_results[name]
        pretty = name.replace("test_criterion_", "criterion ").replace("_", " ")
        terminalreporter.write_line(f"{verdict}: {pretty}")
