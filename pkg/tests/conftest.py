import pytest

from smoothlin.config import resolve
from smoothlin.pipeline import Run

ACCEPTANCE = []


def record(number, passed, detail=""):
    """Store one criterion outcome for the terminal summary."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'} {detail}".rstrip()
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


def make_run(name, params=None, **overrides):
    cfg = {"system": {"name": name, "params": params or {}},
           "integrator": {"step": 1e-2}, "mu_grid": {"step": 1e-2}}
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    return Run(resolve(cfg), override_budget=True)


def full_run(run):
    run.spectrum()
    run.conditions()
    run.conjugacy()
    run.verify()
    return run


@pytest.fixture(scope="session")
def quadratic_run():
    return full_run(make_run("scalar_quadratic", window=[0, 120], seed=3))


@pytest.fixture(scope="session")
def nonuniform_run():
    return full_run(make_run("scalar_nonuniform", window=[0, 120], seed=7))


@pytest.fixture(scope="session")
def linear_saddle_run():
    return full_run(make_run("autonomous_saddle", seed=1))
