import functools

import numpy as np
import pytest

from tetherquad.scenarios import load_scenario, run

_CRITERIA = {}


def record_criterion(number, title, passed, detail):
    _CRITERIA[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[k]
        tr.write_line(f"criterion {k} {'PASS' if ok else 'FAIL'}: {title}; {detail}")


@functools.lru_cache(maxsize=None)
def scenario_run(name, model=None, eps=None, audit=False):
    """Run a preset once per session; optional model and eps overrides."""
    cfg = load_scenario(name)
    if model is not None:
        cfg = cfg.with_model(model)
    if eps is not None:
        from dataclasses import replace
        cfg = replace(cfg, gains=replace(cfg.gains, eps=eps))
    return run(cfg, audit=audit)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
