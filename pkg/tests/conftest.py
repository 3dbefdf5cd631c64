from contextlib import contextmanager

import numpy as np
import pytest

from bolt.harness.benchmark import WorldConfig, build_world

TINY_WORLD = WorldConfig(lm_lines=300, d_model=16, n_heads=2, lm_epochs=1, clf_lines=400, head_scale=1.0)

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as out:`` logs one PASS/FAIL line; put details in ``out["detail"]``."""
    lines = request.config.stash[_CRITERIA]

    @contextmanager
    def run(number, title):
        out = {"detail": ""}
        try:
            yield out
        except BaseException as exc:
            reason = str(exc).splitlines()[0] if str(exc) else ""
            line = f"FAIL  criterion {number:2d}: {title} -- {type(exc).__name__}: {reason} {out['detail']}"
            lines.append((number, line))
            print(line)
            raise
        line = f"PASS  criterion {number:2d}: {title} -- {out['detail']}"
        lines.append((number, line))
        print(line)

    return run


@pytest.fixture(scope="session")
def tiny_world(tmp_path_factory):
    """Barely-trained models over the real vocabulary; for plumbing tests only."""
    return build_world(TINY_WORLD, cache_dir=tmp_path_factory.mktemp("tiny"))


@pytest.fixture(scope="session")
def world():
    """The full desk-scale world (trained once, then cached on disk)."""
    return build_world()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
