import numpy as np
import pytest

from diffpcc.diffnet import ModelConfig, init_params
from diffpcc.diffusion import build_schedule


@pytest.fixture
def tiny_config():
    return ModelConfig(d=8, C=4, N=8, T=10, point_widths=(6, 8), head_widths=(8,),
                       denoiser_widths=(6, 7, 5), time_dim=4)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=3)


@pytest.fixture
def paper_schedule():
    return build_schedule(200, 1e-4, 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance criterion outcome; returns ``check(name, ok, detail)``."""
    lines = request.config._acceptance_lines

    def check(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
