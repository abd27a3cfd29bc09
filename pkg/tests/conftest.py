import math

import numpy as np
import pytest

from freeform_antenna.evaluators import Evaluator, FrequencySweep, ReflectionResponse, SyntheticModelParams
from freeform_antenna.geometry import DesignVector, GeometryConfig

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}: {detail}")


@pytest.fixture
def sweep():
    return FrequencySweep()


@pytest.fixture
def desk_params():
    return SyntheticModelParams.desk()


@pytest.fixture
def desk_cfg():
    return GeometryConfig(L=8)


def regular_design(L=8, C=30.0, rho=0.5, rho_f=0.0, phi_f=0.0, phi=0.5):
    return DesignVector.from_parts(C, rho_f, phi_f, np.full(L, rho), np.full(L, phi))


def lorentz_response(sweep, dips, floor=-40.0):
    """Sum-of-dips response built directly in dB, independent of the synthetic model.

    ``dips`` holds ``(center_ghz, depth_db, width_ghz)``.
    """
    f = sweep.freqs
    y = np.zeros_like(f)
    for f0, depth, w in dips:
        y += depth / (1.0 + ((f - f0) / w) ** 2)
    return ReflectionResponse(sweep, np.maximum(y, floor))


class ConstantEvaluator(Evaluator):
    """Same response for every consistent design."""

    def __init__(self, levels, cfg=None):
        super().__init__(cfg)
        self.levels = levels
        self.calls = 0

    def _simulate(self, x, sweep, cfg):
        self.calls += 1
        lv = self.levels(sweep) if callable(self.levels) else np.full(sweep.points, float(self.levels))
        return ReflectionResponse(sweep, lv)


class CountingEvaluator:
    def __init__(self, inner, fail_after=None):
        self.inner = inner
        self.calls = 0
        self.fail_after = fail_after
        self.cfg = getattr(inner, "cfg", None)

    def __call__(self, x, sweep, tag=None):
        if self.fail_after is not None and self.calls >= self.fail_after:
            raise KeyboardInterrupt("simulated interruption")
        self.calls += 1
        return self.inner(x, sweep, tag=tag)


def critical_u_offset(width):
    """Feed offset from a coupling centre at which 2*exp(-(du/width)^2) equals 1."""
    return width * math.sqrt(math.log(2.0))
