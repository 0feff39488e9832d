import os
import sys
from fractions import Fraction

import numpy as np
import pytest

from padic_phi4.padic import Cell
from padic_phi4.testfunctions import TestFunction

sys.path.insert(0, os.path.dirname(__file__))


def random_cell(rng, p, scale_lo=-2, scale_hi=1, box=2):
    """Random cell with |center| <= p**box and scale in [scale_lo, scale_hi]."""
    m = int(rng.integers(scale_lo, scale_hi + 1))
    k = box - m  # digits between the cell scale and the box
    center = [Fraction(int(rng.integers(0, p ** max(k, 0))), p ** box) for _ in range(3)]
    return Cell.make(p, m, center)


def random_test_function(rng, p, terms=3, complex_coeffs=False, **kw):
    out = []
    for _ in range(terms):
        c = float(rng.normal())
        if complex_coeffs:
            c = complex(c, float(rng.normal()))
        out.append((random_cell(rng, p, **kw), c))
    return TestFunction(p, out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[n])
