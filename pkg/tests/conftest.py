import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from chunkvote import _pykernels, kernels  # noqa: E402

BACKENDS = {"python": _pykernels}
if kernels.compiled() is not None:
    BACKENDS["cython"] = kernels.compiled()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    """Each available kernel implementation in turn."""
    return BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance criteria")
    for key, title in mod.CRITERIA.items():
        if key in mod.RESULTS:
            ok, detail = mod.RESULTS[key]
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {title}: {detail}")
        else:
            terminalreporter.write_line(f"FAIL  {title}: not run or errored before a verdict")
