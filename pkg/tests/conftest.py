import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from splatgeom.splat_model import SplatCloud  # noqa: E402


def random_cloud(rng, n, with_sh_rest=True):
    return SplatCloud(
        positions=rng.normal(size=(n, 3)) * 5,
        log_scales=rng.normal(size=(n, 3)) - 2,
        rotations=rng.normal(size=(n, 4)),
        opacity_logits=rng.normal(size=n) * 2,
        sh_dc=rng.normal(size=(n, 3)),
        sh_rest=rng.normal(size=(n, 45)) if with_sh_rest else None,
        normals=rng.normal(size=(n, 3)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
