import os

import django
import numpy as np
import pytest

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'lqr_lab_project.settings')
django.setup()

from lqr_lab.harness import preset_system  # noqa: E402
from lqr_lab.linsys import LinearSystem  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help="run the long closed-loop experiments")


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long closed-loop experiment, run with --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


# Fixtures shared by every module
@pytest.fixture
def laplacian():
    return preset_system('laplacian')


@pytest.fixture
def scalar_unstable():
    return LinearSystem([[2.0]], [[1.0]], [[1.0]], [[1.0]], sigma_w=1.0)


@pytest.fixture
def scalar_plant():
    return LinearSystem([[1.01]], [[1.0]], [[10.0]], [[1.0]], sigma_w=1.0)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
