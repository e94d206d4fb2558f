import os

import pytest

from dagrt.pes import WorkerPool

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def sample_app_text():
    with open(os.path.join(DATA_DIR, "sample_application.json")) as fh:
        return fh.read()


@pytest.fixture
def make_pool():
    """WorkerPool factory that guarantees shutdown at test end."""
    pools = []

    def factory(descriptors, **kwargs):
        pool = WorkerPool(descriptors, **kwargs)
        pools.append(pool)
        return pool

    yield factory
    for pool in pools:
        pool.shutdown()
