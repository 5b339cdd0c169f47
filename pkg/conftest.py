import numpy as np
import pytest

from glomap.data import gen_scurve


def pytest_addoption(parser):
	parser.addoption('--runslow', action='store_true', default=False, help='run the n=6000 acceptance runs')


def pytest_configure(config):
	config.addinivalue_line('markers', 'slow: long acceptance run, needs --runslow')


def pytest_collection_modifyitems(config, items):
	if config.getoption('--runslow'):
		return
	skip_slow = pytest.mark.skip(reason='needs --runslow')
	for item in items:
		if 'slow' in item.keywords:
			item.add_marker(skip_slow)


@pytest.fixture
def rng():
	return np.random.default_rng(12345)


@pytest.fixture(scope='session')
def small_scurve():
	return gen_scurve(200, seed=3)


def blobs(rng, centers, per_cluster, spread=0.1):
	"""Gaussian clouds around each center; labels are the center index."""
	centers = np.asarray(centers, dtype=np.float64)
	points = np.repeat(centers, per_cluster, axis=0) + rng.normal(0.0, spread, (len(centers) * per_cluster, centers.shape[1]))
	return points, np.repeat(np.arange(len(centers)), per_cluster)
