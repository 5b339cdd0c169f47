import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DataError

logger = logging.getLogger(__name__)

ROW_BLOCK = 1024


@dataclass(frozen=True)
class KnnGraph:
	"""
	Output Schema
		indices: (n, K) int64, row i lists the K nearest non-self points of i
		distances: (n, K) float64, Euclidean, row-wise nondecreasing
	"""
	indices: np.ndarray
	distances: np.ndarray

	@property
	def n(self):
		return self.indices.shape[0]

	@property
	def K(self):
		return self.indices.shape[1]


def _points(X):
	return np.asarray(getattr(X, 'points', X), dtype=np.float64)


def pairwise_l2(X):
	points = _points(X)
	if points.ndim != 2 or points.shape[0] < 2:
		raise DataError(f'pairwise distances need at least 2 points, got shape {points.shape}')
	return squareform(pdist(points, 'euclidean'))


def sorted_neighbors(D, K, exclude_self=True):
	"""
	Column ids of the K smallest entries of each row of D, ties broken by the
	smaller column id. The diagonal is skipped when exclude_self is set.
	"""
	D = np.asarray(D, dtype=np.float64)
	n = D.shape[0]
	order = np.empty((n, K), dtype=np.int64)
	for start in range(0, n, ROW_BLOCK):
		block = D[start:start + ROW_BLOCK].copy()
		if exclude_self:
			rows = np.arange(block.shape[0])
			block[rows, start + rows] = np.inf
		order[start:start + ROW_BLOCK] = np.argsort(block, axis=1, kind='stable')[:, :K]
	return order


def knn_graph(D2, K):
	D2 = np.asarray(D2, dtype=np.float64)
	n = D2.shape[0]
	if D2.ndim != 2 or D2.shape[1] != n:
		raise DataError(f'distance matrix must be square, got shape {D2.shape}')
	if not 1 <= K <= n - 1:
		raise DataError(f'K must lie in [1, {n - 1}] for {n} points, got {K}')
	indices = sorted_neighbors(D2, K)
	distances = np.take_along_axis(D2, indices, axis=1)
	logger.debug('knn graph: n=%d K=%d, max neighbor distance %.4g', n, K, distances[:, -1].max())
	return KnnGraph(indices, distances)
