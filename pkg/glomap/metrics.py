"""
Embedding quality measures. Distances are formed in row blocks so that none
of the measures needs a dense n x n matrix for both spaces at once.
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import rel_entr
from sklearn.metrics import silhouette_score

from .errors import MetricError

logger = logging.getLogger(__name__)

ROW_BLOCK = 1024
PAIR_LIMIT_POINTS = 6000
SAMPLED_PAIRS = 10 ** 7
DEFAULT_SIGMA_GRID = (0.001, 0.01, 0.1, 1.0, 10.0)
DEFAULT_KNN_GRID = tuple(range(1, 51))


@dataclass
class MetricReport:
	entries: List[Tuple[str, str, float]] = field(default_factory=list)

	def add(self, metric, value, param=''):
		value = float(value)
		if not np.isfinite(value):
			raise MetricError(f'{metric}({param}) is not finite: {value}')
		self.entries.append((metric, str(param), value))
		logger.info('%s %s = %.6g', metric, param, value)
		return value

	def get(self, metric, param=''):
		for name, p, value in self.entries:
			if name == metric and p == str(param):
				return value
		raise KeyError((metric, param))

	def to_csv(self, path):
		with open(path, 'w', newline='') as fh:
			writer = csv.writer(fh, lineterminator='\n')
			writer.writerow(['metric', 'param', 'value'])
			for metric, param, value in self.entries:
				writer.writerow([metric, param, repr(value)])


# ----------------------------------------------------------------------------#
# Utils
# ----------------------------------------------------------------------------#

def _as_points(Z):
	Z = np.asarray(getattr(Z, 'Z', Z), dtype=np.float64)
	if Z.ndim != 2:
		raise MetricError(f'expected an (n, d) array, got shape {Z.shape}')
	return Z


def _blocks(n):
	for start in range(0, n, ROW_BLOCK):
		yield start, min(start + ROW_BLOCK, n)


def _neighbor_order(Z, K):
	# stable sort: equal distances keep the smaller index first, self goes last
	n = Z.shape[0]
	order = np.empty((n, K), dtype=np.int64)
	for start, stop in _blocks(n):
		block = cdist(Z[start:stop], Z)
		rows = np.arange(stop - start)
		block[rows, start + rows] = np.inf
		order[start:stop] = np.argsort(block, axis=1, kind='stable')[:, :K]
	return order


def _codes(labels, n):
	labels = np.asarray(labels)
	if labels.shape != (n,):
		raise MetricError(f'expected {n} labels, got shape {labels.shape}')
	classes, codes = np.unique(labels, return_inverse=True)
	return classes, codes


# ----------------------------------------------------------------------------#
# KNN classification.
# ----------------------------------------------------------------------------#

def _vote_accuracy(neighbor_codes, codes, n_classes, K):
	n = codes.size
	counts = np.zeros((n, n_classes), dtype=np.int64)
	np.add.at(counts, (np.repeat(np.arange(n), K), neighbor_codes[:, :K].ravel()), 1)
	# argmax returns the first maximum, i.e. the smallest label
	return float(np.mean(np.argmax(counts, axis=1) == codes))


def knn_accuracy(Z, labels, K):
	return knn_accuracy_sweep(Z, labels, [K])[K]


def knn_accuracy_sweep(Z, labels, Ks):
	"""Leave-one-out KNN accuracy for every K in Ks; neighbors are sorted once."""
	Z = _as_points(Z)
	n = Z.shape[0]
	Ks = sorted({int(K) for K in Ks})
	if not Ks or Ks[0] < 1 or Ks[-1] >= n:
		raise MetricError(f'K must lie in [1, {n - 1}], got {Ks}')
	classes, codes = _codes(labels, n)
	neighbor_codes = codes[_neighbor_order(Z, Ks[-1])]
	return {K: _vote_accuracy(neighbor_codes, codes, classes.size, K) for K in Ks}


# ----------------------------------------------------------------------------#
# Global measures.
# ----------------------------------------------------------------------------#

def _dtm_density(points, sigma):
	n = points.shape[0]
	mass = np.empty(n)
	for start, stop in _blocks(n):
		mass[start:stop] = np.exp(-cdist(points[start:stop], points, 'sqeuclidean') / sigma).sum(axis=1)
	return mass / mass.sum()


def dtm_kl(X0, Z, sigma):
	X0, Z = _as_points(X0), _as_points(Z)
	if X0.shape[0] != Z.shape[0]:
		raise MetricError(f'{X0.shape[0]} reference points but {Z.shape[0]} embedded points')
	if not sigma > 0:
		raise MetricError(f'sigma must be positive, got {sigma}')
	f_x, f_z = _dtm_density(X0, sigma), _dtm_density(Z, sigma)
	return float(max(rel_entr(f_x, f_z).sum(), 0.0))


def sampled_pair_count(n, max_points=PAIR_LIMIT_POINTS, n_pairs=SAMPLED_PAIRS):
	"""Number of distance pairs distance_correlation actually compares."""
	total = n * (n - 1) // 2
	return total if n <= max_points else min(n_pairs, total)


def distance_correlation(X0, Z, max_points=PAIR_LIMIT_POINTS, n_pairs=SAMPLED_PAIRS, seed=0):
	X0, Z = _as_points(X0), _as_points(Z)
	n = X0.shape[0]
	if Z.shape[0] != n:
		raise MetricError(f'{n} reference points but {Z.shape[0]} embedded points')
	if n < 3:
		raise MetricError(f'distance correlation needs at least 3 points, got {n}')
	if n <= max_points:
		dx, dz = pdist(X0), pdist(Z)
	else:
		rng = np.random.default_rng(seed)
		count = sampled_pair_count(n, max_points, n_pairs)
		i = rng.integers(0, n, size=count)
		j = (i + rng.integers(1, n, size=count)) % n
		dx = np.linalg.norm(X0[i] - X0[j], axis=1)
		dz = np.linalg.norm(Z[i] - Z[j], axis=1)
		logger.info('distance correlation on %d sampled pairs', count)
	if dx.std() == 0 or dz.std() == 0:
		raise MetricError('a distance set has zero variance')
	return float(np.corrcoef(dx, dz)[0, 1])


# ----------------------------------------------------------------------------#
# Local measures.
# ----------------------------------------------------------------------------#

def trustworthiness(X, Z, K):
	X = _as_points(getattr(X, 'points', X))
	Z = _as_points(Z)
	n = X.shape[0]
	if Z.shape[0] != n:
		raise MetricError(f'{n} input points but {Z.shape[0]} embedded points')
	if not 1 <= K < n / 2:
		raise MetricError(f'trustworthiness needs 1 <= K < n/2, got K={K} for n={n}')

	embedded = _neighbor_order(Z, K)
	penalty = 0
	ranks = np.empty(n, dtype=np.int64)
	for start, stop in _blocks(n):
		block = cdist(X[start:stop], X)
		rows = np.arange(stop - start)
		block[rows, start + rows] = np.inf
		order = np.argsort(block, axis=1, kind='stable')
		for r in rows:
			# 1-based input-space rank of every point, self last
			ranks[order[r]] = np.arange(1, n + 1)
			penalty += int(np.maximum(ranks[embedded[start + r]] - K, 0).sum())
	return float(1.0 - 2.0 / (n * K * (2 * n - 3 * K - 1)) * penalty)


def silhouette(Z, labels):
	"""Mean silhouette; a point alone in its cluster scores 0."""
	Z = _as_points(Z)
	n = Z.shape[0]
	classes, codes = _codes(labels, n)
	if not 2 <= classes.size <= n - 1:
		raise MetricError(f'silhouette needs between 2 and {n - 1} clusters, got {classes.size}')
	return float(silhouette_score(Z, codes, metric='euclidean'))
