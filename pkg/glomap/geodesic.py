"""
Global geodesic distances: local scales from the KNN graph, locally rescaled
edge lengths merged across the two endpoints, all-pairs shortest paths, and
the median normalization applied before tempering.
"""
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra

from .data import load_binary, save_binary
from .errors import DataError, GeodesicError, GlomapError, StageError
from .neighbors import knn_graph, pairwise_l2, sorted_neighbors

logger = logging.getLogger(__name__)

SCALE_RULES = ('fmax', 'min')
ORACLE_MAX_POINTS = 64


# ----------------------------------------------------------------------------#
# Models.
# ----------------------------------------------------------------------------#

@dataclass(frozen=True)
class LocalScales:
	sigma: np.ndarray

	@property
	def degenerate(self):
		return self.sigma == 0


@dataclass(frozen=True)
class LocalDistanceGraph:
	# symmetric; stored zeros are real edges between coincident points
	adjacency: sparse.csr_matrix

	@property
	def n(self):
		return self.adjacency.shape[0]


@dataclass(frozen=True)
class GlobalDistanceMatrix:
	"""Dense n x n distances, np.inf exactly where the pair spans two graph components."""
	values: np.ndarray
	components: np.ndarray

	@property
	def n(self):
		return self.values.shape[0]

	@property
	def n_components(self):
		return int(self.components.max()) + 1

	def finite_offdiagonal(self):
		upper = np.triu(np.ones(self.values.shape, dtype=bool), 1)
		return self.values[upper & np.isfinite(self.values)]


@dataclass(frozen=True)
class TruncatedDistanceMatrix:
	"""Sparse K-tilde variant: only stored pairs are finite, everything absent reads as inf."""
	matrix: sparse.csr_matrix
	components: np.ndarray

	@property
	def n(self):
		return self.matrix.shape[0]

	def to_dense(self):
		values = np.full(self.matrix.shape, np.inf)
		coo = self.matrix.tocoo()
		values[coo.row, coo.col] = coo.data
		np.fill_diagonal(values, 0.0)
		return values


# ----------------------------------------------------------------------------#
# Utils
# ----------------------------------------------------------------------------#

def _csr_from_sorted_keys(keys, data, n):
	# keys = row * n + col, sorted; builds the csr arrays directly so zeros stay stored
	rows = keys // n
	indptr = np.searchsorted(rows, np.arange(n + 1), side='left')
	return sparse.csr_matrix((data, (keys % n).astype(np.int64), indptr), shape=(n, n))


def lower_median(values):
	values = np.asarray(values)
	k = (values.size - 1) // 2
	return float(np.partition(values, k)[k])


def fmax(values):
	finite = [v for v in values if np.isfinite(v)]
	return max(finite) if finite else np.inf


def floyd_warshall(weights):
	dist = np.array(weights, dtype=np.float64)
	for k in range(dist.shape[0]):
		np.minimum(dist, dist[:, k:k + 1] + dist[k:k + 1, :], out=dist)
	return dist


def components_from_values(values):
	# the first finite column of a row is the smallest member of its component
	first = np.argmax(np.isfinite(values), axis=1)
	return np.unique(first, return_inverse=True)[1].astype(np.int64)


@contextmanager
def _stage(name):
	started = time.perf_counter()
	try:
		yield
	except GlomapError as exc:
		raise StageError(name, exc) from exc
	logger.info('%s finished in %.2fs', name, time.perf_counter() - started)


# ----------------------------------------------------------------------------#
# Algorithm stages.
# ----------------------------------------------------------------------------#

def local_scales(g):
	sigma = np.sqrt(np.mean(g.distances ** 2, axis=1))
	scales = LocalScales(sigma)
	degenerate = int(scales.degenerate.sum())
	if degenerate:
		logger.warning('%d points have all %d neighbors at distance 0; their local scale is 0', degenerate, g.K)
	return scales


def rescale_and_symmetrize(g, s, rule='fmax'):
	"""
	Each directed KNN edge i -> j gets |x_i - x_j| / sigma_i. An undirected
	edge keeps the larger of its finite directed weights, so mutual neighbors
	end up at |x_i - x_j| / min(sigma_i, sigma_j). With rule='min' every edge,
	one-directional ones included, is rescaled by min(sigma_i, sigma_j).
	"""
	n, K = g.indices.shape
	if s.sigma.shape != (n,):
		raise GeodesicError(f'{s.sigma.shape[0]} local scales for a {n}-point graph')
	if rule not in SCALE_RULES:
		raise GeodesicError(f'unknown scale rule {rule!r}; choose from {SCALE_RULES}')

	rows = np.repeat(np.arange(n, dtype=np.int64), K)
	cols = g.indices.ravel().astype(np.int64)
	lengths = g.distances.ravel()
	if rule == 'fmax':
		scale = s.sigma[rows]
	else:
		scale = np.minimum(s.sigma[rows], s.sigma[cols])

	bad = np.flatnonzero((scale == 0) & (lengths > 0))
	if bad.size:
		k = bad[0]
		raise GeodesicError(f'edge {rows[k]}-{cols[k]} has length {lengths[k]:.6g} but a zero local scale')
	with np.errstate(divide='ignore', invalid='ignore'):
		weights = np.where(scale > 0, lengths / np.where(scale > 0, scale, 1.0), 0.0)

	keys = np.concatenate([rows * n + cols, cols * n + rows])
	weights = np.concatenate([weights, weights])
	order = np.argsort(keys, kind='stable')
	keys, weights = keys[order], weights[order]
	unique, start = np.unique(keys, return_index=True)
	merged = np.maximum.reduceat(weights, start)
	return LocalDistanceGraph(_csr_from_sorted_keys(unique, merged, n))


def shortest_paths(l, n_jobs=1):
	n = l.n
	n_components, components = connected_components(l.adjacency, directed=False)
	chunks = [chunk for chunk in np.array_split(np.arange(n), max(1, min(n, 4 * n_jobs))) if chunk.size]

	def run(chunk):
		return dijkstra(l.adjacency, directed=False, indices=chunk)

	values = np.empty((n, n), dtype=np.float64)
	if n_jobs > 1:
		with ThreadPoolExecutor(max_workers=n_jobs) as pool:
			for chunk, rows in zip(chunks, pool.map(run, chunks)):
				values[chunk] = rows
	else:
		for chunk in chunks:
			values[chunk] = run(chunk)
	# path sums may differ in the last bit between the two directions
	np.minimum(values, values.T, out=values)
	np.fill_diagonal(values, 0.0)
	if n_components > 1:
		logger.info('local graph has %d connected components', n_components)
	return GlobalDistanceMatrix(values, components.astype(np.int64))


def normalize_median(D, target=3.0):
	finite = D.finite_offdiagonal()
	if finite.size == 0:
		raise GeodesicError('no finite off-diagonal distance to normalize')
	median = lower_median(finite)
	if median <= 0:
		# mostly duplicate points: measure the scale on the distinct pairs
		positive = finite[finite > 0]
		if positive.size == 0:
			logger.warning('all finite global distances are zero; normalization skipped')
			return D
		median = lower_median(positive)
		logger.warning('median global distance is zero; using the median of %d positive distances', positive.size)
	scale = target / median
	logger.info('median global distance %.6g, scaled by %.6g', median, scale)
	return GlobalDistanceMatrix(D.values * scale, D.components)


def truncate_ktilde(D, k_tilde):
	n = D.n
	if not 1 <= k_tilde <= n - 1:
		raise GeodesicError(f'k_tilde must lie in [1, {n - 1}], got {k_tilde}')
	order = sorted_neighbors(D.values, k_tilde)
	rows = np.repeat(np.arange(n, dtype=np.int64), k_tilde)
	cols = order.ravel()
	keep = np.isfinite(D.values[rows, cols])
	rows, cols = rows[keep], cols[keep]
	keys = np.unique(np.concatenate([rows * n + cols, cols * n + rows]))
	data = D.values[keys // n, keys % n]
	return TruncatedDistanceMatrix(_csr_from_sorted_keys(keys, data, n), D.components)


def coequalizer_oracle(g, s):
	"""
	Brute-force merged metric for small mutual-KNN instances. Point a carries
	its own island metric d_a(a, y) = |a - y| / sigma_a for y in K_a; copies of
	the same pair across islands are reconciled with fmax, and the merged
	space is closed under path sums by Floyd-Warshall.
	"""
	n = g.n
	if n > ORACLE_MAX_POINTS:
		raise GeodesicError(f'oracle is limited to {ORACLE_MAX_POINTS} points, got {n}')
	members = [set(row) for row in g.indices.tolist()]
	for i, row in enumerate(members):
		for j in row:
			if i not in members[j]:
				raise GeodesicError(f'neighborhoods are not mutual: {j} is a neighbor of {i} but not vice versa')

	islands = {}
	for a in range(n):
		for y, length in zip(g.indices[a].tolist(), g.distances[a].tolist()):
			local = 0.0 if length == 0 else length / s.sigma[a]
			islands.setdefault((min(a, y), max(a, y)), []).append(local)

	merged = np.full((n, n), np.inf)
	np.fill_diagonal(merged, 0.0)
	for (i, j), values in islands.items():
		merged[i, j] = merged[j, i] = fmax(values)
	return floyd_warshall(merged)


# ----------------------------------------------------------------------------#
# Pipeline.
# ----------------------------------------------------------------------------#

def global_distances(X, n_neighbors=15, scale_rule='fmax', median_target=3.0, k_tilde=None, n_jobs=1):
	with _stage('pairwise'):
		D2 = pairwise_l2(X)
	with _stage('knn'):
		g = knn_graph(D2, n_neighbors)
	del D2
	with _stage('scales'):
		s = local_scales(g)
	with _stage('rescale'):
		l = rescale_and_symmetrize(g, s, scale_rule)
	with _stage('shortest_paths'):
		D = shortest_paths(l, n_jobs=n_jobs)
	with _stage('normalize'):
		D = normalize_median(D, median_target)
	if k_tilde:
		with _stage('truncate'):
			D = truncate_ktilde(D, k_tilde)
	return D


def settings_path(path):
	"""The `key = value` record of the pipeline settings that built a cache."""
	return f'{os.fspath(path)}.cfg'


def read_cache_settings(path):
	record = settings_path(path)
	if not os.path.exists(record):
		raise DataError(f'{path} has no settings record {record}; delete the cache to rebuild it')
	settings = {}
	with open(record, encoding='utf-8') as fh:
		for line in fh:
			key, sep, value = line.partition('=')
			if sep:
				settings[key.strip()] = value.strip()
	return settings


def save_distances(path, D, settings=None):
	values = D.to_dense() if isinstance(D, TruncatedDistanceMatrix) else D.values
	save_binary(path, values)
	if settings is not None:
		with open(settings_path(path), 'w', encoding='utf-8', newline='\n') as fh:
			for key in sorted(settings):
				fh.write(f'{key} = {settings[key]}\n')


def load_distances(path, settings=None):
	"""
	Reads a cached matrix. When settings are given, the cache must have been
	written with the same settings; a mismatch raises DataError.
	"""
	values = load_binary(path)
	if values.shape[0] != values.shape[1]:
		raise GeodesicError(f'distance cache must be square, got {values.shape}')
	if settings is not None:
		stored = read_cache_settings(path)
		expected = {key: str(value) for key, value in settings.items()}
		differing = sorted(key for key in set(stored) | set(expected) if stored.get(key) != expected.get(key))
		if differing:
			built = ', '.join(f'{key}={stored.get(key)}' for key in differing)
			wanted = ', '.join(f'{key}={expected.get(key)}' for key in differing)
			raise DataError(f'{path} was built with {built}, this run needs {wanted}')
	return GlobalDistanceMatrix(values, components_from_values(values))
