import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import sparse

from .errors import AffinityError
from .geodesic import TruncatedDistanceMatrix

logger = logging.getLogger(__name__)

DEFAULT_A = 1.57694
DEFAULT_B = 0.8951
# floor on embedding distances where the kernel terms are singular
EPSILON = 1e-3


@dataclass(frozen=True)
class EmbedKernelParams:
	a: float = DEFAULT_A
	b: float = DEFAULT_B

	def __post_init__(self):
		if not (self.a > 0 and self.b > 0):
			raise AffinityError(f'kernel parameters must be positive, got a={self.a}, b={self.b}')


DEFAULT_KERNEL = EmbedKernelParams()


@dataclass(frozen=True)
class MembershipTable:
	"""
	Output Schema
		mu: (n, n) ndarray, or csr_matrix for a truncated distance matrix
		row_sums: (n,) float64, mu_i. = sum_j mu_ij
		tau: temperature the table was built with
		cumulative: running row sums aligned with mu.data (sparse tables only)
	"""
	mu: Union[np.ndarray, sparse.csr_matrix]
	row_sums: np.ndarray
	tau: float
	cumulative: np.ndarray = None

	@property
	def n(self):
		return self.mu.shape[0]

	@property
	def is_sparse(self):
		return sparse.issparse(self.mu)


# ----------------------------------------------------------------------------#
# Input side.
# ----------------------------------------------------------------------------#

def _segment_cumsum(data, indptr):
	totals = np.cumsum(data)
	starts = indptr[:-1]
	offsets = np.where(starts > 0, totals[np.maximum(starts - 1, 0)], 0.0)
	return totals - np.repeat(offsets, np.diff(indptr))


def membership(D, tau):
	if not tau > 0:
		raise AffinityError(f'tau must be positive, got {tau}')
	if isinstance(D, TruncatedDistanceMatrix):
		mu = D.matrix.copy()
		mu.data = np.exp(-mu.data / tau)
		row_sums = np.asarray(mu.sum(axis=1)).ravel()
		logger.debug('sparse membership at tau=%.4g, %d stored pairs', tau, mu.nnz)
		return MembershipTable(mu, row_sums, tau, _segment_cumsum(mu.data, mu.indptr))
	values = getattr(D, 'values', D)
	# exp(-inf) is exactly 0 across components
	mu = np.exp(-np.asarray(values, dtype=np.float64) / tau)
	np.fill_diagonal(mu, 0.0)
	logger.debug('dense membership at tau=%.4g', tau)
	return MembershipTable(mu, mu.sum(axis=1), tau)


def pair_membership(t, rows, cols):
	if t.is_sparse:
		return t.mu[rows][:, cols].toarray()
	return t.mu[np.ix_(rows, cols)]


def sample_neighbors(t, rows, rng):
	"""Draw one j per row i with probability mu_ij / mu_i. (rows may repeat)."""
	rows = np.asarray(rows, dtype=np.int64)
	isolated = rows[t.row_sums[rows] <= 0]
	if isolated.size:
		raise AffinityError(f'row {isolated[0]} has no neighbor with positive membership')
	u = rng.random(rows.size)

	if t.is_sparse:
		picks = np.empty(rows.size, dtype=np.int64)
		indptr, indices, data = t.mu.indptr, t.mu.indices, t.mu.data
		for k, i in enumerate(rows):
			lo, hi = indptr[i], indptr[i + 1]
			running = t.cumulative[lo:hi]
			pos = min(int(np.searchsorted(running, u[k] * running[-1], side='right')), hi - lo - 1)
			while data[lo + pos] <= 0:
				pos -= 1
			picks[k] = indices[lo + pos]
		return picks

	weights = t.mu[rows]
	running = np.cumsum(weights, axis=1)
	picks = (running <= (u * running[:, -1])[:, None]).sum(axis=1)
	last_positive = weights.shape[1] - 1 - np.argmax(weights[:, ::-1] > 0, axis=1)
	return np.minimum(picks, last_positive)


def sample_neighbor(t, i, rng):
	return int(sample_neighbors(t, [i], rng)[0])


# ----------------------------------------------------------------------------#
# Embedding side.
# ----------------------------------------------------------------------------#

def _distance(zi, zj):
	return np.linalg.norm(np.asarray(zi, dtype=np.float64) - np.asarray(zj, dtype=np.float64), axis=-1)


def q_from_distance(r, k=DEFAULT_KERNEL):
	return 1.0 / (1.0 + k.a * np.asarray(r, dtype=np.float64) ** (2 * k.b))


def q_embed(zi, zj, k=DEFAULT_KERNEL):
	return q_from_distance(_distance(zi, zj), k)


def neg_log_q(r, k=DEFAULT_KERNEL):
	return np.log1p(k.a * np.asarray(r, dtype=np.float64) ** (2 * k.b))


def neg_log_one_minus_q(r, k=DEFAULT_KERNEL, eps=EPSILON):
	r = np.maximum(np.asarray(r, dtype=np.float64), eps)
	return np.log1p(1.0 / (k.a * r ** (2 * k.b)))


def grad_q_terms(zi, zj, k=DEFAULT_KERNEL, eps=EPSILON):
	"""
	Gradients w.r.t. zi of -log q and of -log(1 - q), broadcast over leading
	axes. Distances below eps are floored, which keeps both finite at r = 0.
	"""
	diff = np.asarray(zi, dtype=np.float64) - np.asarray(zj, dtype=np.float64)
	r = np.maximum(np.linalg.norm(diff, axis=-1, keepdims=True), eps)
	scaled = k.a * r ** (2 * k.b)
	attract = (2 * k.a * k.b * r ** (2 * k.b - 2) / (1 + scaled)) * diff
	repel = (-2 * k.b / (r ** 2 * (1 + scaled))) * diff
	return attract, repel
