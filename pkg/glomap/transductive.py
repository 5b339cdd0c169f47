"""
Transductive embedding: free particles Z optimized by clipped two-phase SGD
on the minibatch loss, with a decaying learning rate and a tempered
membership temperature.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .affinity import (
	DEFAULT_A, DEFAULT_B, EmbedKernelParams, grad_q_terms, membership, neg_log_one_minus_q,
	neg_log_q, pair_membership, sample_neighbors,
)
from .errors import ConfigError, DataError, GlomapError, StageError
from .geodesic import GlobalDistanceMatrix, TruncatedDistanceMatrix, global_distances

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ('geometric', 'linear', 'constant')
METHOD_EPOCHS = {'glomap': 300, 'iglomap': 150}


# ----------------------------------------------------------------------------#
# Models.
# ----------------------------------------------------------------------------#

@dataclass
class Embedding:
	Z: np.ndarray
	losses: List[float] = field(default_factory=list)

	@property
	def n(self):
		return self.Z.shape[0]


@dataclass(frozen=True)
class FitConfig:
	lambda_e: float = 1.0
	n_epoch: int = 300
	batch: int = 100
	n_neighbors: int = 15
	clip: float = 4.0
	alpha0: float = 1.0
	alpha_decay: float = 0.98
	tau_start: float = 1.0
	tau_end: float = 0.1
	fixed_tau: Optional[float] = None
	neg_approx: bool = False
	seed: int = 0
	dim: int = 2
	k_tilde: Optional[int] = None
	scale_rule: str = 'fmax'
	median_target: float = 3.0
	a: float = DEFAULT_A
	b: float = DEFAULT_B
	init_std: float = 1e-2
	# mapper training
	eta0: float = 0.01
	eta_decay: float = 0.98
	adam_reset: int = 20
	hidden: Tuple[int, ...] = (128, 128, 128)
	bn_momentum: float = 0.1
	n_jobs: int = 1

	def __post_init__(self):
		positive = ('n_epoch', 'batch', 'n_neighbors', 'clip', 'alpha_decay', 'tau_start', 'tau_end',
			'dim', 'median_target', 'a', 'b', 'init_std', 'eta0', 'eta_decay', 'n_jobs')
		for name in positive:
			if not getattr(self, name) > 0:
				raise ConfigError(f'{name} must be positive, got {getattr(self, name)}')
		if self.lambda_e < 0 or self.alpha0 < 0 or self.adam_reset < 0:
			raise ConfigError('lambda_e, alpha0 and adam_reset must be nonnegative')
		if self.batch < 2:
			raise ConfigError(f'batch must be at least 2, got {self.batch}')
		if self.tau_end > self.tau_start:
			raise ConfigError(f'tau_end {self.tau_end} exceeds tau_start {self.tau_start}')
		if self.fixed_tau is not None and not self.fixed_tau > 0:
			raise ConfigError(f'fixed_tau must be positive, got {self.fixed_tau}')
		if self.k_tilde is not None and self.k_tilde < 1:
			raise ConfigError(f'k_tilde must be positive, got {self.k_tilde}')
		if not 0 <= self.seed < 2 ** 64:
			raise ConfigError(f'seed must be an unsigned 64-bit integer, got {self.seed}')

	@property
	def kernel(self):
		return EmbedKernelParams(self.a, self.b)

	@property
	def distance_settings(self):
		"""Settings that determine the full global distance matrix."""
		return {'n_neighbors': self.n_neighbors, 'scale_rule': self.scale_rule, 'median_target': self.median_target}


@dataclass(frozen=True)
class Schedule:
	kind: str
	start: float
	end: float
	length: int

	def __post_init__(self):
		if self.kind not in SCHEDULE_KINDS:
			raise ConfigError(f'unknown schedule kind {self.kind!r}')
		if self.length < 1:
			raise ConfigError(f'schedule length must be positive, got {self.length}')
		if self.kind == 'constant' and self.start != self.end:
			raise ConfigError('a constant schedule needs start == end')
		if self.kind == 'geometric' and not (self.start > 0 and self.end > 0):
			raise ConfigError('a geometric schedule needs positive endpoints')

	@classmethod
	def decay(cls, start, rate, length):
		return cls('geometric', start, start * rate ** (length - 1), length) if start > 0 \
			else cls('constant', start, start, length)

	@classmethod
	def constant(cls, value, length):
		return cls('constant', value, value, length)

	def value(self, t):
		if self.kind == 'constant' or self.length == 1 or t <= 0:
			return self.start
		if t >= self.length - 1:
			return self.end
		frac = t / (self.length - 1)
		if self.kind == 'linear':
			return self.start + (self.end - self.start) * frac
		if self.kind == 'geometric' and self.start * self.end > 0 and self.start != self.end:
			return self.start * (self.end / self.start) ** frac
		return self.start

	def __iter__(self):
		return (self.value(t) for t in range(self.length))


def schedules(cfg):
	alpha = Schedule.decay(cfg.alpha0, cfg.alpha_decay, cfg.n_epoch)
	if cfg.fixed_tau is not None:
		tau = Schedule.constant(cfg.fixed_tau, cfg.n_epoch)
	else:
		tau = Schedule('geometric', cfg.tau_start, cfg.tau_end, cfg.n_epoch)
	return alpha, tau


# ----------------------------------------------------------------------------#
# Losses.
# ----------------------------------------------------------------------------#

def _dense_mu(table):
	return table.mu.toarray() if table.is_sparse else table.mu


def full_terms(Z, table, k):
	Z = np.asarray(Z, dtype=np.float64)
	mu = _dense_mu(table)
	r = np.linalg.norm(Z[:, None, :] - Z[None, :, :], axis=-1)
	off = ~np.eye(Z.shape[0], dtype=bool)
	positive = float(np.sum(mu[off] * neg_log_q(r[off], k)))
	negative = float(np.sum((1.0 - mu[off]) * neg_log_one_minus_q(r[off], k)))
	return positive, negative


def loss_full(Z, table, lambda_e, k):
	positive, negative = full_terms(Z, table, k)
	return positive + lambda_e * negative


def stochastic_terms(S, J, Z, table, k, neg_approx=False):
	"""Positive and negative sums of the minibatch estimator; equal batch ids never repel."""
	S = np.asarray(S, dtype=np.int64)
	J = np.asarray(J, dtype=np.int64)
	Z = np.asarray(Z, dtype=np.float64)
	positive = float(np.sum(table.row_sums[S] * neg_log_q(np.linalg.norm(Z[S] - Z[J], axis=-1), k)))
	r = np.linalg.norm(Z[S][:, None, :] - Z[S][None, :, :], axis=-1)
	weight = 1.0 if neg_approx else 1.0 - pair_membership(table, S, S)
	terms = np.where(S[:, None] == S[None, :], 0.0, weight * neg_log_one_minus_q(r, k))
	return positive, float(terms.sum())


def loss_stochastic(S, J, Z, table, lambda_e, k, neg_approx=False):
	positive, negative = stochastic_terms(S, J, Z, table, k, neg_approx)
	return positive + lambda_e * negative


# ----------------------------------------------------------------------------#
# Optimization.
# ----------------------------------------------------------------------------#

def particle_step(Z, heads, tails, ids, mu_block, weights, alpha, lambda_e, clip, k):
	"""
	One two-phase move of the particles in Z (in place). heads/tails index
	the batch particles and their sampled neighbors inside Z, ids are the
	data ids of the heads, mu_block their (m, m) memberships (None treats
	every 1 - mu as 1) and weights their row sums mu_i.

	Every per-pair gradient is clamped to [-clip, clip]; the summed move of a
	particle is clamped again, so no coordinate travels more than alpha * clip
	per phase. Returns the minibatch loss before the move.
	"""
	ids = np.asarray(ids)
	same = ids[:, None] == ids[None, :]
	coef = lambda_e * (1.0 - mu_block) if mu_block is not None else np.full(same.shape, float(lambda_e))
	coef = np.where(same, 0.0, coef)

	zs = Z[heads]
	r = np.linalg.norm(zs[:, None, :] - zs[None, :, :], axis=-1)
	negative = float(np.sum(coef * neg_log_one_minus_q(r, k)))
	positive = float(np.sum(weights * neg_log_q(np.linalg.norm(zs - Z[tails], axis=-1), k)))

	# repulsion over all batch pairs; terms (p, q) and (q, p) push p equally
	_, repel = grad_q_terms(zs[:, None, :], zs[None, :, :], k)
	pushed = np.clip(coef[:, :, None] * repel, -clip, clip)
	delta = np.zeros_like(Z)
	np.add.at(delta, heads, 2.0 * pushed.sum(axis=1))
	Z -= alpha * np.clip(delta, -clip, clip)

	# attraction uses the post-repulsion positions
	attract, _ = grad_q_terms(Z[heads], Z[tails], k)
	pulled = np.clip(weights[:, None] * attract, -clip, clip)
	delta = np.zeros_like(Z)
	np.add.at(delta, heads, pulled)
	np.add.at(delta, tails, -pulled)
	Z -= alpha * np.clip(delta, -clip, clip)

	# coef already carries lambda_e
	return positive + negative


def iterations_per_epoch(n, batch):
	return math.ceil(n / batch)


def sgd_epoch(Z, table, cfg, alpha, rng, k=None):
	k = k or cfg.kernel
	n = Z.shape[0]
	losses = []
	for _ in range(iterations_per_epoch(n, cfg.batch)):
		S = rng.integers(0, n, size=cfg.batch)
		J = sample_neighbors(table, S, rng)
		mu_block = None if cfg.neg_approx else pair_membership(table, S, S)
		losses.append(particle_step(
			Z, S, J, S, mu_block, table.row_sums[S], alpha, cfg.lambda_e, cfg.clip, k,
		))
	return Z, float(np.mean(losses))


def resolve_distances(source, cfg):
	if isinstance(source, (GlobalDistanceMatrix, TruncatedDistanceMatrix)):
		return source
	points = np.asarray(getattr(source, 'points', source), dtype=np.float64)
	if points.shape[0] < cfg.n_neighbors + 1:
		raise DataError(f'{points.shape[0]} points cannot support K={cfg.n_neighbors} neighbors')
	return global_distances(
		points, cfg.n_neighbors, scale_rule=cfg.scale_rule, median_target=cfg.median_target,
		k_tilde=cfg.k_tilde, n_jobs=cfg.n_jobs,
	)


def fit_transductive(source, cfg=FitConfig(), callback=None):
	"""
	source is a DataMatrix / point array (distances are built first) or a
	precomputed distance matrix. callback(epoch, Z) runs after every epoch.
	"""
	D = resolve_distances(source, cfg)
	n = D.n
	if n < cfg.batch:
		raise DataError(f'{n} points are fewer than the batch size {cfg.batch}')
	rng = np.random.default_rng(cfg.seed)
	k = cfg.kernel
	Z = rng.normal(0.0, cfg.init_std, size=(n, cfg.dim))
	embedding = Embedding(Z)
	alpha_sch, tau_sch = schedules(cfg)

	table = None
	try:
		for epoch in range(cfg.n_epoch):
			alpha, tau = alpha_sch.value(epoch), tau_sch.value(epoch)
			if table is None or table.tau != tau:
				table = membership(D, tau)
			_, loss = sgd_epoch(Z, table, cfg, alpha, rng, k)
			embedding.losses.append(loss)
			logger.info('epoch %d/%d alpha=%.4g tau=%.4g loss=%.6g', epoch + 1, cfg.n_epoch, alpha, tau, loss)
			if callback is not None:
				callback(epoch, Z)
	except GlomapError as exc:
		raise StageError('optimize', exc) from exc
	return embedding


def lambda_sweep(source, cfg, values, callback=None):
	"""One embedding per negative weight, sharing a single distance matrix."""
	D = resolve_distances(source, cfg)
	results = {}
	for value in values:
		logger.info('lambda_e sweep: %.4g', value)
		results[value] = fit_transductive(D, replace(cfg, lambda_e=value), callback)
	return results
