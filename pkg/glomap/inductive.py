"""
Inductive embedding: a feed-forward mapper trained by moving its outputs with
the transductive particle step and regressing it onto the moved particles.
"""
import logging
import struct
from collections import OrderedDict

import numpy as np

from .affinity import membership, pair_membership, sample_neighbors
from .errors import GlomapError, InductiveError, StageError
from .transductive import FitConfig, resolve_distances, iterations_per_epoch, particle_step, schedules

logger = logging.getLogger(__name__)

MAPPER_MAGIC = b'GLMQ'
MAPPER_VERSION = 1
_HEADER = struct.Struct('<4sII')
_FLOATS = struct.Struct('<dd')


# ----------------------------------------------------------------------------#
# Mapper.
# ----------------------------------------------------------------------------#

class Mapper:
	"""
	(linear -> batch norm -> ReLU) for every hidden width, then a final linear
	layer to the embedding dimension. Weights are stored (fan_in, fan_out).
	"""

	def __init__(self, n_in, dim=2, hidden=(128, 128, 128), seed=0, momentum=0.1, eps=1e-5):
		if n_in < 1 or dim < 1 or any(h < 1 for h in hidden):
			raise InductiveError(f'layer widths must be positive, got {(n_in, *hidden, dim)}')
		self.dims = (int(n_in), *(int(h) for h in hidden), int(dim))
		self.momentum = float(momentum)
		self.eps = float(eps)
		self.training = True
		self.params = OrderedDict()
		self.running_mean = []
		self.running_var = []
		self.losses = []
		self._cache = None

		rng = np.random.default_rng(seed)
		for layer, (fan_in, fan_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
			bound = 1.0 / np.sqrt(fan_in)
			self.params[f'W{layer}'] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
			self.params[f'b{layer}'] = rng.uniform(-bound, bound, size=fan_out)
			if layer < self.n_hidden:
				self.params[f'gamma{layer}'] = np.ones(fan_out)
				self.params[f'beta{layer}'] = np.zeros(fan_out)
				self.running_mean.append(np.zeros(fan_out))
				self.running_var.append(np.ones(fan_out))

	@property
	def n_hidden(self):
		return len(self.dims) - 2

	@property
	def n_in(self):
		return self.dims[0]

	@property
	def dim(self):
		return self.dims[-1]

	def train(self):
		self.training = True
		return self

	def eval(self):
		self.training = False
		return self

	def _check_input(self, X):
		X = np.asarray(X, dtype=np.float64)
		if X.ndim != 2 or X.shape[1] != self.n_in:
			raise InductiveError(f'mapper expects {self.n_in} input columns, got shape {X.shape}')
		return X

	def forward(self, X):
		X = self._check_input(X)
		if self.training and X.shape[0] < 2:
			raise InductiveError('batch normalization needs at least 2 rows in train mode')
		cache = []
		a = X
		for layer in range(self.n_hidden):
			h = a @ self.params[f'W{layer}'] + self.params[f'b{layer}']
			if self.training:
				mean, var = h.mean(axis=0), h.var(axis=0)
				rows = h.shape[0]
				self.running_mean[layer] = (1 - self.momentum) * self.running_mean[layer] + self.momentum * mean
				self.running_var[layer] = (1 - self.momentum) * self.running_var[layer] \
					+ self.momentum * var * rows / (rows - 1)
			else:
				mean, var = self.running_mean[layer], self.running_var[layer]
			inv_std = 1.0 / np.sqrt(var + self.eps)
			xhat = (h - mean) * inv_std
			y = self.params[f'gamma{layer}'] * xhat + self.params[f'beta{layer}']
			cache.append((a, xhat, inv_std, y > 0))
			a = np.maximum(y, 0.0)
		last = self.n_hidden
		out = a @ self.params[f'W{last}'] + self.params[f'b{last}']
		cache.append((a,))
		self._cache = cache
		return out

	def backward(self, dZ):
		"""Parameter gradients of the last train-mode forward pass, given dL/dZ."""
		if self._cache is None:
			raise InductiveError('backward called before forward')
		dZ = np.asarray(dZ, dtype=np.float64)
		grads = {}
		last = self.n_hidden
		(a,) = self._cache[-1]
		grads[f'W{last}'] = a.T @ dZ
		grads[f'b{last}'] = dZ.sum(axis=0)
		da = dZ @ self.params[f'W{last}'].T

		for layer in reversed(range(self.n_hidden)):
			a, xhat, inv_std, active = self._cache[layer]
			dy = da * active
			grads[f'gamma{layer}'] = np.sum(dy * xhat, axis=0)
			grads[f'beta{layer}'] = dy.sum(axis=0)
			dxhat = dy * self.params[f'gamma{layer}']
			rows = dxhat.shape[0]
			if self.training:
				dh = inv_std / rows * (rows * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
			else:
				dh = dxhat * inv_std
			grads[f'W{layer}'] = a.T @ dh
			grads[f'b{layer}'] = dh.sum(axis=0)
			da = dh @ self.params[f'W{layer}'].T
		return grads


class AdamState:

	def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8, decay=0.98, reset_every=20):
		self.lr = lr
		self.beta1 = beta1
		self.beta2 = beta2
		self.eps = eps
		self.decay = decay
		self.reset_every = reset_every
		self.reset()

	def reset(self):
		self.m = {}
		self.v = {}
		self.t = 0

	def step(self, params, grads):
		self.t += 1
		for name, g in grads.items():
			if name not in self.m:
				self.m[name] = np.zeros_like(g)
				self.v[name] = np.zeros_like(g)
			self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
			self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
			m_hat = self.m[name] / (1 - self.beta1 ** self.t)
			v_hat = self.v[name] / (1 - self.beta2 ** self.t)
			params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

	def end_epoch(self, epoch):
		# epoch is 0-based; the learning rate survives a renewal
		self.lr *= self.decay
		if self.reset_every and (epoch + 1) % self.reset_every == 0:
			logger.info('epoch %d: adam moments renewed, lr=%.4g', epoch + 1, self.lr)
			self.reset()


# ----------------------------------------------------------------------------#
# Training.
# ----------------------------------------------------------------------------#

def fit_inductive(X, D=None, cfg=FitConfig(n_epoch=150), callback=None):
	"""
	Trains a Mapper on the points X. D is a precomputed distance matrix for X
	(built from X when omitted). callback(epoch, mapper) runs after every epoch.
	"""
	points = np.asarray(getattr(X, 'points', X), dtype=np.float64)
	D = resolve_distances(points, cfg) if D is None else D
	n = points.shape[0]
	if D.n != n:
		raise InductiveError(f'distance matrix covers {D.n} points but X has {n}')
	if n < cfg.batch:
		raise InductiveError(f'{n} points are fewer than the batch size {cfg.batch}')

	init_seed, train_seed = np.random.SeedSequence(cfg.seed).spawn(2)
	mapper = Mapper(points.shape[1], cfg.dim, cfg.hidden, init_seed, cfg.bn_momentum)
	rng = np.random.default_rng(train_seed)
	adam = AdamState(cfg.eta0, decay=cfg.eta_decay, reset_every=cfg.adam_reset)
	k = cfg.kernel
	m = cfg.batch
	heads, tails = np.arange(m), np.arange(m, 2 * m)
	alpha_sch, tau_sch = schedules(cfg)

	table = None
	try:
		for epoch in range(cfg.n_epoch):
			alpha, tau = alpha_sch.value(epoch), tau_sch.value(epoch)
			if table is None or table.tau != tau:
				table = membership(D, tau)
			mapper.train()
			losses = []
			for _ in range(iterations_per_epoch(n, m)):
				S = rng.integers(0, n, size=m)
				J = sample_neighbors(table, S, rng)
				Zb = mapper.forward(points[np.concatenate([S, J])])
				moved = Zb.copy()
				mu_block = None if cfg.neg_approx else pair_membership(table, S, S)
				losses.append(particle_step(
					moved, heads, tails, S, mu_block, table.row_sums[S], alpha, cfg.lambda_e, cfg.clip, k,
				))
				# moved particles are constants for the regression ||Zb - moved||^2
				adam.step(mapper.params, mapper.backward(2.0 * (Zb - moved)))
			mapper.losses.append(float(np.mean(losses)))
			logger.info(
				'epoch %d/%d alpha=%.4g tau=%.4g lr=%.4g loss=%.6g',
				epoch + 1, cfg.n_epoch, alpha, tau, adam.lr, mapper.losses[-1],
			)
			if callback is not None:
				callback(epoch, mapper)
			adam.end_epoch(epoch)
	except GlomapError as exc:
		raise StageError('optimize', exc) from exc
	return mapper.eval()


def transform(mapper, X_new):
	X = np.asarray(getattr(X_new, 'points', X_new), dtype=np.float64)
	if X.size == 0:
		return np.zeros((0, mapper.dim))
	was_training = mapper.training
	mapper.eval()
	try:
		return mapper.forward(X)
	finally:
		mapper.training = was_training


# ----------------------------------------------------------------------------#
# Serialization.
# ----------------------------------------------------------------------------#

def _f64(array):
	return np.ascontiguousarray(array, dtype='<f8').tobytes()


def save_mapper(path, mapper):
	n_layers = len(mapper.dims) - 1
	with open(path, 'wb') as fh:
		fh.write(_HEADER.pack(MAPPER_MAGIC, MAPPER_VERSION, n_layers))
		fh.write(np.asarray(mapper.dims, dtype='<u8').tobytes())
		fh.write(_FLOATS.pack(mapper.momentum, mapper.eps))
		for value in mapper.params.values():
			fh.write(_f64(value))
		for mean, var in zip(mapper.running_mean, mapper.running_var):
			fh.write(_f64(mean))
			fh.write(_f64(var))
	logger.info('mapper %s written to %s', 'x'.join(map(str, mapper.dims)), path)


def load_mapper(path):
	with open(path, 'rb') as fh:
		blob = fh.read()
	if len(blob) < _HEADER.size:
		raise InductiveError(f'{path}: truncated mapper file')
	magic, version, n_layers = _HEADER.unpack_from(blob)
	if magic != MAPPER_MAGIC:
		raise InductiveError(f'{path}: not a mapper file (magic {magic!r})')
	if version != MAPPER_VERSION:
		raise InductiveError(f'{path}: unsupported mapper version {version}')
	offset = _HEADER.size
	dims_end = offset + 8 * (n_layers + 1)
	if len(blob) < dims_end + _FLOATS.size:
		raise InductiveError(f'{path}: truncated mapper file')
	dims = np.frombuffer(blob, dtype='<u8', count=n_layers + 1, offset=offset).astype(int).tolist()
	momentum, eps = _FLOATS.unpack_from(blob, dims_end)
	offset = dims_end + _FLOATS.size

	mapper = Mapper(dims[0], dims[-1], tuple(dims[1:-1]), momentum=momentum, eps=eps)

	def take(shape):
		nonlocal offset
		count = int(np.prod(shape))
		if len(blob) < offset + 8 * count:
			raise InductiveError(f'{path}: truncated mapper file')
		values = np.frombuffer(blob, dtype='<f8', count=count, offset=offset).reshape(shape).astype(np.float64)
		offset += 8 * count
		return values

	for name, value in mapper.params.items():
		mapper.params[name] = take(value.shape)
	for layer in range(mapper.n_hidden):
		mapper.running_mean[layer] = take(mapper.running_mean[layer].shape)
		mapper.running_var[layer] = take(mapper.running_var[layer].shape)
	if offset != len(blob):
		raise InductiveError(f'{path}: {len(blob) - offset} trailing bytes')
	return mapper.eval()
