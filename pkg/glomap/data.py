# ----------------------------------------------------------------------------#
# Imports
# ----------------------------------------------------------------------------#

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .errors import DataError, ParseError

logger = logging.getLogger(__name__)

LABEL_PREFIX = 'label:'
COORD_PREFIX = 'coord:'
BINARY_MAGIC = b'GLMX'
_BINARY_HEADER = struct.Struct('<4sQQ')

EGG_CENTERS = np.array([
	(-13.0, -2.0), (-13.0, 2.0), (-8.0, -2.0), (-3.0, 2.0), (2.0, 2.0), (7.0, -2.0),
	(12.0, 2.0), (-8.0, 2.0), (-3.0, -2.0), (2.0, -2.0), (7.0, 2.0), (12.0, -2.0),
])
EGG_SHELL_POINTS = 348
EGG_FLAT_POINTS = 1266
EGG_FLAT_DRAW = 2130


# ----------------------------------------------------------------------------#
# Models.
# ----------------------------------------------------------------------------#

@dataclass
class DataMatrix:
	"""
	Output Schema
		points: (n, p) float64
		labels: {level name: (n,) int64}, coarsest level first
		coords2d: (n, 2) float64 generating coordinates, or None
	"""
	points: np.ndarray
	labels: Dict[str, np.ndarray] = field(default_factory=dict)
	coords2d: Optional[np.ndarray] = None

	def __post_init__(self):
		self.points = np.asarray(self.points, dtype=np.float64)
		if self.points.ndim != 2 or self.points.shape[0] < 1 or self.points.shape[1] < 1:
			raise DataError(f'points must be a non-empty 2-D matrix, got shape {self.points.shape}')
		if not np.isfinite(self.points).all():
			raise DataError('points contain non-finite entries')
		n = self.points.shape[0]
		labels = {}
		for name, vector in self.labels.items():
			vector = np.asarray(vector, dtype=np.int64)
			if vector.shape != (n,):
				raise DataError(f'label vector {name!r} has length {vector.shape[0]}, expected {n}')
			labels[name] = vector
		self.labels = labels
		if self.coords2d is not None:
			self.coords2d = np.asarray(self.coords2d, dtype=np.float64)
			if self.coords2d.shape != (n, 2):
				raise DataError(f'coords2d must have shape ({n}, 2), got {self.coords2d.shape}')

	@property
	def n(self):
		return self.points.shape[0]

	@property
	def p(self):
		return self.points.shape[1]

	def subset(self, index):
		index = np.asarray(index)
		return DataMatrix(
			self.points[index],
			labels={name: vector[index] for name, vector in self.labels.items()},
			coords2d=None if self.coords2d is None else self.coords2d[index],
		)


# ----------------------------------------------------------------------------#
# Utils
# ----------------------------------------------------------------------------#

def _check_count(n):
	if int(n) != n or n < 1:
		raise DataError(f'n must be a positive integer, got {n}')
	return int(n)


def _quantize(values, low, high, bins=10):
	codes = np.floor((values - low) / (high - low) * bins).astype(np.int64)
	return np.clip(codes, 0, bins - 1)


def _sphere_surface(rng, count, dim):
	draws = rng.standard_normal((count, dim))
	return draws / np.linalg.norm(draws, axis=1, keepdims=True)


def _azimuthal(directions, polar):
	# polar angle 0 maps to the origin, azimuth preserved
	azimuth = np.arctan2(directions[:, 1], directions[:, 0])
	return np.column_stack([polar * np.cos(azimuth), polar * np.sin(azimuth)])


# ----------------------------------------------------------------------------#
# Generators.
# ----------------------------------------------------------------------------#

def gen_scurve(n=6000, seed=0):
	n = _check_count(n)
	rng = np.random.default_rng(seed)
	t = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, n)
	u = rng.uniform(0.0, 2.0, n)
	points = np.column_stack([np.sin(t), u, np.sin(t) * (np.cos(t) - 1.0)])
	return DataMatrix(
		points,
		labels={'t_bin': _quantize(t, -1.5 * np.pi, 1.5 * np.pi)},
		coords2d=np.column_stack([t, u]),
	)


def gen_severed_sphere(n=6000, seed=0):
	n = _check_count(n)
	rng = np.random.default_rng(seed)
	kept_t, kept_u, kept = [], [], 0
	while kept < n:
		u = rng.uniform(-0.55, 2 * np.pi - 0.55, n)
		t = rng.uniform(0.0, 2 * np.pi, n)
		mask = (t > np.pi / 8) & (t < 7 * np.pi / 8)
		kept_t.append(t[mask])
		kept_u.append(u[mask])
		kept += int(mask.sum())
	t = np.concatenate(kept_t)[:n]
	u = np.concatenate(kept_u)[:n]
	points = np.column_stack([np.sin(t) * np.cos(u), np.sin(t) * np.sin(u), np.cos(t)])
	return DataMatrix(
		points,
		labels={'u_bin': _quantize(u, -0.55, 2 * np.pi - 0.55)},
		coords2d=np.column_stack([t, u]),
	)


def gen_eggs(seed=0):
	"""
	A [-16, 16] x [-4, 4] plate with twelve unit holes, each capped by an
	open half-sphere. The plate keeps exactly EGG_FLAT_POINTS points, drawn
	in rounds of EGG_FLAT_DRAW uniform candidates.
	"""
	rng = np.random.default_rng(seed)
	flat, kept = [], 0
	while kept < EGG_FLAT_POINTS:
		xy = rng.uniform((-16.0, -4.0), (16.0, 4.0), size=(EGG_FLAT_DRAW, 2))
		gaps = np.linalg.norm(xy[:, None, :] - EGG_CENTERS[None, :, :], axis=2)
		xy = xy[(gaps >= 1.0).all(axis=1)]
		flat.append(xy)
		kept += xy.shape[0]
	flat = np.concatenate(flat)[:EGG_FLAT_POINTS]

	n_shell = EGG_CENTERS.shape[0] * EGG_SHELL_POINTS
	shell = _sphere_surface(rng, n_shell, 3)
	shell[:, 2] = np.abs(shell[:, 2])
	centers = np.repeat(EGG_CENTERS, EGG_SHELL_POINTS, axis=0)

	points = np.vstack([
		np.column_stack([flat, np.zeros(EGG_FLAT_POINTS)]),
		np.column_stack([centers + shell[:, :2], shell[:, 2]]),
	])
	# top of each egg lands on its hole center, the rim on the hole boundary
	polar = np.arccos(np.clip(shell[:, 2], -1.0, 1.0)) / (np.pi / 2)
	coords2d = np.vstack([flat, centers + _azimuthal(shell, polar)])
	egg = np.concatenate([
		np.full(EGG_FLAT_POINTS, EGG_CENTERS.shape[0]),
		np.repeat(np.arange(EGG_CENTERS.shape[0]), EGG_SHELL_POINTS),
	])
	return DataMatrix(points, labels={'egg': egg}, coords2d=coords2d)


def gen_hierarchical(points_per_micro=48, seed=0, branches=5, dim=50):
	points_per_micro = _check_count(points_per_micro)
	rng = np.random.default_rng(seed)
	b = branches
	macro = rng.normal(0.0, 100.0, (b, dim))
	meso = macro[:, None, :] + rng.normal(0.0, math.sqrt(1000.0), (b, b, dim))
	micro = meso[:, :, None, :] + rng.normal(0.0, 10.0, (b, b, b, dim))
	points = micro[:, :, :, None, :] + rng.normal(0.0, math.sqrt(10.0), (b, b, b, points_per_micro, dim))
	ids = np.indices((b, b, b, points_per_micro)).reshape(4, -1)
	return DataMatrix(
		points.reshape(-1, dim),
		labels={
			'macro': ids[0],
			'meso': ids[0] * b + ids[1],
			'micro': (ids[0] * b + ids[1]) * b + ids[2],
		},
	)


def gen_spheres(n=10000, seed=0, dim=101, outer_radius=25.0):
	n = _check_count(n)
	if n % 20:
		raise DataError(f'spheres needs n divisible by 20, got {n}')
	rng = np.random.default_rng(seed)
	per_inner = n // 20
	n_inner = 10
	centers = rng.normal(0.0, math.sqrt(0.5), (n_inner, dim))
	inner = np.repeat(centers, per_inner, axis=0) + _sphere_surface(rng, n_inner * per_inner, dim)
	outer = outer_radius * _sphere_surface(rng, n // 2, dim)
	cluster = np.concatenate([np.repeat(np.arange(n_inner), per_inner), np.full(n // 2, n_inner)])
	return DataMatrix(np.vstack([inner, outer]), labels={'cluster': cluster})


def gen_fishbowl(n=6000, gamma=0.9, seed=0):
	n = _check_count(n)
	if not -1.0 < gamma <= 1.0:
		raise DataError(f'fishbowl height must lie in (-1, 1], got {gamma}')
	rng = np.random.default_rng(seed)
	kept, count = [], 0
	while count < n:
		draws = _sphere_surface(rng, n, 3)
		draws = draws[draws[:, 2] <= gamma]
		kept.append(draws)
		count += draws.shape[0]
	points = np.concatenate(kept)[:n]
	polar = np.arccos(np.clip(-points[:, 2], -1.0, 1.0))
	return DataMatrix(
		points,
		labels={'height': _quantize(points[:, 2], -1.0, gamma)},
		coords2d=_azimuthal(points, polar),
	)


def _hierarchical_from_n(n, seed):
	if n % 125:
		raise DataError(f'hierarchical needs n divisible by 125, got {n}')
	return gen_hierarchical(n // 125, seed)


GENERATORS = {
	'scurve': (gen_scurve, 6000),
	'severed_sphere': (gen_severed_sphere, 6000),
	'eggs': (lambda n, seed: gen_eggs(seed), None),
	'hierarchical': (_hierarchical_from_n, 6000),
	'spheres': (gen_spheres, 10000),
	'fishbowl': (lambda n, seed: gen_fishbowl(n, seed=seed), 6000),
}


def generate(name, n=None, seed=0):
	if name not in GENERATORS:
		raise DataError(f'unknown dataset {name!r}; choose from {", ".join(sorted(GENERATORS))}')
	generator, default_n = GENERATORS[name]
	return generator(default_n if n is None else n, seed)


def train_test_split(m, test_fraction=0.2, seed=0):
	if not 0.0 < test_fraction < 1.0:
		raise DataError(f'test_fraction must lie in (0, 1), got {test_fraction}')
	order = np.random.default_rng(seed).permutation(m.n)
	n_test = int(round(m.n * test_fraction))
	if n_test < 1 or n_test >= m.n:
		raise DataError(f'cannot split {m.n} rows with test_fraction {test_fraction}')
	return m.subset(np.sort(order[n_test:])), m.subset(np.sort(order[:n_test]))


# ----------------------------------------------------------------------------#
# CSV files.
# ----------------------------------------------------------------------------#

def _write_table(path, columns, values, labels, coords2d):
	header = list(columns)
	blocks = [values]
	if coords2d is not None:
		header += [f'{COORD_PREFIX}0', f'{COORD_PREFIX}1']
		blocks.append(coords2d)
	table = np.column_stack(blocks)
	names = list(labels)
	header += [f'{LABEL_PREFIX}{name}' for name in names]
	with open(path, 'w', newline='', encoding='utf-8') as handle:
		writer = csv.writer(handle)
		writer.writerow(header)
		for i, row in enumerate(table):
			writer.writerow([repr(float(v)) for v in row] + [int(labels[name][i]) for name in names])


def save_matrix(path, m):
	_write_table(path, [f'x{k}' for k in range(m.p)], m.points, m.labels, m.coords2d)


def save_embedding(path, embedding, labels=None, coords2d=None):
	Z = np.asarray(getattr(embedding, 'Z', embedding), dtype=np.float64)
	if Z.ndim != 2:
		raise DataError(f'embedding must be 2-D, got shape {Z.shape}')
	_write_table(path, [f'z{k}' for k in range(Z.shape[1])], Z, labels or {}, coords2d)


def load_matrix(path):
	with open(path, newline='', encoding='utf-8') as handle:
		reader = csv.reader(handle)
		try:
			header = next(reader)
		except StopIteration:
			raise ParseError('empty file, expected a header row') from None
		header = [name.strip() for name in header]
		width = len(header)
		rows = []
		for row_index, row in enumerate(reader):
			if not row:
				continue
			if len(row) != width:
				raise ParseError(f'expected {width} cells, found {len(row)}', row=row_index)
			try:
				rows.append([float(cell) for cell in row])
			except ValueError:
				bad = next(cell for cell in row if not _is_number(cell))
				raise ParseError(f'non-numeric cell {bad!r}', row=row_index) from None
			if not all(math.isfinite(v) for v in rows[-1]):
				raise ParseError('non-finite cell', row=row_index)
	if not rows:
		raise ParseError('file has a header but no data rows')

	table = np.array(rows, dtype=np.float64)
	features = [k for k, name in enumerate(header) if not name.startswith((LABEL_PREFIX, COORD_PREFIX))]
	coords = [k for k, name in enumerate(header) if name.startswith(COORD_PREFIX)]
	labels = {}
	for k, name in enumerate(header):
		if name.startswith(LABEL_PREFIX):
			column = table[:, k]
			if not np.array_equal(column, np.round(column)):
				row = int(np.flatnonzero(column != np.round(column))[0])
				raise ParseError(f'label column {name!r} holds a non-integer', row=row)
			labels[name[len(LABEL_PREFIX):]] = column.astype(np.int64)
	if not features:
		raise ParseError('no feature columns in header')
	if coords and len(coords) != 2:
		raise ParseError(f'expected 2 {COORD_PREFIX} columns, found {len(coords)}')
	return DataMatrix(
		table[:, features],
		labels=labels,
		coords2d=table[:, coords] if coords else None,
	)


def _is_number(cell):
	try:
		float(cell)
	except ValueError:
		return False
	return True


# ----------------------------------------------------------------------------#
# Binary matrix cache.
# ----------------------------------------------------------------------------#

def save_binary(path, values):
	"""Little-endian f64 matrix behind a "GLMX" magic and u64 n, p. inf is stored as NaN."""
	values = np.array(values, dtype='<f8')
	if values.ndim != 2:
		raise DataError(f'binary cache holds 2-D matrices, got shape {values.shape}')
	values[np.isinf(values)] = np.nan
	with open(path, 'wb') as handle:
		handle.write(_BINARY_HEADER.pack(BINARY_MAGIC, values.shape[0], values.shape[1]))
		handle.write(np.ascontiguousarray(values).tobytes())


def load_binary(path):
	with open(path, 'rb') as handle:
		header = handle.read(_BINARY_HEADER.size)
		if len(header) != _BINARY_HEADER.size:
			raise ParseError('truncated GLMX header')
		magic, n, p = _BINARY_HEADER.unpack(header)
		if magic != BINARY_MAGIC:
			raise ParseError(f'bad magic {magic!r}, expected {BINARY_MAGIC!r}')
		values = np.frombuffer(handle.read(), dtype='<f8')
	if values.size != n * p:
		raise ParseError(f'GLMX body holds {values.size} values, header says {n}x{p}')
	values = values.reshape(n, p).astype(np.float64)
	values[np.isnan(values)] = np.inf
	return values
