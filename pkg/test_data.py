import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_allclose

from glomap.data import (
	EGG_CENTERS, EGG_FLAT_POINTS, EGG_SHELL_POINTS, DataMatrix, GENERATORS, gen_eggs, gen_fishbowl,
	gen_hierarchical, gen_scurve, gen_severed_sphere, gen_spheres, generate, load_binary, load_matrix,
	save_binary, save_embedding, save_matrix, train_test_split,
)
from glomap.errors import DataError, ParseError


# ----------------------------------------------------------------------------#
# Generators.
# ----------------------------------------------------------------------------#

def test_scurve_lies_on_the_surface():
	m = gen_scurve(500, seed=1)
	t, u = m.coords2d[:, 0], m.coords2d[:, 1]
	assert m.points.shape == (500, 3)
	assert_allclose(m.points[:, 0], np.sin(t))
	assert_allclose(m.points[:, 1], u)
	assert_allclose(m.points[:, 2], np.sin(t) * (np.cos(t) - 1))
	assert t.min() >= -1.5 * np.pi and t.max() <= 1.5 * np.pi
	assert set(np.unique(m.labels['t_bin'])) <= set(range(10))


def test_generators_are_seeded():
	assert_array_equal(gen_scurve(100, seed=7).points, gen_scurve(100, seed=7).points)
	assert not np.array_equal(gen_scurve(100, seed=7).points, gen_scurve(100, seed=8).points)


def test_severed_sphere_cuts_the_band():
	m = gen_severed_sphere(400, seed=2)
	t = m.coords2d[:, 0]
	assert m.n == 400
	assert ((t > np.pi / 8) & (t < 7 * np.pi / 8)).all()
	assert_allclose(np.linalg.norm(m.points, axis=1), 1.0)


def test_eggs_counts_and_holes():
	m = gen_eggs(seed=0)
	egg = m.labels['egg']
	assert m.n == EGG_FLAT_POINTS + len(EGG_CENTERS) * EGG_SHELL_POINTS
	assert (egg == len(EGG_CENTERS)).sum() == EGG_FLAT_POINTS
	flat = m.points[egg == len(EGG_CENTERS)]
	gaps = np.linalg.norm(flat[:, None, :2] - EGG_CENTERS[None], axis=2)
	assert (gaps >= 1.0).all()
	assert_allclose(flat[:, 2], 0.0)
	shell = m.points[egg == 0]
	assert_allclose(np.linalg.norm(shell - np.append(EGG_CENTERS[0], 0.0), axis=1), 1.0)
	assert (shell[:, 2] >= 0).all()


def test_hierarchical_labels_nest():
	m = gen_hierarchical(points_per_micro=2, seed=0)
	assert m.points.shape == (250, 50)
	assert_array_equal(m.labels['meso'] // 5, m.labels['macro'])
	assert_array_equal(m.labels['micro'] // 5, m.labels['meso'])
	assert len(np.unique(m.labels['micro'])) == 125


def test_spheres_layout():
	m = gen_spheres(200, seed=0, dim=11)
	cluster = m.labels['cluster']
	assert (cluster == 10).sum() == 100
	assert_allclose(np.linalg.norm(m.points[cluster == 10], axis=1), 25.0)
	with pytest.raises(DataError):
		gen_spheres(210)


def test_fishbowl_height_cap():
	m = gen_fishbowl(300, gamma=0.5, seed=4)
	assert (m.points[:, 2] <= 0.5).all()
	assert_allclose(np.linalg.norm(m.points, axis=1), 1.0)


def test_generate_registry():
	assert set(GENERATORS) == {'scurve', 'severed_sphere', 'eggs', 'hierarchical', 'spheres', 'fishbowl'}
	assert generate('hierarchical', 250).n == 250
	with pytest.raises(DataError):
		generate('swissroll')
	with pytest.raises(DataError):
		generate('hierarchical', 100)


def test_train_test_split_partitions_rows():
	m = gen_scurve(100, seed=0)
	train, test = train_test_split(m, 0.2, seed=1)
	assert (train.n, test.n) == (80, 20)
	merged = np.sort(np.concatenate([train.points[:, 1], test.points[:, 1]]))
	assert_array_equal(merged, np.sort(m.points[:, 1]))


def test_datamatrix_validation():
	with pytest.raises(DataError):
		DataMatrix(np.array([[np.nan, 1.0]]))
	with pytest.raises(DataError):
		DataMatrix(np.zeros((3, 2)), labels={'a': [0, 1]})
	with pytest.raises(DataError):
		DataMatrix(np.zeros((3, 2)), coords2d=np.zeros((3, 3)))


# ----------------------------------------------------------------------------#
# Files.
# ----------------------------------------------------------------------------#

def test_csv_keeps_labels_and_coordinates(tmp_path):
	m = gen_scurve(50, seed=5)
	path = tmp_path / 'scurve.csv'
	save_matrix(path, m)
	back = load_matrix(path)
	assert_array_equal(back.points, m.points)
	assert_array_equal(back.coords2d, m.coords2d)
	assert_array_equal(back.labels['t_bin'], m.labels['t_bin'])


def test_embedding_csv_columns(tmp_path):
	path = tmp_path / 'z.csv'
	save_embedding(path, np.arange(6.0).reshape(3, 2), labels={'c': np.array([0, 1, 1])})
	assert path.read_text().splitlines()[0] == 'z0,z1,label:c'


@pytest.mark.parametrize('body, row', [
	('x0,x1\n1,2\n3\n', 1),
	('x0,x1\n1,2\n3,abc\n', 1),
	('x0,x1\n1,inf\n', 0),
	('x0,label:c\n1,0\n2,0.5\n', 1),
])
def test_malformed_rows_name_the_row(tmp_path, body, row):
	path = tmp_path / 'bad.csv'
	path.write_text(body)
	with pytest.raises(ParseError) as info:
		load_matrix(path)
	assert info.value.row == row
	assert str(info.value).startswith(f'row {row}:')


def test_header_only_file(tmp_path):
	path = tmp_path / 'empty.csv'
	path.write_text('x0,x1\n')
	with pytest.raises(ParseError):
		load_matrix(path)


def test_binary_cache_keeps_infinity(tmp_path):
	values = np.array([[0.0, 1.5, np.inf], [1.5, 0.0, np.inf], [np.inf, np.inf, 0.0]])
	path = tmp_path / 'd.glmx'
	save_binary(path, values)
	assert path.read_bytes()[:4] == b'GLMX'
	assert_array_equal(load_binary(path), values)


def test_binary_cache_rejects_bad_magic(tmp_path):
	path = tmp_path / 'd.glmx'
	path.write_bytes(b'XXXX' + bytes(16))
	with pytest.raises(ParseError):
		load_binary(path)
