import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import glomap.transductive as transductive
from glomap.affinity import DEFAULT_KERNEL, EmbedKernelParams, MembershipTable, membership
from glomap.data import gen_scurve
from glomap.errors import ConfigError, DataError
from glomap.geodesic import GlobalDistanceMatrix
from glomap.transductive import (
	FitConfig, Schedule, fit_transductive, full_terms, iterations_per_epoch, lambda_sweep, loss_full,
	loss_stochastic, particle_step, schedules, sgd_epoch, stochastic_terms,
)


def toy_table(rng, n, tau=1.0):
	X = rng.normal(size=(n, 2))
	values = np.linalg.norm(X[:, None] - X[None], axis=-1)
	return membership(GlobalDistanceMatrix(values, np.zeros(n, dtype=np.int64)), tau)


def quick_config(**overrides):
	values = dict(n_epoch=3, batch=20, n_neighbors=6, seed=11)
	values.update(overrides)
	return FitConfig(**values)


# ----------------------------------------------------------------------------#
# Losses.
# ----------------------------------------------------------------------------#

def test_empty_memberships_without_repulsion():
	table = MembershipTable(np.zeros((3, 3)), np.zeros(3), 1.0)
	assert loss_full(np.random.default_rng(0).normal(size=(3, 2)), table, 0.0, DEFAULT_KERNEL) == 0.0


def test_full_loss_by_hand():
	k = EmbedKernelParams(1.0, 1.0)
	mu = np.array([[0.0, 0.5, 0.2], [0.5, 0.0, 0.1], [0.2, 0.1, 0.0]])
	table = MembershipTable(mu, mu.sum(axis=1), 1.0)
	Z = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
	r2 = {(0, 1): 1.0, (0, 2): 4.0, (1, 2): 5.0}
	expected = 0.0
	for (i, j), d2 in r2.items():
		q = 1.0 / (1.0 + d2)
		expected += 2 * (-mu[i, j] * math.log(q) - 0.7 * (1 - mu[i, j]) * math.log(1 - q))
	assert loss_full(Z, table, 0.7, k) == pytest.approx(expected, abs=1e-12)


def test_minibatch_estimator_is_unbiased():
	rng = np.random.default_rng(5)
	n, m = 5, 2
	table = toy_table(rng, n)
	Z = rng.normal(size=(n, 2))
	probs = table.mu / table.row_sums[:, None]

	positive = negative = 0.0
	for S in itertools.product(range(n), repeat=m):
		for J in itertools.product(range(n), repeat=m):
			weight = np.prod([probs[s, j] for s, j in zip(S, J)]) / n ** m
			if weight == 0:
				continue
			pos, neg = stochastic_terms(np.array(S), np.array(J), Z, table, DEFAULT_KERNEL)
			positive += weight * pos
			negative += weight * neg

	full_pos, full_neg = full_terms(Z, table, DEFAULT_KERNEL)
	assert positive * n / m == pytest.approx(full_pos, abs=1e-10)
	assert negative * n ** 2 / (m * (m - 1)) == pytest.approx(full_neg, abs=1e-10)


def test_repeated_batch_ids_do_not_repel(rng):
	table = toy_table(rng, 4)
	Z = rng.normal(size=(4, 2))
	_, negative = stochastic_terms(np.array([1, 1]), np.array([0, 2]), Z, table, DEFAULT_KERNEL)
	assert negative == 0.0


def test_stochastic_loss_combines_terms(rng):
	table = toy_table(rng, 6)
	Z = rng.normal(size=(6, 2))
	S, J = np.array([0, 3, 5]), np.array([1, 2, 4])
	pos, neg = stochastic_terms(S, J, Z, table, DEFAULT_KERNEL)
	assert loss_stochastic(S, J, Z, table, 0.3, DEFAULT_KERNEL) == pytest.approx(pos + 0.3 * neg)
	pos_approx, neg_approx = stochastic_terms(S, J, Z, table, DEFAULT_KERNEL, neg_approx=True)
	assert pos_approx == pos and neg_approx > neg


def test_loss_ignores_translation(rng):
	table = toy_table(rng, 7)
	Z = rng.normal(size=(7, 2))
	assert_allclose(loss_full(Z + np.array([3.0, -8.0]), table, 1.0, DEFAULT_KERNEL),
		loss_full(Z, table, 1.0, DEFAULT_KERNEL), rtol=1e-12)


# ----------------------------------------------------------------------------#
# Particle moves.
# ----------------------------------------------------------------------------#

def test_zero_step_leaves_particles(rng):
	table = toy_table(rng, 10)
	Z = rng.normal(size=(10, 2))
	before = Z.copy()
	S = np.array([0, 4, 7])
	particle_step(Z, S, np.array([1, 2, 3]), S, table.mu[np.ix_(S, S)], table.row_sums[S], 0.0, 1.0, 4.0, DEFAULT_KERNEL)
	assert_array_equal(Z, before)


def test_attraction_pulls_a_pair_together():
	Z = np.array([[0.0, 0.0], [1.0, 0.0]])
	particle_step(Z, np.array([0]), np.array([1]), np.array([0]), np.zeros((1, 1)), np.array([1.0]),
		0.1, 0.0, 4.0, DEFAULT_KERNEL)
	assert np.linalg.norm(Z[0] - Z[1]) < 1.0


@pytest.mark.parametrize('lambda_e, weight', [(0.0, 1.0), (1.0, 0.0)])
def test_each_phase_is_clipped(rng, lambda_e, weight):
	n, alpha, clip = 30, 0.5, 4.0
	Z = rng.normal(0.0, 1e-4, size=(n, 2))
	before = Z.copy()
	S = rng.integers(0, n, size=20)
	J = rng.integers(0, n, size=20)
	mu_block = np.zeros((20, 20))
	particle_step(Z, S, J, S, mu_block, np.full(20, 50.0 * weight), alpha, lambda_e, clip, DEFAULT_KERNEL)
	assert np.abs(Z - before).max() <= alpha * clip + 1e-12


def test_step_reports_the_minibatch_loss(rng):
	table = toy_table(rng, 8)
	Z = rng.normal(size=(8, 2))
	S, J = np.array([0, 2, 5, 6]), np.array([1, 3, 4, 7])
	expected = loss_stochastic(S, J, Z, table, 0.8, DEFAULT_KERNEL)
	got = particle_step(Z.copy(), S, J, S, table.mu[np.ix_(S, S)], table.row_sums[S], 0.1, 0.8, 4.0, DEFAULT_KERNEL)
	assert got == pytest.approx(expected)


def test_epoch_runs_ceil_n_over_m_steps(monkeypatch, rng):
	calls = []
	real = transductive.particle_step

	def counting(*args):
		calls.append(1)
		return real(*args)

	monkeypatch.setattr(transductive, 'particle_step', counting)
	table = toy_table(rng, 50)
	sgd_epoch(rng.normal(size=(50, 2)), table, quick_config(), 1.0, rng)
	assert len(calls) == iterations_per_epoch(50, 20) == 3


# ----------------------------------------------------------------------------#
# Schedules and config.
# ----------------------------------------------------------------------------#

def test_geometric_schedule_endpoints():
	s = Schedule('geometric', 1.0, 0.1, 300)
	values = list(s)
	assert values[0] == 1.0 and values[-1] == 0.1
	assert all(a >= b for a, b in zip(values, values[1:]))


def test_decay_schedule():
	s = Schedule.decay(1.0, 0.98, 300)
	assert s.value(1) == pytest.approx(0.98)
	assert s.value(299) == pytest.approx(0.98 ** 299)


def test_linear_and_constant_schedules():
	assert Schedule('linear', 2.0, 1.0, 3).value(1) == pytest.approx(1.5)
	assert set(Schedule.constant(0.1, 5)) == {0.1}
	with pytest.raises(ConfigError):
		Schedule('cosine', 1.0, 0.1, 10)
	with pytest.raises(ConfigError):
		Schedule('constant', 1.0, 0.5, 10)


def test_fixed_tau_disables_tempering():
	_, tau = schedules(FitConfig(fixed_tau=0.1, n_epoch=10))
	assert set(tau) == {0.1}


@pytest.mark.parametrize('overrides', [
	{'tau_start': 0.1, 'tau_end': 1.0},
	{'batch': 1},
	{'n_epoch': 0},
	{'lambda_e': -1.0},
	{'fixed_tau': 0.0},
])
def test_config_validation(overrides):
	with pytest.raises(ConfigError):
		FitConfig(**overrides)


# ----------------------------------------------------------------------------#
# Fitting.
# ----------------------------------------------------------------------------#

def test_fit_is_deterministic(small_scurve):
	first = fit_transductive(small_scurve, quick_config())
	second = fit_transductive(small_scurve, quick_config())
	assert_array_equal(first.Z, second.Z)
	assert first.Z.shape == (200, 2)
	assert np.isfinite(first.Z).all()


def test_loss_decreases_early():
	data = gen_scurve(100, seed=0)
	embedding = fit_transductive(data, FitConfig(n_epoch=10, batch=20, n_neighbors=10, fixed_tau=1.0, seed=2))
	assert len(embedding.losses) == 10
	assert np.mean(embedding.losses[-3:]) < embedding.losses[0]


def test_callback_sees_every_epoch(small_scurve):
	seen = []
	fit_transductive(small_scurve, quick_config(), lambda epoch, Z: seen.append((epoch, Z.shape)))
	assert seen == [(0, (200, 2)), (1, (200, 2)), (2, (200, 2))]


def test_fit_variants_run(small_scurve):
	for cfg in (quick_config(neg_approx=True), quick_config(k_tilde=30), quick_config(dim=3, fixed_tau=0.5)):
		Z = fit_transductive(small_scurve, cfg).Z
		assert Z.shape == (200, cfg.dim)
		assert np.isfinite(Z).all()


def test_too_few_points():
	with pytest.raises(DataError):
		fit_transductive(gen_scurve(15, seed=0), quick_config())


def test_lambda_sweep_shares_distances(small_scurve):
	results = lambda_sweep(small_scurve, quick_config(n_epoch=2), [0.5, 2.0])
	assert sorted(results) == [0.5, 2.0]
	assert not np.array_equal(results[0.5].Z, results[2.0].Z)
