# ----------------------------------------------------------------------------#
# Imports
# ----------------------------------------------------------------------------#

import csv
import functools
import glob
import os
import re
import sys

import click
import logging
from logging import Formatter, FileHandler, StreamHandler

import config
from forms import METRIC_NAMES, EvaluationForm, load_run_config, parse_grid, write_config_echo
from glomap.data import GENERATORS, generate, load_matrix, save_embedding, save_matrix, train_test_split
from glomap.errors import ConfigError, DataError, GlomapError
from glomap.geodesic import global_distances, load_distances, save_distances, truncate_ktilde
from glomap.inductive import fit_inductive, load_mapper, save_mapper, transform
from glomap.metrics import (
	MetricReport, distance_correlation, dtm_kl, knn_accuracy_sweep, sampled_pair_count, silhouette,
	trustworthiness,
)
from glomap.plotting import Panel, render_panels, write_svg
from glomap.transductive import fit_transductive, lambda_sweep

logger = logging.getLogger('glomap')


# ----------------------------------------------------------------------------#
# Utils
# ----------------------------------------------------------------------------#

def setup_logging(out_dir):
	for handler in list(logger.handlers):
		logger.removeHandler(handler)
		handler.close()
	level = logging.DEBUG if config.DEBUG else logging.INFO
	formatter = Formatter('%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]')
	file_handler = FileHandler(os.path.join(out_dir, config.LOG_FILE))
	file_handler.setFormatter(formatter)
	file_handler.setLevel(level)
	stream_handler = StreamHandler(sys.stderr)
	stream_handler.setFormatter(Formatter('%(levelname)s: %(message)s'))
	stream_handler.setLevel(level)
	logger.setLevel(level)
	logger.addHandler(file_handler)
	logger.addHandler(stream_handler)


def surface_errors(command):
	@functools.wraps(command)
	def wrapper(*args, **kwargs):
		try:
			return command(*args, **kwargs)
		except GlomapError as exc:
			logger.error('%s', exc)
			raise click.ClickException(str(exc)) from exc
		except OSError as exc:
			raise click.ClickException(f'{exc.filename or ""}: {exc.strerror or exc}') from exc
	return wrapper


def setting(name, minimum):
	"""An integer environment setting from config, at least minimum."""
	raw = getattr(config, name)
	try:
		value = int(str(raw).strip())
	except ValueError:
		raise ConfigError(f'{name} must be an integer, got {raw!r}') from None
	if value < minimum:
		raise ConfigError(f'{name} must be at least {minimum}, got {value}')
	return value


def ensure_dir(path):
	os.makedirs(path, exist_ok=True)
	return path


def load_data(form):
	if form.input.data:
		return load_matrix(form.input.data)
	return generate(form.dataset.data, form.n.data, form.seed.data)


def distances_for(data, cfg, cache_path):
	"""Full geodesic distances, read from / written to cache_path when given."""
	if cache_path and os.path.exists(cache_path):
		D = load_distances(cache_path, cfg.distance_settings)
		if D.n != data.n:
			raise DataError(f'{cache_path} holds {D.n} points, the data has {data.n}')
		logger.info('distances loaded from %s', cache_path)
	else:
		D = global_distances(
			data.points, cfg.n_neighbors, scale_rule=cfg.scale_rule,
			median_target=cfg.median_target, n_jobs=cfg.n_jobs,
		)
		if cache_path:
			save_distances(cache_path, D, cfg.distance_settings)
			logger.info('distances cached at %s', cache_path)
	return truncate_ktilde(D, cfg.k_tilde) if cfg.k_tilde else D


def checkpoint_writer(out_dir, every, n_epoch, data, embed):
	if not every:
		return None
	folder = ensure_dir(os.path.join(out_dir, 'checkpoints'))

	def write(epoch, state):
		if (epoch + 1) % every and epoch + 1 != n_epoch:
			return
		save_embedding(
			os.path.join(folder, f'epoch_{epoch + 1:04d}.csv'), embed(state), data.labels, data.coords2d,
		)
	return write


def write_losses(path, losses):
	with open(path, 'w', newline='') as fh:
		writer = csv.writer(fh, lineterminator='\n')
		writer.writerow(['epoch', 'loss'])
		for epoch, loss in enumerate(losses, 1):
			writer.writerow([epoch, repr(loss)])


def color_column(m, name):
	if not name:
		return None
	if name in m.labels:
		return m.labels[name]
	match = re.fullmatch(r'coord:([01])', name)
	if match and m.coords2d is not None:
		return m.coords2d[:, int(match.group(1))]
	raise click.ClickException(f'no color column {name!r}; labels: {", ".join(m.labels) or "none"}')


# ----------------------------------------------------------------------------#
# App Config.
# ----------------------------------------------------------------------------#

@click.group()
def app():
	"""Global-and-local manifold embeddings from the command line."""


# ----------------------------------------------------------------------------#
# Commands.
# ----------------------------------------------------------------------------#

#  Generate
#  ----------------------------------------------------------------

@app.command('generate')
@click.option('--dataset', required=True, type=click.Choice(sorted(GENERATORS)))
@click.option('--n', type=int, default=None, help='Number of points (generator default when omitted).')
@click.option('--seed', type=int, default=0)
@click.option('--test-fraction', type=float, default=0.0, help='Also write a seeded train/test split.')
@click.option('--out', type=click.Path(file_okay=False), default='out')
@surface_errors
def cmd_generate(dataset, n, seed, test_fraction, out):
	ensure_dir(out)
	setup_logging(out)
	if dataset == 'eggs' and n is not None:
		logger.warning('eggs has a fixed size; --n is ignored')
	data = generate(dataset, n, seed)
	path = os.path.join(out, f'{dataset}.csv')
	save_matrix(path, data)
	logger.info('%s: %d x %d written to %s', dataset, data.n, data.p, path)
	if test_fraction:
		train, test = train_test_split(data, test_fraction, seed)
		save_matrix(os.path.join(out, f'{dataset}_train.csv'), train)
		save_matrix(os.path.join(out, f'{dataset}_test.csv'), test)
		logger.info('split into %d train and %d test rows', train.n, test.n)


#  Fit
#  ----------------------------------------------------------------

@app.command('fit')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--dataset', type=click.Choice(sorted(GENERATORS)), default=None)
@click.option('--input', 'input_path', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--n', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--method', type=click.Choice(['glomap', 'iglomap']), default=None)
@click.option('--epochs', type=int, default=None)
@click.option('--batch', type=int, default=None)
@click.option('--k', type=int, default=None)
@click.option('--k-tilde', type=int, default=None)
@click.option('--lambda-e', type=float, default=None)
@click.option('--tau-start', type=float, default=None)
@click.option('--tau-end', type=float, default=None)
@click.option('--fixed-tau', type=float, default=None)
@click.option('--alpha0', type=float, default=None)
@click.option('--clip', type=float, default=None)
@click.option('--dim', type=int, default=None)
@click.option('--neg-approx', is_flag=True, default=None)
@click.option('--out', type=click.Path(file_okay=False), default=None)
@click.option('--checkpoint-every', type=int, default=None)
@click.option('--distance-cache', type=click.Path(dir_okay=False), default=None)
@click.option('--sweep-lambda-e', default=None, help='Comma separated negative weights.')
@surface_errors
def cmd_fit(config_path, input_path, **options):
	# an absent flag must not override a config file value
	options['neg_approx'] = options['neg_approx'] or None
	form = load_run_config(config_path, dict(options, input=input_path))
	out = ensure_dir(form.out.data)
	setup_logging(out)
	cfg = form.to_fit_config(setting('GLOMAP_THREADS', 1))
	every = form.checkpoint_every.data
	every = setting('CHECKPOINT_EVERY', 0) if every is None else every
	write_config_echo(os.path.join(out, 'run.cfg'), form)

	sweep = parse_grid(form.sweep_lambda_e.data)
	if sweep and form.method.data != 'glomap':
		raise click.UsageError('--sweep-lambda-e is only available for --method glomap')

	data = load_data(form)
	logger.info('fitting %s on %d x %d points for %d epochs', form.method.data, data.n, data.p, cfg.n_epoch)
	D = distances_for(data, cfg, form.distance_cache.data)

	if sweep:
		for value, embedding in lambda_sweep(D, cfg, sweep).items():
			save_embedding(os.path.join(out, f'embedding_lambda_{value:g}.csv'), embedding, data.labels, data.coords2d)
		return

	if form.method.data == 'glomap':
		callback = checkpoint_writer(out, every, cfg.n_epoch, data, lambda Z: Z)
		embedding = fit_transductive(D, cfg, callback)
		Z, losses = embedding.Z, embedding.losses
	else:
		callback = checkpoint_writer(out, every, cfg.n_epoch, data, lambda mapper: transform(mapper, data.points))
		mapper = fit_inductive(data.points, D, cfg, callback)
		save_mapper(os.path.join(out, 'mapper.glmq'), mapper)
		Z, losses = transform(mapper, data.points), mapper.losses
	save_embedding(os.path.join(out, 'embedding.csv'), Z, data.labels, data.coords2d)
	write_losses(os.path.join(out, 'losses.csv'), losses)
	logger.info('embedding written to %s', out)


#  Transform
#  ----------------------------------------------------------------

@app.command('transform')
@click.option('--mapper', 'mapper_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--input', 'input_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@surface_errors
def cmd_transform(mapper_path, input_path, out):
	setup_logging(ensure_dir(os.path.dirname(os.path.abspath(out))))
	mapper = load_mapper(mapper_path)
	data = load_matrix(input_path)
	save_embedding(out, transform(mapper, data.points), data.labels, data.coords2d)
	logger.info('%d rows mapped to %s', data.n, out)


#  Evaluate
#  ----------------------------------------------------------------

@app.command('evaluate')
@click.option('--embedding', 'embedding_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--data', 'data_path', type=click.Path(exists=True, dir_okay=False), default=None,
	help='Original data CSV (input space, labels, generating coordinates).')
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
	help='Config file; a fit run.cfg works too.')
@click.option('--metrics', default=None, help=f'Comma separated subset of {", ".join(METRIC_NAMES)}.')
@click.option('--sigma-grid', default=None, help='DTM-KL bandwidths, e.g. `0.1, 1, 10`.')
@click.option('--knn-grid', default=None, help='KNN accuracy K values, e.g. `1..50`.')
@click.option('--trust-k', type=int, default=None)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@surface_errors
def cmd_evaluate(config_path, embedding_path, data_path, out, **options):
	form = load_run_config(config_path, options, EvaluationForm)
	knn_grid = parse_grid(form.knn_grid.data, int)
	sigma_grid = parse_grid(form.sigma_grid.data)
	trust_k = form.trust_k.data
	setup_logging(ensure_dir(os.path.dirname(os.path.abspath(out))))
	embedded = load_matrix(embedding_path)
	reference = load_matrix(data_path) if data_path else None
	if reference is not None and reference.n != embedded.n:
		raise click.ClickException(f'{data_path} has {reference.n} rows, {embedding_path} has {embedded.n}')
	Z = embedded.points
	labels = embedded.labels or (reference.labels if reference is not None else {})
	coords = embedded.coords2d if embedded.coords2d is not None else getattr(reference, 'coords2d', None)

	available = {
		'knn': bool(labels),
		'silhouette': bool(labels),
		'dtm_kl': coords is not None,
		'distance_correlation': coords is not None,
		'trustworthiness': reference is not None,
	}
	requested = parse_grid(form.metrics.data, str) or [name for name in METRIC_NAMES if available[name]]
	for name in requested:
		if not available[name]:
			raise click.ClickException(f'metric {name} needs reference columns the inputs do not have')

	report = MetricReport()
	if 'knn' in requested:
		for level, vector in labels.items():
			for K, value in knn_accuracy_sweep(Z, vector, knn_grid).items():
				report.add('knn_accuracy', value, f'{level}:K={K}')
	if 'silhouette' in requested:
		for level, vector in labels.items():
			report.add('silhouette', silhouette(Z, vector), level)
	if 'dtm_kl' in requested:
		for sigma in sigma_grid:
			report.add('dtm_kl', dtm_kl(coords, Z, sigma), f'sigma={sigma:g}')
	if 'distance_correlation' in requested:
		report.add('distance_correlation', distance_correlation(coords, Z), f'pairs={sampled_pair_count(len(Z))}')
	if 'trustworthiness' in requested:
		report.add('trustworthiness', trustworthiness(reference.points, Z, trust_k), f'K={trust_k}')
	report.to_csv(out)
	logger.info('%d metric values written to %s', len(report.entries), out)


#  Plot
#  ----------------------------------------------------------------

@app.command('plot')
@click.option('--embedding', 'embedding_path', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--checkpoints', 'checkpoint_dir', type=click.Path(exists=True, file_okay=False), default=None)
@click.option('--color', default=None, help='Label name or coord:0 / coord:1.')
@click.option('--columns', type=int, default=None)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
@surface_errors
def cmd_plot(embedding_path, checkpoint_dir, color, columns, out):
	setup_logging(ensure_dir(os.path.dirname(os.path.abspath(out))))
	if bool(embedding_path) == bool(checkpoint_dir):
		raise click.UsageError('pass exactly one of --embedding or --checkpoints')
	if embedding_path:
		paths = [embedding_path]
	else:
		paths = sorted(glob.glob(os.path.join(checkpoint_dir, 'epoch_*.csv')))
		if not paths:
			raise click.ClickException(f'no epoch_*.csv checkpoints in {checkpoint_dir}')
	panels = []
	for path in paths:
		m = load_matrix(path)
		match = re.search(r'epoch_(\d+)', os.path.basename(path))
		title = f'epoch {int(match.group(1))}' if match and checkpoint_dir else ''
		panels.append(Panel(m.points, color_column(m, color), title))
	write_svg(out, render_panels(panels, columns))


# ----------------------------------------------------------------------------#
# Launch.
# ----------------------------------------------------------------------------#

if __name__ == '__main__':
	app()
