import logging
import os
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from .errors import DataError

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.join(os.path.abspath(os.path.dirname(__file__)), 'templates')
PANEL_SIZE = 320
MARGIN = 24
POINT_RADIUS = 1.6
LEGEND_WIDTH = 110
SINGLE_COLOR = '#1f77b4'
# tab10
PALETTE = (
	'#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd',
	'#8c564b', '#e377c2', '#7f7f7f', '#bcbd22', '#17becf',
)
# viridis sampled at 0, 0.25, 0.5, 0.75, 1
COLORMAP = np.array([
	[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=np.float64)

env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=select_autoescape(['svg']))


@dataclass
class Panel:
	Z: np.ndarray
	color: Optional[np.ndarray] = None
	title: str = ''


# ----------------------------------------------------------------------------#
# Colors.
# ----------------------------------------------------------------------------#

def _hex(rgb):
	return '#%02x%02x%02x' % tuple(int(round(c)) for c in rgb)


def continuous_colors(values):
	values = np.asarray(values, dtype=np.float64)
	span = values.max() - values.min() if values.size else 0.0
	t = (values - values.min()) / span if span > 0 else np.zeros_like(values)
	position = t * (len(COLORMAP) - 1)
	low = np.minimum(np.floor(position).astype(int), len(COLORMAP) - 2)
	frac = (position - low)[:, None]
	rgb = COLORMAP[low] * (1 - frac) + COLORMAP[low + 1] * frac
	return [_hex(c) for c in rgb]


def categorical_colors(labels):
	classes, codes = np.unique(np.asarray(labels), return_inverse=True)
	colors = [PALETTE[c % len(PALETTE)] for c in codes]
	legend = [{'label': str(label), 'color': PALETTE[i % len(PALETTE)]} for i, label in enumerate(classes)]
	return colors, legend


def colors_for(values):
	"""Integer columns are categories, float columns a continuous scale."""
	if values is None:
		return None, []
	values = np.asarray(values)
	if np.issubdtype(values.dtype, np.integer):
		return categorical_colors(values)
	return continuous_colors(values), []


# ----------------------------------------------------------------------------#
# Rendering.
# ----------------------------------------------------------------------------#

def _project(Z, size):
	low, high = Z.min(axis=0), Z.max(axis=0)
	span = np.where(high - low > 0, high - low, 1.0).max()
	center = (low + high) / 2
	inner = size - 2 * 8
	x = size / 2 + (Z[:, 0] - center[0]) / span * inner
	# svg y grows downwards
	y = size / 2 - (Z[:, 1] - center[1]) / span * inner
	return x, y


def render_panels(panels: List[Panel], columns=None):
	if not panels:
		raise DataError('nothing to plot')
	columns = columns or min(len(panels), 4)
	rows = -(-len(panels) // columns)
	legend = []
	rendered = []
	for index, panel in enumerate(panels):
		Z = np.asarray(panel.Z, dtype=np.float64)
		if Z.ndim != 2 or Z.shape[1] != 2:
			raise DataError(f'only 2-D embeddings can be plotted, got shape {Z.shape}')
		colors, panel_legend = colors_for(panel.color)
		legend = legend or panel_legend
		points = []
		if Z.shape[0]:
			x, y = _project(Z, PANEL_SIZE)
			for k in range(Z.shape[0]):
				points.append({
					'x': f'{x[k]:.2f}', 'y': f'{y[k]:.2f}',
					'color': colors[k] if colors else SINGLE_COLOR,
				})
		rendered.append({
			'x': MARGIN + (index % columns) * (PANEL_SIZE + MARGIN),
			'y': MARGIN + (index // columns) * (PANEL_SIZE + MARGIN),
			'size': PANEL_SIZE,
			'title': panel.title,
			'points': points,
		})

	grid_width = MARGIN + columns * (PANEL_SIZE + MARGIN)
	return env.get_template('scatter.svg').render(
		panels=rendered,
		legend=legend,
		legend_x=grid_width,
		margin=MARGIN,
		radius=POINT_RADIUS,
		width=grid_width + (LEGEND_WIDTH if legend else 0),
		height=MARGIN + rows * (PANEL_SIZE + MARGIN),
	)


def render_scatter(Z, color=None, title=''):
	return render_panels([Panel(Z, color, title)])


def write_svg(path, svg):
	with open(path, 'w', newline='\n') as fh:
		fh.write(svg)
	logger.info('plot written to %s', path)
