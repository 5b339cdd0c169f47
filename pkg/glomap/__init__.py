from .data import DataMatrix, generate, load_matrix, save_embedding, save_matrix
from .errors import GlomapError
from .geodesic import global_distances
from .inductive import Mapper, fit_inductive, transform
from .transductive import Embedding, FitConfig, fit_transductive

__all__ = [
	'DataMatrix', 'Embedding', 'FitConfig', 'GlomapError', 'Mapper', 'fit_inductive', 'fit_transductive',
	'generate', 'global_distances', 'load_matrix', 'save_embedding', 'save_matrix', 'transform',
]
