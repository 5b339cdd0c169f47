class GlomapError(Exception):
	pass


class ParseError(GlomapError, ValueError):
	"""Malformed input file. `row` is the 0-based data row (header excluded)."""

	def __init__(self, message, row=None):
		if row is not None:
			message = f'row {row}: {message}'
		super().__init__(message)
		self.row = row


class ConfigError(GlomapError, ValueError):
	pass


class DataError(GlomapError, ValueError):
	pass


class GeodesicError(GlomapError, ValueError):
	pass


class AffinityError(GlomapError, ValueError):
	pass


class InductiveError(GlomapError, ValueError):
	pass


class MetricError(GlomapError, ValueError):
	pass


class StageError(GlomapError):
	"""A pipeline stage failed; `stage` names it."""

	def __init__(self, stage, cause):
		super().__init__(f'{stage}: {cause}')
		self.stage = stage
		self.cause = cause
