from werkzeug.datastructures import MultiDict
from wtforms import Form, StringField, SelectField, IntegerField, FloatField, BooleanField
from wtforms.validators import AnyOf, NumberRange, Optional, ValidationError

from glomap.data import GENERATORS
from glomap.errors import ConfigError
from glomap.metrics import DEFAULT_KNN_GRID, DEFAULT_SIGMA_GRID
from glomap.transductive import FitConfig, METHOD_EPOCHS

METRIC_NAMES = ('knn', 'dtm_kl', 'distance_correlation', 'trustworthiness', 'silhouette')
DEFAULTS = FitConfig()


def parse_grid(text, cast=float):
    """`0.1, 1, 10` or an inclusive integer range `1..50`."""
    text = (text or '').strip()
    if not text:
        return []
    if '..' in text:
        low, high = (part.strip() for part in text.split('..', 1))
        return list(range(int(low), int(high) + 1))
    return [cast(part.strip()) for part in text.split(',') if part.strip()]


def _grid_validator(cast):
    def check(form, field):
        try:
            values = parse_grid(field.data, cast)
        except ValueError:
            raise ValidationError(f'not a list of numbers: {field.data!r}')
        if any(v <= 0 for v in values):
            raise ValidationError('grid values must be positive')
    return check


def _positive(form, field):
    if field.data is not None and not field.data > 0:
        raise ValidationError(f'must be positive, got {field.data}')


class EvaluationForm(Form):
    metrics = StringField(
        'metrics'
    )
    sigma_grid = StringField(
        'sigma_grid', validators=[Optional(), _grid_validator(float)],
        default=', '.join(map(str, DEFAULT_SIGMA_GRID))
    )
    knn_grid = StringField(
        'knn_grid', validators=[Optional(), _grid_validator(int)],
        default=f'{DEFAULT_KNN_GRID[0]}..{DEFAULT_KNN_GRID[-1]}'
    )
    trust_k = IntegerField(
        'trust_k', validators=[Optional(), NumberRange(min=1)],
        default=5
    )

    def validate_metrics(self, field):
        unknown = sorted(set(parse_grid(field.data, str)) - set(METRIC_NAMES))
        if unknown:
            raise ValidationError(f'unknown metrics {unknown}; choose from {METRIC_NAMES}')

    def values(self):
        return {name: field.data for name, field in self._fields.items()}


class RunConfigForm(EvaluationForm):
    dataset = StringField(
        'dataset', validators=[Optional(), AnyOf(sorted(GENERATORS))]
    )
    input = StringField(
        'input'
    )
    n = IntegerField(
        'n', validators=[Optional(), NumberRange(min=2)]
    )
    seed = IntegerField(
        'seed', validators=[Optional(), NumberRange(min=0, max=2 ** 64 - 1)],
        default=DEFAULTS.seed
    )
    method = SelectField(
        'method', choices=[(name, name) for name in METHOD_EPOCHS],
        default='glomap'
    )
    epochs = IntegerField(
        'epochs', validators=[Optional(), NumberRange(min=1)]
    )
    batch = IntegerField(
        'batch', validators=[Optional(), NumberRange(min=2)],
        default=DEFAULTS.batch
    )
    k = IntegerField(
        'k', validators=[Optional(), NumberRange(min=1)],
        default=DEFAULTS.n_neighbors
    )
    k_tilde = IntegerField(
        'k_tilde', validators=[Optional(), NumberRange(min=1)]
    )
    lambda_e = FloatField(
        'lambda_e', validators=[Optional(), NumberRange(min=0)],
        default=DEFAULTS.lambda_e
    )
    tau_start = FloatField(
        'tau_start', validators=[Optional(), _positive],
        default=DEFAULTS.tau_start
    )
    tau_end = FloatField(
        'tau_end', validators=[Optional(), _positive],
        default=DEFAULTS.tau_end
    )
    fixed_tau = FloatField(
        'fixed_tau', validators=[Optional(), _positive]
    )
    alpha0 = FloatField(
        'alpha0', validators=[Optional(), NumberRange(min=0)],
        default=DEFAULTS.alpha0
    )
    clip = FloatField(
        'clip', validators=[Optional(), _positive],
        default=DEFAULTS.clip
    )
    dim = IntegerField(
        'dim', validators=[Optional(), NumberRange(min=1)],
        default=DEFAULTS.dim
    )
    neg_approx = BooleanField(
        'neg_approx', false_values=('false', 'False', '0', 'no', '')
    )
    out = StringField(
        'out', default='out'
    )
    checkpoint_every = IntegerField(
        'checkpoint_every', validators=[Optional(), NumberRange(min=0)]
    )
    distance_cache = StringField(
        'distance_cache'
    )
    sweep_lambda_e = StringField(
        'sweep_lambda_e', validators=[Optional(), _grid_validator(float)]
    )

    def validate_input(self, field):
        if not field.data and not self.dataset.data:
            raise ValidationError('either dataset or input is required')
        if field.data and self.dataset.data:
            raise ValidationError('dataset and input are mutually exclusive')

    def validate_tau_end(self, field):
        if field.data is not None and self.tau_start.data is not None and field.data > self.tau_start.data:
            raise ValidationError(f'tau_end {field.data} exceeds tau_start {self.tau_start.data}')

    def to_fit_config(self, n_jobs=1):
        return FitConfig(
            lambda_e=self.lambda_e.data,
            n_epoch=self.epochs.data or METHOD_EPOCHS[self.method.data],
            batch=self.batch.data,
            n_neighbors=self.k.data,
            clip=self.clip.data,
            alpha0=self.alpha0.data,
            tau_start=self.tau_start.data,
            tau_end=self.tau_end.data,
            fixed_tau=self.fixed_tau.data,
            neg_approx=self.neg_approx.data,
            seed=self.seed.data,
            dim=self.dim.data,
            k_tilde=self.k_tilde.data,
            n_jobs=n_jobs,
        )


# ----------------------------------------------------------------------------#
# Config files.
# ----------------------------------------------------------------------------#

def read_config_file(path):
    """Flat `key = value` lines; `#` starts a comment."""
    values = {}
    with open(path, encoding='utf-8') as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f'{path}:{lineno}: expected `key = value`')
            key, value = (part.strip() for part in line.split('=', 1))
            values[key.replace('-', '_')] = value
    return values


def field_names():
    return list(RunConfigForm()._fields)


def _text(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)


def load_run_config(path=None, overrides=None, form_class=RunConfigForm):
    """
    File values first, CLI overrides on top; returns a validated form_class.
    Keys of the full run configuration are accepted by every form, so a fit
    run.cfg can be handed to evaluate.
    """
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(values) - set(field_names()))
    if unknown:
        raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
    form = form_class(MultiDict({k: _text(v) for k, v in values.items()}))
    if not form.validate():
        problems = '; '.join(f'{name}: {", ".join(errors)}' for name, errors in sorted(form.errors.items()))
        raise ConfigError(problems)
    return form


def write_config_echo(path, form):
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        for name, value in form.values().items():
            if value is None or value == '':
                continue
            fh.write(f'{name} = {_text(value)}\n')
