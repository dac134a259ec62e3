'''Experiment configuration: a JSON document loaded into a tree of dataclasses.

Required top-level fields are seed, dataset, shifts, n_s, arch, methods, budgets and
output_dir. Everything else has a default. Example:

    {
      "seed": 0,
      "dataset": {"name": "glyphs", "num_classes": 4, "train_per_class": 150, "test_per_class": 60},
      "shifts": {"corruptions": ["gaussian_noise", "contrast"], "severities": [2, 3, 4]},
      "n_s": 40,
      "arch": "conv_small",
      "methods": ["metasel", "gini", "lsa"],
      "budgets": [0.01, 0.03, 0.05, 0.1],
      "output_dir": "out"
    }
'''
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

from .baselines import BASELINE_METHODS, UNCERTAINTY
from .datagen import DEFAULT_SEVERITIES, Corruption
from .errors import ConfigException
from .models import ARCHITECTURES, TrainConfig
from .odin import OdinConfig

logger = logging.getLogger(__name__)

METHODS = ('metasel',) + BASELINE_METHODS
REQUIRED_FIELDS = ('seed', 'dataset', 'shifts', 'n_s', 'arch', 'methods', 'budgets', 'output_dir')
WORKERS_VARIABLE = 'MSEL_WORKERS'


def _build(cls, values, where):
    '''Instantiates a config dataclass from a dict, naming unknown fields.'''
    if values is None:
        return cls()
    if isinstance(values, cls):
        return values
    if not isinstance(values, dict):
        raise ConfigException("'{}' must be an object, got {!r}".format(where, values))
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigException("unknown field(s) in '{}': {}".format(where, ', '.join(unknown)))
    try:
        return cls(**values)
    except TypeError as err:
        raise ConfigException("invalid '{}': {}".format(where, err))


@dataclass(frozen=True)
class DatasetSpec:
    '''Source data: rendered glyphs, or IDX files when `idx` names
    train_images, train_labels, test_images and test_labels.'''
    name: str = 'glyphs'
    num_classes: int = 4
    train_per_class: int = 150
    test_per_class: int = 60
    idx: Optional[dict] = None

    def __post_init__(self):
        if not 2 <= int(self.num_classes) <= 100:
            raise ConfigException("dataset.num_classes must be in [2, 100], got {}".format(self.num_classes))
        if int(self.train_per_class) < 1 or int(self.test_per_class) < 1:
            raise ConfigException("dataset counts per class must be >= 1")
        if not self.name:
            raise ConfigException("dataset.name must not be empty")
        if self.idx is not None:
            missing = [k for k in ('train_images', 'train_labels', 'test_images', 'test_labels') if k not in self.idx]
            if missing:
                raise ConfigException("dataset.idx is missing {}".format(', '.join(missing)))


@dataclass(frozen=True)
class ShiftGrid:
    corruptions: tuple = tuple(c.value for c in Corruption)
    severities: tuple = DEFAULT_SEVERITIES

    def __post_init__(self):
        corruptions = tuple(self.corruptions)
        severities = tuple(int(s) for s in self.severities)
        if not corruptions or not severities:
            raise ConfigException("shifts need at least one corruption and one severity")
        for name in corruptions:
            if name not in {c.value for c in Corruption}:
                raise ConfigException("unknown corruption '{}'".format(name))
        for s in severities:
            if not 1 <= s <= 5:
                raise ConfigException("severities must lie in 1..5, got {}".format(s))
        object.__setattr__(self, 'corruptions', corruptions)
        object.__setattr__(self, 'severities', severities)

    def cells(self):
        return [(c, s) for c in self.corruptions for s in self.severities]


@dataclass(frozen=True)
class MetaTrainSpec:
    epochs: int = 200
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    patience: int = 10
    validation_fraction: float = 0.2
    kernels: int = 8
    kernel_width: int = 3
    hidden: int = 32

    def __post_init__(self):
        if int(self.patience) < 1:
            raise ConfigException("meta.patience must be >= 1, got {}".format(self.patience))
        if not 0 < self.validation_fraction < 1:
            raise ConfigException("meta.validation_fraction must be in (0, 1)")
        if min(int(self.kernels), int(self.kernel_width), int(self.hidden)) < 1:
            raise ConfigException("meta network sizes must be >= 1")
        self.train_config(0)

    def train_config(self, seed):
        return TrainConfig(self.epochs, self.learning_rate, self.momentum, self.batch_size, seed)


@dataclass(frozen=True)
class NnsSpec:
    k: int = 10
    alpha: float = 0.5
    metric: str = 'euclidean'

    def __post_init__(self):
        if int(self.k) < 1:
            raise ConfigException("nns.k must be >= 1")
        if not 0 <= self.alpha <= 1:
            raise ConfigException("nns.alpha must be in [0, 1]")
        if self.metric not in ('euclidean', 'cosine'):
            raise ConfigException("nns.metric must be euclidean or cosine, got '{}'".format(self.metric))


@dataclass(frozen=True)
class DatisSpec:
    k: int = 10
    tau: float = 1.0

    def __post_init__(self):
        if int(self.k) < 1:
            raise ConfigException("datis.k must be >= 1")
        if not self.tau > 0:
            raise ConfigException("datis.tau must be > 0")


@dataclass(frozen=True)
class EnsembleSpec:
    n_ensembles: int = 5

    def __post_init__(self):
        if int(self.n_ensembles) < 1:
            raise ConfigException("ensemble.n_ensembles must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    dataset: DatasetSpec
    shifts: ShiftGrid
    n_s: int
    arch: str
    methods: tuple
    budgets: tuple
    output_dir: str
    source_train: TrainConfig = field(default_factory=TrainConfig)
    finetune: TrainConfig = field(default_factory=TrainConfig)
    meta: MetaTrainSpec = field(default_factory=MetaTrainSpec)
    odin: OdinConfig = field(default_factory=OdinConfig)
    nns: NnsSpec = field(default_factory=NnsSpec)
    datis: DatisSpec = field(default_factory=DatisSpec)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    base_metric: str = 'gini'

    def __post_init__(self):
        if int(self.n_s) < 1:
            raise ConfigException("n_s must be >= 1, got {}".format(self.n_s))
        if self.arch not in ARCHITECTURES:
            raise ConfigException("unknown arch '{}', expected one of {}".format(self.arch, sorted(ARCHITECTURES)))
        methods = tuple(self.methods)
        if not methods:
            raise ConfigException("methods must not be empty")
        for method in methods:
            if method not in METHODS:
                raise ConfigException("unknown method '{}'".format(method))
        if len(set(methods)) != len(methods):
            raise ConfigException("methods contain duplicates")
        budgets = tuple(float(b) for b in self.budgets)
        if not budgets or any(not 0 < b <= 1 for b in budgets):
            raise ConfigException("budgets must be fractions in (0, 1], got {}".format(list(self.budgets)))
        if self.base_metric not in UNCERTAINTY:
            raise ConfigException("base_metric must be one of {}".format(sorted(UNCERTAINTY)))
        if not self.output_dir:
            raise ConfigException("output_dir must not be empty")
        object.__setattr__(self, 'methods', methods)
        object.__setattr__(self, 'budgets', budgets)

    @classmethod
    def from_dict(cls, values):
        if not isinstance(values, dict):
            raise ConfigException("config must be a JSON object")
        missing = [name for name in REQUIRED_FIELDS if name not in values]
        if missing:
            raise ConfigException("missing config field(s): {}".format(', '.join(missing)))
        unknown = sorted(set(values) - {f.name for f in dataclasses.fields(cls)})
        if unknown:
            raise ConfigException("unknown config field(s): {}".format(', '.join(unknown)))

        nested = {
            'dataset': DatasetSpec, 'shifts': ShiftGrid, 'source_train': TrainConfig, 'finetune': TrainConfig,
            'meta': MetaTrainSpec, 'odin': OdinConfig, 'nns': NnsSpec, 'datis': DatisSpec, 'ensemble': EnsembleSpec,
        }
        kwargs = dict(values)
        for name, sub in nested.items():
            if name in kwargs:
                kwargs[name] = _build(sub, kwargs[name], name)
        try:
            kwargs['seed'] = int(kwargs['seed'])
            kwargs['n_s'] = int(kwargs['n_s'])
        except (TypeError, ValueError):
            raise ConfigException("seed and n_s must be integers")
        return cls(**kwargs)

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_overrides(self, output_dir=None, seed=None, methods=None, budgets=None):
        '''Command-line flags take precedence over the file.'''
        changes = {}
        if output_dir is not None:
            changes['output_dir'] = output_dir
        if seed is not None:
            changes['seed'] = int(seed)
        if methods is not None:
            changes['methods'] = tuple(methods)
        if budgets is not None:
            changes['budgets'] = tuple(budgets)
        return dataclasses.replace(self, **changes)

    def _digest(self, keys):
        payload = {k: v for k, v in self.to_dict().items() if k in keys}
        return hashlib.sha1(json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()[:10]

    @property
    def data_id(self):
        '''Identifies the generated datasets: seed, dataset and shift grid only.'''
        return 'seed{}-{}'.format(self.seed, self._digest(('seed', 'dataset', 'shifts')))

    @property
    def run_id(self):
        keys = {f.name for f in dataclasses.fields(self)} - {'output_dir'}
        return 'seed{}-{}'.format(self.seed, self._digest(keys))

    @property
    def source_name(self):
        return self.dataset.name

    def subject_name(self, corruption, severity):
        return '{}_{}_{}'.format(self.dataset.name, corruption, severity)


def load_config(path):
    try:
        with open(path) as fh:
            values = json.load(fh)
    except FileNotFoundError:
        raise ConfigException("config file {} not found".format(path))
    except json.JSONDecodeError as err:
        raise ConfigException("config file {} is not valid JSON: {}".format(path, err))
    config = ExperimentConfig.from_dict(values)
    logger.debug("loaded config %s (run id %s)", path, config.run_id)
    return config


def resolve_workers(flag=None):
    '''--workers, else MSEL_WORKERS, else 1.'''
    value = flag if flag is not None else os.environ.get(WORKERS_VARIABLE)
    if value is None or value == '':
        return 1
    try:
        workers = int(value)
    except (TypeError, ValueError):
        raise ConfigException("worker count must be an integer, got '{}'".format(value))
    if workers < 1:
        raise ConfigException("worker count must be >= 1, got {}".format(workers))
    return workers
