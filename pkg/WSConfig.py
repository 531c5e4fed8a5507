from WSExceptions import ConfigException, WSException
from WSArguments import WSArguments
from dataclasses import fields
import hashlib
import yaml
import os

from CustomLogger import logger
from WoundGeometry import WoundGeometry, ShapeKind
from BioModel import KineticParams
from FEMSolver import SimConfig
from DeepONetTrainer import TrainConfig

CONFIG_VERSION = 1

SECTION_DEFAULTS = {
    'geometry': {'shape': 'rectangle', 'x_cut': 1.0, 'y_cut': 1.0, 'weights': None},
    'sim': {f.name: f.default for f in fields(SimConfig)},
    'kinetics': {},
    'train': {**{f.name: f.default for f in fields(TrainConfig) if f.name != 'seed'},
              'hidden': [50, 50, 50], 'split_fraction': 0.8, 'split_level': 'record'},
    'data': {'n_train_sims': 30, 'n_test_sims': 10, 'times_per_sim': 10, 'points_per_sim': 20, 'year_scale': 'desk'},
    'eval': {'batch_size': 10000, 'repeats': 3, 'rsaw': True},
    'logging': {'debug': False, 'run_log': True},
}

class WSConfig():
    """
    Singleton class holding the run configuration of WoundSurrogate.
    The YAML file is read once, every missing key is filled with its default
    and unknown keys are rejected, so the effective configuration written
    into each run directory is complete.
    """

    _instance = None
    SEED = 0
    GEOMETRY = None
    SIM = None
    KINETICS = None
    TRAIN = None
    DATA = None
    EVAL = None
    LOGGING = {}

    def __new__(cls, *args, **kwargs):
        if not cls._instance:
            cls._instance = super(WSConfig, cls).__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self, configfile=None):
        if self._initialized:
            return
        self._initialized = True

        logger.debug("init WSConfig")
        if configfile is None:
            configfile = WSArguments().CONFIGFILE
        self.configfile = configfile

        with open(configfile, mode='r') as file:
            try:
                config = yaml.safe_load(file) or {}
            except yaml.YAMLError as e:
                raise ConfigException(argument=configfile, message=f"not valid YAML ({e})")
        if not isinstance(config, dict):
            raise ConfigException(argument=configfile, message="top level must be a mapping")
        logger.debug(f"Configuration loaded: {config}")

        unknown = set(config) - set(SECTION_DEFAULTS) - {'version', 'seed'}
        if unknown:
            raise ConfigException(argument=sorted(unknown), message="unknown config sections")
        self.VERSION = config.get('version', CONFIG_VERSION)
        self.SEED = config.get('seed', 0)
        for section in SECTION_DEFAULTS:
            value = config.get(section) or {}
            if not isinstance(value, dict):
                raise ConfigException(argument=section, message="config section must be a mapping")
            setattr(self, section.upper(), dict(value))

        self.validate()

    @classmethod
    def reset(cls):
        cls._instance = None

    def _fill(self, section: str):
        values = getattr(self, section.upper())
        if section != 'kinetics':
            unknown = set(values) - set(SECTION_DEFAULTS[section])
            if unknown:
                raise ConfigException(argument=sorted(unknown), message=f"unknown keys in section '{section}'")
        for key, default in SECTION_DEFAULTS[section].items():
            if key not in values:
                values[key] = list(default) if isinstance(default, tuple) else default

    def validate(self):
        if self.VERSION != CONFIG_VERSION:
            raise ConfigException(argument=self.VERSION, message=f"config version must be {CONFIG_VERSION}")

        if not isinstance(self.SEED, int) or isinstance(self.SEED, bool) or self.SEED < 0:
            raise ConfigException(argument=self.SEED, message="seed must be a non-negative integer")

        for section in SECTION_DEFAULTS:
            self._fill(section)

        if self.SIM['record_times'] is not None:
            self.SIM['record_times'] = [float(t) for t in self.SIM['record_times']]

        if self.TRAIN['split_level'] not in ('record', 'simulation'):
            raise ConfigException(argument=self.TRAIN['split_level'], message="split_level must be 'record' or 'simulation'")

        if not 0.0 < self.TRAIN['split_fraction'] < 1.0:
            raise ConfigException(argument=self.TRAIN['split_fraction'], message="split_fraction must lie in (0, 1)")

        if self.DATA['year_scale'] not in ('desk', 'full'):
            raise ConfigException(argument=self.DATA['year_scale'], message="year_scale must be 'desk' or 'full'")

        for key in ('n_train_sims', 'n_test_sims', 'times_per_sim', 'points_per_sim'):
            if not isinstance(self.DATA[key], int) or self.DATA[key] < 1:
                raise ConfigException(argument=f"data.{key}={self.DATA[key]}", message="must be a positive integer")

        for key in ('batch_size', 'repeats'):
            if not isinstance(self.EVAL[key], int) or self.EVAL[key] < 1:
                raise ConfigException(argument=f"eval.{key}={self.EVAL[key]}", message="must be a positive integer")

        if 'file' in self.KINETICS and not os.path.isfile(self.KINETICS['file']):
            raise ConfigException(argument=self.KINETICS['file'], message="kinetic parameter file is missing")

        # build every typed view once so invalid values surface at startup
        self.sim_config()
        self.train_config()
        self.kinetic_params()
        if self.GEOMETRY['shape'] is not None:
            self.geometry()

    def sim_config(self, **overrides) -> SimConfig:
        values = {**self.SIM, **{k: v for k, v in overrides.items() if v is not None}}
        try:
            return SimConfig(**values)
        except TypeError as e:
            raise ConfigException(argument='sim', message=str(e))

    def train_config(self, **overrides) -> TrainConfig:
        values = {k: v for k, v in self.TRAIN.items() if k not in ('split_fraction', 'split_level')}
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return TrainConfig(seed=self.SEED, **values)
        except TypeError as e:
            raise ConfigException(argument='train', message=str(e))

    def kinetic_params(self) -> KineticParams:
        overrides = {k: v for k, v in self.KINETICS.items() if k != 'file'}
        try:
            params = KineticParams.from_file(self.KINETICS['file']) if 'file' in self.KINETICS else KineticParams()
            return params.with_overrides(**overrides)
        except (ValueError, TypeError, WSException) as e:
            raise ConfigException(argument='kinetics', message=str(e))

    def geometry(self, shape=None, x_cut=None, y_cut=None, weights=None) -> WoundGeometry:
        shape = shape or self.GEOMETRY['shape']
        x_cut = x_cut if x_cut is not None else self.GEOMETRY['x_cut']
        y_cut = y_cut if y_cut is not None else self.GEOMETRY['y_cut']
        weights = weights if weights is not None else self.GEOMETRY['weights']
        try:
            kind = ShapeKind(shape)
            return WoundGeometry(kind, float(x_cut), float(y_cut),
                                 tuple(weights) if kind == ShapeKind.Convex else None)
        except (ValueError, TypeError, WSException) as e:
            raise ConfigException(argument=f"geometry {shape},{x_cut},{y_cut}", message=str(e))

    def effective(self) -> dict:
        config = {'version': self.VERSION, 'seed': self.SEED}
        for section in SECTION_DEFAULTS:
            config[section] = getattr(self, section.upper())
        return config

    def dump(self) -> str:
        return yaml.safe_dump(self.effective(), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()

    def write(self, path):
        with open(path, mode='w') as file:
            file.write(self.dump())
