import ast
import hashlib
import json
import logging
import os
import re

import ml_collections

from options.configs import get_experiment_config
from training.attacks import validate_attack_config
from training.finetune import validate_finetune_config
from utils.SyntheticDataset import validate_gen_config
from utils.errors import ConfigError
from utils.utils import mkdirs, stream_seed

log = logging.getLogger(__name__)

_DEFAULT_COMMENT = re.compile(r'\s*\[default: .*\]\s*$')


def _flatten(config, prefix=''):
    for key in sorted(config.keys()):
        value = config[key]
        if isinstance(value, ml_collections.ConfigDict):
            yield from _flatten(value, prefix + key + '.')
        else:
            yield prefix + key, value


def _field_type(node, leaf):
    value = node[leaf]
    if value is None:
        # placeholders are FieldReferences, get_ref returns them unchanged
        return node.get_ref(leaf).get_type(), True
    return type(value), False


def _coerce(text, default, typ, nullable, key):
    if nullable and text in ('None', ''):
        return None
    try:
        literal = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        literal = text
    if typ is bool:
        if isinstance(literal, bool):
            return literal
    elif typ is int:
        if isinstance(literal, int) and not isinstance(literal, bool):
            return literal
    elif typ is float:
        if isinstance(literal, (int, float)) and not isinstance(literal, bool):
            return float(literal)
    elif typ is str:
        return literal if isinstance(literal, str) else text
    elif typ is tuple:
        if isinstance(literal, (int, float)) and not isinstance(literal, bool):
            literal = (literal,)
        if isinstance(literal, (list, tuple)):
            elem = type(default[0]) if default else float
            try:
                return tuple(elem(v) for v in literal)
            except (TypeError, ValueError):
                pass
    raise ConfigError('%s: cannot read %r as %s' % (key, text, typ.__name__))


def set_config_value(config, key, text):
    """Assign the text `text` to dotted `key`, typed after the existing field."""
    parts = key.split('.')
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], ml_collections.ConfigDict):
            raise ConfigError('unknown config key: %s' % key)
        node = node[part]
    leaf = parts[-1]
    if leaf not in node or isinstance(node[leaf], ml_collections.ConfigDict):
        raise ConfigError('unknown config key: %s' % key)
    typ, nullable = _field_type(node, leaf)
    node[leaf] = _coerce(text, node[leaf], typ, nullable, key)


def read_config_file(path):
    """Parse a flat `key: value` file into a locked experiment config.

    Returns (config, set of keys given explicitly).
    """
    if not os.path.isfile(path):
        raise ConfigError('config file not found: %s' % path)
    config = get_experiment_config()
    seen = set()
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = _DEFAULT_COMMENT.sub('', raw).strip()
            if not line or line.startswith('#') or line.startswith('-'):
                continue
            key, sep, value = line.partition(':')
            key = key.strip()
            if not sep or not key:
                raise ConfigError('%s:%d: expected "key: value", got %r' % (path, lineno, raw.rstrip()))
            if key in seen:
                raise ConfigError('%s:%d: duplicate key %s' % (path, lineno, key))
            seen.add(key)
            set_config_value(config, key, value.strip())
    return config, seen


def resolve_config(config, explicit=(), seed=None, out=None):
    """Apply CLI overrides, derive dependent fields and validate everything."""
    if seed is not None:
        config.seed = int(seed)
    if out is not None:
        config.out = out
    grid_dim = config.data.grid * config.data.grid
    if 'model.input_dim' in explicit and config.model.input_dim != grid_dim:
        raise ConfigError('model.input_dim %d does not match data.grid %d squared'
                          % (config.model.input_dim, config.data.grid))
    config.model.input_dim = grid_dim

    master = config.seed
    derived = {'data.seed': stream_seed(master, 'data'), 'train.seed': master,
               'finetune.seed': master, 'finetune.curriculum.seed': master}
    for key, value in derived.items():
        if key not in explicit:
            section, _, leaf = key.rpartition('.')
            node = config
            for part in section.split('.'):
                node = node[part]
            node[leaf] = value

    validate_experiment_config(config)
    return config


def validate_experiment_config(config):
    validate_gen_config(config.data)
    if config.model.n_protected != 2 or config.model.n_target < 2:
        raise ConfigError('the protected head is binary and the target head needs >= 2 classes')
    if any(h < 1 for h in config.model.hidden):
        raise ConfigError('model.hidden sizes must be positive, got %s' % (config.model.hidden,))
    train = config.train
    if train.epochs < 0 or train.batch_size < 1 or train.lr < 0 or train.clip <= 0:
        raise ConfigError('train needs epochs >= 0, batch_size >= 1, lr >= 0 and clip > 0')
    if train.protected_weight < 0:
        raise ConfigError('train.protected_weight must be >= 0, got %r' % train.protected_weight)
    validate_finetune_config(config.finetune)
    analysis = config.analysis
    if not analysis.eps_grid or any(not 0.0 <= e <= 1.0 for e in analysis.eps_grid):
        raise ConfigError('analysis.eps_grid must be non-empty with values in [0, 1]')
    if analysis.num_samples < 1 or analysis.ig_steps < 1:
        raise ConfigError('analysis.num_samples and analysis.ig_steps must be >= 1')
    validate_attack_config(analysis.attack)
    if config.threads < 1:
        raise ConfigError('threads must be >= 1')


def config_digest(config):
    """SHA-256 of the canonical JSON of the config, output directory excluded."""
    payload = config.to_dict()
    payload.pop('out', None)
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()


def format_options(config):
    defaults = dict(_flatten(resolve_config(get_experiment_config(), seed=config.seed)))
    message = ''
    message += '----------------- Options ---------------\n'
    for k, v in _flatten(config):
        comment = ''
        default = defaults.get(k)
        if v != default and k != 'out':
            comment = '\t[default: %s]' % _format_value(default)
        message += '{:>32}: {:<30}{}\n'.format(k, _format_value(v), comment)
    message += '----------------- End -------------------'
    return message


def _format_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class BaseOptions():
    isTrain = False

    def initialize(self, parser):
        parser.add_argument('--config', type=str, default=None, help='flat key: value experiment config (defaults if omitted)')
        parser.add_argument('--seed', type=int, default=None, help='overrides the master seed of the config')
        parser.add_argument('--out', type=str, default=None, help='output directory (overrides config key out)')
        parser.add_argument('--verbose', action='store_true', help='if specified, log debugging information')
        return parser

    def parse(self, args):
        if args.config:
            config, explicit = read_config_file(args.config)
        else:
            config, explicit = get_experiment_config(), set()
        resolve_config(config, explicit, seed=args.seed, out=args.out)
        args.config_dict = config
        args.digest = config_digest(config)
        args.isTrain = self.isTrain
        self.opt = args
        return args

    def print_options(self, opt):
        message = format_options(opt.config_dict)
        log.debug('\n%s', message)
        # save to the disk; the file is itself a valid config
        mkdirs(opt.config_dict.out)
        file_name = os.path.join(opt.config_dict.out, 'opt.txt')
        with open(file_name, 'wt') as opt_file:
            opt_file.write(message)
            opt_file.write('\n')
        return file_name
