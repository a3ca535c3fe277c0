# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: run configuration

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Configuration files are UTF-8 text with one "key = value" pair per line; "#"
starts a comment and blank lines are ignored. Values given on the command line
as KEY=VALUE override those of the file, which override the defaults.

Constants:
    OUTPUT_ENV -- environment variable holding default output directory
    DEFAULT_OUTPUT -- output directory used when neither is set

Classes:
    ConfigError -- invalid configuration
    RunConfig -- immutable record of every tunable

Functions:
    parse_config -- build validated RunConfig from file text and overrides
    validate -- check RunConfig against the preconditions of every module
    output_directory -- resolved output directory
    as_text -- configuration file text reproducing a RunConfig
"""

__all__ = ['OUTPUT_ENV', 'DEFAULT_OUTPUT', 'ConfigError', 'RunConfig',
           'parse_config', 'validate', 'output_directory', 'as_text']

import dataclasses
import os
from pathlib import Path

import regex

from slotadapt._engine import adaptation
from slotadapt._engine import slots

OUTPUT_ENV = 'SLOTADAPT_OUTPUT'
DEFAULT_OUTPUT = 'slotadapt-out'

_LINE = regex.compile(
    r'^\s*+(?P<key>[A-Za-z_]\w*+)\s*+=\s*+(?P<value>.*?)\s*+$')
_COMMENT = regex.compile(r'#.*+$')
_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')
_GRIDS = ('methods', 'schedules', 'slots', 'all')


class ConfigError(Exception):
    """Invalid configuration.

    Methods:
        __init__: initializer
    """

    def __init__(self, where, constraint):
        """Initialize exception.

        Arguments:
            where -- offending key or line
            constraint -- violated constraint
        """
        super().__init__('Invalid configuration (%s): %s.'
                         % (where, constraint))


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Immutable record of every tunable, with defaults."""

    seed: int = 0
    image_size: int = 64
    patch_size: int = 8
    dim: int = 16
    num_classes: int = 3
    queries: int = 25
    depth: int = 2
    n: int = 5
    iters: int = 3
    attention_axis: str = 'tokens'
    learn_slot_init: bool = True
    use_slots: bool = True
    use_contrast: bool = True
    temperature: float = 0.1
    prototype_beta: float = 0.9
    teacher_gamma: float = 0.9993
    lambda_con: float = 0.05
    lambda_rec: float = 1.0
    schedule: str = 'cosine'
    tau_max: float = 0.55
    tau_min: float = 0.40
    tau_fix: float = 0.50
    exp_decay: float = 0.01
    sigmoid_k: float = 10.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    cost_l1: float = 5.0
    cost_giou: float = 2.0
    pretrain_steps: int = 500
    adapt_steps: int = 500
    burn_in: int = 20
    batch_size: int = 8
    lr: float = 0.01
    slot_lr: float = 2e-5
    train_scenes: int = 512
    eval_scenes: int = 128
    min_objects: int = 1
    max_objects: int = 6
    fog_alpha: float = 0.5
    fog_gray: float = 0.7
    noise_sigma: float = 0.05
    hue_jitter: float = 0.05
    confidence_cut: float = 0.5
    checkpoint_interval: int = 100
    ablation_seeds: int = 5
    ablation_grid: str = 'all'
    eval_domain: str = 'target'
    eval_split: str = 'eval'
    data_dir: str = ''
    output_dir: str = ''

    def replace(self, **changes):
        """Return validated copy with some values replaced."""
        return validate(dataclasses.replace(self, **changes))

    def as_dict(self):
        """Return dictionary of values keyed by name."""
        return dataclasses.asdict(self)


_FIELDS = {field.name: field for field in dataclasses.fields(RunConfig)}


def _convert(key, text):
    """Convert text value to the type of key."""
    kind = _FIELDS[key].type
    kind = {'int': int, 'float': float, 'bool': bool, 'str': str}.get(kind,
                                                                      kind)
    if kind is bool:
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(key, 'expected true or false, got %r' % text)
    if kind is str:
        return text
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(key, 'expected %s, got %r'
                          % (kind.__name__, text)) from None


def _parse_lines(text, source):
    """Return dictionary of raw values from configuration text."""
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = _COMMENT.sub('', line)
        if not line.strip():
            continue
        match = _LINE.match(line)
        if match is None:
            raise ConfigError('%s line %i' % (source, number),
                              'expected "key = value"')
        key = match.group('key')
        if key not in _FIELDS:
            raise ConfigError(key, 'unknown key')
        values[key] = match.group('value')
    return values


def parse_config(text='', overrides=()):
    """Build validated configuration.

    Arguments:
        text -- content of configuration file (may be empty)
        overrides -- sequence of KEY=VALUE strings, applied after the file

    Returns:
        RunConfig

    Exceptions:
        ConfigError -- malformed line, unknown key, bad value or violated
            constraint
    """
    values = _parse_lines(text, 'file')
    for override in overrides:
        values.update(_parse_lines(override, 'override %r' % override))
    converted = {key: _convert(key, value) for key, value in values.items()}
    return validate(RunConfig(**converted))


def _require(condition, key, constraint):
    if not condition:
        raise ConfigError(key, constraint)


def validate(config):
    """Check configuration against the preconditions of every module.

    Returns:
        config

    Exceptions:
        ConfigError -- naming the first violated constraint
    """
    c = config
    _require(c.seed >= 0, 'seed', 'must be nonnegative')
    _require(c.patch_size >= 1 and c.image_size % c.patch_size == 0,
             'patch_size', 'must divide image_size')
    _require(c.image_size >= 20, 'image_size', 'must be at least 20')
    _require(c.dim >= 1, 'dim', 'must be positive')
    _require(1 <= c.num_classes <= 3, 'num_classes', 'must lie in 1 to 3')
    _require(c.depth in (1, 2), 'depth', 'must be 1 or 2')
    _require(c.n >= 2, 'n', 'must be at least 2')
    _require(c.queries >= 1 and c.queries % c.n ** c.depth == 0, 'queries',
             'must be a positive multiple of n ** depth = %i'
             % c.n ** c.depth)
    _require(c.iters >= 1, 'iters', 'must be positive')
    _require(c.attention_axis in slots.ATTENTION_AXES, 'attention_axis',
             'must be one of %s' % ', '.join(slots.ATTENTION_AXES))
    _require(c.temperature > 0, 'temperature', 'must be positive')
    _require(0 <= c.prototype_beta < 1, 'prototype_beta',
             'must lie in [0, 1)')
    _require(0 <= c.teacher_gamma < 1, 'teacher_gamma', 'must lie in [0, 1)')
    _require(c.lambda_con >= 0, 'lambda_con', 'must be nonnegative')
    _require(c.lambda_rec >= 0, 'lambda_rec', 'must be nonnegative')
    _require(c.schedule in adaptation.SCHEDULE_KINDS, 'schedule',
             'must be one of %s' % ', '.join(adaptation.SCHEDULE_KINDS))
    _require(0 < c.tau_min <= c.tau_max < 1, 'tau_min',
             'must satisfy 0 < tau_min <= tau_max < 1')
    _require(0 < c.tau_fix < 1, 'tau_fix', 'must lie in (0, 1)')
    _require(c.exp_decay >= 0, 'exp_decay', 'must be nonnegative')
    _require(c.sigmoid_k > 0, 'sigmoid_k', 'must be positive')
    _require(0 <= c.focal_alpha <= 1, 'focal_alpha', 'must lie in [0, 1]')
    _require(c.focal_gamma >= 0, 'focal_gamma', 'must be nonnegative')
    _require(c.cost_l1 >= 0 and c.cost_giou >= 0, 'cost_l1',
             'box weights must be nonnegative')
    _require(c.pretrain_steps >= 1, 'pretrain_steps', 'must be positive')
    _require(c.adapt_steps >= 1, 'adapt_steps', 'must be positive')
    _require(0 <= c.burn_in < c.adapt_steps, 'burn_in',
             'must lie in [0, adapt_steps)')
    _require(c.batch_size >= 1, 'batch_size', 'must be positive')
    _require(c.lr > 0, 'lr', 'must be positive')
    _require(c.slot_lr > 0, 'slot_lr', 'must be positive')
    _require(c.train_scenes >= c.batch_size, 'train_scenes',
             'must be at least batch_size')
    _require(c.eval_scenes >= 1, 'eval_scenes', 'must be positive')
    _require(1 <= c.min_objects <= c.max_objects <= 6, 'max_objects',
             'must satisfy 1 <= min_objects <= max_objects <= 6')
    _require(0 <= c.fog_alpha <= 1, 'fog_alpha', 'must lie in [0, 1]')
    _require(0 <= c.fog_gray <= 1, 'fog_gray', 'must lie in [0, 1]')
    _require(c.noise_sigma >= 0, 'noise_sigma', 'must be nonnegative')
    _require(c.hue_jitter >= 0, 'hue_jitter', 'must be nonnegative')
    _require(0 <= c.confidence_cut <= 1, 'confidence_cut',
             'must lie in [0, 1]')
    _require(c.checkpoint_interval >= 1, 'checkpoint_interval',
             'must be positive')
    _require(c.ablation_seeds >= 1, 'ablation_seeds', 'must be positive')
    _require(c.ablation_grid in _GRIDS, 'ablation_grid',
             'must be one of %s' % ', '.join(_GRIDS))
    _require(c.eval_domain in ('source', 'target'), 'eval_domain',
             'must be source or target')
    _require(c.eval_split in ('train', 'eval'), 'eval_split',
             'must be train or eval')
    return config


def output_directory(config):
    """Return output directory: configured, from environment, or default."""
    if config.output_dir:
        return Path(config.output_dir)
    return Path(os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def as_text(config):
    """Return configuration file text reproducing config."""
    lines = []
    for key, value in config.as_dict().items():
        if isinstance(value, bool):
            value = 'true' if value else 'false'
        lines.append('%s = %s' % (key, value))
    return '\n'.join(lines) + '\n'
