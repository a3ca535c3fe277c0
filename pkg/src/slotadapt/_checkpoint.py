# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: checkpoint persistence

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Checkpoints are UTF-8 JSON documents with sorted keys and LF line endings.
Arrays are stored as shape plus row-major values, and floats are written with
the shortest representation that reads back to the same double, so that
loading reproduces every array bit for bit. Documents are written to a
temporary file and renamed, so an interrupted save never leaves a partial
checkpoint under the final name.

Constants:
    FORMAT -- format tag stored in every checkpoint
    FORMAT_VERSION -- current format version
    PHASES -- training phases that emit checkpoints

Classes:
    CheckpointError -- base class of checkpoint exceptions
    CheckpointVersionError -- unsupported format version
    CheckpointShapeError -- parameter shapes differ from those expected
    CheckpointCorruptError -- truncated or malformed document

Named tuples:
    Checkpoint -- content of a checkpoint

Functions:
    save_checkpoint -- write checkpoint to file
    load_checkpoint -- read checkpoint from file
"""

__all__ = ['FORMAT', 'FORMAT_VERSION', 'PHASES', 'CheckpointError',
           'CheckpointVersionError', 'CheckpointShapeError',
           'CheckpointCorruptError', 'Checkpoint', 'save_checkpoint',
           'load_checkpoint']

import collections
import json
import logging
import os
from pathlib import Path

import numpy as np

from slotadapt._engine import contrast
from slotadapt._engine.base import NonFiniteError

# Logging
_misc_logger = logging.getLogger('slotadapt.log')

FORMAT = 'slotadapt-checkpoint'
FORMAT_VERSION = 1
PHASES = ('pretrain', 'adapt')


class CheckpointError(Exception):
    """Base class of checkpoint exceptions."""


class CheckpointVersionError(CheckpointError):
    """Unsupported format version.

    Methods:
        __init__: initializer
    """

    def __init__(self, path, version):
        """Initialize exception.

        Arguments:
            path -- path of checkpoint
            version -- version found in checkpoint
        """
        super().__init__('Checkpoint %s has format version %s, but only '
                         'version %i is supported.'
                         % (path, version, FORMAT_VERSION))


class CheckpointShapeError(CheckpointError):
    """Parameter shapes differ from those expected.

    Methods:
        __init__: initializer
    """

    def __init__(self, path, name, found, expected):
        """Initialize exception.

        Arguments:
            path -- path of checkpoint
            name -- name of offending parameter
            found -- shape stored in checkpoint (None if missing)
            expected -- shape expected by current configuration (None if
                unexpected)
        """
        super().__init__('Checkpoint %s: parameter %s has shape %s, but the '
                         'configuration expects %s.'
                         % (path, name, found, expected))


class CheckpointCorruptError(CheckpointError):
    """Truncated or malformed document.

    Methods:
        __init__: initializer
    """

    def __init__(self, path, reason):
        """Initialize exception.

        Arguments:
            path -- path of checkpoint
            reason -- description of the problem
        """
        super().__init__('Checkpoint %s is corrupt: %s.' % (path, reason))


Checkpoint = collections.namedtuple(
    'Checkpoint', ['version', 'config', 'phase', 'student', 'teacher',
                   'memory', 'step', 'rng_state', 'trace'])
Checkpoint.__doc__ = """Content of a checkpoint.

Fields:
    version -- format version
    config -- dictionary of configuration values (RunConfig.as_dict)
    phase -- 'pretrain' or 'adapt'
    student -- dictionary of numpy arrays (trained parameters)
    teacher -- dictionary of numpy arrays (None after pretraining)
    memory -- PrototypeMemory (None after pretraining)
    step -- number of steps taken in the phase
    rng_state -- state of the slot-initialization generator (Rng.state)
    trace -- list of trace rows (dictionaries)
"""


def _encode_arrays(arrays, where):
    if arrays is None:
        return None
    encoded = {}
    for name, value in arrays.items():
        value = np.asarray(value, dtype=float)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError('%s parameter %s' % (where, name))
        encoded[name] = {'shape': list(value.shape),
                         'values': [float(v) for v in value.ravel()]}
    return encoded


def _decode_arrays(encoded, path):
    if encoded is None:
        return None
    arrays = {}
    for name, entry in encoded.items():
        shape = tuple(int(v) for v in entry['shape'])
        values = np.array(entry['values'], dtype=float)
        if values.size != int(np.prod(shape)):
            raise CheckpointCorruptError(
                path, 'parameter %s holds %i values for shape %s'
                % (name, values.size, shape))
        arrays[name] = values.reshape(shape)
    return arrays


def save_checkpoint(path, checkpoint):
    """Write checkpoint to file.

    Arguments:
        path -- destination path
        checkpoint -- Checkpoint object (version field ignored)

    Exceptions:
        NonFiniteError -- parameter with NaN or infinite value
        ValueError -- unknown phase
    """
    if checkpoint.phase not in PHASES:
        raise ValueError('Unknown checkpoint phase: %s' % checkpoint.phase)
    document = {
        'format': FORMAT,
        'version': FORMAT_VERSION,
        'config': checkpoint.config,
        'phase': checkpoint.phase,
        'student': _encode_arrays(checkpoint.student, 'student'),
        'teacher': _encode_arrays(checkpoint.teacher, 'teacher'),
        'memory': (None if checkpoint.memory is None
                   else checkpoint.memory.as_dict()),
        'step': int(checkpoint.step),
        'rng_state': checkpoint.rng_state,
        'trace': checkpoint.trace}
    text = json.dumps(document, sort_keys=True, indent=1, allow_nan=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(path.name + '.tmp')
    with open(temporary, 'w', encoding='utf-8', newline='\n') as out_file:
        out_file.write(text + '\n')
    os.replace(temporary, path)
    _misc_logger.debug('Checkpoint saved: %s (%s, step %i)', path,
                       checkpoint.phase, checkpoint.step)


def load_checkpoint(path, expected_shapes=None):
    """Read checkpoint from file.

    Arguments:
        path -- path of checkpoint
        expected_shapes -- dictionary mapping parameter names to the shapes
            required by the current configuration (None to skip the check)

    Returns:
        Checkpoint

    Exceptions:
        FileNotFoundError -- no file at path
        CheckpointCorruptError -- truncated or malformed document
        CheckpointVersionError -- unsupported format version
        CheckpointShapeError -- parameter shapes differ from expected_shapes
    """
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as in_file:
            document = json.loads(in_file.read())
    except ValueError as err:
        raise CheckpointCorruptError(path, 'invalid JSON (%s)' % err) from None
    if not isinstance(document, dict) or document.get('format') != FORMAT:
        raise CheckpointCorruptError(path, 'not a %s document' % FORMAT)
    if document.get('version') != FORMAT_VERSION:
        raise CheckpointVersionError(path, document.get('version'))
    try:
        student = _decode_arrays(document['student'], path)
        teacher = _decode_arrays(document['teacher'], path)
        memory = (None if document['memory'] is None
                  else contrast.PrototypeMemory.from_dict(document['memory']))
        checkpoint = Checkpoint(FORMAT_VERSION, dict(document['config']),
                                document['phase'], student, teacher, memory,
                                int(document['step']),
                                dict(document['rng_state']),
                                list(document['trace']))
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointCorruptError(path, 'missing or invalid field (%s)'
                                     % err) from None
    if checkpoint.phase not in PHASES:
        raise CheckpointCorruptError(path, 'unknown phase %r'
                                     % checkpoint.phase)
    if expected_shapes is not None:
        for arrays in (student, teacher):
            if arrays is not None:
                _check_shapes(path, arrays, expected_shapes)
    return checkpoint


def _check_shapes(path, arrays, expected_shapes):
    for name in sorted(set(arrays) | set(expected_shapes)):
        found = arrays[name].shape if name in arrays else None
        expected = (tuple(expected_shapes[name]) if name in expected_shapes
                    else None)
        if found != expected:
            raise CheckpointShapeError(path, name, found, expected)
