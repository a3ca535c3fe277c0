# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: parameter layout and batched forward pass of the full model

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

The settings object passed to the functions of this module must provide the
following attributes (RunConfig does): image_size, patch_size, dim,
num_classes, queries, depth, n, iters, attention_axis, learn_slot_init and
use_slots.

The slot hierarchy decomposes the token features as constants: reconstruction
gradients reach the slot and decoder parameters but not the encoder.

Named tuples:
    ModelOutput -- intermediate and final results of forward

Functions:
    hierarchy_config -- HierarchyConfig from settings
    init_params -- initial parameter dictionary
    param_shapes -- shape of every parameter
    forward -- encode, decompose, fuse and detect a batch of images
"""

__all__ = ['ModelOutput', 'hierarchy_config', 'init_params', 'param_shapes',
           'forward']

import collections

import numpy as np

from slotadapt._engine import core
from slotadapt._engine import detector
from slotadapt._engine import hierarchy
from slotadapt._engine import slots as slots_

ModelOutput = collections.namedtuple(
    'ModelOutput', ['features', 'hierarchy', 'queries', 'predictions'])
ModelOutput.__doc__ = """Result of forward.

Fields:
    features -- FeatureMap (B, N, d)
    hierarchy -- HierarchyOutput, or None without slots
    queries -- queries fed to the decoder, Tensor (B, M, d)
    predictions -- QuerySet (B, M, ...)
"""

_GRU = ('W_z', 'U_z', 'b_z', 'W_r', 'U_r', 'b_r', 'W_h', 'U_h', 'b_h')


def hierarchy_config(settings):
    """Return HierarchyConfig matching settings."""
    return hierarchy.HierarchyConfig(
        depth=settings.depth, n=settings.n, iters=settings.iters,
        dim=settings.dim, axis=settings.attention_axis,
        learn_init=settings.learn_slot_init)


def _slot_shapes(prefix, dim):
    shapes = {prefix + '.mu': (dim,), prefix + '.log_var': (dim,)}
    for name in ('W_q', 'W_k', 'W_v'):
        shapes['%s.%s' % (prefix, name)] = (dim, dim)
    for name in _GRU:
        shape = (dim,) if name.startswith('b') else (dim, dim)
        shapes['%s.gru.%s' % (prefix, name)] = shape
    return shapes


def _decoder_shapes(prefix, dim):
    width = 2 * dim
    return {prefix + '.W1': (dim + slots_.POSITION_CHANNELS, width),
            prefix + '.b1': (width,),
            prefix + '.W2': (width, width), prefix + '.b2': (width,),
            prefix + '.W3': (width, dim + 1), prefix + '.b3': (dim + 1,)}


def param_shapes(settings):
    """Return dictionary mapping parameter names to shapes.

    Parameters of both hierarchy levels are always present, so that
    checkpoints of every configuration share one layout.
    """
    dim = settings.dim
    segment = settings.queries // settings.n ** settings.depth
    shapes = {'encoder.W': (3 * settings.patch_size ** 2, dim),
              'encoder.b': (dim,),
              'queries': (settings.queries, dim),
              'map.W': (dim, segment * dim),
              'map.b': (segment * dim,)}
    shapes.update(_slot_shapes('coarse', dim))
    shapes.update(_slot_shapes('fine', dim))
    shapes.update(_decoder_shapes('coarse_decoder', dim))
    shapes.update(_decoder_shapes('fine_decoder', dim))
    for name in ('W_q', 'W_k', 'W_v', 'W_o'):
        shapes['detector.' + name] = (dim, dim)
    shapes.update({'detector.W_f1': (dim, 2 * dim),
                   'detector.b_f1': (2 * dim,),
                   'detector.W_f2': (2 * dim, dim),
                   'detector.b_f2': (dim,),
                   'detector.W_cls': (dim, settings.num_classes + 1),
                   'detector.b_cls': (settings.num_classes + 1,),
                   'detector.W_box': (dim, 4),
                   'detector.b_box': (4,)})
    return shapes


def init_params(settings, rng):
    """Return initial parameters.

    Matrices are standard normal deviates scaled by 1 / sqrt(fan-in), biases
    and slot log-variances are zero, and queries and slot means are standard
    normal deviates scaled by 1 / sqrt(d). Parameters are drawn in sorted name
    order.

    Arguments:
        settings -- model settings (see module documentation)
        rng -- Rng

    Returns:
        dictionary of numpy arrays keyed by dotted name
    """
    params = {}
    for name, shape in sorted(param_shapes(settings).items()):
        leaf = name.rsplit('.', 1)[-1]
        if leaf == 'log_var' or leaf.startswith('b'):
            params[name] = np.zeros(shape)
        elif leaf in ('mu', 'queries'):
            params[name] = rng.normal(shape) / np.sqrt(settings.dim)
        else:
            params[name] = rng.normal(shape) / np.sqrt(shape[0])
    return params


def forward(params, images, settings, rng, use_slots=None):
    """Run the full model on a batch of images.

    Arguments:
        params -- dictionary of tensors or arrays keyed by dotted name
        images -- numpy array (B, H, W, 3)
        settings -- model settings (see module documentation)
        rng -- Rng for slot initialization
        use_slots -- whether to decompose into slots and fuse them into the
            queries (default: settings.use_slots)

    Returns:
        ModelOutput
    """
    if use_slots is None:
        use_slots = settings.use_slots
    images = np.asarray(images, dtype=float)
    features = detector.encode_image(images, slots_.sub_params(params,
                                                               'encoder'),
                                     settings.patch_size)
    batch = images.shape[:-3]
    base = core.tensor(params['queries'])
    if use_slots:
        constant = slots_.FeatureMap(core.detach(features.tokens),
                                     features.grid)
        decomposition = hierarchy.decompose(constant,
                                            hierarchy_config(settings), rng,
                                            params)
        queries = hierarchy.fuse_slot_queries(
            base, decomposition.fine_slots,
            slots_.sub_params(params, 'map'))
    else:
        decomposition = None
        queries = core.broadcast_to(base, batch + base.shape)
    predictions = detector.detect(features, queries,
                                  slots_.sub_params(params, 'detector'))
    return ModelOutput(features, decomposition, queries, predictions)
