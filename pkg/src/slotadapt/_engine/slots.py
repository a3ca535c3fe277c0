# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: single-level slot attention

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Slots are bound to token features by iterated attention and a gated recurrent
update, then decoded with a spatial-broadcast MLP into per-slot
reconstructions and mask logits. Masks compete across slots (softmax over the
slot axis), and the mask-weighted reconstruction is compared with the input
features by a sum of squared errors.

All functions accept leading batch axes: tokens of shape (..., N, d) give
slots of shape (..., K, d).

Parameters are read from dictionaries keyed by name:
    slot attention -- mu, log_var (d); W_q, W_k, W_v (d x d); gru.W_z, gru.U_z,
        gru.b_z, gru.W_r, gru.U_r, gru.b_r, gru.W_h, gru.U_h, gru.b_h
    decoder -- W1 (d + 4 x 2d), b1 (2d), W2 (2d x 2d), b2 (2d),
        W3 (2d x d + 1), b3 (d + 1)

Constants:
    ATTENTION_AXES -- supported normalizations of the attention weights
    POSITION_CHANNELS -- number of channels of the positional code

Named tuples:
    FeatureMap -- token features of one image (or batch) and grid size
    SlotSet -- slot vectors with level tag and iteration count
    MaskStack -- competition masks and their logits

Functions:
    positional_code -- linear ramps for broadcast decoding
    init_slots -- sample initial slots from learned Gaussian
    slot_attention_step -- one attention and recurrent update
    run_slot_attention -- initialization followed by iterated steps
    decode_slots -- per-slot reconstructions and competition masks
    reconstruct_and_loss -- combined reconstruction and squared error
    sub_params -- select parameters sharing a name prefix
"""

__all__ = ['ATTENTION_AXES', 'POSITION_CHANNELS', 'FeatureMap', 'SlotSet',
           'MaskStack', 'positional_code', 'init_slots',
           'slot_attention_step', 'run_slot_attention', 'decode_slots',
           'reconstruct_and_loss', 'sub_params']

import collections
import math

import numpy as np

from slotadapt._engine import core
from slotadapt._engine.base import ShapeError

ATTENTION_AXES = ('tokens', 'slots')
POSITION_CHANNELS = 4

# Added to attention weights before renormalization over tokens when
# normalizing across slots.
_EPSILON = 1e-8

FeatureMap = collections.namedtuple('FeatureMap', ['tokens', 'grid'])
FeatureMap.__doc__ = """Token features.

Fields:
    tokens -- Tensor (..., N, d)
    grid -- (H_p, W_p) with H_p * W_p = N
"""

SlotSet = collections.namedtuple('SlotSet', ['slots', 'level', 'iterations'])
SlotSet.__doc__ = """Slot vectors.

Fields:
    slots -- Tensor (..., K, d)
    level -- 1 (coarse) or 2 (fine)
    iterations -- number of attention steps applied
"""

MaskStack = collections.namedtuple('MaskStack', ['masks', 'logits'])
MaskStack.__doc__ = """Competition masks.

Fields:
    masks -- Tensor (..., K, N), summing to one over K for every token
    logits -- Tensor (..., K, N)
"""


def sub_params(params, prefix):
    """Select parameters whose name starts with prefix and strip it.

    Arguments:
        params -- dictionary keyed by dotted names
        prefix -- prefix without trailing dot

    Returns:
        dictionary keyed by the remainder of the names
    """
    start = len(prefix) + 1
    return {name[start:]: value for name, value in params.items()
            if name.startswith(prefix + '.')}


def positional_code(grid):
    """Return linear ramps (left, right, top, bottom) for every token.

    Arguments:
        grid -- (H_p, W_p)

    Returns:
        numpy array (H_p * W_p, 4), row-major over the grid
    """
    rows, columns = grid
    y = np.linspace(0.0, 1.0, rows) if rows > 1 else np.zeros(1)
    x = np.linspace(0.0, 1.0, columns) if columns > 1 else np.zeros(1)
    yy, xx = np.meshgrid(y, x, indexing='ij')
    xx, yy = xx.reshape(-1), yy.reshape(-1)
    return np.stack([xx, 1.0 - xx, yy, 1.0 - yy], axis=-1)


def init_slots(rng, count, params, batch=(), level=1, learn=True):
    """Sample initial slots as mu + exp(log_var / 2) * eps.

    Arguments:
        rng -- Rng supplying the standard normal deviates eps
        count -- number of slots K (>= 1)
        params -- slot-attention parameters (mu and log_var are used)
        batch -- leading batch shape
        level -- level tag of the returned slot set
        learn -- whether gradients flow into mu and log_var

    Returns:
        SlotSet with zero iterations
    """
    if count < 1:
        raise ValueError('At least one slot is required.')
    mu, log_var = params['mu'], params['log_var']
    if not learn:
        mu, log_var = core.detach(mu), core.detach(log_var)
    dim = mu.shape[-1]
    noise = rng.normal(tuple(batch) + (count, dim))
    slots = mu + core.exp(0.5 * core.tensor(log_var)) * noise
    return SlotSet(slots, level, 0)


def slot_attention_step(slot_set, features, params, axis='tokens'):
    """Apply one attention step and recurrent update to every slot.

    With axis='tokens', the attention logits (z_k W_q)(h_i W_k)^T / sqrt(d) are
    normalized over the token index i, and the update is the attention-weighted
    sum of h_i W_v. With axis='slots', they are normalized across slots, then
    renormalized over tokens to form a weighted mean.

    Arguments:
        slot_set -- SlotSet (..., K, d)
        features -- FeatureMap (..., N, d)
        params -- slot-attention parameters
        axis -- 'tokens' or 'slots'

    Returns:
        SlotSet with one more iteration

    Exceptions:
        ShapeError -- slot and feature dimensions differ
    """
    slots, tokens = core.tensor(slot_set.slots), core.tensor(features.tokens)
    dim = slots.shape[-1]
    if tokens.shape[-1] != dim:
        raise ShapeError('slot_attention_step', slots.shape, tokens.shape)
    if axis not in ATTENTION_AXES:
        raise ValueError('Unknown attention axis: %s' % axis)
    queries = slots @ params['W_q']
    keys = tokens @ params['W_k']
    values = tokens @ params['W_v']
    logits = (queries @ core.swapaxes(keys, -1, -2)) / math.sqrt(dim)
    if axis == 'tokens':
        attention = core.softmax(logits, axis=-1)
    else:
        attention = core.softmax(logits, axis=-2) + _EPSILON
        attention = attention / core.total(attention, axis=-1, keepdims=True)
    updates = attention @ values
    new_slots = core.gru_cell(updates, slots, sub_params(params, 'gru'))
    return SlotSet(new_slots, slot_set.level, slot_set.iterations + 1)


def run_slot_attention(features, count, iterations, rng, params,
                       axis='tokens', level=1, learn_init=True):
    """Initialize slots and apply several attention steps.

    Arguments:
        features -- FeatureMap (..., N, d)
        count -- number of slots K
        iterations -- number of steps (>= 1)
        rng -- Rng for slot initialization
        params -- slot-attention parameters
        axis -- attention normalization ('tokens' or 'slots')
        level -- level tag of the slots
        learn_init -- whether gradients flow into the initial distribution

    Returns:
        SlotSet
    """
    if iterations < 1:
        raise ValueError('At least one slot-attention iteration is required.')
    batch = core.tensor(features.tokens).shape[:-2]
    slot_set = init_slots(rng, count, params, batch=batch, level=level,
                          learn=learn_init)
    for _ in range(iterations):
        slot_set = slot_attention_step(slot_set, features, params, axis)
    return slot_set


def decode_slots(slot_set, grid, params):
    """Decode every slot into a per-slot reconstruction and mask logits.

    Each slot is broadcast to the N grid positions and concatenated with the
    positional code before a shared MLP (two tanh hidden layers of width 2d)
    emitting d + 1 channels: d for the reconstruction, one for the mask logit.

    Arguments:
        slot_set -- SlotSet (..., K, d)
        grid -- (H_p, W_p) of the target feature map
        params -- decoder parameters

    Returns:
        2-tuple: per-slot reconstructions (..., K, N, d) and MaskStack
    """
    slots = core.tensor(slot_set.slots)
    dim = slots.shape[-1]
    position = positional_code(grid)
    weights = params['W1']
    # Linear layer on [slot, position] split into its two blocks of rows.
    slot_part = core.reshape(slots @ weights[:dim],
                             slots.shape[:-1] + (1, weights.shape[-1]))
    position_part = core.tensor(position) @ weights[dim:]
    hidden = core.tanh(slot_part + position_part + params['b1'])
    hidden = core.tanh(hidden @ params['W2'] + params['b2'])
    output = hidden @ params['W3'] + params['b3']
    recon = output[..., :dim]
    logits = output[..., dim]
    masks = core.softmax(logits, axis=-2)
    return recon, MaskStack(masks, logits)


def reconstruct_and_loss(recon, masks, features):
    """Combine per-slot reconstructions and compute squared error.

    The target features are treated as constants.

    Arguments:
        recon -- per-slot reconstructions (..., K, N, d)
        masks -- MaskStack (..., K, N)
        features -- FeatureMap (..., N, d)

    Returns:
        2-tuple: combined reconstruction (..., N, d) and scalar loss (sum of
        squared errors over all entries, including batch entries)
    """
    recon = core.tensor(recon)
    mask_values = core.tensor(masks.masks)
    target = core.detach(features.tokens)
    if recon.shape[:-1] != mask_values.shape \
            or recon.shape[-2:] != target.shape[-2:]:
        raise ShapeError('reconstruct_and_loss', recon.shape,
                         mask_values.shape, target.shape)
    mask_shape = mask_values.shape + (1,)
    combined = core.total(recon * core.reshape(mask_values, mask_shape),
                          axis=-3)
    error = combined - target
    return combined, core.total(error * error)
