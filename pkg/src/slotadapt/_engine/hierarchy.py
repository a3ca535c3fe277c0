# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: hierarchical slot decomposition and slot-aware queries

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

The coarse level decomposes the token features into n slots. Each of the n
per-slot reconstructions then serves as the input feature map of a second
slot-attention pass producing n fine slots, and the n * n fine slots are
decoded against the original token grid. Both combined reconstructions are
supervised against the input features.

Parameter prefixes:
    coarse, fine -- slot-attention parameters of each level
    coarse_decoder, fine_decoder -- decoder parameters of each level
    map -- slot-to-query mapper: W (d x s * d_q), b (s * d_q)

Classes:
    HierarchyConfig -- depth, slots per level and iterations

Named tuples:
    HierarchyOutput -- slots, masks, reconstructions and weights of both levels

Functions:
    decompose -- two-level (or single-level) slot decomposition
    rec_loss -- reconstruction loss summed over levels
    normalize_weights -- renormalize masks across tokens
    fuse_slot_queries -- add mapped fine slots to object queries
"""

__all__ = ['MAX_DEPTH', 'HierarchyConfig', 'HierarchyOutput', 'decompose',
           'rec_loss', 'normalize_weights', 'fuse_slot_queries']

import collections

from slotadapt._engine import core
from slotadapt._engine import slots as slots_
from slotadapt._engine.base import ShapeError

MAX_DEPTH = 2

HierarchyOutput = collections.namedtuple(
    'HierarchyOutput',
    ['coarse_slots', 'fine_slots', 'coarse_masks', 'fine_masks',
     'coarse_recon', 'fine_recon', 'weights', 'depth'])
HierarchyOutput.__doc__ = """Output of decompose.

Fields:
    coarse_slots -- Tensor (..., n, d)
    fine_slots -- Tensor (..., n ** depth, d)
    coarse_masks -- Tensor (..., n, N)
    fine_masks -- Tensor (..., n ** depth, N)
    coarse_recon, fine_recon -- combined reconstructions (..., N, d)
    weights -- fine masks normalized across tokens (..., n ** depth, N)
    depth -- 1 or 2
"""


class HierarchyConfig:
    """Depth, slots per level and iterations of the decomposition.

    Methods:
        __init__ -- initializer and validation

    Properties (read-only):
        fine_slots -- total number of fine slots (n ** depth)

    Attributes:
        depth, n, iters, dim, axis, learn_init
    """

    def __init__(self, depth=2, n=5, iters=3, dim=16, axis='tokens',
                 learn_init=True):
        """Initialize and validate configuration.

        Arguments:
            depth -- 1 or 2
            n -- slots per level (>= 2)
            iters -- attention iterations per level (>= 1)
            dim -- feature dimension d
            axis -- attention normalization ('tokens' or 'slots')
            learn_init -- whether the slot Gaussian is trained

        Exceptions:
            ValueError -- invalid value
        """
        if depth not in (1, MAX_DEPTH):
            raise ValueError('Hierarchy depth must be 1 or 2, got %s.'
                             % depth)
        if n < 2:
            raise ValueError('At least two slots per level are required.')
        if iters < 1 or dim < 1:
            raise ValueError('Iterations and dimension must be positive.')
        if axis not in slots_.ATTENTION_AXES:
            raise ValueError('Unknown attention axis: %s' % axis)
        self.depth = depth
        self.n = n
        self.iters = iters
        self.dim = dim
        self.axis = axis
        self.learn_init = learn_init

    @property
    def fine_slots(self):
        """Total number of fine slots."""
        return self.n ** self.depth


def normalize_weights(masks):
    """Renormalize competition masks across tokens (rows sum to one)."""
    masks = core.tensor(masks)
    return masks / core.total(masks, axis=-1, keepdims=True)


def decompose(features, config, rng, params):
    """Decompose token features into coarse and fine slots.

    Arguments:
        features -- FeatureMap (..., N, d)
        config -- HierarchyConfig
        rng -- Rng for slot initialization
        params -- dictionary of parameters (see module documentation)

    Returns:
        HierarchyOutput; with depth 1, fine fields repeat the coarse ones

    Exceptions:
        ShapeError -- feature dimension differs from configuration
    """
    tokens = core.tensor(features.tokens)
    if tokens.shape[-1] != config.dim:
        raise ShapeError('decompose', tokens.shape, (config.dim,))
    coarse = slots_.run_slot_attention(
        features, config.n, config.iters, rng,
        slots_.sub_params(params, 'coarse'), axis=config.axis, level=1,
        learn_init=config.learn_init)
    coarse_parts, coarse_masks = slots_.decode_slots(
        coarse, features.grid, slots_.sub_params(params, 'coarse_decoder'))
    coarse_recon, _ = slots_.reconstruct_and_loss(coarse_parts, coarse_masks,
                                                  features)
    if config.depth == 1:
        return HierarchyOutput(
            coarse.slots, coarse.slots, coarse_masks.masks,
            coarse_masks.masks, coarse_recon, coarse_recon,
            normalize_weights(coarse_masks.masks), 1)
    # Each per-slot reconstruction (..., n, N, d) is a feature map of its own.
    fine_input = slots_.FeatureMap(coarse_parts, features.grid)
    fine = slots_.run_slot_attention(
        fine_input, config.n, config.iters, rng,
        slots_.sub_params(params, 'fine'), axis=config.axis, level=2,
        learn_init=config.learn_init)
    batch = tokens.shape[:-2]
    fine_slots = core.reshape(fine.slots,
                              batch + (config.fine_slots, config.dim))
    fine_set = slots_.SlotSet(fine_slots, 2, fine.iterations)
    fine_parts, fine_masks = slots_.decode_slots(
        fine_set, features.grid, slots_.sub_params(params, 'fine_decoder'))
    fine_recon, _ = slots_.reconstruct_and_loss(fine_parts, fine_masks,
                                                features)
    return HierarchyOutput(coarse.slots, fine_slots, coarse_masks.masks,
                           fine_masks.masks, coarse_recon, fine_recon,
                           normalize_weights(fine_masks.masks), 2)


def rec_loss(output, features):
    """Sum of squared reconstruction errors of both levels.

    With depth 1 there is a single level and a single term.

    Arguments:
        output -- HierarchyOutput
        features -- FeatureMap used as target (treated as constant)

    Returns:
        scalar Tensor
    """
    target = core.detach(features.tokens)
    error = core.tensor(output.coarse_recon) - target
    loss = core.total(error * error)
    if output.depth == MAX_DEPTH:
        error = core.tensor(output.fine_recon) - target
        loss = loss + core.total(error * error)
    return loss


def fuse_slot_queries(queries, fine_slots, params):
    """Add mapped fine slots to object queries, segment by segment.

    Slot k is mapped by z_k W + b to s * d_q values reshaped into s rows,
    which are added to query rows k * s to (k + 1) * s - 1.

    Arguments:
        queries -- object queries (M, d_q)
        fine_slots -- Tensor (..., K, d)
        params -- mapper parameters W (d x s * d_q) and b (s * d_q)

    Returns:
        Tensor (..., M, d_q)

    Exceptions:
        ShapeError -- M not divisible by K, or mapper of wrong width
    """
    queries = core.tensor(queries)
    fine_slots = core.tensor(fine_slots)
    count, width = queries.shape
    slot_count = fine_slots.shape[-2]
    if count % slot_count:
        raise ShapeError('fuse_slot_queries', queries.shape, fine_slots.shape)
    segment = count // slot_count
    if params['W'].shape[-1] != segment * width:
        raise ShapeError('fuse_slot_queries', params['W'].shape,
                         (fine_slots.shape[-1], segment * width))
    mapped = fine_slots @ params['W'] + params['b']
    mapped = core.reshape(mapped, fine_slots.shape[:-2] + (count, width))
    return queries + mapped
