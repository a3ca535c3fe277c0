# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: class-guided slot contrast

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Global class prototypes are maintained as exponential moving averages of
decoder query embeddings grouped by predicted class. Fine slots are turned
into weighted slots (convex combinations of token features), labelled through
a maximum-similarity one-to-one matching with the queries, and averaged per
class. The contrastive loss pulls each slot prototype toward the global
prototype of its class and away from the others. With a single active class,
the softmax collapses and the loss becomes the negative cosine similarity.

The prototype memory is updated only by update_prototype_memory; no gradient
flows into it.

Classes:
    PrototypeMemory -- global class prototypes with EMA state

Named tuples:
    WeightedSlotSet -- weighted slots and their assigned classes

Functions:
    update_prototype_memory -- EMA update from class-grouped queries
    weighted_slots -- convex combinations of token features
    similarity_matrix -- cosine similarities, zero for zero-norm vectors
    assign_slot_labels -- label slots by matching them with queries
    slot_class_prototypes -- mean weighted slot per assigned class
    slot_contrast_loss -- contrastive (or alignment) loss against memory
"""

__all__ = ['PrototypeMemory', 'WeightedSlotSet', 'update_prototype_memory',
           'weighted_slots', 'similarity_matrix', 'assign_slot_labels',
           'slot_class_prototypes', 'slot_contrast_loss']

import collections
import logging

import numpy as np

from slotadapt._engine import core
from slotadapt._engine.base import NotStochasticError, ShapeError

# Logging (internal)
_misc_logger = logging.getLogger('slotadapt.log')

# Tolerance on row sums of weights
_STOCHASTIC_TOLERANCE = 1e-6

WeightedSlotSet = collections.namedtuple('WeightedSlotSet',
                                         ['slots', 'labels'])
WeightedSlotSet.__doc__ = """Weighted slots.

Fields:
    slots -- Tensor (K, d)
    labels -- tuple of K classes (None for unlabelled slots)
"""


class PrototypeMemory:
    """Global class prototypes with EMA state.

    Classes are numbered 1 to C; row c - 1 holds the prototype of class c.

    Methods:
        __init__ -- initializer
        copy -- independent copy
        active_classes -- classes whose prototype is initialized
        prototype -- prototype of one class
        as_dict -- JSON-compatible representation
        from_dict -- create memory from representation (class method)

    Attributes:
        prototypes -- numpy array (C, d)
        initialized -- numpy boolean array (C)
        beta -- EMA coefficient in [0, 1)
        temperature -- contrast temperature (> 0)
    """

    def __init__(self, num_classes, dim, beta=0.9, temperature=0.1):
        """Initialize memory with no initialized prototype.

        Arguments:
            num_classes -- number of object classes C
            dim -- embedding dimension
            beta -- EMA coefficient in [0, 1)
            temperature -- contrast temperature (> 0)
        """
        if not 0 <= beta < 1:
            raise ValueError('Prototype EMA coefficient must lie in [0, 1).')
        if temperature <= 0:
            raise ValueError('Contrast temperature must be positive.')
        self.prototypes = np.zeros((num_classes, dim))
        self.initialized = np.zeros(num_classes, dtype=bool)
        self.beta = beta
        self.temperature = temperature

    def copy(self):
        """Return independent copy of memory."""
        memory = PrototypeMemory(*self.prototypes.shape, beta=self.beta,
                                 temperature=self.temperature)
        memory.prototypes = self.prototypes.copy()
        memory.initialized = self.initialized.copy()
        return memory

    def active_classes(self):
        """Return sorted list of classes with initialized prototypes."""
        return [int(c) + 1 for c in np.flatnonzero(self.initialized)]

    def prototype(self, label):
        """Return prototype of class label (numpy array)."""
        return self.prototypes[label - 1]

    def as_dict(self):
        """Return JSON-compatible representation."""
        return {'prototypes': self.prototypes.tolist(),
                'initialized': [bool(v) for v in self.initialized],
                'beta': self.beta, 'temperature': self.temperature}

    @classmethod
    def from_dict(cls, value):
        """Create memory from representation returned by as_dict."""
        prototypes = np.array(value['prototypes'], dtype=float)
        memory = cls(*prototypes.shape, beta=value['beta'],
                     temperature=value['temperature'])
        memory.prototypes = prototypes
        memory.initialized = np.array(value['initialized'], dtype=bool)
        return memory


def update_prototype_memory(memory, queries):
    """Update prototypes with the mean query embedding of each class.

    P_c <- beta P_c + (1 - beta) mean of queries predicted as class c. The
    first observation of a class initializes its prototype to the mean;
    classes with no query are unchanged. Background queries are ignored.

    Arguments:
        memory -- PrototypeMemory
        queries -- QuerySet (any leading batch shape)

    Returns:
        new PrototypeMemory
    """
    embeddings = core.tensor(queries.embeddings).value
    embeddings = embeddings.reshape(-1, embeddings.shape[-1])
    classes = np.asarray(queries.classes).reshape(-1)
    updated = memory.copy()
    for label in np.unique(classes):
        if label == 0:
            continue
        mean = embeddings[classes == label].mean(axis=0)
        row = label - 1
        if updated.initialized[row]:
            updated.prototypes[row] = (memory.beta * memory.prototypes[row]
                                       + (1 - memory.beta) * mean)
        else:
            updated.prototypes[row] = mean
            updated.initialized[row] = True
    return updated


def weighted_slots(weights, tokens):
    """Return convex combinations of token features.

    Arguments:
        weights -- Tensor (..., K, N) with nonnegative rows summing to one
        tokens -- Tensor (..., N, d)

    Returns:
        Tensor (..., K, d)

    Exceptions:
        NotStochasticError -- negative weights or row sums differing from one
    """
    weights, tokens = core.tensor(weights), core.tensor(tokens)
    if weights.shape[-1] != tokens.shape[-2]:
        raise ShapeError('weighted_slots', weights.shape, tokens.shape)
    deviation = np.abs(weights.value.sum(axis=-1) - 1.0)
    worst = float(deviation.max()) if deviation.size else 0.0
    if worst > _STOCHASTIC_TOLERANCE or np.any(weights.value < 0):
        raise NotStochasticError('weighted_slots', worst)
    return weights @ tokens


def similarity_matrix(a, b):
    """Cosine similarities of the rows of a and b.

    Pairs involving a zero-norm vector have similarity 0.

    Arguments:
        a -- array (K, d)
        b -- array (M, d)

    Returns:
        numpy array (K, M)
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    norm_a = np.linalg.norm(a, axis=-1)
    norm_b = np.linalg.norm(b, axis=-1)
    scale = np.outer(norm_a, norm_b)
    dot = a @ b.T
    with np.errstate(divide='ignore', invalid='ignore'):
        similarity = np.where(scale > 0, dot / scale, 0.0)
    return np.clip(similarity, -1.0, 1.0)


def assign_slot_labels(slots, queries):
    """Label weighted slots through a one-to-one matching with queries.

    Slot k takes the class of the query it is matched with by maximizing the
    total cosine similarity; slots matched with background queries stay
    unlabelled.

    Arguments:
        slots -- Tensor (K, d) or WeightedSlotSet
        queries -- QuerySet of one image (M >= K queries)

    Returns:
        WeightedSlotSet
    """
    if isinstance(slots, WeightedSlotSet):
        slots = slots.slots
    slots = core.tensor(slots)
    embeddings = core.tensor(queries.embeddings).value
    score = similarity_matrix(slots.value, embeddings)
    assignment = core.hungarian_assign(score, maximize=True)
    labels = [None] * slots.shape[0]
    for row, column in assignment.pairs:
        label = int(queries.classes[column])
        if label != 0:
            labels[row] = label
    return WeightedSlotSet(slots, tuple(labels))


def slot_class_prototypes(slot_sets):
    """Return mean weighted slot of every assigned class.

    Arguments:
        slot_sets -- WeightedSlotSet, or sequence of them (for example one per
            image of a batch)

    Returns:
        dictionary mapping class to Tensor (d); empty without labelled slots
    """
    if isinstance(slot_sets, WeightedSlotSet):
        slot_sets = [slot_sets]
    members = collections.defaultdict(list)
    for slot_set in slot_sets:
        for index, label in enumerate(slot_set.labels):
            if label is not None:
                members[label].append(slot_set.slots[index])
    if not members:
        _misc_logger.debug('No labelled slot: slot prototypes unavailable.')
    prototypes = {}
    for label in sorted(members):
        stacked = core.concat([core.reshape(z, (1, -1))
                               for z in members[label]], axis=0)
        prototypes[label] = core.mean(stacked, axis=0)
    return prototypes


def slot_contrast_loss(memory, slot_prototypes):
    """Contrast slot prototypes against global class prototypes.

    Only classes with both an initialized global prototype and a slot
    prototype of nonzero norm take part. With two or more such classes, the
    loss is the mean over them of
        -log softmax_c'(cos(P_c, z_c') / temperature) at c' = c.
    With a single class, it is -cos(P_c, z_c). Without any, it is zero.

    Arguments:
        memory -- PrototypeMemory (treated as constant)
        slot_prototypes -- dictionary mapping class to Tensor (d)

    Returns:
        scalar Tensor
    """
    active = []
    for label in memory.active_classes():
        if label not in slot_prototypes:
            continue
        if not np.any(memory.prototype(label)) \
                or not np.any(core.tensor(slot_prototypes[label]).value):
            _misc_logger.debug('Class %i skipped: zero-norm prototype.',
                               label)
            continue
        active.append(label)
    if not active:
        _misc_logger.debug('No class shared by memory and slot prototypes: '
                           'contrast loss is zero.')
        return core.tensor(0.0)
    anchors = np.array([memory.prototype(label) for label in active])
    slots = core.concat([core.reshape(slot_prototypes[label], (1, -1))
                         for label in active], axis=0)
    if len(active) == 1:
        return -core.total(core.cosine_similarity(anchors, slots))
    similarity = core.cosine_similarity(
        anchors[:, None, :], core.reshape(slots, (1,) + slots.shape))
    log_p = core.log_softmax(similarity / memory.temperature, axis=-1)
    diagonal = np.arange(len(active))
    return -core.mean(log_p[diagonal, diagonal])
