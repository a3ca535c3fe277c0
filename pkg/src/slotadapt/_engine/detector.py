# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: query-based detection head and detection losses

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

The detector is deliberately small: a patch encoder produces token features,
and a single cross-attention layer lets the M (slot-aware) object queries read
from the tokens before a residual feed-forward block. A class head emits C + 1
logits per query, with index 0 standing for background and 1 to C for object
classes, and a box head emits sigmoid-squashed (cx, cy, w, h) boxes.

Training matches predictions to targets one-to-one with hungarian_assign on a
cost combining class probability, L1 box distance and generalized IoU, then
applies a softmax focal loss to every query (background for unmatched ones)
and L1 plus GIoU losses to matched queries.

Parameters of the detection head (prefix detector):
    W_q, W_k, W_v, W_o (d x d); W_f1 (d x 2d), b_f1 (2d); W_f2 (2d x d),
    b_f2 (d); W_cls (d x C + 1), b_cls (C + 1); W_box (d x 4), b_box (4)
Parameters of the patch encoder (prefix encoder):
    W (3 p^2 x d), b (d)

Constants:
    BACKGROUND -- class index of background
    FOCAL_ALPHA, FOCAL_GAMMA -- default focal-loss parameters
    COST_L1, COST_GIOU -- default weights of box terms in cost and loss

Named tuples:
    QuerySet -- per-query embeddings, logits, boxes and derived predictions
    Detection -- box, class and confidence of one query
    Target -- box and class of one ground-truth or pseudo-label object

Functions:
    patchify -- split images into flattened non-overlapping patches
    encode_image -- project patches to token features
    detect -- cross-attention decoding of queries into predictions
    select -- predictions of one image of a batch
    to_detections -- convert predictions of one image into detections
    box_corners -- convert (cx, cy, w, h) boxes to corner form
    generalized_iou -- differentiable generalized IoU of paired boxes
    focal_loss -- softmax focal loss of every query
    match_targets -- one-to-one matching of targets to queries
    detection_loss -- matched focal, L1 and GIoU loss of one image
"""

__all__ = ['BACKGROUND', 'FOCAL_ALPHA', 'FOCAL_GAMMA', 'COST_L1', 'COST_GIOU',
           'QuerySet', 'Detection', 'Target', 'patchify', 'encode_image',
           'detect', 'select', 'to_detections', 'box_corners',
           'generalized_iou', 'focal_loss', 'match_targets',
           'detection_loss']

import collections
import logging
import math

import numpy as np
import scipy.special

from slotadapt._engine import core
from slotadapt._engine import slots as slots_
from slotadapt._engine.base import ShapeError

# Logging (internal)
_misc_logger = logging.getLogger('slotadapt.log')

BACKGROUND = 0
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
COST_L1 = 5.0
COST_GIOU = 2.0

QuerySet = collections.namedtuple(
    'QuerySet',
    ['embeddings', 'logits', 'boxes', 'confidences', 'labels', 'classes'])
QuerySet.__doc__ = """Predictions of the detection head.

Fields:
    embeddings -- decoder output per query, Tensor (..., M, d)
    logits -- class logits, Tensor (..., M, C + 1), background at index 0
    boxes -- Tensor (..., M, 4) of (cx, cy, w, h) in (0, 1)
    confidences -- numpy array (..., M): maximum non-background probability
    labels -- numpy array (..., M): most probable non-background class
    classes -- numpy array (..., M): most probable class, background included
"""

Detection = collections.namedtuple('Detection', ['box', 'label',
                                                 'confidence'])
Detection.__doc__ = """Detection of one query.

Fields:
    box -- tuple (cx, cy, w, h), normalized
    label -- class in 1 to C
    confidence -- probability of label
"""

Target = collections.namedtuple('Target', ['box', 'label'])
Target.__doc__ = """Ground-truth or pseudo-label object.

Fields:
    box -- tuple (cx, cy, w, h), normalized
    label -- class in 1 to C
"""


def patchify(images, patch_size):
    """Split images into flattened non-overlapping patches.

    Arguments:
        images -- numpy array (..., H, W, 3)
        patch_size -- edge p of square patches

    Returns:
        2-tuple: numpy array (..., N, 3 p^2) in row-major patch order, and grid
        (H / p, W / p)

    Exceptions:
        ShapeError -- H or W not divisible by p
    """
    images = np.asarray(images, dtype=float)
    height, width, channels = images.shape[-3:]
    if height % patch_size or width % patch_size:
        raise ShapeError('patchify', images.shape, (patch_size, patch_size))
    rows, columns = height // patch_size, width // patch_size
    batch = images.shape[:-3]
    patches = images.reshape(batch + (rows, patch_size, columns, patch_size,
                                      channels))
    patches = np.moveaxis(patches, -4, -3)
    patches = patches.reshape(batch + (rows * columns,
                                       patch_size * patch_size * channels))
    return patches, (rows, columns)


def encode_image(images, params, patch_size):
    """Project non-overlapping patches linearly to token features.

    Arguments:
        images -- numpy array (..., H, W, 3) of values in [0, 1]
        params -- encoder parameters W and b
        patch_size -- edge of square patches

    Returns:
        FeatureMap with tokens (..., N, d)
    """
    patches, grid = patchify(images, patch_size)
    tokens = core.tensor(patches) @ params['W'] + params['b']
    return slots_.FeatureMap(tokens, grid)


def detect(features, queries, params):
    """Decode queries against token features into predictions.

    Arguments:
        features -- FeatureMap (..., N, d)
        queries -- Tensor (..., M, d), broadcastable against the batch
        params -- detection-head parameters

    Returns:
        QuerySet
    """
    tokens, queries = core.tensor(features.tokens), core.tensor(queries)
    dim = queries.shape[-1]
    if tokens.shape[-1] != dim:
        raise ShapeError('detect', tokens.shape, queries.shape)
    keys = tokens @ params['W_k']
    values = tokens @ params['W_v']
    logits = ((queries @ params['W_q']) @ keys.T) / math.sqrt(dim)
    attention = core.softmax(logits, axis=-1)
    x = queries + (attention @ values) @ params['W_o']
    x = x + core.tanh(x @ params['W_f1'] + params['b_f1']) @ params['W_f2'] \
        + params['b_f2']
    class_logits = x @ params['W_cls'] + params['b_cls']
    boxes = core.sigmoid(x @ params['W_box'] + params['b_box'])
    probabilities = scipy.special.softmax(class_logits.value, axis=-1)
    foreground = probabilities[..., 1:]
    return QuerySet(x, class_logits, boxes,
                    foreground.max(axis=-1),
                    foreground.argmax(axis=-1) + 1,
                    probabilities.argmax(axis=-1))


def select(query_set, index):
    """Return predictions of one image of a batch."""
    return QuerySet(query_set.embeddings[index], query_set.logits[index],
                    query_set.boxes[index], query_set.confidences[index],
                    query_set.labels[index], query_set.classes[index])


def to_detections(query_set):
    """Convert predictions of one image into one detection per query.

    Arguments:
        query_set -- QuerySet of one image (M queries)

    Returns:
        list of Detection objects in query order
    """
    boxes = core.tensor(query_set.boxes).value
    return [Detection(tuple(float(v) for v in box), int(label),
                      float(confidence))
            for box, label, confidence in zip(boxes, query_set.labels,
                                              query_set.confidences)]


def box_corners(boxes):
    """Convert (cx, cy, w, h) boxes to (x1, y1, x2, y2) tensors."""
    boxes = core.tensor(boxes)
    cx, cy = boxes[..., 0], boxes[..., 1]
    half_w, half_h = 0.5 * boxes[..., 2], 0.5 * boxes[..., 3]
    return cx - half_w, cy - half_h, cx + half_w, cy + half_h


def generalized_iou(boxes_a, boxes_b):
    """Generalized IoU of paired (cx, cy, w, h) boxes.

    GIoU = IoU - (|C| - |A u B|) / |C|, with C the smallest enclosing box.

    Arguments:
        boxes_a, boxes_b -- tensors or arrays (..., 4) with positive sizes

    Returns:
        Tensor (...) with values in (-1, 1]
    """
    ax1, ay1, ax2, ay2 = box_corners(boxes_a)
    bx1, by1, bx2, by2 = box_corners(boxes_b)
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    inter_w = core.maximum(core.minimum(ax2, bx2) - core.maximum(ax1, bx1),
                           0.0)
    inter_h = core.maximum(core.minimum(ay2, by2) - core.maximum(ay1, by1),
                           0.0)
    intersection = inter_w * inter_h
    union = area_a + area_b - intersection
    hull = (core.maximum(ax2, bx2) - core.minimum(ax1, bx1)) \
        * (core.maximum(ay2, by2) - core.minimum(ay1, by1))
    return intersection / union - (hull - union) / hull


def focal_loss(logits, target_classes, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA):
    """Softmax focal loss summed over queries.

    Each query contributes -a_t (1 - p_t)^gamma log p_t, where p_t is the
    softmax probability of its target class and a_t is alpha for object
    classes and 1 - alpha for background.

    Arguments:
        logits -- Tensor (M, C + 1)
        target_classes -- integer sequence of length M
        alpha -- weight of object classes
        gamma -- focusing exponent

    Returns:
        scalar Tensor
    """
    logits = core.tensor(logits)
    target_classes = np.asarray(target_classes, dtype=int)
    if target_classes.shape != logits.shape[:-1]:
        raise ShapeError('focal_loss', logits.shape, target_classes.shape)
    rows = np.arange(target_classes.size)
    log_p = core.log_softmax(logits, axis=-1)[rows, target_classes]
    p = core.exp(log_p)
    weight = np.where(target_classes == BACKGROUND, 1.0 - alpha, alpha)
    return core.total(-weight * (1.0 - p) ** gamma * log_p)


def match_targets(predictions, targets, cost_l1=COST_L1,
                  cost_giou=COST_GIOU):
    """Match targets to queries one-to-one at minimum cost.

    The cost of assigning target t to query i is
        -p_i(c_t) + cost_l1 * |b_i - b_t|_1 + cost_giou * (1 - GIoU(b_i, b_t))

    Arguments:
        predictions -- QuerySet of one image
        targets -- list of Target objects (at most M)
        cost_l1, cost_giou -- weights of box terms

    Returns:
        Assignment of target indices (rows) to query indices (columns)
    """
    if not targets:
        return core.Assignment((), 0.0)
    probabilities = scipy.special.softmax(
        core.tensor(predictions.logits).value, axis=-1)
    boxes = core.tensor(predictions.boxes).value
    target_boxes = np.array([t.box for t in targets], dtype=float)
    labels = np.array([t.label for t in targets], dtype=int)
    class_cost = -probabilities[:, labels].T
    l1_cost = np.abs(target_boxes[:, None, :] - boxes[None, :, :]).sum(-1)
    giou = generalized_iou(np.broadcast_to(target_boxes[:, None, :],
                                           l1_cost.shape + (4,)),
                           np.broadcast_to(boxes[None, :, :],
                                           l1_cost.shape + (4,))).value
    cost = class_cost + cost_l1 * l1_cost + cost_giou * (1.0 - giou)
    return core.hungarian_assign(cost, maximize=False)


def detection_loss(predictions, targets, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA,
                   cost_l1=COST_L1, cost_giou=COST_GIOU):
    """Matched detection loss of one image.

    Matched queries incur the focal loss of their target class plus
    cost_l1 * L1 + cost_giou * (1 - GIoU); unmatched queries incur the focal
    loss of background. The total is divided by max(1, number of targets).
    Targets beyond the number of queries are dropped with a warning.

    Arguments:
        predictions -- QuerySet of one image (M queries)
        targets -- list of Target objects, possibly empty
        alpha, gamma -- focal-loss parameters
        cost_l1, cost_giou -- weights of box terms in matching and loss

    Returns:
        scalar Tensor
    """
    logits = core.tensor(predictions.logits)
    count = logits.shape[0]
    targets = list(targets)
    if len(targets) > count:
        _misc_logger.warning('Dropping %i targets beyond the %i queries.',
                             len(targets) - count, count)
        targets = targets[:count]
    if not targets:
        _misc_logger.debug('No targets: classification-only loss.')
    assignment = match_targets(predictions, targets, cost_l1, cost_giou)
    target_classes = np.full(count, BACKGROUND)
    for row, column in assignment.pairs:
        target_classes[column] = targets[row].label
    loss = focal_loss(logits, target_classes, alpha, gamma)
    if assignment.pairs:
        rows = [row for row, _ in assignment.pairs]
        columns = np.array([column for _, column in assignment.pairs])
        matched = core.tensor(predictions.boxes)[columns]
        target_boxes = np.array([targets[row].box for row in rows],
                                dtype=float)
        l1 = core.total(core.absolute(matched - target_boxes))
        giou = core.total(1.0 - generalized_iou(matched, target_boxes))
        loss = loss + cost_l1 * l1 + cost_giou * giou
    return loss / max(1, len(targets))
