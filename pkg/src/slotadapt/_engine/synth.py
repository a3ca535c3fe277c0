# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: synthetic shapes benchmark and detection metrics

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Source scenes show one to six saturated shapes (circles, squares and upward
triangles) on a light uniform background. Target scenes share the layout of
the source scene generated from the same seed, but their pixels go through a
hue rotation, a blend toward gray (fog) and clipped Gaussian noise. Layout and
shift draw from different streams of the scene generator, so the ground truth
of a seed does not depend on the domain.

The settings object passed to the functions of this module must provide the
following attributes (RunConfig does): seed, image_size, num_classes,
min_objects, max_objects, fog_alpha, fog_gray, noise_sigma, hue_jitter,
train_scenes and eval_scenes.

Constants:
    CLASS_NAMES -- shape name of each class
    DOMAINS -- domain tags
    SPLITS -- split names
    IOU_MATCH -- IoU required for a detection to match a ground-truth box

Named tuples:
    Scene -- image, ground-truth objects, domain and seed
    EvalResult -- detection metrics

Functions:
    scene_seed -- seed of one scene of a split
    generate_scene -- render one scene
    generate_split -- render every scene of a split
    iou -- intersection over union of two boxes
    evaluate -- AP at IoU 0.5 and F1 at a confidence cut
"""

__all__ = ['CLASS_NAMES', 'DOMAINS', 'SPLITS', 'IOU_MATCH', 'Scene',
           'EvalResult', 'scene_seed', 'generate_scene', 'generate_split',
           'iou', 'evaluate']

import collections
import colorsys
import logging

import numpy as np

from slotadapt._engine import core
from slotadapt._engine.base import DegenerateBoxError
from slotadapt._engine.detector import Target

# Logging (internal)
_misc_logger = logging.getLogger('slotadapt.log')

CLASS_NAMES = {1: 'circle', 2: 'square', 3: 'triangle'}
DOMAINS = ('source', 'target')
SPLITS = ('train', 'eval')
IOU_MATCH = 0.5

# Layout constraints (pixels and IoU)
_MIN_SIZE = 8
_MAX_SIZE = 20
_MAX_OVERLAP = 0.2
_PLACEMENT_TRIES = 50
# Offsets separating the seeds of splits
_SPLIT_OFFSET = {'train': 0, 'eval': 1 << 24}

Scene = collections.namedtuple('Scene', ['image', 'objects', 'domain',
                                         'seed'])
Scene.__doc__ = """Synthetic scene.

Fields:
    image -- numpy array (H, W, 3) of values in [0, 1]
    objects -- tuple of Target objects (normalized cx, cy, w, h and class)
    domain -- 'source' or 'target'
    seed -- scene seed
"""

EvalResult = collections.namedtuple(
    'EvalResult', ['ap', 'mean_ap', 'precision', 'recall', 'f1', 'tp', 'fp',
                   'fn', 'empty'])
EvalResult.__doc__ = """Detection metrics.

Fields:
    ap -- dictionary mapping class to 11-point AP at IoU 0.5 (classes with
        ground truth only)
    mean_ap -- mean of ap values
    precision, recall, f1 -- at the confidence cut
    tp, fp, fn -- counts at the confidence cut
    empty -- True when there was neither ground truth nor detection (perfect
        scores by convention)
"""


def scene_seed(settings, split, index):
    """Return seed of scene index of split."""
    return settings.seed * (1 << 26) + _SPLIT_OFFSET[split] + index


def _place_objects(rng, settings):
    """Draw object classes, sizes and positions (pixel units)."""
    size = settings.image_size
    count = rng.integers(settings.min_objects, settings.max_objects + 1)
    placed = []
    for _ in range(count):
        for _ in range(_PLACEMENT_TRIES):
            label = rng.integers(1, settings.num_classes + 1)
            extent = rng.integers(_MIN_SIZE, min(_MAX_SIZE, size) + 1)
            x0 = rng.integers(0, size - extent + 1)
            y0 = rng.integers(0, size - extent + 1)
            hue = float(rng.uniform())
            candidate = (label, x0, y0, extent, hue)
            box = _pixel_box(candidate, size)
            if all(iou(box, _pixel_box(other, size)) < _MAX_OVERLAP
                   for other in placed):
                break
        placed.append(candidate)
    return placed


def _pixel_box(obj, size):
    """Normalized (cx, cy, w, h) of object drawn as square extent."""
    _, x0, y0, extent, _ = obj
    return ((x0 + extent / 2) / size, (y0 + extent / 2) / size,
            extent / size, extent / size)


def _render(placed, background, size):
    """Paint objects over a uniform background."""
    image = np.empty((size, size, 3))
    image[...] = background
    y, x = np.mgrid[0:size, 0:size] + 0.5
    for label, x0, y0, extent, hue in placed:
        color = colorsys.hsv_to_rgb(hue, 1.0, 0.9)
        cx, cy, half = x0 + extent / 2, y0 + extent / 2, extent / 2
        if label == 1:
            inside = (x - cx) ** 2 + (y - cy) ** 2 <= half ** 2
        elif label == 2:
            inside = (np.abs(x - cx) <= half) & (np.abs(y - cy) <= half)
        else:
            depth = (y - y0) / extent
            inside = (depth >= 0) & (depth <= 1) \
                & (np.abs(x - cx) <= depth * half)
        image[inside] = color
    return image


def _rotate_hue(image, shift):
    """Rotate hue of every distinct color of image."""
    flat = image.reshape(-1, 3)
    colors, inverse = np.unique(flat, axis=0, return_inverse=True)
    rotated = []
    for color in colors:
        h, s, v = colorsys.rgb_to_hsv(*color)
        rotated.append(colorsys.hsv_to_rgb((h + shift) % 1.0, s, v))
    return np.array(rotated)[np.ravel(inverse)].reshape(image.shape)


def generate_scene(rng, domain, settings):
    """Render one scene.

    Arguments:
        rng -- Rng whose seed identifies the scene
        domain -- 'source' or 'target'
        settings -- benchmark settings

    Returns:
        Scene
    """
    if domain not in DOMAINS:
        raise ValueError('Unknown domain: %s' % domain)
    layout = rng.fork(0)
    size = settings.image_size
    background = 0.8 + 0.2 * layout.uniform(3)
    placed = _place_objects(layout, settings)
    image = _render(placed, background, size)
    objects = tuple(Target(_pixel_box(obj, size), obj[0]) for obj in placed)
    if domain == 'target':
        shift = rng.fork(1)
        if settings.hue_jitter > 0:
            angle = settings.hue_jitter * (2 * shift.uniform() - 1)
            image = _rotate_hue(image, angle)
        image = ((1 - settings.fog_alpha) * image
                 + settings.fog_alpha * settings.fog_gray)
        if settings.noise_sigma > 0:
            image = image + settings.noise_sigma * shift.normal(image.shape)
        image = np.clip(image, 0.0, 1.0)
    return Scene(image, objects, domain, rng.seed)


def generate_split(settings, domain, split):
    """Render every scene of a split.

    Arguments:
        settings -- benchmark settings
        domain -- 'source' or 'target'
        split -- 'train' or 'eval'

    Returns:
        list of Scene objects
    """
    count = settings.train_scenes if split == 'train' \
        else settings.eval_scenes
    return [generate_scene(core.Rng(scene_seed(settings, split, index)),
                           domain, settings)
            for index in range(count)]


def iou(box_a, box_b):
    """Intersection over union of two (cx, cy, w, h) boxes.

    Exceptions:
        DegenerateBoxError -- non-positive width or height
    """
    for box in (box_a, box_b):
        if box[2] <= 0 or box[3] <= 0:
            raise DegenerateBoxError(box)
    ax1, ay1 = box_a[0] - box_a[2] / 2, box_a[1] - box_a[3] / 2
    bx1, by1 = box_b[0] - box_b[2] / 2, box_b[1] - box_b[3] / 2
    ax2, ay2 = ax1 + box_a[2], ay1 + box_a[3]
    bx2, by2 = bx1 + box_b[2], by1 + box_b[3]
    width = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    height = max(0.0, min(ay2, by2) - max(ay1, by1))
    intersection = width * height
    union = box_a[2] * box_a[3] + box_b[2] * box_b[3] - intersection
    return intersection / union


def _match(candidates, ground_truth):
    """Greedy matching of sorted detections to ground truth of one class.

    Arguments:
        candidates -- list of (confidence, scene, box) sorted by priority
        ground_truth -- dictionary mapping scene to list of boxes

    Returns:
        list of booleans (True for true positives)
    """
    used = {scene: [False] * len(boxes)
            for scene, boxes in ground_truth.items()}
    outcome = []
    for _, scene, box in candidates:
        best, best_index = IOU_MATCH, None
        for index, gt_box in enumerate(ground_truth.get(scene, ())):
            if used[scene][index]:
                continue
            overlap = iou(box, gt_box)
            if overlap >= best:
                best, best_index = overlap, index
        if best_index is None:
            outcome.append(False)
        else:
            used[scene][best_index] = True
            outcome.append(True)
    return outcome


def _eleven_point_ap(outcome, positives):
    """11-point interpolated average precision."""
    if positives == 0:
        return 0.0
    hits = np.cumsum(outcome, dtype=float)
    ranks = np.arange(1, len(outcome) + 1)
    precision = hits / ranks if len(outcome) else np.zeros(0)
    recall = hits / positives if len(outcome) else np.zeros(0)
    total = 0.0
    for level in np.linspace(0.0, 1.0, 11):
        reached = precision[recall >= level - 1e-12]
        total += reached.max() if reached.size else 0.0
    return total / 11


def evaluate(detections, ground_truth, num_classes, confidence_cut=0.5):
    """Average precision at IoU 0.5 and F1 at a confidence cut.

    Detections are ranked by decreasing confidence, ties broken by lower scene
    index, then lower box centre x. Each detection matches the unmatched
    ground-truth box of its class with the highest IoU, if at least 0.5.

    Arguments:
        detections -- list (one per scene) of lists of Detection objects
        ground_truth -- list (one per scene) of sequences of Target objects
        num_classes -- number of classes C
        confidence_cut -- minimum confidence counted for F1

    Returns:
        EvalResult
    """
    if len(detections) != len(ground_truth):
        raise ValueError('Detections and ground truth cover %i and %i scenes.'
                         % (len(detections), len(ground_truth)))
    total_gt = sum(len(objects) for objects in ground_truth)
    total_det = sum(len(d) for d in detections)
    if total_gt == 0 and total_det == 0:
        _misc_logger.info('Empty evaluation: perfect scores by convention.')
        return EvalResult({}, 1.0, 1.0, 1.0, 1.0, 0, 0, 0, True)
    ap = {}
    tp = fp = 0
    for label in range(1, num_classes + 1):
        truth = collections.defaultdict(list)
        for scene, objects in enumerate(ground_truth):
            for obj in objects:
                if obj.label == label:
                    truth[scene].append(obj.box)
        positives = sum(len(boxes) for boxes in truth.values())
        candidates = sorted(
            ((d.confidence, scene, d.box)
             for scene, scene_detections in enumerate(detections)
             for d in scene_detections if d.label == label),
            key=lambda c: (-c[0], c[1], c[2][0]))
        if positives:
            ap[label] = _eleven_point_ap(_match(candidates, truth),
                                         positives)
        kept = [c for c in candidates if c[0] >= confidence_cut]
        outcome = _match(kept, truth)
        tp += sum(outcome)
        fp += len(outcome) - sum(outcome)
    fn = total_gt - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / total_gt if total_gt else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    mean_ap = float(np.mean(list(ap.values()))) if ap else 0.0
    return EvalResult(ap, mean_ap, precision, recall, f1, tp, fp, fn, False)
