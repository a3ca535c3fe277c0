# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

import logging
import random

import numpy as np
import pytest

from slotadapt._config import RunConfig
from slotadapt._engine import core
from slotadapt._engine import synth
from slotadapt._engine.base import DegenerateBoxError
from slotadapt._engine.detector import Detection, Target

SETTINGS = RunConfig(image_size=32, train_scenes=6, eval_scenes=4,
                     batch_size=2)


def test_null_shift_keeps_pixels():
    settings = SETTINGS.replace(fog_alpha=0.0, noise_sigma=0.0,
                                hue_jitter=0.0)
    for seed in range(5):
        source = synth.generate_scene(core.Rng(seed), 'source', settings)
        target = synth.generate_scene(core.Rng(seed), 'target', settings)
        np.testing.assert_array_equal(source.image, target.image)


@pytest.mark.parametrize('seed', range(10))
def test_shift_preserves_annotations(seed):
    source = synth.generate_scene(core.Rng(seed), 'source', SETTINGS)
    target = synth.generate_scene(core.Rng(seed), 'target', SETTINGS)
    assert source.objects == target.objects
    assert target.domain == 'target'
    assert target.seed == seed
    assert not np.array_equal(source.image, target.image)
    assert target.image.min() >= 0 and target.image.max() <= 1


def test_object_count_and_boxes_within_range():
    settings = SETTINGS.replace(image_size=24, min_objects=2, max_objects=4)
    counts = set()
    for seed in range(10 ** 4):
        scene = synth.generate_scene(core.Rng(seed), 'source', settings)
        counts.add(len(scene.objects))
        for obj in scene.objects:
            cx, cy, w, h = obj.box
            assert -1e-12 <= cx - w / 2 and cx + w / 2 <= 1 + 1e-12
            assert -1e-12 <= cy - h / 2 and cy + h / 2 <= 1 + 1e-12
            assert 1 <= obj.label <= 3
    assert counts == {2, 3, 4}


def test_scene_image():
    scene = synth.generate_scene(core.Rng(3), 'source', SETTINGS)
    assert scene.image.shape == (32, 32, 3)
    assert scene.image.min() >= 0 and scene.image.max() <= 1


def test_single_class():
    settings = SETTINGS.replace(num_classes=1)
    for seed in range(20):
        scene = synth.generate_scene(core.Rng(seed), 'source', settings)
        assert all(obj.label == 1 for obj in scene.objects)


def test_unknown_domain():
    with pytest.raises(ValueError):
        synth.generate_scene(core.Rng(0), 'night', SETTINGS)


def test_generate_split():
    train = synth.generate_split(SETTINGS, 'source', 'train')
    again = synth.generate_split(SETTINGS, 'source', 'train')
    evaluation = synth.generate_split(SETTINGS, 'target', 'eval')
    assert len(train) == 6
    assert len(evaluation) == 4
    assert [s.seed for s in train] == [synth.scene_seed(SETTINGS, 'train', i)
                                       for i in range(6)]
    assert not {s.seed for s in train} & {s.seed for s in evaluation}
    for first, second in zip(train, again):
        np.testing.assert_array_equal(first.image, second.image)


def test_scene_seed_depends_on_run_seed():
    assert synth.scene_seed(SETTINGS, 'train', 0) \
        != synth.scene_seed(SETTINGS.replace(seed=1), 'train', 0)


iou_cases = [
        ((0.5, 0.5, 0.2, 0.2), (0.5, 0.5, 0.2, 0.2), 1.0),
        ((0.2, 0.2, 0.1, 0.1), (0.8, 0.8, 0.1, 0.1), 0.0),
        ((0.5, 0.5, 1.0, 1.0), (1.0, 0.5, 1.0, 1.0), 1 / 3),
    ]


@pytest.mark.parametrize(('box_a', 'box_b', 'expected'), iou_cases)
def test_iou(box_a, box_b, expected):
    assert synth.iou(box_a, box_b) == pytest.approx(expected)
    assert synth.iou(box_b, box_a) == pytest.approx(expected)


def test_iou_degenerate():
    with pytest.raises(DegenerateBoxError):
        synth.iou((0.5, 0.5, 0.0, 0.1), (0.5, 0.5, 0.1, 0.1))


def _truth():
    return [(Target((0.3, 0.3, 0.2, 0.2), 1),
             Target((0.7, 0.7, 0.2, 0.2), 2)),
            (Target((0.5, 0.5, 0.3, 0.3), 1),)]


def _perfect():
    return [[Detection(t.box, t.label, 1.0) for t in scene]
            for scene in _truth()]


def test_evaluate_perfect():
    result = synth.evaluate(_perfect(), _truth(), 3)
    assert result.ap == {1: 1.0, 2: 1.0}
    assert result.mean_ap == 1.0
    assert result.f1 == 1.0
    assert (result.tp, result.fp, result.fn) == (3, 0, 0)
    assert not result.empty


def test_evaluate_no_detections():
    result = synth.evaluate([[], []], _truth(), 3)
    assert result.mean_ap == 0.0
    assert result.f1 == 0.0
    assert result.fn == 3


def test_evaluate_one_true_one_false_positive():
    truth = [(Target((0.3, 0.3, 0.2, 0.2), 1),)]
    detections = [[Detection((0.3, 0.3, 0.2, 0.2), 1, 0.9),
                   Detection((0.8, 0.8, 0.1, 0.1), 1, 0.8)]]
    result = synth.evaluate(detections, truth, 1)
    assert result.precision == pytest.approx(0.5)
    assert result.recall == pytest.approx(1.0)
    assert result.f1 == pytest.approx(2 / 3)
    assert result.ap[1] == pytest.approx(1.0)


def test_evaluate_confidence_cut():
    detections = [[Detection(t.box, t.label, 0.4) for t in scene]
                  for scene in _truth()]
    result = synth.evaluate(detections, _truth(), 3, confidence_cut=0.5)
    assert result.tp == 0
    assert result.fn == 3
    assert result.mean_ap == 1.0


def test_evaluate_duplicate_detection():
    truth = [(Target((0.3, 0.3, 0.2, 0.2), 1),)]
    detections = [[Detection((0.3, 0.3, 0.2, 0.2), 1, 0.6),
                   Detection((0.31, 0.3, 0.2, 0.2), 1, 0.9)]]
    result = synth.evaluate(detections, truth, 1)
    assert (result.tp, result.fp, result.fn) == (1, 1, 0)


def test_evaluate_empty(caplog):
    with caplog.at_level(logging.INFO, logger='slotadapt'):
        result = synth.evaluate([[], []], [(), ()], 3)
    assert 'perfect scores by convention' in caplog.text
    assert result.empty
    assert result.f1 == 1.0 and result.mean_ap == 1.0


def test_evaluate_scene_count_mismatch():
    with pytest.raises(ValueError):
        synth.evaluate([[]], [(), ()], 3)


@pytest.mark.parametrize('seed', range(5))
def test_evaluate_order_invariant(seed):
    rng = core.Rng(seed)
    detections = []
    for scene in _truth():
        scene_detections = [Detection(t.box, t.label, float(rng.uniform()))
                            for t in scene]
        scene_detections.append(Detection((0.5, 0.2, 0.1, 0.1), 1,
                                          float(rng.uniform())))
        detections.append(scene_detections)
    expected = synth.evaluate(detections, _truth(), 3)
    shuffler = random.Random(seed)
    for scene_detections in detections:
        shuffler.shuffle(scene_detections)
    assert synth.evaluate(detections, _truth(), 3) == expected
