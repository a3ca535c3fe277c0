# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

import numpy as np
import pytest

from slotadapt._config import RunConfig
from slotadapt._engine import adaptation
from slotadapt._engine import contrast
from slotadapt._engine import core
from slotadapt._engine import detector
from slotadapt._engine import hierarchy
from slotadapt._engine import model
from slotadapt._engine import theory
from slotadapt._engine.base import ShapeError, StepRangeError

SETTINGS = RunConfig(image_size=24, patch_size=8, dim=4, queries=4, n=2,
                     iters=1, batch_size=2, burn_in=1, adapt_steps=4,
                     tau_min=0.05, tau_max=0.1)
TOKENS = 2 * (24 // 8) ** 2


def _images(seed=1):
    return core.Rng(seed).uniform((2, 24, 24, 3))


def _schedule(kind, total=100):
    return adaptation.ThresholdSchedule(kind=kind, tau_min=0.40,
                                        tau_max=0.55, total=total)


threshold_cases = [
        ('cosine', 0, 0.55),
        ('cosine', 100, 0.40),
        ('cosine', 50, 0.475),
        ('sigmoid', 50, 0.475),
        ('exponential', 0, 0.55),
        ('fixed', 37, 0.50),
    ]


@pytest.mark.parametrize(('kind', 'step', 'expected'), threshold_cases)
def test_threshold_at(kind, step, expected):
    assert adaptation.threshold_at(_schedule(kind), step) == pytest.approx(
        expected, abs=1e-12)


@pytest.mark.parametrize(('kind', 'direction'),
                         [('cosine', -1), ('exponential', -1),
                          ('sigmoid', 1)])
def test_threshold_monotone_and_bounded(kind, direction):
    schedule = _schedule(kind)
    values = [adaptation.threshold_at(schedule, s) for s in range(101)]
    assert all(direction * (b - a) >= 0 for a, b in zip(values, values[1:]))
    assert all(0.40 <= v <= 0.55 for v in values)


@pytest.mark.parametrize('step', [-1, 101])
def test_threshold_out_of_range(step):
    with pytest.raises(StepRangeError):
        adaptation.threshold_at(_schedule('cosine'), step)


schedule_error_cases = [
        {'kind': 'linear'},
        {'tau_min': 0.6, 'tau_max': 0.5},
        {'tau_min': 0.0},
        {'tau_max': 1.0},
        {'tau_fix': 1.0},
        {'total': 0},
    ]


@pytest.mark.parametrize('changes', schedule_error_cases)
def test_schedule_rejects(changes):
    with pytest.raises(ValueError):
        adaptation.ThresholdSchedule(**changes)


def test_schedule_from_settings():
    schedule = adaptation.schedule_from_settings(RunConfig(schedule='sigmoid'))
    assert schedule.kind == 'sigmoid'
    assert schedule.total == 480
    assert (schedule.tau_min, schedule.tau_max) == (0.40, 0.55)


def _detections(confidences):
    return [detector.Detection((0.5, 0.5, 0.1, 0.1), 1, c)
            for c in confidences]


filter_cases = [
        ([0.3, 0.5, 0.7], 0.5, 2),
        ([0.3, 0.5, 0.7], 0.0, 3),
        ([0.3, 0.5, 0.7], 0.71, 0),
        ([], 0.5, 0),
    ]


@pytest.mark.parametrize(('confidences', 'tau', 'expected'), filter_cases)
def test_filter_pseudo_labels(confidences, tau, expected):
    kept = adaptation.filter_pseudo_labels(_detections(confidences), tau)
    assert len(kept) == expected
    assert all(isinstance(t, detector.Target) for t in kept)


def test_filter_pseudo_labels_count_nonincreasing():
    detections = _detections(core.Rng(3).uniform(20))
    counts = [len(adaptation.filter_pseudo_labels(detections, tau))
              for tau in np.linspace(0, 1, 21)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def _state(gamma, student, teacher):
    memory = contrast.PrototypeMemory(3, 1)
    return adaptation.AdaptState({'p': np.array(student)},
                                 {'p': np.array(teacher)}, memory,
                                 core.Rng(0), gamma=gamma)


ema_cases = [
        (0.0, [1.0, 2.0], [5.0, 5.0], [1.0, 2.0]),
        (0.9, [0.0], [1.0], [0.9]),
        (0.5, [3.0], [3.0], [3.0]),
    ]


@pytest.mark.parametrize(('gamma', 'student', 'teacher', 'expected'),
                         ema_cases)
def test_teacher_ema_update(gamma, student, teacher, expected):
    state = adaptation.teacher_ema_update(_state(gamma, student, teacher))
    np.testing.assert_allclose(state.teacher['p'], expected, rtol=1e-15)
    np.testing.assert_array_equal(state.student['p'], student)


def test_state_rejects():
    with pytest.raises(ValueError):
        _state(1.0, [0.0], [0.0])
    with pytest.raises(ShapeError):
        _state(0.5, [0.0], [0.0, 1.0])
    with pytest.raises(ShapeError):
        adaptation.AdaptState({'p': 0.0}, {'q': 0.0},
                              contrast.PrototypeMemory(1, 1), core.Rng(0))


def test_from_pretrained():
    params = model.init_params(SETTINGS, core.Rng(0))
    state = adaptation.AdaptState.from_pretrained(params, SETTINGS,
                                                  core.Rng(1))
    assert state.step == 0
    assert state.gamma == SETTINGS.teacher_gamma
    assert state.memory.active_classes() == []
    for name, value in params.items():
        np.testing.assert_array_equal(state.student[name], value)
        np.testing.assert_array_equal(state.teacher[name], value)
    state.student['queries'][0, 0] += 1.0
    assert state.teacher['queries'][0, 0] == params['queries'][0, 0]


def test_batch_indices():
    first = adaptation.batch_indices(7, 0, 4, 8)
    second = adaptation.batch_indices(7, 1, 4, 8)
    assert sorted(first + second) == list(range(8))
    assert first == adaptation.batch_indices(7, 0, 4, 8)
    assert first != adaptation.batch_indices(8, 0, 4, 8)
    wrapped = adaptation.batch_indices(7, 1, 5, 8)
    assert all(0 <= i < 8 for i in wrapped)
    assert len(wrapped) == 5


def _targets():
    return [[detector.Target((0.3, 0.3, 0.2, 0.2), 1)],
            [detector.Target((0.6, 0.5, 0.3, 0.2), 2),
             detector.Target((0.2, 0.7, 0.2, 0.2), 3)]]


def test_pretrain_step_decomposes():
    params = model.init_params(SETTINGS, core.Rng(0))
    updated, losses = adaptation.pretrain_step(params, _images(), _targets(),
                                               SETTINGS, core.Rng(2))
    assert set(updated) == set(params)
    assert any(np.any(updated[n] != params[n]) for n in params)
    output = model.forward(params, _images(), SETTINGS, core.Rng(2))
    detection = np.mean([detector.detection_loss(
        detector.select(output.predictions, i), t).item()
        for i, t in enumerate(_targets())])
    reconstruction = hierarchy.rec_loss(output.hierarchy,
                                        output.features).item()
    assert losses['detection'] == pytest.approx(detection, rel=1e-12)
    assert losses['total'] == pytest.approx(
        detection + SETTINGS.lambda_rec * reconstruction, rel=1e-10)
    assert losses['reconstruction'] == pytest.approx(reconstruction / TOKENS,
                                                     rel=1e-12)


@pytest.mark.parametrize('lambda_rec', [0.5, 3.0])
def test_pretrain_step_weights_summed_reconstruction(lambda_rec):
    params = model.init_params(SETTINGS, core.Rng(0))
    settings = SETTINGS.replace(lambda_rec=lambda_rec)
    _, losses = adaptation.pretrain_step(params, _images(), _targets(),
                                         settings, core.Rng(2))
    assert losses['total'] == pytest.approx(
        losses['detection'] + lambda_rec * TOKENS * losses['reconstruction'],
        rel=1e-10)


@pytest.mark.parametrize(('name', 'rate'),
                         [('coarse.mu', SETTINGS.slot_lr),
                          ('fine_decoder.W1', SETTINGS.slot_lr),
                          ('map.W', SETTINGS.lr),
                          ('detector.W_cls', SETTINGS.lr)])
def test_pretrain_step_learning_rates(name, rate):
    params = model.init_params(SETTINGS, core.Rng(0))
    with core.GradGraph() as graph:
        leaves = graph.leaves_by_name(params)
        output = model.forward(leaves, _images(), SETTINGS, core.Rng(2))
        detection = [detector.detection_loss(
            detector.select(output.predictions, i), t)
            for i, t in enumerate(_targets())]
        total = (detection[0] + detection[1]) / 2 + SETTINGS.lambda_rec \
            * hierarchy.rec_loss(output.hierarchy, output.features)
    grads = core.backward(graph, total)
    updated, _ = adaptation.pretrain_step(params, _images(), _targets(),
                                          SETTINGS, core.Rng(2))
    expected = params[name] - rate * grads[name]
    np.testing.assert_allclose(updated[name], expected, rtol=1e-9,
                               atol=1e-15)


def test_reconstruction_does_not_reach_encoder():
    params = model.init_params(SETTINGS, core.Rng(0))
    with core.GradGraph() as graph:
        leaves = graph.leaves_by_name(params)
        output = model.forward(leaves, _images(), SETTINGS, core.Rng(2))
        loss = hierarchy.rec_loss(output.hierarchy, output.features)
    grads = core.backward(graph, loss)
    assert not np.any(grads.get('encoder.W', 0.0))
    assert np.any(grads['fine_decoder.W1'])


def test_pretrain_step_without_reconstruction_weight():
    params = model.init_params(SETTINGS, core.Rng(0))
    _, losses = adaptation.pretrain_step(
        params, _images(), _targets(), SETTINGS.replace(lambda_rec=0.0),
        core.Rng(2))
    assert losses['total'] == pytest.approx(losses['detection'], rel=1e-12)


def test_pretrain_step_without_slots():
    params = model.init_params(SETTINGS, core.Rng(0))
    updated, losses = adaptation.pretrain_step(
        params, _images(), _targets(), SETTINGS.replace(use_slots=False),
        core.Rng(2))
    assert losses['reconstruction'] is None
    np.testing.assert_array_equal(updated['coarse.mu'], params['coarse.mu'])


def _components(row, state):
    total = 0.0
    for key, weight in (('l_unsup', 1.0), ('l_con', state.lambda_con),
                        ('l_rec', state.lambda_rec * TOKENS)):
        if row[key] is not None:
            total += weight * row[key]
    return total


def test_adapt_step_burn_in_and_adapt():
    params = model.init_params(SETTINGS, core.Rng(0))
    state = adaptation.AdaptState.from_pretrained(params, SETTINGS,
                                                  core.Rng(1))
    adaptation.adapt_step(state, _images(), SETTINGS)
    row = state.trace[-1]
    assert state.step == 1
    assert row['phase'] == 'burn-in'
    assert row['tau'] is None and row['l_unsup'] is None
    assert row['total'] == pytest.approx(_components(row, state), rel=1e-12)
    for name, value in params.items():
        np.testing.assert_array_equal(state.teacher[name], value)
    assert any(np.any(state.student[n] != params[n]) for n in params)

    teacher_before = {n: v.copy() for n, v in state.teacher.items()}
    adaptation.adapt_step(state, _images(2), SETTINGS)
    row = state.trace[-1]
    assert state.step == 2
    assert row['phase'] == 'adapt'
    assert row['tau'] == pytest.approx(adaptation.threshold_at(
        adaptation.schedule_from_settings(SETTINGS), 0))
    assert row['pseudo_labels'] >= 0
    assert row['total'] == pytest.approx(_components(row, state), rel=1e-12)
    assert 0 < row['kappa_min'] <= row['kappa_mean'] <= row['kappa_max'] <= 1
    gamma = state.gamma
    for name in params:
        np.testing.assert_allclose(
            state.teacher[name],
            gamma * teacher_before[name] + (1 - gamma) * state.student[name],
            rtol=1e-12, atol=1e-15)
    assert len(state.trace) == 2
    assert set(row) == set(adaptation.TRACE_COLUMNS)


def test_adapt_step_contrasts_against_updated_memory():
    params = model.init_params(SETTINGS, core.Rng(0))
    params['detector.b_cls'] = np.array([0.0, 20.0, 0.0, 0.0])
    state = adaptation.AdaptState.from_pretrained(params, SETTINGS,
                                                  core.Rng(1))
    adaptation.adapt_step(state, _images(), SETTINGS)
    memory = state.memory
    student = {n: v.copy() for n, v in state.student.items()}
    rng = core.Rng.from_state(state.rng.state)
    adaptation.adapt_step(state, _images(2), SETTINGS)
    row = state.trace[-1]

    model.forward(params, _images(2), SETTINGS, rng)
    output = model.forward(student, _images(2), SETTINGS, rng)
    expected_memory = contrast.update_prototype_memory(memory,
                                                       output.predictions)
    assert memory.active_classes() == []
    assert state.memory.active_classes() == [1]
    np.testing.assert_allclose(state.memory.prototypes,
                               expected_memory.prototypes, rtol=1e-12)
    weights = core.tensor(output.hierarchy.weights)
    tokens = core.tensor(output.features.tokens)
    slot_sets = [contrast.assign_slot_labels(
        contrast.weighted_slots(weights[i], tokens[i]),
        detector.select(output.predictions, i)) for i in range(2)]
    expected = contrast.slot_contrast_loss(
        expected_memory, contrast.slot_class_prototypes(slot_sets)).item()
    assert row['l_con'] != 0
    assert row['l_con'] == pytest.approx(expected, rel=1e-9)
    assert row['margin'] is not None


def test_burn_in_reconstruction_falls():
    settings = SETTINGS.replace(burn_in=150, adapt_steps=200, slot_lr=1e-3)
    params = model.init_params(settings, core.Rng(0))
    params['encoder.b'] = np.array([3.0, -3.0, 3.0, -3.0])
    state = adaptation.AdaptState.from_pretrained(params, settings,
                                                  core.Rng(1))
    for _ in range(100):
        adaptation.adapt_step(state, _images(), settings)
    assert {row['phase'] for row in state.trace} == {'burn-in'}
    trends = theory.trace_summary(state.trace)
    assert trends.rec_ratio < 0.5
    assert trends.margin_slope is None


def test_adapt_step_deterministic():
    params = model.init_params(SETTINGS, core.Rng(0))
    results = []
    for _ in range(2):
        state = adaptation.AdaptState.from_pretrained(params, SETTINGS,
                                                      core.Rng(1))
        for step in range(3):
            adaptation.adapt_step(state, _images(step), SETTINGS)
        results.append(state)
    first, second = results
    for name in params:
        np.testing.assert_array_equal(first.student[name],
                                      second.student[name])
    assert first.trace == second.trace
