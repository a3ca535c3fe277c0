# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: source pretraining and teacher-student target adaptation

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Pretraining minimizes the detection loss on labelled source images plus the
weighted reconstruction loss. Adaptation starts with student and teacher
equal to the pretrained parameters. After a burn-in stage during which the
student is trained on reconstruction alone, every step:
    1. runs the teacher and keeps its detections whose confidence reaches the
       scheduled threshold;
    2. runs the student and updates the prototype memory with its detached
       query embeddings;
    3. combines the detection loss on the pseudo labels, the weighted
       slot-contrast loss against the updated memory and the weighted
       reconstruction loss;
    4. takes one gradient step on the student;
    5. moves the teacher toward the student by exponential moving average.

Detection losses are means over images. The reconstruction term of the
objective is the plain sum of squared errors; trace rows report it per token
of the batch.

The settings object passed to the functions of this module must provide the
attributes listed in the model module plus lr, slot_lr, burn_in,
adapt_steps, schedule, tau_min, tau_max, tau_fix, exp_decay, sigmoid_k,
focal_alpha, focal_gamma, cost_l1, cost_giou, lambda_rec, lambda_con,
use_contrast, teacher_gamma, prototype_beta and temperature.

Constants:
    SCHEDULE_KINDS -- supported threshold schedules
    SLOT_PREFIXES -- parameter names trained at the slot learning rate
    TRACE_COLUMNS -- keys of trace rows, in CSV column order

Classes:
    ThresholdSchedule -- confidence threshold as a function of the step
    AdaptState -- student, teacher, memory, step counter and traces

Functions:
    threshold_at -- threshold at one step
    schedule_from_settings -- adaptation schedule from settings
    filter_pseudo_labels -- keep detections of sufficient confidence
    teacher_ema_update -- move teacher toward student
    batch_indices -- deterministic batch of scene indices for one step
    pretrain_step -- one supervised source step
    adapt_step -- one adaptation step
"""

__all__ = ['SCHEDULE_KINDS', 'SLOT_PREFIXES', 'TRACE_COLUMNS',
           'ThresholdSchedule', 'AdaptState', 'threshold_at',
           'schedule_from_settings', 'filter_pseudo_labels',
           'teacher_ema_update', 'batch_indices', 'pretrain_step',
           'adapt_step']

import logging
import math

import numpy as np

from slotadapt._engine import contrast
from slotadapt._engine import core
from slotadapt._engine import detector
from slotadapt._engine import hierarchy
from slotadapt._engine import model
from slotadapt._engine import theory
from slotadapt._engine.base import ShapeError, StepRangeError

# Logging (internal)
_misc_logger = logging.getLogger('slotadapt.log')
_step_logger = logging.getLogger('slotadapt.steps')

SCHEDULE_KINDS = ('fixed', 'cosine', 'exponential', 'sigmoid')
TRACE_COLUMNS = ('step', 'phase', 'tau', 'pseudo_labels', 'empty_images',
                 'l_unsup', 'l_rec', 'l_con', 'total', 'margin', 'kappa_min',
                 'kappa_mean', 'kappa_max', 'fused_norm')
SLOT_PREFIXES = ('coarse.', 'fine.', 'coarse_decoder.', 'fine_decoder.')

# Stream of the generator drawing batch permutations (one stream per epoch
# from this offset on)
_BATCH_STREAM = 1 << 32


class ThresholdSchedule:
    """Confidence threshold as a function of the step.

    Methods:
        __init__ -- initializer and validation

    Attributes:
        kind -- 'fixed', 'cosine', 'exponential' or 'sigmoid'
        tau_min, tau_max -- bounds in (0, 1)
        total -- number of steps S (threshold defined on [0, S])
        exp_decay -- decay rate of exponential schedule
        sigmoid_k -- steepness of sigmoid schedule
        tau_fix -- value of fixed schedule
    """

    def __init__(self, kind='cosine', tau_min=0.40, tau_max=0.55, total=500,
                 exp_decay=0.01, sigmoid_k=10.0, tau_fix=0.50):
        """Initialize and validate schedule.

        Exceptions:
            ValueError -- invalid parameter
        """
        if kind not in SCHEDULE_KINDS:
            raise ValueError('Unknown schedule: %s' % kind)
        if not 0 < tau_min <= tau_max < 1:
            raise ValueError('Thresholds must satisfy 0 < tau_min <= tau_max '
                             '< 1.')
        if not 0 < tau_fix < 1:
            raise ValueError('Fixed threshold must lie in (0, 1).')
        if total < 1:
            raise ValueError('Schedule needs at least one step.')
        self.kind = kind
        self.tau_min = tau_min
        self.tau_max = tau_max
        self.total = total
        self.exp_decay = exp_decay
        self.sigmoid_k = sigmoid_k
        self.tau_fix = tau_fix


def threshold_at(schedule, step):
    """Return confidence threshold at step.

    cosine: tau_min + (tau_max - tau_min) (1 + cos(pi s / S)) / 2
    exponential: tau_min + (tau_max - tau_min) exp(-exp_decay s)
    sigmoid: tau_min + (tau_max - tau_min) sigmoid(sigmoid_k (s / S - 1/2))
    fixed: tau_fix

    The sigmoid schedule increases with s.

    Exceptions:
        StepRangeError -- step outside of [0, S]
    """
    if not 0 <= step <= schedule.total:
        raise StepRangeError(step, schedule.total)
    span = schedule.tau_max - schedule.tau_min
    if schedule.kind == 'fixed':
        return schedule.tau_fix
    elif schedule.kind == 'cosine':
        return schedule.tau_min + span * (
            1 + math.cos(math.pi * step / schedule.total)) / 2
    elif schedule.kind == 'exponential':
        return schedule.tau_min + span * math.exp(-schedule.exp_decay * step)
    else:
        argument = schedule.sigmoid_k * (step / schedule.total - 0.5)
        return schedule.tau_min + span / (1 + math.exp(-argument))


def schedule_from_settings(settings):
    """Return threshold schedule covering the post-burn-in steps."""
    return ThresholdSchedule(
        kind=settings.schedule, tau_min=settings.tau_min,
        tau_max=settings.tau_max,
        total=settings.adapt_steps - settings.burn_in,
        exp_decay=settings.exp_decay, sigmoid_k=settings.sigmoid_k,
        tau_fix=settings.tau_fix)


def filter_pseudo_labels(detections, tau):
    """Keep detections whose confidence is at least tau.

    Arguments:
        detections -- sequence of Detection objects
        tau -- threshold

    Returns:
        list of Target objects
    """
    kept = [detector.Target(d.box, d.label) for d in detections
            if d.confidence >= tau]
    _misc_logger.debug('%i of %i detections kept at threshold %.4f.',
                       len(kept), len(detections), tau)
    return kept


class AdaptState:
    """Student, teacher, prototype memory, step counter and traces.

    Methods:
        __init__ -- initializer
        from_pretrained -- state with student and teacher equal (class
            method)

    Attributes:
        student, teacher -- dictionaries of numpy arrays with equal shapes
        gamma -- teacher EMA decay in [0, 1)
        step -- number of adaptation steps taken
        lambda_con, lambda_rec -- loss weights
        memory -- PrototypeMemory
        rng -- Rng used for slot initialization
        trace -- list of trace rows (dictionaries keyed by TRACE_COLUMNS)
    """

    def __init__(self, student, teacher, memory, rng, gamma=0.9993,
                 lambda_con=0.05, lambda_rec=1.0, step=0, trace=None):
        """Initialize state.

        Exceptions:
            ShapeError -- student and teacher parameters differ in shape
            ValueError -- gamma outside of [0, 1)
        """
        if not 0 <= gamma < 1:
            raise ValueError('Teacher EMA decay must lie in [0, 1).')
        if set(student) != set(teacher):
            raise ShapeError('AdaptState', (len(student),), (len(teacher),))
        for name, value in student.items():
            if np.shape(value) != np.shape(teacher[name]):
                raise ShapeError('AdaptState', np.shape(value),
                                 np.shape(teacher[name]))
        self.student = {k: np.array(v, dtype=float)
                        for k, v in student.items()}
        self.teacher = {k: np.array(v, dtype=float)
                        for k, v in teacher.items()}
        self.memory = memory
        self.rng = rng
        self.gamma = gamma
        self.lambda_con = lambda_con
        self.lambda_rec = lambda_rec
        self.step = step
        self.trace = list(trace) if trace is not None else []

    @classmethod
    def from_pretrained(cls, params, settings, rng):
        """Create state with student and teacher equal to params."""
        memory = contrast.PrototypeMemory(settings.num_classes, settings.dim,
                                          beta=settings.prototype_beta,
                                          temperature=settings.temperature)
        return cls(params, params, memory, rng, gamma=settings.teacher_gamma,
                   lambda_con=settings.lambda_con,
                   lambda_rec=settings.lambda_rec)


def teacher_ema_update(state):
    """Set teacher to gamma teacher + (1 - gamma) student, in place.

    Returns:
        state
    """
    gamma = state.gamma
    state.teacher = {name: gamma * value + (1 - gamma) * state.student[name]
                     for name, value in state.teacher.items()}
    return state


def batch_indices(seed, step, batch_size, count):
    """Return scene indices of the batch used at a step.

    Scenes are visited in a fresh permutation every epoch, so the batch
    depends only on the seed and the step.
    """
    indices = []
    for position in range(step * batch_size, (step + 1) * batch_size):
        epoch, offset = divmod(position, count)
        order = core.Rng(seed, _BATCH_STREAM + epoch).permutation(count)
        indices.append(int(order[offset]))
    return indices


def _rates(settings):
    """Learning rates of the slot hierarchy parameters."""
    return dict.fromkeys(SLOT_PREFIXES, settings.slot_lr)


def _per_token(reconstruction, output):
    """Reconstruction loss value per token of the batch."""
    tokens = core.tensor(output.features.tokens)
    return reconstruction.item() / int(np.prod(tokens.shape[:-1]))


def _detection_term(predictions, targets, settings):
    """Mean detection loss over images with at least one target."""
    losses = []
    for index, image_targets in enumerate(targets):
        if not image_targets:
            continue
        losses.append(detector.detection_loss(
            detector.select(predictions, index), image_targets,
            alpha=settings.focal_alpha, gamma=settings.focal_gamma,
            cost_l1=settings.cost_l1, cost_giou=settings.cost_giou))
    if not losses:
        return None
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    return total / len(losses)


def pretrain_step(params, images, targets, settings, rng):
    """Take one supervised gradient step on labelled source images.

    The loss is the mean detection loss plus lambda_rec times the summed
    squared reconstruction error when slots are used. The reconstruction
    value returned is that error per token of the batch.

    Arguments:
        params -- dictionary of numpy arrays
        images -- numpy array (B, H, W, 3)
        targets -- list of B lists of Target objects
        settings -- run settings
        rng -- Rng for slot initialization

    Returns:
        2-tuple: updated parameters and dictionary of loss values (detection,
        reconstruction, total)
    """
    with core.GradGraph() as graph:
        leaves = graph.leaves_by_name(params)
        output = model.forward(leaves, images, settings, rng)
        detection = [detector.detection_loss(
            detector.select(output.predictions, index), image_targets,
            alpha=settings.focal_alpha, gamma=settings.focal_gamma,
            cost_l1=settings.cost_l1, cost_giou=settings.cost_giou)
            for index, image_targets in enumerate(targets)]
        detection_total = detection[0]
        for loss in detection[1:]:
            detection_total = detection_total + loss
        detection_total = detection_total / len(detection)
        total = detection_total
        reconstruction = None
        if output.hierarchy is not None:
            reconstruction = hierarchy.rec_loss(output.hierarchy,
                                                output.features)
            total = total + settings.lambda_rec * reconstruction
    grads = core.backward(graph, total)
    updated = core.sgd_update(params, grads, settings.lr, _rates(settings))
    losses = {'detection': detection_total.item(),
              'reconstruction': (None if reconstruction is None
                                 else _per_token(reconstruction, output)),
              'total': total.item()}
    return updated, losses


def _contrast_inputs(output):
    """Labelled weighted slots of every image of a batch."""
    weights = output.hierarchy.weights
    tokens = core.tensor(output.features.tokens)
    slot_sets = []
    for index in range(tokens.shape[0]):
        slots = contrast.weighted_slots(weights[index], tokens[index])
        slot_sets.append(contrast.assign_slot_labels(
            slots, detector.select(output.predictions, index)))
    return slot_sets


def _margin(memory, slot_sets):
    """Cosine-margin gain of labelled weighted slots against memory."""
    prototypes = {label: memory.prototype(label)
                  for label in memory.active_classes()}
    embeddings, labels = [], []
    for slot_set in slot_sets:
        values = core.tensor(slot_set.slots).value
        for value, label in zip(values, slot_set.labels):
            if label is not None:
                embeddings.append(value)
                labels.append(label)
    if not embeddings or not prototypes:
        return None
    return theory.margin_gain(prototypes, np.array(embeddings), labels).gain


def adapt_step(state, images, settings):
    """Take one adaptation step on unlabelled target images, in place.

    Arguments:
        state -- AdaptState
        images -- numpy array (B, H, W, 3)
        settings -- run settings

    Returns:
        state, with one more trace row
    """
    burn_in = state.step < settings.burn_in
    row = dict.fromkeys(TRACE_COLUMNS)
    row['step'] = state.step
    row['phase'] = 'burn-in' if burn_in else 'adapt'
    targets = None
    if not burn_in:
        schedule = schedule_from_settings(settings)
        tau = threshold_at(schedule, state.step - settings.burn_in)
        teacher_output = model.forward(state.teacher, images, settings,
                                       state.rng)
        targets = [filter_pseudo_labels(detector.to_detections(
                       detector.select(teacher_output.predictions, index)),
                       tau)
                   for index in range(len(images))]
        row['tau'] = tau
        row['pseudo_labels'] = sum(len(t) for t in targets)
        row['empty_images'] = sum(1 for t in targets if not t)
        if row['empty_images']:
            _misc_logger.debug('Step %i: %i images without pseudo labels '
                               '(detection loss skipped for them).',
                               state.step, row['empty_images'])
    slot_sets = []
    with core.GradGraph() as graph:
        leaves = graph.leaves_by_name(state.student)
        output = model.forward(leaves, images, settings, state.rng)
        total = core.tensor(0.0)
        if output.hierarchy is not None:
            reconstruction = hierarchy.rec_loss(output.hierarchy,
                                                output.features)
            total = total + state.lambda_rec * reconstruction
            row['l_rec'] = _per_token(reconstruction, output)
        if not burn_in:
            state.memory = contrast.update_prototype_memory(
                state.memory, output.predictions)
            unsup = _detection_term(output.predictions, targets, settings)
            if unsup is not None:
                total = total + unsup
                row['l_unsup'] = unsup.item()
            if settings.use_contrast and output.hierarchy is not None:
                slot_sets = _contrast_inputs(output)
                con = contrast.slot_contrast_loss(
                    state.memory, contrast.slot_class_prototypes(slot_sets))
                total = total + state.lambda_con * con
                row['l_con'] = con.item()
    grads = core.backward(graph, total)
    state.student = core.sgd_update(state.student, grads, settings.lr,
                                    _rates(settings))
    row['total'] = total.item()
    if output.hierarchy is not None:
        kappas = theory.kappa_report(
            core.tensor(output.hierarchy.weights).value)
        row['kappa_min'] = kappas.minimum
        row['kappa_mean'] = kappas.mean
        row['kappa_max'] = kappas.maximum
        fused = core.tensor(output.queries).value - leaves['queries'].value
        row['fused_norm'] = float(np.linalg.norm(fused, axis=-1).mean())
    if not burn_in:
        if slot_sets:
            row['margin'] = _margin(state.memory, slot_sets)
        teacher_ema_update(state)
    state.trace.append(row)
    _step_logger.debug(' '.join('%s=%s' % (key, _format(row[key]))
                                for key in TRACE_COLUMNS))
    state.step += 1
    return state


def _format(value):
    if isinstance(value, float):
        return '%.6g' % value
    return str(value)
