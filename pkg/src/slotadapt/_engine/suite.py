# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: self-checks of the analytic properties of the engine

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Each check compares an engine function with an independent oracle (central
finite differences, exhaustive search or a closed form) and yields a Check
record. The suite passes if every check passes.

Named tuples:
    Check -- name, outcome and description of one check
    SuiteReport -- checks, contraction trajectory and gradient residuals

Functions:
    run_suite -- run every check
"""

__all__ = ['Check', 'SuiteReport', 'run_suite']

import collections
import itertools
import logging

import numpy as np

from slotadapt._engine import adaptation
from slotadapt._engine import contrast
from slotadapt._engine import core
from slotadapt._engine import detector
from slotadapt._engine import hierarchy
from slotadapt._engine import model
from slotadapt._engine import slots as slots_
from slotadapt._engine import theory
from slotadapt._engine.base import Timer

# Logging (internal)
_misc_logger = logging.getLogger('slotadapt.log')

Check = collections.namedtuple('Check', ['name', 'passed', 'detail'])
Check.__doc__ = """Outcome of one check.

Fields:
    name -- short identifier
    passed -- Boolean
    detail -- human-readable description of what was measured
"""

SuiteReport = collections.namedtuple(
    'SuiteReport', ['checks', 'trajectory', 'residuals', 'times'])
SuiteReport.__doc__ = """Result of run_suite.

Fields:
    checks -- list of Check objects
    trajectory -- rows (step, eta, error, ratio) of the contraction run
    residuals -- rows (check, seed, residual) of gradient comparisons
    times -- dictionary mapping check name to Timer
"""

# Gradient comparisons
_GRAD_SEEDS = 100
_GRAD_STEP = 1e-4
_GRAD_RTOL = 1e-4
_INFONCE_RTOL = 1e-5
_ATOL = 1e-8

# Assignment comparisons
_HUNGARIAN_SEEDS = 1000
_HUNGARIAN_SIZE = 6

# Contraction example
_CONTRACTION = theory.ContractionParams(alpha=0.5, k=1.0, floor=0.1,
                                        residual=0.02)
_ETA0 = 0.8
_CONTRACTION_STEPS = 60
_RATIO_STEPS = 20

_ModelSettings = collections.namedtuple(
    '_ModelSettings',
    ['image_size', 'patch_size', 'dim', 'num_classes', 'queries', 'depth',
     'n', 'iters', 'attention_axis', 'learn_slot_init', 'use_slots'])
_MODEL = _ModelSettings(image_size=24, patch_size=8, dim=4, num_classes=3,
                        queries=4, depth=2, n=2, iters=1,
                        attention_axis='tokens', learn_slot_init=True,
                        use_slots=True)


def _relative_residual(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(float(np.abs(numeric).max()), _ATOL)
    return float(np.abs(analytic - numeric).max()) / scale


def _tape_grad(f, x):
    """Gradient of scalar tensor function at x through the tape."""
    with core.GradGraph() as graph:
        leaf = graph.leaf(x, 'x')
        output = f(leaf)
    return core.backward(graph, output)['x']


def _detection_function(rng):
    """Detection loss of two queries against one target.

    The first query lies strictly inside the target box and away from its
    center, and the second query far from it, so the matching and every
    minimum and maximum of the box terms stay fixed near the point.
    """
    target = [detector.Target((0.5, 0.5, 0.8, 0.8), 2)]
    inside = np.concatenate([0.42 + 0.06 * rng.uniform(2),
                             0.5 + 0.1 * rng.uniform(2)])
    outside = np.concatenate([0.05 + 0.01 * rng.uniform(2),
                              0.02 + 0.02 * rng.uniform(2)])
    point = np.concatenate([rng.normal((2, _MODEL.num_classes + 1)),
                            np.stack([inside, outside])], axis=1)
    width = _MODEL.num_classes + 1

    def f(x):
        x = core.tensor(x)
        queries = detector.QuerySet(None, x[:, :width], x[:, width:], None,
                                    None, None)
        return detector.detection_loss(queries, target)

    return f, point


def _contrast_function(rng):
    """Slot contrast loss as a function of the slot prototypes."""
    memory = contrast.PrototypeMemory(3, 4, temperature=0.5 + rng.uniform())
    memory.prototypes = rng.normal((3, 4))
    memory.initialized[:] = True

    def f(x):
        x = core.tensor(x)
        return contrast.slot_contrast_loss(memory,
                                           {c: x[c - 1] for c in (1, 2, 3)})

    return f, rng.normal((3, 4))


def _model_functions(seed, rng):
    """Reconstruction loss and model output through the full forward pass."""
    params = model.init_params(_MODEL, rng)
    images = rng.uniform((1, _MODEL.image_size, _MODEL.image_size, 3))
    features = detector.encode_image(
        images, slots_.sub_params(params, 'encoder'), _MODEL.patch_size)

    def reconstruction(x):
        changed = dict(params, **{'fine_decoder.b3': x})
        output = hierarchy.decompose(features, model.hierarchy_config(_MODEL),
                                     core.Rng(seed, 5), changed)
        return hierarchy.rec_loss(output, features)

    def forward(x):
        changed = dict(params, **{'map.b': x})
        output = model.forward(changed, images, _MODEL, core.Rng(seed, 6))
        return core.total(output.predictions.boxes)

    return [('hierarchy-rec', reconstruction, params['fine_decoder.b3']),
            ('model-forward', forward, params['map.b'])]


def _gradient_functions(seed):
    """Differentiable test functions paired with evaluation points."""
    rng = core.Rng(seed, 1)
    weights = 0.5 + rng.uniform(4)
    other = rng.normal(5)
    gru = {name: rng.normal((3, 3)) / 2
           for name in ('W_z', 'U_z', 'W_r', 'U_r', 'W_h', 'U_h')}
    gru.update({name: rng.normal(3) / 2 for name in ('b_z', 'b_r', 'b_h')})
    hidden = np.tanh(rng.normal(3))
    functions = [
        ('softmax-dot-log',
         lambda x: core.log(core.total(core.softmax(x) * weights)),
         rng.normal(4)),
        ('cosine', lambda x: core.cosine_similarity(x, other),
         rng.normal(5)),
        ('gru', lambda x: core.total(core.gru_cell(x, hidden, gru)),
         rng.normal(3)),
    ]
    functions.append(('detection',) + _detection_function(rng))
    functions.append(('slot-contrast',) + _contrast_function(rng))
    return functions + _model_functions(seed, rng)


def _check_backward(residuals):
    worst = {}
    for seed in range(_GRAD_SEEDS):
        for name, f, x in _gradient_functions(seed):
            analytic = _tape_grad(f, x)
            numeric = core.finite_diff_grad(lambda v: f(v).item(), x,
                                            _GRAD_STEP)
            residual = _relative_residual(analytic, numeric)
            residuals.append(('backward-' + name, seed, residual))
            worst[name] = max(worst.get(name, 0.0), residual)
    passed = all(value <= _GRAD_RTOL for value in worst.values())
    detail = ', '.join('%s %.2e' % item for item in sorted(worst.items()))
    return Check('backward', passed,
                 'worst relative residual vs finite differences: ' + detail)


def _brute_force(score):
    rows, columns = score.shape
    return max(sum(score[r, c] for r, c in enumerate(columns_))
               for columns_ in itertools.permutations(range(columns), rows))


def _check_hungarian():
    failures = 0
    count = 0
    for seed in range(_HUNGARIAN_SEEDS):
        rng = core.Rng(seed, 2)
        columns = rng.integers(1, _HUNGARIAN_SIZE + 1)
        rows = rng.integers(1, columns + 1)
        score = rng.normal((rows, columns))
        assignment = core.hungarian_assign(score)
        count += 1
        if abs(assignment.total - _brute_force(score)) > 1e-9:
            failures += 1
    return Check('hungarian', failures == 0,
                 '%i of %i random matrices differ from exhaustive search'
                 % (failures, count))


def _check_infonce(residuals):
    worst = 0.0
    signs = True
    conservation = 0.0
    for seed in range(_GRAD_SEEDS):
        rng = core.Rng(seed, 3)
        temperature = 0.5 + rng.uniform()
        similarities = 2 * rng.uniform(4) - 1
        g_pos, g_neg = theory.infonce_similarity_grads(
            similarities[0], similarities[1:], temperature)
        numeric = core.finite_diff_grad(
            lambda s: theory.infonce(s[0], s[1:], temperature),
            similarities, 1e-6)
        residual = _relative_residual(np.concatenate([[g_pos], g_neg]),
                                      numeric)
        residuals.append(('infonce', seed, residual))
        worst = max(worst, residual)
        signs = signs and g_pos < 0 and bool(np.all(g_neg > 0))
        conservation = max(conservation, abs(abs(g_pos) - g_neg.sum()))
    passed = worst <= _INFONCE_RTOL and signs and conservation <= 1e-10
    return Check('infonce-gradients', passed,
                 'worst residual %.2e, strict signs %s, conservation error '
                 '%.2e' % (worst, signs, conservation))


def _check_margin():
    history = theory.similarity_descent(0.1, [0.3, -0.2, 0.0], 0.1, 0.01, 50)
    increasing = True
    for before, after in zip(history, history[1:]):
        increasing = (increasing and after[0] > before[0]
                      and bool(np.all(after[1] < before[1]))
                      and after[2] > before[2])
    return Check('margin-monotonicity', increasing,
                 'margin %.4f -> %.4f over %i steps'
                 % (history[0][2], history[-1][2], len(history) - 1))


def _check_contraction(trajectory_rows):
    trace = theory.contraction_iterate(_CONTRACTION, _ETA0,
                                       _CONTRACTION_STEPS)
    expected = _CONTRACTION.floor + _CONTRACTION.residual / (
        _CONTRACTION.alpha * _CONTRACTION.k)
    for step, eta in enumerate(trace.trajectory):
        ratio = trace.ratios[step] if step < len(trace.ratios) else None
        trajectory_rows.append((step, eta, abs(eta - trace.fixed_point),
                                ratio))
    converged = abs(trace.trajectory[-1] - expected) <= 1e-9
    ratios = [r for r in trace.ratios[:_RATIO_STEPS] if r is not None]
    affine = all(abs(r - (1 - _CONTRACTION.alpha * _CONTRACTION.k)) <= 1e-9
                 for r in ratios)
    passed = trace.contractive and converged and affine \
        and abs(trace.fixed_point - expected) <= 1e-12
    return Check('contraction', passed,
                 'fixed point %.12f, final iterate %.12f'
                 % (trace.fixed_point, trace.trajectory[-1]))


def _check_kappa():
    size = 16
    one_hot = np.eye(size)[:3]
    uniform = np.full((3, size), 1.0 / size)
    rng = core.Rng(0, 4)
    random_rows = rng.uniform((20, size)) + 1e-3
    random_rows /= random_rows.sum(axis=-1, keepdims=True)
    report = theory.kappa_report(random_rows)
    passed = (np.allclose(theory.kappa_report(one_hot).kappas, 1.0)
              and np.allclose(theory.kappa_report(uniform).kappas, 1 / size)
              and 0 < report.minimum and report.maximum <= 1)
    return Check('kappa-bounds', passed,
                 'random rows: kappa in [%.4f, %.4f]'
                 % (report.minimum, report.maximum))


def _check_schedules():
    total = 500
    cosine = adaptation.ThresholdSchedule('cosine', 0.40, 0.55, total)
    exponential = adaptation.ThresholdSchedule('exponential', 0.40, 0.55,
                                               total, exp_decay=0.01)
    sigmoid = adaptation.ThresholdSchedule('sigmoid', 0.40, 0.55, total)
    fixed = adaptation.ThresholdSchedule('fixed', 0.40, 0.55, total,
                                         tau_fix=0.5)
    expected = [
        (adaptation.threshold_at(cosine, 0), 0.55),
        (adaptation.threshold_at(cosine, total // 2), 0.475),
        (adaptation.threshold_at(cosine, total), 0.40),
        (adaptation.threshold_at(exponential, 0), 0.55),
        (adaptation.threshold_at(exponential, total),
         0.40 + 0.15 * np.exp(-0.01 * total)),
        (adaptation.threshold_at(sigmoid, total // 2), 0.475),
        (adaptation.threshold_at(fixed, 123), 0.5),
    ]
    passed = all(abs(value - target) <= 1e-12 for value, target in expected)
    return Check('schedules', passed,
                 'largest deviation %.2e' % max(abs(v - t)
                                                for v, t in expected))


def _check_single_class(residuals):
    rng = core.Rng(0, 5)
    memory = contrast.PrototypeMemory(1, 4, beta=0.5, temperature=0.1)
    memory.prototypes[0] = rng.normal(4)
    memory.initialized[0] = True
    point = rng.normal(4)

    def loss(z):
        return contrast.slot_contrast_loss(memory, {1: core.tensor(z)})
    value = loss(point).item()
    prototype = memory.prototype(1)
    cosine = prototype @ point / (np.linalg.norm(prototype)
                                  * np.linalg.norm(point))
    analytic = _tape_grad(loss, point)
    numeric = core.finite_diff_grad(lambda z: loss(z).item(), point, 1e-6)
    residual = _relative_residual(analytic, numeric)
    residuals.append(('single-class', 0, residual))
    passed = abs(value + cosine) <= 1e-12 and residual <= _GRAD_RTOL
    return Check('single-class-contrast', passed,
                 'loss %.6f vs -cos %.6f, gradient residual %.2e'
                 % (value, -cosine, residual))


def _check_ema():
    rng = core.Rng(0, 6)
    student = {'w': rng.normal((3, 2))}
    teacher = {'w': rng.normal((3, 2))}
    state = adaptation.AdaptState(student, teacher,
                                  contrast.PrototypeMemory(2, 2), rng,
                                  gamma=0.9)
    expected = 0.9 * teacher['w'] + 0.1 * student['w']
    adaptation.teacher_ema_update(state)
    ema_ok = np.allclose(state.teacher['w'], expected, rtol=0, atol=1e-15)
    memory = contrast.PrototypeMemory(2, 2, beta=0.9)
    memory.prototypes[0] = [1.0, 1.0]
    memory.initialized[0] = True
    queries = _FakeQueries(np.array([[0.0, 0.0], [0.0, 2.0], [4.0, 4.0]]),
                           np.array([1, 1, 2]))
    updated = contrast.update_prototype_memory(memory, queries)
    prototype_ok = (np.allclose(updated.prototypes[0], [0.9, 1.0])
                    and np.allclose(updated.prototypes[1], [4.0, 4.0])
                    and bool(updated.initialized.all()))
    return Check('ema-identities', ema_ok and prototype_ok,
                 'teacher EMA %s, prototype EMA %s'
                 % ('exact' if ema_ok else 'wrong',
                    'exact' if prototype_ok else 'wrong'))


_FakeQueries = collections.namedtuple('_FakeQueries',
                                      ['embeddings', 'classes'])


def run_suite():
    """Run every check.

    Returns:
        SuiteReport
    """
    trajectory, residuals = [], []
    steps = [('backward', lambda: _check_backward(residuals)),
             ('hungarian', _check_hungarian),
             ('infonce-gradients', lambda: _check_infonce(residuals)),
             ('margin-monotonicity', _check_margin),
             ('contraction', lambda: _check_contraction(trajectory)),
             ('kappa-bounds', _check_kappa),
             ('schedules', _check_schedules),
             ('single-class-contrast', lambda: _check_single_class(residuals)),
             ('ema-identities', _check_ema)]
    checks, times = [], {}
    for name, step in steps:
        timer = Timer()
        with timer:
            check = step()
        times[name] = timer
        checks.append(check)
        _misc_logger.info('%s %s: %s', 'PASS' if check.passed else 'FAIL',
                          check.name, check.detail)
    return SuiteReport(checks, trajectory, residuals, times)
