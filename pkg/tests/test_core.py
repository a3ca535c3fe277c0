# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

import itertools
import json
import math

import numpy as np
import pytest

from slotadapt._engine import core
from slotadapt._engine.base import (AssignmentError, EmptyAxisError,
                                    NonFiniteError, NotScalarError,
                                    ShapeError, ZeroNormError)


softmax_cases = [
        ([0.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]),
        ([1.0, 2.0, 3.0], [0.09003057, 0.24472847, 0.66524096]),
        ([1e4, -1e4, 0.0], [1.0, 0.0, 0.0]),
        ([-1e4, -1e4], [0.5, 0.5]),
    ]


@pytest.mark.parametrize(('values', 'expected'), softmax_cases)
def test_softmax(values, expected):
    result = core.softmax(values).value
    np.testing.assert_allclose(result, expected, atol=1e-8)
    assert abs(result.sum() - 1) < 1e-6


def test_softmax_shift_invariance():
    rng = core.Rng(7)
    values = rng.normal((4, 5))
    shifted = core.softmax(values + 123.4, axis=0).value
    np.testing.assert_allclose(core.softmax(values, axis=0).value, shifted,
                               rtol=1e-12)


def test_softmax_empty_axis():
    with pytest.raises(EmptyAxisError):
        core.softmax(np.zeros((2, 0)))


cosine_cases = [
        ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], 1.0),
        ([1.0, 2.0, 3.0], [-1.0, -2.0, -3.0], -1.0),
        ([1.0, 0.0], [0.0, 1.0], 0.0),
        ([3.0, 4.0], [4.0, 3.0], 24 / 25),
    ]


@pytest.mark.parametrize(('a', 'b', 'expected'), cosine_cases)
def test_cosine_similarity(a, b, expected):
    assert core.cosine_similarity(a, b).item() == pytest.approx(expected,
                                                                abs=1e-12)


def test_cosine_similarity_zero_norm():
    with pytest.raises(ZeroNormError):
        core.cosine_similarity([0.0, 0.0], [1.0, 0.0])


def test_cosine_similarity_length_mismatch():
    with pytest.raises(ShapeError):
        core.cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


def _gru_params(dim, rng=None, fill=0.0):
    params = {}
    for name in ('W_z', 'U_z', 'W_r', 'U_r', 'W_h', 'U_h'):
        params[name] = (rng.normal((dim, dim)) if rng is not None
                        else np.full((dim, dim), fill))
    for name in ('b_z', 'b_r', 'b_h'):
        params[name] = (rng.normal(dim) if rng is not None
                        else np.full(dim, fill))
    return params


def test_gru_cell_zero():
    result = core.gru_cell(np.zeros(4), np.zeros(4), _gru_params(4)).value
    np.testing.assert_array_equal(result, np.zeros(4))


def test_gru_cell_saturated_update_keeps_hidden():
    params = _gru_params(3)
    params['b_z'] = np.full(3, 50.0)
    hidden = np.array([0.3, -1.2, 2.0])
    result = core.gru_cell(np.array([1.0, 2.0, 3.0]), hidden, params).value
    np.testing.assert_allclose(result, hidden, atol=1e-15)


def test_gru_cell_straight_line():
    rng = core.Rng(11)
    params = _gru_params(3, rng)
    x, h = rng.normal(3), rng.normal(3)

    def sig(v):
        return 1 / (1 + math.exp(-v))

    def affine(w, u, b, x_, h_, j):
        return (sum(x_[i] * w[i, j] for i in range(3))
                + sum(h_[i] * u[i, j] for i in range(3)) + b[j])

    z = [sig(affine(params['W_z'], params['U_z'], params['b_z'], x, h, j))
         for j in range(3)]
    r = [sig(affine(params['W_r'], params['U_r'], params['b_r'], x, h, j))
         for j in range(3)]
    rh = [r[j] * h[j] for j in range(3)]
    n = [math.tanh(affine(params['W_h'], params['U_h'], params['b_h'], x, rh,
                          j))
         for j in range(3)]
    expected = [(1 - z[j]) * n[j] + z[j] * h[j] for j in range(3)]
    np.testing.assert_allclose(core.gru_cell(x, h, params).value, expected,
                               rtol=1e-12)


def test_gru_cell_shape_mismatch():
    with pytest.raises(ShapeError):
        core.gru_cell(np.zeros(2), np.zeros(3), _gru_params(3))


def _brute_force(score, maximize=True):
    rows, columns = score.shape
    totals = [sum(score[r, c] for r, c in enumerate(perm))
              for perm in itertools.permutations(range(columns), rows)]
    return max(totals) if maximize else min(totals)


def test_hungarian_identity():
    result = core.hungarian_assign(np.eye(4))
    assert result.pairs == ((0, 0), (1, 1), (2, 2), (3, 3))
    assert result.total == 4


def test_hungarian_hand_case():
    result = core.hungarian_assign([[1, 2], [2, 4]])
    assert result.pairs == ((0, 0), (1, 1))
    assert result.total == 5


@pytest.mark.parametrize('seed', range(500))
@pytest.mark.parametrize('maximize', [True, False])
def test_hungarian_brute_force(seed, maximize):
    rng = core.Rng(seed)
    rows = rng.integers(1, 7)
    columns = rng.integers(rows, 7)
    score = rng.normal((rows, columns))
    result = core.hungarian_assign(score, maximize=maximize)
    assert result.total == pytest.approx(_brute_force(score, maximize),
                                         abs=1e-12)
    assert len(result.pairs) == rows
    assert len({c for _, c in result.pairs}) == rows


def test_hungarian_empty():
    result = core.hungarian_assign(np.zeros((0, 3)))
    assert result.pairs == ()
    assert result.total == 0


def test_hungarian_too_many_rows():
    with pytest.raises(AssignmentError):
        core.hungarian_assign(np.zeros((3, 2)))


def test_hungarian_non_finite():
    with pytest.raises(NonFiniteError):
        core.hungarian_assign([[1.0, np.nan]])


def test_backward_sum():
    with core.GradGraph() as graph:
        x = graph.leaf([1.0, -2.0, 5.0], 'x')
        out = core.total(x)
    np.testing.assert_array_equal(core.backward(graph, out)['x'],
                                  [1.0, 1.0, 1.0])


def test_backward_dot():
    with core.GradGraph() as graph:
        x = graph.leaf([1.0, 2.0], 'x')
        out = core.total(x * x)
    np.testing.assert_array_equal(core.backward(graph, out)['x'], [2.0, 4.0])


@pytest.mark.parametrize('seed', range(10))
def test_backward_softmax_dot_log(seed):
    rng = core.Rng(seed)
    x0 = rng.normal(5)
    w = rng.uniform(5) + 0.1

    def f(x):
        return core.log(core.total(core.softmax(x) * w))

    with core.GradGraph() as graph:
        out = f(graph.leaf(x0, 'x'))
    analytic = core.backward(graph, out)['x']
    numeric = core.finite_diff_grad(lambda x: f(x).item(), x0, step=1e-4)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


def test_backward_repeated_index():
    with core.GradGraph() as graph:
        x = graph.leaf([1.0, 2.0, 3.0], 'x')
        out = core.total(x[np.array([0, 0, 2])])
    np.testing.assert_array_equal(core.backward(graph, out)['x'],
                                  [2.0, 0.0, 1.0])


def test_backward_unused_leaf():
    with core.GradGraph() as graph:
        x = graph.leaf([1.0, 2.0], 'x')
        graph.leaf([[3.0]], 'unused')
        out = core.total(x)
    grads = core.backward(graph, out)
    np.testing.assert_array_equal(grads['unused'], [[0.0]])


def test_backward_not_scalar():
    with core.GradGraph() as graph:
        x = graph.leaf([1.0, 2.0], 'x')
        out = x * 2
    with pytest.raises(NotScalarError):
        core.backward(graph, out)


finite_diff_cases = [
        (lambda x: float(x[0] ** 2), [3.0], 1e-5, [6.0], 1e-6),
        (lambda x: 4.0, [1.0, 2.0], 1e-5, [0.0, 0.0], 0.0),
        (lambda x: math.exp(x[0]), [0.0], 1e-5, [1.0], 1e-8),
    ]


@pytest.mark.parametrize(('f', 'x', 'step', 'expected', 'tolerance'),
                         finite_diff_cases)
def test_finite_diff_grad(f, x, step, expected, tolerance):
    np.testing.assert_allclose(core.finite_diff_grad(f, x, step), expected,
                               rtol=0, atol=tolerance)


def test_finite_diff_grad_bad_step():
    with pytest.raises(ValueError):
        core.finite_diff_grad(lambda x: 0.0, [1.0], 0.0)


sgd_cases = [
        ({'p': 1.0}, {'p': 1.0}, 0.1, {'p': 0.9}),
        ({'p': 1.0}, {'p': 0.0}, 0.1, {'p': 1.0}),
        ({'p': [1.0, 2.0]}, {'p': [0.5, -1.0]}, 0.2, {'p': [0.9, 2.2]}),
        ({'p': 1.0, 'q': 3.0}, {'p': 1.0}, 0.5, {'p': 0.5, 'q': 3.0}),
    ]


@pytest.mark.parametrize(('params', 'grads', 'lr', 'expected'), sgd_cases)
def test_sgd_update(params, grads, lr, expected):
    result = core.sgd_update(params, grads, lr)
    for name, value in expected.items():
        np.testing.assert_allclose(result[name], value, rtol=1e-15)


def test_sgd_update_rates():
    params = {'slot.a': 1.0, 'slot_b': 1.0, 'head.c': 1.0}
    grads = dict.fromkeys(params, 1.0)
    result = core.sgd_update(params, grads, 0.5, {'slot.': 0.25})
    assert (result['slot.a'], result['slot_b'], result['head.c']) \
        == (0.75, 0.5, 0.5)


def test_sgd_update_rejects_bad_input():
    with pytest.raises(ValueError):
        core.sgd_update({'p': 1.0}, {'p': 1.0}, 0.0)
    with pytest.raises(ValueError):
        core.sgd_update({'p': 1.0}, {'p': 1.0}, 0.1, {'p': 0.0})
    with pytest.raises(ShapeError):
        core.sgd_update({'p': [1.0, 2.0]}, {'p': [1.0]}, 0.1)


def test_tensor_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        core.tensor([1.0, np.inf])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        core.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_rng_box_muller_oracle():
    generator = np.random.Generator(np.random.Philox(key=42))
    u1 = 1.0 - generator.random(6)
    u2 = generator.random(6)
    expected = np.sqrt(-2 * np.log(u1)) * np.cos(2 * np.pi * u2)
    np.testing.assert_allclose(core.Rng(42).normal(6), expected, rtol=1e-14)


def test_rng_determinism_and_fork():
    np.testing.assert_array_equal(core.Rng(5).uniform(8),
                                  core.Rng(5).uniform(8))
    np.testing.assert_array_equal(core.Rng(5).fork(3).uniform(4),
                                  core.Rng(5, 3).uniform(4))
    assert not np.array_equal(core.Rng(5).uniform(4),
                              core.Rng(5, 1).uniform(4))


def test_rng_state_resumes_stream():
    rng = core.Rng(9)
    rng.normal(7)
    state = json.loads(json.dumps(rng.state))
    expected = rng.normal(5)
    resumed = core.Rng.from_state(state)
    np.testing.assert_array_equal(resumed.normal(5), expected)


def test_rng_rejects_negative_seed():
    with pytest.raises(ValueError):
        core.Rng(-1)
