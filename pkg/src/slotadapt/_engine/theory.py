# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: closed-form quantities behind the adaptation analysis

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Contents:
    1. Gradients of the InfoNCE loss with respect to the similarities
       themselves: with p = softmax([s_pos, s_neg] / tau),
       dL/ds_pos = -(1 - p_pos) / tau and dL/ds_neg = p_neg / tau.
    2. The margin recursion eta <- eta - alpha k max(eta - eta*, 0) + r,
       a contraction when alpha k < 1, with fixed point eta* + r / (alpha k).
    3. The cosine-margin gain of embeddings against class prototypes.
    4. The contraction factor kappa = |w|^2 of token-normalized slot weights.
    5. Trend statistics of training traces.

Named tuples:
    ContractionParams -- parameters of the margin recursion
    ContractionTrace -- trajectory and convergence diagnostics
    MarginReport -- same-class and cross-class cosine and their gap
    KappaReport -- contraction factors of slot-weight rows
    TraceSummary -- trend statistics of an adaptation trace

Functions:
    infonce -- InfoNCE loss of one positive and several negatives
    infonce_similarity_grads -- closed-form gradients of infonce
    similarity_descent -- gradient steps on free similarity variables
    contraction_iterate -- iterate the margin recursion
    margin_gain -- cosine-margin gain of labelled embeddings
    kappa_report -- squared norms of stochastic weight rows
    trace_summary -- slopes and correlation of trace columns
"""

__all__ = ['ContractionParams', 'ContractionTrace', 'MarginReport',
           'KappaReport', 'TraceSummary', 'infonce',
           'infonce_similarity_grads', 'similarity_descent',
           'contraction_iterate', 'margin_gain', 'kappa_report',
           'trace_summary']

import collections
import logging

import numpy as np
import scipy.special

from slotadapt._engine.base import NotStochasticError
from slotadapt._engine.contrast import similarity_matrix

# Logging (internal)
_misc_logger = logging.getLogger('slotadapt.log')

# Tolerance on row sums of weights
_STOCHASTIC_TOLERANCE = 1e-6

ContractionParams = collections.namedtuple(
    'ContractionParams', ['alpha', 'k', 'floor', 'residual'])
ContractionParams.__doc__ = """Parameters of the margin recursion.

Fields:
    alpha -- alignment efficiency (> 0)
    k -- margin slope (> 0)
    floor -- fixed-point floor eta* in [0, 1]
    residual -- r >= 0 (reconstruction and variance residual)
"""

ContractionTrace = collections.namedtuple(
    'ContractionTrace', ['trajectory', 'contractive', 'fixed_point',
                         'ratios'])
ContractionTrace.__doc__ = """Result of contraction_iterate.

Fields:
    trajectory -- list of iterates, starting with eta_0
    contractive -- whether alpha k lies in (0, 1)
    fixed_point -- eta* + r / (alpha k), or None if not contractive
    ratios -- per-step error ratios |eta_t+1 - fixed| / |eta_t - fixed|
        (None where the error vanishes or without fixed point)
"""

MarginReport = collections.namedtuple(
    'MarginReport', ['same', 'cross', 'gain', 'per_class'])
MarginReport.__doc__ = """Cosine-margin gain.

Fields:
    same -- mean over classes of expected same-class cosine
    cross -- mean over classes of maximum expected cross-class cosine (None
        with fewer than two prototypes)
    gain -- same - cross (None when cross is None)
    per_class -- dictionary mapping class to (same, cross, gain)
"""

KappaReport = collections.namedtuple('KappaReport',
                                     ['kappas', 'minimum', 'maximum', 'mean'])
KappaReport.__doc__ = """Contraction factors.

Fields:
    kappas -- numpy array of squared row norms
    minimum, maximum, mean -- their statistics
"""

TraceSummary = collections.namedtuple(
    'TraceSummary', ['rec_first', 'rec_last', 'rec_ratio', 'margin_slope',
                     'norm_margin_correlation'])
TraceSummary.__doc__ = """Trend statistics of an adaptation trace.

Fields:
    rec_first, rec_last -- first and last reconstruction loss
    rec_ratio -- rec_last / rec_first
    margin_slope -- least-squares slope of margin gain against step
    norm_margin_correlation -- correlation of fused-slot norm with the
        following margin change (reported only)
Unavailable statistics are None.
"""


def infonce(s_pos, s_neg, temperature):
    """InfoNCE loss -log softmax([s_pos, s_neg] / temperature)[0]."""
    logits = np.concatenate([[s_pos], np.atleast_1d(s_neg)]) / temperature
    return float(scipy.special.logsumexp(logits) - logits[0])


def infonce_similarity_grads(s_pos, s_neg, temperature):
    """Closed-form gradients of infonce with respect to the similarities.

    Arguments:
        s_pos -- positive similarity
        s_neg -- sequence of negative similarities
        temperature -- temperature (> 0)

    Returns:
        2-tuple: g_pos (float) and g_neg (numpy array)
    """
    if temperature <= 0:
        raise ValueError('Temperature must be positive.')
    logits = np.concatenate([[s_pos], np.atleast_1d(s_neg)]) / temperature
    p = scipy.special.softmax(logits)
    return -(1.0 - p[0]) / temperature, p[1:] / temperature


def similarity_descent(s_pos, s_neg, temperature, step, count):
    """Apply gradient steps on free similarity variables.

    Arguments:
        s_pos -- initial positive similarity
        s_neg -- initial negative similarities
        temperature -- temperature (> 0)
        step -- step size (> 0)
        count -- number of steps

    Returns:
        list of (s_pos, s_neg array, margin s_pos - max s_neg), starting with
        the initial point
    """
    if step <= 0:
        raise ValueError('Step size must be positive.')
    s_neg = np.array(s_neg, dtype=float)
    history = [(float(s_pos), s_neg.copy(), float(s_pos - s_neg.max()))]
    for _ in range(count):
        g_pos, g_neg = infonce_similarity_grads(s_pos, s_neg, temperature)
        s_pos = s_pos - step * g_pos
        s_neg = s_neg - step * g_neg
        history.append((float(s_pos), s_neg.copy(),
                        float(s_pos - s_neg.max())))
    return history


def contraction_iterate(params, eta0, steps):
    """Iterate eta <- eta - alpha k max(eta - eta*, 0) + r on [0, 1].

    Arguments:
        params -- ContractionParams
        eta0 -- initial value in [0, 1]
        steps -- number of iterations

    Returns:
        ContractionTrace
    """
    alpha, k, floor, residual = params
    if alpha <= 0 or k <= 0 or residual < 0 or not 0 <= floor <= 1:
        raise ValueError('Invalid contraction parameters: %s.' % (params,))
    if not 0 <= eta0 <= 1:
        raise ValueError('Initial value must lie in [0, 1].')
    rate = alpha * k
    contractive = 0 < rate < 1
    if not contractive:
        _misc_logger.info('Margin recursion is not contractive (alpha k = '
                          '%g).', rate)
    trajectory = [float(eta0)]
    eta = float(eta0)
    for _ in range(steps):
        eta = eta - rate * max(eta - floor, 0.0) + residual
        eta = min(max(eta, 0.0), 1.0)
        trajectory.append(eta)
    fixed_point = floor + residual / rate if contractive else None
    ratios = []
    for before, after in zip(trajectory, trajectory[1:]):
        if fixed_point is None or before == fixed_point:
            ratios.append(None)
        else:
            ratios.append(abs(after - fixed_point)
                          / abs(before - fixed_point))
    return ContractionTrace(trajectory, contractive, fixed_point, ratios)


def margin_gain(prototypes, embeddings, labels):
    """Cosine-margin gain of labelled embeddings against prototypes.

    For each class c with embeddings, same_c is the mean cosine between P_c and
    the embeddings of class c, and cross_c the maximum over c' != c of the mean
    cosine between P_c' and the same embeddings. The gain is the mean of
    same_c - cross_c over classes.

    Arguments:
        prototypes -- dictionary mapping class to vector
        embeddings -- array (count, d)
        labels -- sequence of count classes (None entries are ignored)

    Returns:
        MarginReport
    """
    embeddings = np.asarray(embeddings, dtype=float).reshape(
        len(labels), -1) if len(labels) else np.zeros((0, 0))
    classes = sorted(prototypes)
    per_class = {}
    for label in classes:
        rows = [i for i, value in enumerate(labels) if value == label]
        if not rows:
            continue
        members = embeddings[rows]
        expected = {other: float(similarity_matrix(
                        [prototypes[other]], members).mean())
                    for other in classes}
        same = expected[label]
        others = [expected[other] for other in classes if other != label]
        cross = max(others) if others else None
        per_class[label] = (same, cross,
                            None if cross is None else same - cross)
    if not per_class:
        return MarginReport(None, None, None, per_class)
    same = float(np.mean([v[0] for v in per_class.values()]))
    if len(classes) < 2:
        return MarginReport(same, None, None, per_class)
    cross = float(np.mean([v[1] for v in per_class.values()]))
    return MarginReport(same, cross, same - cross, per_class)


def kappa_report(weights):
    """Squared norms of row-stochastic weight rows.

    Arguments:
        weights -- array (..., K, N)

    Returns:
        KappaReport

    Exceptions:
        NotStochasticError -- negative weights or row sums differing from one
    """
    weights = np.asarray(weights, dtype=float)
    weights = weights.reshape(-1, weights.shape[-1])
    deviation = np.abs(weights.sum(axis=-1) - 1.0)
    worst = float(deviation.max()) if deviation.size else 0.0
    if worst > _STOCHASTIC_TOLERANCE or np.any(weights < 0):
        raise NotStochasticError('kappa_report', worst)
    kappas = (weights ** 2).sum(axis=-1)
    return KappaReport(kappas, float(kappas.min()), float(kappas.max()),
                       float(kappas.mean()))


def _slope(x, y):
    if len(x) < 2:
        return None
    return float(np.polyfit(np.asarray(x, dtype=float),
                            np.asarray(y, dtype=float), 1)[0])


def trace_summary(trace):
    """Trend statistics of an adaptation trace.

    Arguments:
        trace -- list of trace rows (dictionaries with keys step, l_rec,
            margin and fused_norm; missing values are None)

    Returns:
        TraceSummary
    """
    rec = [row['l_rec'] for row in trace if row.get('l_rec') is not None]
    rec_first = rec[0] if rec else None
    rec_last = rec[-1] if rec else None
    rec_ratio = rec_last / rec_first if rec and rec_first > 0 else None
    margins = [(row['step'], row['margin']) for row in trace
               if row.get('margin') is not None]
    slope = _slope([s for s, _ in margins], [m for _, m in margins])
    pairs = []
    for before, after in zip(trace, trace[1:]):
        if before.get('margin') is None or after.get('margin') is None \
                or before.get('fused_norm') is None:
            continue
        pairs.append((before['fused_norm'],
                      after['margin'] - before['margin']))
    correlation = None
    if len(pairs) >= 3:
        norms, changes = np.array(pairs).T
        if norms.std() > 0 and changes.std() > 0:
            correlation = float(np.corrcoef(norms, changes)[0, 1])
    return TraceSummary(rec_first, rec_last, rec_ratio, slope, correlation)
