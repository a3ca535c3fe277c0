# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

import logging

import pytest

from slotadapt._engine import suite

CHECK_NAMES = ['backward', 'hungarian', 'infonce-gradients',
               'margin-monotonicity', 'contraction', 'kappa-bounds',
               'schedules', 'single-class-contrast', 'ema-identities']


@pytest.fixture(scope='module')
def report():
    return suite.run_suite()


def test_every_check_passes(report):
    assert [check.name for check in report.checks] == CHECK_NAMES
    failed = [check for check in report.checks if not check.passed]
    assert not failed


def test_times_cover_checks(report):
    assert sorted(report.times) == sorted(CHECK_NAMES)
    assert all(timer.count == 1 for timer in report.times.values())


def test_contraction_trajectory(report):
    assert len(report.trajectory) == 61
    step, eta, error, ratio = report.trajectory[0]
    assert (step, eta) == (0, 0.8)
    assert error == pytest.approx(0.66)
    assert ratio == pytest.approx(0.5)
    assert report.trajectory[-1][1] == pytest.approx(0.14, abs=1e-12)
    assert report.trajectory[-1][3] is None


def test_residuals(report):
    checks = {row[0] for row in report.residuals}
    assert checks == {'backward-softmax-dot-log', 'backward-cosine',
                      'backward-gru', 'backward-detection',
                      'backward-slot-contrast', 'backward-hierarchy-rec',
                      'backward-model-forward', 'infonce', 'single-class'}
    assert len(report.residuals) == 7 * 100 + 100 + 1
    assert all(residual <= 1e-4 for _, _, residual in report.residuals)


def test_checks_are_logged(caplog):
    with caplog.at_level(logging.INFO, logger='slotadapt'):
        suite.run_suite()
    assert 'PASS contraction: fixed point 0.140000000000' in caplog.text


def test_hungarian_sample(report):
    check = report.checks[CHECK_NAMES.index('hungarian')]
    assert check.detail \
        == '0 of 1000 random matrices differ from exhaustive search'


@pytest.mark.parametrize('name', ['detection', 'slot-contrast',
                                  'hierarchy-rec', 'model-forward'])
def test_backward_covers_training_losses(report, name):
    seeds = [seed for check, seed, _ in report.residuals
             if check == 'backward-' + name]
    assert seeds == list(range(100))
