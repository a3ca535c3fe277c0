# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

import logging

import numpy as np
import pytest

from slotadapt import _app
from slotadapt import _checkpoint
from slotadapt import _config
from slotadapt import _formats
from slotadapt._config import RunConfig
from slotadapt._engine import adaptation

TINY = {'image_size': 24, 'patch_size': 8, 'dim': 4, 'queries': 4, 'n': 2,
        'iters': 1, 'batch_size': 2, 'train_scenes': 2, 'eval_scenes': 2,
        'pretrain_steps': 2, 'adapt_steps': 3, 'burn_in': 1,
        'checkpoint_interval': 1, 'tau_min': 0.05, 'tau_max': 0.1}


def _tiny(directory, **changes):
    values = dict(TINY, output_dir=str(directory))
    values.update(changes)
    return _config.validate(RunConfig(**values))


def _rows(path):
    return _formats.read_csv(path)[1]


def test_pipeline(tmp_path):
    config = _tiny(tmp_path)
    assert _app.run_command('pretrain', config) == 0
    assert len(_rows(tmp_path / 'pretrain-trace.csv')) == 2
    log = (tmp_path / 'pretrain-log.txt').read_text(encoding='utf-8')
    assert 'SLOTADAPT version' in log
    saved = (tmp_path / 'pretrain-config.txt').read_text(encoding='utf-8')
    assert _config.parse_config(saved) == config
    pretrained = _checkpoint.load_checkpoint(
        tmp_path / 'pretrain-checkpoint.json')
    assert (pretrained.phase, pretrained.step) == ('pretrain', 2)

    assert _app.run_command('adapt', config) == 0
    adapted = _checkpoint.load_checkpoint(tmp_path / 'adapt-checkpoint.json')
    assert (adapted.phase, adapted.step) == ('adapt', 3)
    assert [row['phase'] for row in adapted.trace] \
        == ['burn-in', 'adapt', 'adapt']
    columns, trace = _formats.read_csv(tmp_path / 'adapt-trace.csv')
    assert tuple(columns) == adaptation.TRACE_COLUMNS
    assert len(trace) == 3
    assert len(_rows(tmp_path / 'adapt-results.csv')) == 1
    columns, summary = _formats.read_csv(tmp_path / 'adapt-summary.csv')
    assert tuple(columns) == _app.TREND_COLUMNS
    rec_first, rec_last, rec_ratio = (float(v) for v in summary[0][:3])
    assert (rec_first, rec_last) \
        == (adapted.trace[0]['l_rec'], adapted.trace[-1]['l_rec'])
    assert rec_ratio == pytest.approx(rec_last / rec_first, rel=1e-12)
    log = (tmp_path / 'adapt-log.txt').read_text(encoding='utf-8')
    assert 'Adaptation trends: reconstruction' in log

    assert _app.run_command('eval', config) == 0
    columns, results = _formats.read_csv(tmp_path / 'eval-results.csv')
    assert tuple(columns) == _app.RESULT_COLUMNS
    assert results[0][:3] == ['target', 'eval', '2']
    assert 0 <= float(results[0][columns.index('f1')]) <= 1
    assert len(_rows(tmp_path / 'eval-detections.csv')) == 8
    columns, queries = _formats.read_csv(tmp_path / 'eval-queries.csv')
    assert columns[-4:] == ['e0', 'e1', 'e2', 'e3']
    assert len(queries) == 8

    assert _app.run_command('viz-masks', config) == 0
    for index in range(2):
        for level in ('image', 'level1', 'level2'):
            image = _formats.read_ppm(tmp_path / 'masks'
                                      / ('scene-%05i-%s.ppm' % (index, level)))
            assert image.shape == (24, 24, 3)
    assert not (tmp_path / 'masks' / 'scene-00002-image.ppm').exists()


def test_steps_and_times(tmp_path):
    config = _tiny(tmp_path)
    _app.run_command('pretrain', config, steps=True, times=True)
    lines = (tmp_path / 'pretrain-steps.txt').read_text(
        encoding='utf-8').splitlines()
    assert len(lines) == 2
    assert lines[0].startswith('step=0 detection=')
    columns, rows = _formats.read_csv(tmp_path / 'pretrain-times.csv')
    assert columns == ['phase', 'count', 'time']
    assert [row[0] for row in rows] == ['data', 'pretrain']


def _student(path):
    return _checkpoint.load_checkpoint(path).student


def test_pretrain_resume_matches_uninterrupted(tmp_path, caplog):
    _app.run_command('pretrain', _tiny(tmp_path / 'a', pretrain_steps=3))
    _app.run_command('pretrain', _tiny(tmp_path / 'b'))
    with caplog.at_level(logging.WARNING, logger='slotadapt'):
        _app.run_command('pretrain', _tiny(tmp_path / 'b', pretrain_steps=3),
                         checkpoint=tmp_path / 'b'
                         / 'pretrain-checkpoint.json')
    assert 'differs from that of checkpoint for: pretrain_steps' in caplog.text
    expected = _student(tmp_path / 'a' / 'pretrain-checkpoint.json')
    resumed = _student(tmp_path / 'b' / 'pretrain-checkpoint.json')
    for name, value in expected.items():
        np.testing.assert_array_equal(resumed[name], value)
    assert len(_rows(tmp_path / 'b' / 'pretrain-trace.csv')) == 3


def test_adapt_resume(tmp_path):
    config = _tiny(tmp_path, adapt_steps=2)
    _app.run_command('pretrain', config)
    _app.run_command('adapt', config)
    _app.run_command('adapt', _tiny(tmp_path),
                     checkpoint=tmp_path / 'adapt-checkpoint.json')
    adapted = _checkpoint.load_checkpoint(tmp_path / 'adapt-checkpoint.json')
    assert adapted.step == 3
    assert [row['step'] for row in adapted.trace] == [0, 1, 2]


def test_pretrain_rejects_adapt_checkpoint(tmp_path):
    config = _tiny(tmp_path)
    _app.run_command('pretrain', config)
    _app.run_command('adapt', config)
    with pytest.raises(_checkpoint.CheckpointError):
        _app.run_command('pretrain', config,
                         checkpoint=tmp_path / 'adapt-checkpoint.json')


@pytest.mark.parametrize('verb', ['adapt', 'eval', 'viz-masks'])
def test_missing_checkpoint(tmp_path, verb):
    with pytest.raises(_app.MissingInputError):
        _app.run_command(verb, _tiny(tmp_path))


def test_checkpoint_of_other_configuration(tmp_path):
    _app.run_command('pretrain', _tiny(tmp_path))
    with pytest.raises(_checkpoint.CheckpointShapeError):
        _app.run_command('adapt', _tiny(tmp_path, dim=6))


def test_gen_data_and_import(tmp_path):
    config = _tiny(tmp_path)
    assert _app.run_command('gen-data', config) == 0
    for name in ('source-train', 'source-eval', 'target-train',
                 'target-eval'):
        assert (tmp_path / 'data' / name / 'annotations.csv').is_file()
    assert (tmp_path / 'data' / 'target-eval' / 'scene-00001.ppm').is_file()
    imported = _tiny(tmp_path / 'run', data_dir=str(tmp_path / 'data'))
    assert _app.run_command('pretrain', imported) == 0
    assert len(_rows(tmp_path / 'run' / 'pretrain-trace.csv')) == 2


def test_missing_dataset(tmp_path):
    config = _tiny(tmp_path, data_dir=str(tmp_path / 'absent'))
    with pytest.raises(_app.MissingInputError):
        _app.run_command('pretrain', config)


def test_theory(tmp_path):
    assert _app.run_command('theory', _tiny(tmp_path), times=True) == 0
    rows = _rows(tmp_path / 'theory-report.csv')
    assert len(rows) == 9
    assert all(row[1] == 'true' for row in rows)
    assert len(_rows(tmp_path / 'theory-contraction.csv')) == 61
    assert len(_rows(tmp_path / 'theory-times.csv')) == 9


def test_ablation_cells():
    cells = _app.ablation_cells(RunConfig(seed=10, ablation_seeds=2))
    assert len(cells) == (3 + 9 + 7) * 2
    _, grid, row, changes, adapt_target = cells[0]
    assert (grid, row, changes['seed'], adapt_target) \
        == ('methods', 'source-only', 10, False)
    assert cells[1][3]['seed'] == 11
    slot_rows = {row: changes for _, grid, row, changes, _ in cells
                 if grid == 'slots'}
    assert slot_rows['depth2-n8']['queries'] == 64
    assert slot_rows['depth1-n5']['depth'] == 1


def test_ablate_methods(tmp_path):
    config = _tiny(tmp_path, ablation_grid='methods', ablation_seeds=1)
    assert _app.run_command('ablate', config) == 0
    runs = _rows(tmp_path / 'ablate-runs.csv')
    assert [row[1] for row in runs] == ['source-only', 'hsa', 'hsa-cgsc']
    summary = _rows(tmp_path / 'ablate-summary.csv')
    assert [row[2] for row in summary] == ['1', '1', '1']
    assert [row[3] for row in summary] == [row[3] for row in runs]
    log = (tmp_path / 'ablate-log.txt').read_text(encoding='utf-8')
    assert 'Method medians: source-only' in log


ORDERING_CASES = [
    ({'source-only': 0.5, 'hsa': 0.51, 'hsa-cgsc': 0.53}, True, 0.03),
    ({'source-only': 0.5, 'hsa': 0.5, 'hsa-cgsc': 0.525}, True, 0.025),
    ({'source-only': 0.5, 'hsa': 0.5, 'hsa-cgsc': 0.51}, False, 0.01),
    ({'source-only': 0.5, 'hsa': 0.6, 'hsa-cgsc': 0.55}, False, 0.05),
    ({'source-only': 0.5, 'hsa': 0.45, 'hsa-cgsc': 0.6}, False, 0.1)]


@pytest.mark.parametrize('medians, ordered, gain', ORDERING_CASES)
def test_method_ordering(medians, ordered, gain):
    result = _app.method_ordering(medians)
    assert result[0] == ordered
    assert result[1] == pytest.approx(gain)


def test_unknown_verb(tmp_path):
    with pytest.raises(ValueError):
        _app.run_command('train', _tiny(tmp_path))
