# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: application behind CLI

This module manages the output, checkpoint and log files. It leverages the
engine sub-package for the actual computations.

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Constants:
    VERBS -- commands accepted by run_command
    RESULT_COLUMNS -- columns of evaluation result files
    DETECTION_COLUMNS -- columns of detection files
    PRETRAIN_COLUMNS -- columns of pretraining trace
    ABLATION_COLUMNS -- columns of per-run ablation file
    SUMMARY_COLUMNS -- columns of ablation summary
    TREND_COLUMNS -- columns of adaptation trend summary
    METHOD_GAIN -- expected median F1 gain of full method over source-only
    REC_RATIO -- ratio below which reconstruction loss is deemed to fall

Classes:
    MissingInputError -- checkpoint or dataset not found

Functions:
    run_command -- run one command and save its artifacts
    pretrain -- train on labelled source scenes
    adapt -- adapt on unlabelled target scenes
    evaluate -- detect objects in scenes and score the detections
    ablation_cells -- arguments of every ablation run
    method_ordering -- check ordering of method medians
    set_log_stream -- initialize log stream handler

The following elements are internal elements of the module.

Constants: logging
    _main_logger -- parent logger to all SLOTADAPT loggers
    _misc_logger -- miscellaneous log messages
    _step_logger -- output of steps option

Functions (internal):
    _set_log_files -- initialize log file handlers
    _set_log_levels -- set log levels based on options specified by user
    _close_log_files -- close log file handlers
    _log_versions -- log software version information
    _write_times -- write phase times to CSV file
"""

__all__ = ['VERBS', 'RESULT_COLUMNS', 'DETECTION_COLUMNS', 'PRETRAIN_COLUMNS',
           'ABLATION_COLUMNS', 'SUMMARY_COLUMNS', 'TREND_COLUMNS',
           'METHOD_GAIN', 'REC_RATIO', 'MissingInputError', 'run_command',
           'pretrain', 'adapt', 'evaluate', 'ablation_cells',
           'method_ordering', 'set_log_stream']

import concurrent.futures
import importlib.metadata
import logging
from pathlib import Path
import platform

import numpy as np

from slotadapt import _checkpoint
from slotadapt import _config
from slotadapt import _formats
from slotadapt._engine import adaptation
from slotadapt._engine import core
from slotadapt._engine import detector
from slotadapt._engine import model
from slotadapt._engine import suite
from slotadapt._engine import theory
from slotadapt._engine import synth
from slotadapt._engine.base import Timer
from slotadapt._version import __version__

# Logging
_main_logger = logging.getLogger('slotadapt')
_misc_logger = logging.getLogger('slotadapt.log')
_step_logger = logging.getLogger('slotadapt.steps')

VERBS = ('gen-data', 'pretrain', 'adapt', 'eval', 'theory', 'viz-masks',
         'ablate')
RESULT_COLUMNS = ('domain', 'split', 'scenes', 'mean_ap', 'ap_circle',
                  'ap_square', 'ap_triangle', 'precision', 'recall', 'f1',
                  'tp', 'fp', 'fn', 'empty')
DETECTION_COLUMNS = ('scene_id', 'query', 'class', 'cx', 'cy', 'w', 'h',
                     'confidence')
PRETRAIN_COLUMNS = ('step', 'detection', 'reconstruction', 'total')
ABLATION_COLUMNS = ('grid', 'row', 'seed', 'f1', 'mean_ap')
SUMMARY_COLUMNS = ('grid', 'row', 'seeds', 'median_f1', 'median_mean_ap')
TREND_COLUMNS = ('rec_first', 'rec_last', 'rec_ratio', 'margin_slope',
                 'norm_margin_correlation')
METHOD_GAIN = 0.02
REC_RATIO = 0.5

# Streams of the master seed
_INIT_STREAM = 1
_PRETRAIN_STREAM = 2
_ADAPT_STREAM = 3
_EVAL_STREAM = 4
# Number of scenes drawn by viz-masks
_VIZ_SCENES = 4
# Ablation grids: rows of (name, configuration changes, adapt)
_METHOD_ROWS = (('source-only', {'use_slots': False}, False),
                ('hsa', {'use_slots': True, 'use_contrast': False}, True),
                ('hsa-cgsc', {'use_slots': True, 'use_contrast': True}, True))
_SCHEDULE_ROWS = (
    ('cosine-0.55-0.40', {'schedule': 'cosine', 'tau_max': 0.55,
                          'tau_min': 0.40}, True),
    ('cosine-0.80-0.40', {'schedule': 'cosine', 'tau_max': 0.80,
                          'tau_min': 0.40}, True),
    ('cosine-0.55-0.20', {'schedule': 'cosine', 'tau_max': 0.55,
                          'tau_min': 0.20}, True),
    ('cosine-0.80-0.20', {'schedule': 'cosine', 'tau_max': 0.80,
                          'tau_min': 0.20}, True),
    ('fixed-0.50', {'schedule': 'fixed', 'tau_fix': 0.50}, True),
    ('fixed-0.40', {'schedule': 'fixed', 'tau_fix': 0.40}, True),
    ('fixed-0.55', {'schedule': 'fixed', 'tau_fix': 0.55}, True),
    ('exponential-0.55-0.40', {'schedule': 'exponential', 'tau_max': 0.55,
                               'tau_min': 0.40}, True),
    ('sigmoid-0.55-0.40', {'schedule': 'sigmoid', 'tau_max': 0.55,
                           'tau_min': 0.40}, True))
_SLOT_ROWS = tuple(
    [('depth2-n%i' % n, {'depth': 2, 'n': n, 'queries': n * n}, True)
     for n in (2, 4, 5, 6, 8, 10)]
    + [('depth1-n5', {'depth': 1, 'n': 5, 'queries': 25}, True)])
_GRIDS = {'methods': _METHOD_ROWS, 'schedules': _SCHEDULE_ROWS,
          'slots': _SLOT_ROWS}


class MissingInputError(Exception):
    """Checkpoint or dataset not found.

    Methods:
        __init__: initializer
    """

    def __init__(self, what, path):
        """Initialize exception.

        Arguments:
            what -- description of missing input
            path -- path where input was expected
        """
        super().__init__('Missing %s: %s.' % (what, path))


def run_command(verb, config, *, checkpoint=None, verbose=False, steps=False,
                times=False, jobs=1):
    """Run one command and save its artifacts.

    Arguments:
        verb -- one of VERBS
        config -- validated RunConfig
        checkpoint -- path of input checkpoint (default: the one written by
            the previous phase in the output directory); for pretrain and
            adapt, a checkpoint of the same phase resumes training
        verbose -- whether to propagate informational message to the main log
            (if False, only warning and error messages are relayed)
        steps -- whether to log one line per training step to VERB-steps.txt
        times -- whether to save the time of each phase to VERB-times.csv
        jobs -- number of processes running ablation cells

    Returns:
        exit status (0 unless a theory check failed)

    Logging:
        slotadapt.log is always saved to OUT/VERB-log.txt, and slotadapt.steps
        to OUT/VERB-steps.txt if steps activated, where OUT is the output
        directory.
    """
    if verb not in VERBS:
        raise ValueError('Unknown command: %s' % verb)
    outdir = _config.output_directory(config)
    outdir.mkdir(parents=True, exist_ok=True)
    _set_log_files(outdir / ('%s-log.txt' % verb),
                   outdir / ('%s-steps.txt' % verb) if steps else None)
    _set_log_levels(steps, verbose)
    try:
        _log_versions()
        _misc_logger.info('Command: %s', verb)
        _misc_logger.info('Output folder: %s', outdir.resolve())
        with open(outdir / ('%s-config.txt' % verb), 'w', encoding='utf-8',
                  newline='\n') as config_file:
            config_file.write(_config.as_text(config))
        timers = {}
        commands = {'gen-data': _gen_data, 'pretrain': _pretrain_command,
                    'adapt': _adapt_command, 'eval': _eval_command,
                    'theory': _theory_command, 'viz-masks': _viz_command,
                    'ablate': _ablate_command}
        status = commands[verb](config, outdir, checkpoint=checkpoint,
                                timers=timers, jobs=jobs)
        if times:
            _write_times(outdir / ('%s-times.csv' % verb), timers)
        return status
    finally:
        _close_log_files()


def _timer(timers, name):
    return timers.setdefault(name, Timer())


def _gen_data(config, outdir, *, timers, **_):
    """Write every domain and split of the benchmark as PPM and CSV."""
    for domain in synth.DOMAINS:
        for split in synth.SPLITS:
            with _timer(timers, '%s-%s' % (domain, split)):
                scenes = synth.generate_split(config, domain, split)
                _formats.export_dataset(outdir / 'data'
                                        / ('%s-%s' % (domain, split)), scenes)
    return 0


def _load_scenes(config, domain, split):
    """Read scenes from data_dir if set, otherwise generate them."""
    if not config.data_dir:
        return synth.generate_split(config, domain, split)
    directory = Path(config.data_dir) / ('%s-%s' % (domain, split))
    if not (directory / 'annotations.csv').is_file():
        raise MissingInputError('dataset', directory)
    return _formats.import_dataset(directory, domain)


def _batch(scenes, indices):
    images = np.stack([scenes[index].image for index in indices])
    targets = [list(scenes[index].objects) for index in indices]
    return images, targets


def _read_checkpoint(path, config):
    """Load checkpoint checked against the shapes of config."""
    if path is None or not path.is_file():
        raise MissingInputError('checkpoint', path)
    checkpoint = _checkpoint.load_checkpoint(path, model.param_shapes(config))
    current = config.as_dict()
    changed = sorted(key for key, value in checkpoint.config.items()
                     if current.get(key) != value)
    if changed:
        _misc_logger.warning('Configuration differs from that of checkpoint '
                             'for: %s', ', '.join(changed))
    _misc_logger.info('Checkpoint: %s (%s, step %i)', path, checkpoint.phase,
                      checkpoint.step)
    return checkpoint


def _trained_params(checkpoint):
    """Parameters used for inference: teacher after adaptation."""
    if checkpoint.phase == 'adapt':
        return checkpoint.teacher
    return checkpoint.student


def _due(step, interval, total):
    return step % interval == 0 or step == total


def _format_value(value):
    if isinstance(value, float):
        return '%.6g' % value
    return str(value)


def pretrain(config, scenes, resume=None, save=None):
    """Train on labelled source scenes.

    Arguments:
        config -- RunConfig
        scenes -- list of labelled Scene objects
        resume -- pretrain Checkpoint to resume from (None: fresh start)
        save -- function called with a Checkpoint every checkpoint interval
            and at the end (None: no checkpoint)

    Returns:
        3-tuple: parameters, slot-initialization Rng and trace rows
    """
    if resume is None:
        params = model.init_params(config, core.Rng(config.seed, _INIT_STREAM))
        rng = core.Rng(config.seed, _PRETRAIN_STREAM)
        start, trace = 0, []
    else:
        params = resume.student
        rng = core.Rng.from_state(resume.rng_state)
        start, trace = resume.step, list(resume.trace)
    for step in range(start, config.pretrain_steps):
        images, targets = _batch(scenes, adaptation.batch_indices(
            config.seed, step, config.batch_size, len(scenes)))
        params, losses = adaptation.pretrain_step(params, images, targets,
                                                  config, rng)
        row = dict(losses, step=step)
        trace.append(row)
        _step_logger.debug(' '.join('%s=%s' % (key, _format_value(row[key]))
                                    for key in PRETRAIN_COLUMNS))
        if save is not None and _due(step + 1, config.checkpoint_interval,
                                     config.pretrain_steps):
            save(_checkpoint.Checkpoint(
                _checkpoint.FORMAT_VERSION, config.as_dict(), 'pretrain',
                params, None, None, step + 1, rng.state, trace))
    return params, rng, trace


def adapt(config, scenes, state, save=None):
    """Adapt on unlabelled target scenes until adapt_steps, in place.

    Arguments:
        config -- RunConfig
        scenes -- list of Scene objects (objects ignored)
        state -- AdaptState
        save -- function called with a Checkpoint every checkpoint interval
            and at the end (None: no checkpoint)

    Returns:
        state
    """
    while state.step < config.adapt_steps:
        images, _ = _batch(scenes, adaptation.batch_indices(
            config.seed, state.step, config.batch_size, len(scenes)))
        adaptation.adapt_step(state, images, config)
        if save is not None and _due(state.step, config.checkpoint_interval,
                                     config.adapt_steps):
            save(_checkpoint.Checkpoint(
                _checkpoint.FORMAT_VERSION, config.as_dict(), 'adapt',
                state.student, state.teacher, state.memory, state.step,
                state.rng.state, state.trace))
    return state


def evaluate(params, config, scenes):
    """Detect objects in scenes and score the detections.

    Slot initialization draws from a fresh generator, so that evaluating the
    same parameters on the same scenes always gives the same result.

    Returns:
        2-tuple: EvalResult and list of per-scene QuerySet objects
    """
    rng = core.Rng(config.seed, _EVAL_STREAM)
    query_sets = []
    for start in range(0, len(scenes), config.batch_size):
        images = np.stack([scene.image
                           for scene in scenes[start:start
                                               + config.batch_size]])
        output = model.forward(params, images, config, rng)
        query_sets.extend(detector.select(output.predictions, index)
                          for index in range(len(images)))
    detections = [detector.to_detections(q) for q in query_sets]
    result = synth.evaluate(detections, [scene.objects for scene in scenes],
                            config.num_classes, config.confidence_cut)
    return result, query_sets


def _result_row(result, domain, split, count):
    row = {'domain': domain, 'split': split, 'scenes': count,
           'mean_ap': result.mean_ap, 'precision': result.precision,
           'recall': result.recall, 'f1': result.f1, 'tp': result.tp,
           'fp': result.fp, 'fn': result.fn, 'empty': result.empty}
    for label, name in synth.CLASS_NAMES.items():
        row['ap_%s' % name] = result.ap.get(label)
    return row


def _pretrain_command(config, outdir, *, checkpoint, timers, **_):
    path = outdir / 'pretrain-checkpoint.json'
    resume = None
    if checkpoint is not None:
        resume = _read_checkpoint(checkpoint, config)
        if resume.phase != 'pretrain':
            raise _checkpoint.CheckpointError(
                'Cannot resume pretraining from %s checkpoint %s.'
                % (resume.phase, checkpoint))
    with _timer(timers, 'data'):
        scenes = _load_scenes(config, 'source', 'train')
    with _timer(timers, 'pretrain'):
        _, _, trace = pretrain(
            config, scenes, resume,
            lambda c: _checkpoint.save_checkpoint(path, c))
    _formats.write_csv(outdir / 'pretrain-trace.csv', PRETRAIN_COLUMNS, trace)
    _misc_logger.info('Pretraining done: %i steps, final loss %s',
                      len(trace), trace[-1]['total'] if trace else None)
    return 0


def _adapt_command(config, outdir, *, checkpoint, timers, **_):
    path = outdir / 'adapt-checkpoint.json'
    if checkpoint is None:
        checkpoint = outdir / 'pretrain-checkpoint.json'
    start = _read_checkpoint(checkpoint, config)
    if start.phase == 'pretrain':
        state = adaptation.AdaptState.from_pretrained(
            start.student, config, core.Rng(config.seed, _ADAPT_STREAM))
    else:
        state = adaptation.AdaptState(
            start.student, start.teacher, start.memory,
            core.Rng.from_state(start.rng_state),
            gamma=config.teacher_gamma, lambda_con=config.lambda_con,
            lambda_rec=config.lambda_rec, step=start.step, trace=start.trace)
    with _timer(timers, 'data'):
        scenes = _load_scenes(config, 'target', 'train')
    with _timer(timers, 'adapt'):
        adapt(config, scenes, state,
              lambda c: _checkpoint.save_checkpoint(path, c))
    _formats.write_csv(outdir / 'adapt-trace.csv', adaptation.TRACE_COLUMNS,
                       state.trace)
    trends = theory.trace_summary(state.trace)
    _formats.write_csv(outdir / 'adapt-summary.csv', TREND_COLUMNS, [trends])
    _misc_logger.info('Adaptation trends: reconstruction %s -> %s '
                      '(ratio %s), margin slope %s, norm/margin '
                      'correlation %s',
                      *(_format_value(value) for value in trends))
    if trends.margin_slope is not None and trends.margin_slope <= 0:
        _misc_logger.warning('Margin did not increase over adaptation '
                             '(slope %s).',
                             _format_value(trends.margin_slope))
    if trends.rec_ratio is not None and trends.rec_ratio >= REC_RATIO:
        _misc_logger.warning('Reconstruction loss did not fall below %s of '
                             'its first value (ratio %s).', REC_RATIO,
                             _format_value(trends.rec_ratio))
    with _timer(timers, 'eval'):
        result, _ = evaluate(state.teacher, config, scenes)
    _formats.write_csv(outdir / 'adapt-results.csv', RESULT_COLUMNS,
                       [_result_row(result, 'target', 'train', len(scenes))])
    _misc_logger.info('Adaptation done: F1 on target train split %s, '
                      'mAP %s', result.f1, result.mean_ap)
    return 0


def _eval_command(config, outdir, *, checkpoint, timers, **_):
    if checkpoint is None:
        checkpoint = outdir / 'adapt-checkpoint.json'
    params = _trained_params(_read_checkpoint(checkpoint, config))
    with _timer(timers, 'data'):
        scenes = _load_scenes(config, config.eval_domain, config.eval_split)
    with _timer(timers, 'eval'):
        result, query_sets = evaluate(params, config, scenes)
    _formats.write_csv(outdir / 'eval-results.csv', RESULT_COLUMNS,
                       [_result_row(result, config.eval_domain,
                                    config.eval_split, len(scenes))])
    detection_rows, embedding_rows = [], []
    for scene_id, query_set in enumerate(query_sets):
        embeddings = core.tensor(query_set.embeddings).value
        for index, found in enumerate(detector.to_detections(query_set)):
            detection_rows.append((scene_id, index, found.label) + found.box
                                  + (found.confidence,))
            embedding_rows.append(
                (scene_id, index, int(query_set.classes[index]),
                 found.confidence) + tuple(float(v)
                                           for v in embeddings[index]))
    _formats.write_csv(outdir / 'eval-detections.csv', DETECTION_COLUMNS,
                       detection_rows)
    _formats.write_csv(outdir / 'eval-queries.csv',
                       ('scene_id', 'query', 'class', 'confidence')
                       + tuple('e%i' % i for i in range(config.dim)),
                       embedding_rows)
    _misc_logger.info('Evaluation on %s %s split: F1 %s, mAP %s',
                      config.eval_domain, config.eval_split, result.f1,
                      result.mean_ap)
    return 0


def _theory_command(config, outdir, *, timers, **_):
    report = suite.run_suite()
    timers.update(report.times)
    _formats.write_csv(outdir / 'theory-report.csv',
                       ('check', 'passed', 'detail'), report.checks)
    _formats.write_csv(outdir / 'theory-contraction.csv',
                       ('step', 'eta', 'error', 'ratio'), report.trajectory)
    _formats.write_csv(outdir / 'theory-residuals.csv',
                       ('check', 'seed', 'residual'), report.residuals)
    failed = [check.name for check in report.checks if not check.passed]
    if failed:
        _misc_logger.error('Failed checks: %s', ', '.join(failed))
        return 1
    _misc_logger.info('All %i checks passed.', len(report.checks))
    return 0


def _viz_command(config, outdir, *, checkpoint, timers, **_):
    if checkpoint is None:
        checkpoint = outdir / 'adapt-checkpoint.json'
    params = _trained_params(_read_checkpoint(checkpoint, config))
    with _timer(timers, 'data'):
        scenes = _load_scenes(config, config.eval_domain,
                              config.eval_split)[:_VIZ_SCENES]
    with _timer(timers, 'masks'):
        images = np.stack([scene.image for scene in scenes])
        output = model.forward(params, images, config,
                               core.Rng(config.seed, _EVAL_STREAM),
                               use_slots=True)
    grid = output.features.grid
    coarse = core.tensor(output.hierarchy.coarse_masks).value
    fine = core.tensor(output.hierarchy.fine_masks).value
    for index, image in enumerate(images):
        stem = outdir / 'masks' / ('scene-%05i' % index)
        _formats.write_ppm(str(stem) + '-image.ppm', image)
        _formats.write_ppm(str(stem) + '-level1.ppm',
                           _formats.mask_overlay(image, coarse[index], grid))
        _formats.write_ppm(str(stem) + '-level2.ppm',
                           _formats.mask_overlay(image, fine[index], grid))
    _misc_logger.info('Wrote masks of %i scenes to %s', len(images),
                      outdir / 'masks')
    return 0


def _ablation_cell(config, grid, row, changes, adapt_target):
    """Pretrain, optionally adapt, and evaluate on the target eval split."""
    config = config.replace(**changes)
    params, _, _ = pretrain(config, _load_scenes(config, 'source', 'train'))
    if adapt_target:
        state = adaptation.AdaptState.from_pretrained(
            params, config, core.Rng(config.seed, _ADAPT_STREAM))
        adapt(config, _load_scenes(config, 'target', 'train'), state)
        params = state.teacher
    result, _ = evaluate(params, config,
                         _load_scenes(config, 'target', 'eval'))
    return {'grid': grid, 'row': row, 'seed': config.seed, 'f1': result.f1,
            'mean_ap': result.mean_ap}


def ablation_cells(config):
    """Return arguments of every ablation cell, in output order."""
    names = (list(_GRIDS) if config.ablation_grid == 'all'
             else [config.ablation_grid])
    cells = []
    for grid in names:
        for row, changes, adapt_target in _GRIDS[grid]:
            for offset in range(config.ablation_seeds):
                cells.append((config, grid, row,
                              dict(changes, seed=config.seed + offset),
                              adapt_target))
    return cells


def method_ordering(medians):
    """Check ordering of median F1 scores of the method rows.

    The full method is expected to beat slot attention alone, which is
    expected to beat the source-only baseline. The full method must also
    gain at least METHOD_GAIN over the baseline.

    Arguments:
        medians -- dictionary of median F1 score by method row name

    Returns:
        2-tuple: whether the expected ordering holds, and gain of full method
        over source-only baseline
    """
    baseline = medians['source-only']
    full = medians['hsa-cgsc']
    gain = full - baseline
    ordered = baseline <= medians['hsa'] <= full and gain >= METHOD_GAIN
    return ordered, gain


def _ablate_command(config, outdir, *, timers, jobs, **_):
    cells = ablation_cells(config)
    _misc_logger.info('Ablation: %i runs on %i processes', len(cells), jobs)
    with _timer(timers, 'ablate'):
        if jobs > 1:
            with concurrent.futures.ProcessPoolExecutor(jobs) as pool:
                futures = [pool.submit(_ablation_cell, *cell)
                           for cell in cells]
                rows = [future.result() for future in futures]
        else:
            rows = [_ablation_cell(*cell) for cell in cells]
    _formats.write_csv(outdir / 'ablate-runs.csv', ABLATION_COLUMNS, rows)
    summary = {}
    for row in rows:
        summary.setdefault((row['grid'], row['row']), []).append(row)
    medians = [(grid, name, len(group),
                float(np.median([r['f1'] for r in group])),
                float(np.median([r['mean_ap'] for r in group])))
               for (grid, name), group in summary.items()]
    _formats.write_csv(outdir / 'ablate-summary.csv', SUMMARY_COLUMNS,
                       medians)
    methods = {name: f1 for grid, name, _, f1, _ in medians
               if grid == 'methods'}
    if methods:
        ordered, gain = method_ordering(methods)
        _misc_logger.info('Method medians: source-only %s, hsa %s, '
                          'hsa-cgsc %s (gain %s)',
                          *(_format_value(value) for value in (
                              methods['source-only'], methods['hsa'],
                              methods['hsa-cgsc'], gain)))
        if not ordered:
            _misc_logger.warning('Method medians are not ordered '
                                 'source-only <= hsa <= hsa-cgsc with a '
                                 'gain of at least %s.', METHOD_GAIN)
    return 0


def set_log_stream(stream):
    """Initialize logging stream handler for overarching slotadapt logger.

    Delete existing handlers if any, including of sub-loggers. The logging
    level is initially set to WARNING, but it may be increased later by the
    _set_log_levels function.

    Arguments:
        stream -- logging stream
    """
    _main_logger.handlers.clear()
    _close_log_files()
    main_handler = logging.StreamHandler(stream)
    main_handler.setLevel(logging.WARNING)
    main_formatter = logging.Formatter('%(levelname)-8s - %(message)s')
    main_handler.setFormatter(main_formatter)
    _main_logger.addHandler(main_handler)


def _set_log_files(misc_path=None, steps_path=None):
    """Initialize logging handlers for log files.

    Log files are setup for the following loggers:
        slotadapt.steps -- output from steps option; and
        slotadapt.log -- everything else.

    Arguments:
        misc_path -- path of miscellaneous logging file
        steps_path -- path of steps logging file
    """
    if misc_path is not None:
        misc_handler = logging.FileHandler(misc_path, mode='w',
                                           encoding='utf-8')
        misc_handler.setLevel(logging.DEBUG)
        misc_formatter = logging.Formatter('%(levelname)-8s - %(message)s')
        misc_handler.setFormatter(misc_formatter)
        _misc_logger.addHandler(misc_handler)
    if steps_path is not None:
        handler = logging.FileHandler(steps_path, mode='w', encoding='utf-8')
        handler.setLevel(logging.DEBUG)
        _step_logger.addHandler(handler)


def _set_log_levels(steps, verbose):
    """Set log levels based on options specified by user.

    Arguments:
        steps -- whether to log one line per training step
        verbose -- whether to propagate informational message to the main log
            (if False, only warning and error messages are relayed)
    """
    if _main_logger.handlers:
        _main_logger.handlers[0].setLevel(logging.INFO if verbose
                                          else logging.WARNING)
    _misc_logger.setLevel(logging.DEBUG)
    _step_logger.setLevel(logging.DEBUG if steps else logging.INFO)
    # Step lines would drown other messages on the console.
    _step_logger.propagate = False


def _close_log_files():
    """Close and remove file handlers of sub-loggers."""
    for logger in (_misc_logger, _step_logger):
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()


def _log_versions():
    """Log software version information."""
    _misc_logger.info('SLOTADAPT version: %s', __version__)
    _misc_logger.info('Python version: %s', platform.python_version())
    for package in ('numpy', 'scipy', 'regex'):
        try:
            version = importlib.metadata.version(package)
        except importlib.metadata.PackageNotFoundError:
            version = 'unknown'
        _misc_logger.info('%s version: %s', package, version)
    _misc_logger.info('System: %s %s (%s)', platform.system(),
                      platform.release(), platform.version())
    _misc_logger.info('Machine: %s', platform.machine())


def _write_times(path, timers):
    """Write phase times to CSV file.

    Arguments:
        path -- path of CSV file
        timers -- dictionary mapping phase names to Timer objects
    """
    _formats.write_csv(path, ('phase', 'count', 'time'),
                       [(name, timer.count, timer.time)
                        for name, timer in timers.items()])
