# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: command-line interface

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Functions:
    run -- run tool in CLI mode

The following elements are internal elements of the module.

Constants: logging
    _misc_logger -- miscellaneous log messages

Functions (internal):
    _help_formatter -- format CLI help message
    _create_parser -- create parser for processing command-line arguments
    _read_config -- build configuration from file and overrides
"""

__all__ = ['run']

import argparse
import logging
from pathlib import Path
import sys

import slotadapt
from slotadapt import _app
from slotadapt import _checkpoint
from slotadapt import _config
from slotadapt import _formats
from slotadapt._engine import base


# Logging
_misc_logger = logging.getLogger('slotadapt.log')


def run(argv=None):
    """Run tool in Command-Line Interface (CLI) mode.

    Arguments:
        argv -- list of arguments (default: sys.argv[1:])
    """
    # Parse arguments.
    parser = _create_parser()
    args = parser.parse_args(argv)
    # Execute according to specified arguments.
    # pylint: disable=broad-except
    # Reason: exception logged
    _app.set_log_stream(sys.stderr)
    if args.help:
        parser.exit(0, parser.format_help())
    elif args.version:
        parser.exit(0, '%s %s\n' % (slotadapt.SHORTNAME,
                                    slotadapt.__version__))
    elif args.verb is None:
        parser.error('missing command')
    elif args.jobs < 1:
        parser.error('--jobs must be positive')
    status = 1
    try:
        config = _read_config(args.config, args.set, args.out)
        status = _app.run_command(args.verb, config,
                                  checkpoint=args.checkpoint,
                                  verbose=args.verbose, steps=args.steps,
                                  times=args.times, jobs=args.jobs)
    except (_config.ConfigError, _app.MissingInputError,
            _checkpoint.CheckpointError, _formats.FormatError,
            base.NumericalError) as err:
        _misc_logger.error(err)
    except FileNotFoundError as err:
        _misc_logger.error('File not found: %s', err.filename or err)
    except PermissionError as err:
        path = Path(err.filename).resolve()
        _misc_logger.error('Cannot write to %s in %s. It may be open in '
                           'another application. If so, please close it '
                           'and try again.',
                           path.name, path.parent)
    except KeyboardInterrupt:
        _misc_logger.error('Command interrupted by user.')
    except Exception:
        _misc_logger.exception(
            'Unexpected error: please report to developer.')
    sys.exit(status)


def _read_config(config_path, overrides, out):
    """Build configuration from file and overrides.

    Arguments:
        config_path -- path of configuration file (None for defaults)
        overrides -- list of KEY=VALUE strings
        out -- output directory given on command line (None if absent)

    Returns:
        RunConfig
    """
    text = ''
    if config_path is not None:
        with open(config_path, encoding='utf-8') as config_file:
            text = config_file.read()
    overrides = list(overrides)
    if out is not None:
        overrides.append('output_dir = %s' % out)
    return _config.parse_config(text, overrides)


def _help_formatter(prog):
    """Return formatting object for help text.

    The returned object leaves more room for argument names in help text.

    Argument:
        prog -- program name

    Returns:
        argparse.HelpFormatter object
    """
    return argparse.HelpFormatter(prog, max_help_position=16, width=79)


def _create_parser():
    """Create parser for processing command-line arguments.

    Returns:
        argparse.ArgumentParser object
    """
    parser = argparse.ArgumentParser(
                prog='slotadapt',
                formatter_class=_help_formatter, add_help=False,
                description="""Adapt a query-based object detector from
                labelled source images to unlabelled target images with
                hierarchical slot attention, class-guided slot contrast and a
                mean-teacher, on a synthetic shapes benchmark. Also checks the
                closed-form results behind the adaptation.""",
                epilog=f"""Typical sequence: gen-data (optional), pretrain,
                adapt, eval. Each command writes its artifacts, a log
                (VERB-log.txt) and a copy of its configuration
                (VERB-config.txt) to the output directory, which defaults to
                the {_config.OUTPUT_ENV} environment variable or
                {_config.DEFAULT_OUTPUT}. The exit status is 1 on error and
                when a theory check fails.""")

    pos_arg = parser.add_argument_group('Positional argument')
    pos_arg.add_argument('verb', nargs='?', choices=_app.VERBS,
                         metavar='COMMAND',
                         help='one of: %s' % ', '.join(_app.VERBS))
    general = parser.add_argument_group('General options')
    general.add_argument('--config', '-c', type=Path, metavar='FILE',
                         help='configuration file of "key = value" lines')
    general.add_argument('--set', '-s', action='append', default=[],
                         metavar='KEY=VALUE',
                         help='override one configuration value (repeatable); '
                              'takes precedence over configuration file')
    general.add_argument('--checkpoint', type=Path, metavar='FILE',
                         help='input checkpoint; resumes training when given '
                              'to pretrain or adapt with a checkpoint of the '
                              'same phase; default: checkpoint of previous '
                              'phase in output directory')
    general.add_argument('--out', '-o', metavar='DIR',
                         help='output directory (same as '
                              '--set output_dir=DIR)')
    general.add_argument('--jobs', '-j', type=int, default=1, metavar='N',
                         help='number of processes for ablate; default: '
                              '%(default)s')
    general.add_argument('--help', '-h', action='store_true',
                         help='show this help message and exit')
    general.add_argument('--version', action='store_true',
                         help='print out version number and exit')
    log = parser.add_argument_group('Debugging options (logging)')
    log.add_argument('--steps', action='store_true',
                     help='log losses, threshold and pseudo-label count of '
                          'every training step to VERB-steps.txt')
    log.add_argument('--times', action='store_true',
                     help='save time of every phase to VERB-times.csv')
    log.add_argument('--verbose', '-v', action='store_true',
                     help='print informational messages to standard error in '
                          'addition to warnings and errors')
    return parser
