# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""Slot-guided Adaptation of object detectors across domain shifts

SLOTADAPT adapts a small query-based object detector, trained on labelled
images of a source domain, to unlabelled images of a shifted target domain. A
two-level slot attention module decomposes the image features into coarse
parts and finer sub-parts; the fine slots are mapped into the object queries of
the detector, and a reconstruction loss keeps the decomposition faithful to
the features. During adaptation, a teacher network (an exponential moving
average of the student) produces pseudo labels on target images through a
decaying confidence threshold, and a contrastive loss pulls the slots assigned
to each class toward a running prototype of that class.

Everything runs on numpy arrays with a small reverse-mode differentiation
engine, so that the whole pipeline fits on a desk: a synthetic benchmark of
shapes on light backgrounds (source) and the same scenes under fog, noise and
hue shift (target) stands in for real driving datasets. The package also
checks numerically the closed-form results behind the adaptation: the
gradients of the contrastive loss with respect to similarities, the monotone
growth of the margin under gradient steps, the contraction of the pseudo-label
error, and the bounds on slot concentration.

The SLOTADAPT executable is called slotadapt. Usage help for the Command-Line
Interface (CLI) can be obtained by typing "slotadapt -h". The commands are
gen-data, pretrain, adapt, eval, theory, viz-masks and ablate. Each command
reads the defaults, an optional configuration file of "key = value" lines and
the overrides given with --set, in that order of precedence, and writes its
artifacts (checkpoints, CSV traces, PPM images) to the output directory.

Users can also call the engine from their own applications: parse_config
builds a validated configuration, and run_command runs one command.

Limitations:
    1. The differentiation engine runs on the CPU with float64 arrays, so that
       training is only practical at the default desk-scale sizes.
    2. Scenes with overlapping objects are avoided by rejection sampling;
       after the maximum number of placement attempts an object is placed
       anyway, so that overlaps remain possible in crowded scenes.

Constants:
    SHORTNAME -- short name of application
    LONGNAME -- long name of application

Classes:
    RunConfig -- immutable record of every tunable
    ConfigError -- invalid configuration
    Timer -- context manager to time and count execution of arbitrary code

Functions:
    parse_config -- build validated RunConfig from file text and overrides
    run_command -- run one command and save its artifacts
    save_checkpoint -- write checkpoint to file
    load_checkpoint -- read checkpoint from file

The following elements are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Sub-package (internal):
    _engine -- numerical engine

Modules (internal):
    _app -- application that leverages numerical engine and is behind the CLI
    _checkpoint -- checkpoint persistence
    _cli -- command-line interface to application
    _config -- run configuration
    _formats -- file formats for images, tables and datasets
"""

__all__ = ['SHORTNAME', 'LONGNAME', 'RunConfig', 'ConfigError', 'Timer',
           'parse_config', 'run_command', 'save_checkpoint',
           'load_checkpoint']

from slotadapt._version import __version__
from slotadapt._name import SHORTNAME, LONGNAME
import slotadapt._cli
from slotadapt._engine.base import Timer
from slotadapt._config import RunConfig, ConfigError, parse_config
from slotadapt._checkpoint import save_checkpoint, load_checkpoint
from slotadapt._app import run_command
