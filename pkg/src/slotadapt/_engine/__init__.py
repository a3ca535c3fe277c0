# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: numerical engine

All elements of this sub-package are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

This sub-package provides the numerical engine. The lowest two modules (base
and core) provide exceptions, tensors with a gradient tape, the assignment
solver and the seeded generator. The next layers build the model on top of
them: single-level slots, the two-level hierarchy and the detection head,
assembled by the model module. The contrast and adaptation modules implement
training, the synth module the synthetic benchmark, and the theory and suite
modules the analytic checks.

Modules:
    base -- timer and exceptions
    core -- tensors, gradients, assignment and random generator
    slots -- single-level slot attention and broadcast decoding
    hierarchy -- two-level slot decomposition and slot-aware queries
    detector -- query-based detection head and losses
    model -- parameter layout and forward pass
    contrast -- prototype memory and slot contrast
    adaptation -- pretraining and teacher-student adaptation
    theory -- closed-form quantities of the adaptation analysis
    suite -- self-checks against independent oracles
    synth -- synthetic benchmark and metrics
"""

__all__ = ['base', 'core', 'slots', 'hierarchy', 'detector', 'model',
           'contrast', 'adaptation', 'theory', 'suite', 'synth']

from slotadapt._engine import (base, core, slots, hierarchy, detector, model,
                               contrast, adaptation, theory, suite, synth)
