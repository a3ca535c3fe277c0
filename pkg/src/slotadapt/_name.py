# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: name

Constants:
    SHORTNAME -- short name of application
    LONGNAME -- long name of application
"""

SHORTNAME = 'SLOTADAPT'
LONGNAME = ('Slot-guided Adaptation of object detectors across domain '
            'shifts')
