# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: entry point for python -m slotadapt"""

from slotadapt._cli import run

if __name__ == '__main__':
    run()
