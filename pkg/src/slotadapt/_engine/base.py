# coding=utf-8
#
# SPDX-FileCopyrightText: 2023 His Majesty in Right of Canada
#
# SPDX-License-Identifier: LicenseRef-MIT-DND
#
# This file is part of the SLOTADAPT package.

"""SLOTADAPT: timer and exceptions shared by the engine

All elements of this module are implementation details that may change in
non-backward-compatible ways between minor or micro version releases.

Classes:
    Timer -- context manager to time and count execution of arbitrary code
    NumericalError -- base class of engine exceptions
    ShapeError -- operands of incompatible shapes
    NonFiniteError -- NaN or infinite value where finite values are required
    EmptyAxisError -- reduction over an axis of length zero
    ZeroNormError -- vector of zero norm where a direction is required
    NotScalarError -- gradient requested for non-scalar output
    AssignmentError -- assignment problem with more rows than columns
    NotStochasticError -- weights that do not sum to one
    DegenerateBoxError -- box with non-positive width or height
    StepRangeError -- schedule step outside of its range
"""

__all__ = ['Timer', 'NumericalError', 'ShapeError', 'NonFiniteError',
           'EmptyAxisError', 'ZeroNormError', 'NotScalarError',
           'AssignmentError', 'NotStochasticError', 'DegenerateBoxError',
           'StepRangeError']

import platform
import time


class Timer:
    """Context manager to time and count execution of arbitrary code.

    On Windows, measures clock time; on other platforms measures CPU time. This
    is done because the resolution of process_time function is too low on
    Windows.

    Methods:
        __init__ -- initializer
        __enter__ -- enter runtime context: start timing
        __exit__ -- exit runtime context: stop timing

    Properties (read-only):
        count -- number of times that context has been entered
        time -- execution time of code within context

    Attributes:
        _count, _time -- storage for count and time property values
    """

    def __init__(self):
        """Initialize timer."""
        self._count = 0
        self._time = 0
        self._start = 0

    def __enter__(self):
        """Start timing."""
        self._count += 1
        if platform.system() == 'Windows':
            self._start = time.perf_counter()
        else:
            self._start = time.process_time()
        return self

    def __exit__(self, exception_type, exception_value, traceback):
        """Stop timing."""
        if platform.system() == 'Windows':
            self._time += time.perf_counter() - self._start
        else:
            self._time += time.process_time() - self._start

    @property
    def count(self):
        """Number of times that context has been entered."""
        return self._count

    @property
    def time(self):
        """Execution time of code within context."""
        return self._time


class NumericalError(ValueError):
    """Base class of exceptions raised by the numerical engine."""


class ShapeError(NumericalError):
    """Operands of incompatible shapes.

    Methods:
        __init__: initializer
    """

    def __init__(self, operation, *shapes):
        """Initialize exception.

        Arguments:
            operation -- name of operation that rejected its operands
            shapes -- shapes of offending operands
        """
        message = ('Incompatible shapes in %s: %s.'
                   % (operation, ', '.join(str(tuple(shape))
                                           for shape in shapes)))
        super().__init__(message)


class NonFiniteError(NumericalError):
    """NaN or infinite value where finite values are required.

    Methods:
        __init__: initializer
    """

    def __init__(self, where):
        """Initialize exception.

        Arguments:
            where -- description of the offending value
        """
        super().__init__('Non-finite value in %s.' % where)


class EmptyAxisError(NumericalError):
    """Reduction over an axis of length zero.

    Methods:
        __init__: initializer
    """

    def __init__(self, operation, axis):
        """Initialize exception.

        Arguments:
            operation -- name of reduction
            axis -- empty axis
        """
        super().__init__('Empty axis %s in %s.' % (axis, operation))


class ZeroNormError(NumericalError):
    """Vector of zero norm where a direction is required."""

    def __init__(self, operation):
        """Initialize exception.

        Arguments:
            operation -- name of operation
        """
        super().__init__('Zero-norm vector in %s.' % operation)


class NotScalarError(NumericalError):
    """Gradient requested for non-scalar output."""

    def __init__(self, shape):
        """Initialize exception.

        Arguments:
            shape -- shape of output
        """
        super().__init__('Gradient output must be scalar, got shape %s.'
                         % (tuple(shape),))


class AssignmentError(NumericalError):
    """Assignment problem with more rows than columns."""

    def __init__(self, rows, columns):
        """Initialize exception.

        Arguments:
            rows, columns -- dimensions of score matrix
        """
        super().__init__('Cannot assign %i rows injectively to %i columns.'
                         % (rows, columns))


class NotStochasticError(NumericalError):
    """Weights that are negative or do not sum to one."""

    def __init__(self, operation, worst):
        """Initialize exception.

        Arguments:
            operation -- name of operation
            worst -- largest deviation of a row sum from one
        """
        super().__init__('Weights in %s are not row-stochastic (largest '
                         'deviation %.3g).' % (operation, worst))


class DegenerateBoxError(NumericalError):
    """Box with non-positive width or height."""

    def __init__(self, box):
        """Initialize exception.

        Arguments:
            box -- offending box (cx, cy, w, h)
        """
        super().__init__('Degenerate box %s.' % (tuple(box),))


class StepRangeError(NumericalError):
    """Schedule step outside of its range."""

    def __init__(self, step, total):
        """Initialize exception.

        Arguments:
            step -- requested step
            total -- last valid step
        """
        super().__init__('Step %s outside of schedule range [0, %s].'
                         % (step, total))
