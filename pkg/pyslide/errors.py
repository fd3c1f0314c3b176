"""Exception hierarchy shared by every pyslide module."""

from __future__ import annotations


class PySlideError(Exception):
    """Base class for all errors raised by pyslide."""


class ConfigError(PySlideError, ValueError):
    """Malformed or inconsistent experiment configuration."""


class GridError(PySlideError, ValueError):
    """Invalid grid geometry or mismatched grids."""


class FieldError(PySlideError, ValueError):
    """Invalid field values (wrong shape, non-finite entries)."""


class HullError(FieldError):
    """A point or a ball is not covered by the grid hull."""


class IntegrandError(PySlideError, ValueError):
    """Unknown integrand, bad parameters or failed derivative checks."""


class SingularEvaluationError(IntegrandError):
    """A singular weight was evaluated on or beyond its singular hyperplane."""


class DomainError(PySlideError, ValueError):
    """Argument outside the domain of an iterated logarithm or cutoff."""


class DeformationError(PySlideError, ValueError):
    """Deformation violates its Lipschitz, support or continuity bounds."""


class ParameterError(PySlideError, ValueError):
    """Experiment parameter outside its admissible range."""


class ConvergenceError(PySlideError, RuntimeError):
    """Iteration diverged or hit its step cap."""


class ExperimentError(PySlideError, RuntimeError):
    """An experiment could not produce a result (e.g. sampler exhausted)."""
