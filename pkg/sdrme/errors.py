#!/usr/bin/env python3
"""
Exception hierarchy for sdrme
"""
from typing import Optional


class SdrmeError(Exception):
    """Base class for every error raised by the library"""


class DomainError(SdrmeError, ValueError):
    """An argument lies outside the domain of a generator, link or model"""


class NonpositiveDensity(SdrmeError, ValueError):
    """A plug-in density is nonpositive after flooring"""


class SupportViolation(SdrmeError, ValueError):
    """The auxiliary density vanishes at a data point"""


class NormalizerUnavailable(SdrmeError):
    """The model has no exact normalizer"""


class SingularOmega(SdrmeError, ArithmeticError):
    """A variance matrix is singular or too badly conditioned to invert"""


class DegenerateData(SdrmeError, ValueError):
    """The dataset cannot support the requested estimate"""


class SpaceTooLarge(SdrmeError):
    """The sample space is too large to enumerate"""


class InfiniteKL(SdrmeError, ArithmeticError):
    """The fitted distribution assigns zero mass where the truth does not"""


class ConfigError(SdrmeError, ValueError):
    """Invalid configuration; `field` names the offending dotted path"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)
