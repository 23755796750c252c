"""Exception and warning types raised across the package."""


class PanelPompError(Exception):
    """Base class for all package errors."""


class NameClash(PanelPompError, ValueError):
    """A parameter name is declared both shared and unit-specific."""


class UnitMismatch(PanelPompError, ValueError):
    """Unit labels or counts disagree between units and parameters."""


class MissingComponent(PanelPompError, ValueError):
    """A unit model lacks a component required by the requested operation."""


class ParseError(PanelPompError, ValueError):
    """A parameter name does not follow the ``name[unit]`` convention."""


class UnknownParameterError(PanelPompError, KeyError):
    """A setter or lookup referenced a parameter the model does not define."""


class DomainError(PanelPompError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(PanelPompError, ValueError):
    """Array input has an inconsistent shape."""


class SimulationError(PanelPompError, RuntimeError):
    def __init__(self, message, unit=None, time=None):
        super().__init__(message)
        self.unit = unit
        self.time = time


class FilterError(PanelPompError, RuntimeError):
    def __init__(self, message, unit=None, time=None):
        super().__init__(message)
        self.unit = unit
        self.time = time


class ConfigError(PanelPompError, ValueError):
    """Invalid algorithm or command-line configuration."""


class CurvatureError(PanelPompError, RuntimeError):
    """The local quadratic fit of a profile is not concave at its maximum."""


class FormatError(PanelPompError, ValueError):
    """An input file is missing required columns or is malformed."""


class FilterWarning(UserWarning):
    """All particle weights fell below the tolerance at some observation."""
