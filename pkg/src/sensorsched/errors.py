"""Exception hierarchy.

All library errors derive from SensorSchedError so callers (and the CLI)
can catch one base type.  ValueError/RuntimeError mixins keep the types
usable with idiomatic ``except ValueError`` blocks.
"""


class SensorSchedError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SensorSchedError, ValueError):
    """Invalid parameters, grids, stability limits or config files."""


class GridMismatchError(SensorSchedError, ValueError):
    """Two objects built on different time or space grids were combined."""


class NumericsError(SensorSchedError, RuntimeError):
    """A numerical invariant broke mid-run (blow-up, loss of PSD, ...)."""


class SupportError(SensorSchedError, ValueError):
    """A density ratio was requested where the reference density vanishes."""
