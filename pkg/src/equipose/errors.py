"""Exception hierarchy.

Each class carries an ``exit_code`` and a short ``kind`` used by the CLI to
report a single machine-parsable error line.
"""

from __future__ import annotations


class EquiposeError(Exception):
    kind = "error"
    exit_code = 1


class ConfigError(EquiposeError, ValueError):
    """Invalid configuration, arguments, or missing input files."""

    kind = "config"
    exit_code = 2


class ParseError(EquiposeError, ValueError):
    """Malformed input file; ``row`` is the 1-based line number when known."""

    kind = "parse"
    exit_code = 3

    def __init__(self, message: str, row: int | None = None, path=None):
        self.row = row
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class NumericError(EquiposeError, ArithmeticError):
    kind = "numeric"
    exit_code = 4


class UnprojectableError(NumericError):
    """Point lies behind (or on the focal plane of) a camera."""


class ConvergenceError(NumericError):
    def __init__(self, message: str, iterations: int):
        self.iterations = iterations
        super().__init__(f"{message} (after {iterations} iterations)")


class DegenerateGeometryError(NumericError):
    """Rank-deficient triangulation system, e.g. parallel rays."""


class StateError(EquiposeError, RuntimeError):
    """A pipeline stage was run before the stage it depends on."""

    kind = "state"
    exit_code = 5
