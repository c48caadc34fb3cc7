"""Exception types shared across the package.

CLI exit codes are attached to the failures that terminate a run so the
command line layer can map them without a lookup table.
"""


class RunawayLabError(Exception):
    exit_code = 1


class InvalidParameter(RunawayLabError, ValueError):
    exit_code = 2


class ConfigError(RunawayLabError, ValueError):
    """Malformed configuration; ``key`` names the offending entry."""

    exit_code = 2

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ConstructionFailure(RunawayLabError, RuntimeError):
    pass


class IntegrityFailure(RunawayLabError, RuntimeError):
    """A conservation ledger drifted past its hard tolerance."""

    exit_code = 3

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class StiffnessFailure(RunawayLabError, RuntimeError):
    exit_code = 4


class StepRejected(StiffnessFailure):
    """A single step visited the sub-``rcap`` region; retry with a smaller dt."""


class FileFormatError(RunawayLabError, OSError):
    """A run directory or table is missing a file or has a malformed one."""

    exit_code = 5

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path

    def __str__(self):
        return self.args[0]


class AccuracyFailure(RunawayLabError, RuntimeError):
    pass


class DegenerateRelativeVelocity(RunawayLabError, ValueError):
    pass


class EmptyDataError(RunawayLabError, ValueError):
    pass


class InvalidHistory(RunawayLabError, ValueError):
    pass
