"""Exception hierarchy. Each family maps to a CLI exit code."""


class MitosliceError(Exception):
    exit_code = 4


class ConfigError(MitosliceError, ValueError):
    exit_code = 2


class DataError(MitosliceError, ValueError):
    exit_code = 3


class TrainingError(MitosliceError):
    exit_code = 4


class BackboneUnavailableError(MitosliceError):
    exit_code = 4


class FingerprintMismatchError(MitosliceError):
    exit_code = 3
