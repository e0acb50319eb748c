"""Exception types; each maps to a CLI exit code."""


class CrowdAMLError(Exception):
    exit_code = 1


class ConfigError(CrowdAMLError):
    exit_code = 2


class DegenerateGroupError(ConfigError):
    """The group indicator is all ones and cannot supervise anything."""


class DataError(CrowdAMLError):
    exit_code = 3


class NumericError(CrowdAMLError):
    exit_code = 4
