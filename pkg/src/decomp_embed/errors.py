"""Exception hierarchy shared by every module.

Each class carries a short ``code`` used by the CLI when reporting failures
on stderr.
"""


class DecompEmbedError(Exception):
    code = "ERROR"


class ShapeError(DecompEmbedError, ValueError):
    code = "SHAPE_ERROR"


class ParameterError(DecompEmbedError, ValueError):
    code = "PARAMETER_ERROR"


class ConfigError(DecompEmbedError, ValueError):
    code = "CONFIG_ERROR"


class SchemaError(ConfigError):
    code = "SCHEMA_ERROR"


class RowIndexError(DecompEmbedError, IndexError):
    code = "INDEX_ERROR"


class UndefinedMetricError(DecompEmbedError, ValueError):
    code = "UNDEFINED_METRIC"


class SelectionError(DecompEmbedError, ValueError):
    code = "SELECTION_ERROR"


class DivergenceError(DecompEmbedError, RuntimeError):
    code = "DIVERGENCE"


class IntegrityError(DecompEmbedError, IOError):
    code = "INTEGRITY_ERROR"


class VersionError(IntegrityError):
    code = "VERSION_ERROR"


class MalformedInputError(DecompEmbedError, ValueError):
    code = "MALFORMED_INPUT"
