"""Exception hierarchy. Each class carries a short machine-parseable ``kind``."""


class VidAdaptError(Exception):
    kind = "error"


class DimensionError(VidAdaptError, ValueError):
    kind = "dimension error"


class ConfigError(VidAdaptError, ValueError):
    kind = "config error"


class UsageError(VidAdaptError, ValueError):
    kind = "usage error"


class RangeError(VidAdaptError, IndexError):
    kind = "range error"


class ScheduleError(VidAdaptError, ValueError):
    kind = "schedule error"


class ModelContractError(VidAdaptError, ValueError):
    kind = "model contract error"


class VocabularyError(VidAdaptError, KeyError):
    kind = "vocabulary error"

    def __str__(self) -> str:
        return Exception.__str__(self)


class SpecError(VidAdaptError, ValueError):
    """Scene cannot be rendered (object would leave the canvas)."""

    kind = "spec error"


class CorruptFileError(VidAdaptError, IOError):
    kind = "corrupt-file error"


class FreezeViolation(VidAdaptError, AssertionError):
    kind = "freeze violation"


class DivergenceError(VidAdaptError, FloatingPointError):
    kind = "divergence"
