"""Exception taxonomy shared by all engine modules."""


class EngineError(Exception):
    """Base class for every error raised by this package."""


# --- ingestion ---

class MalformedCsv(EngineError):
    pass


class DimensionMismatch(EngineError):
    pass


class NonFiniteValue(EngineError):
    pass


class DuplicateId(EngineError):
    pass


class UnknownTaskSuffix(EngineError):
    pass


class NonBinaryLabel(EngineError):
    pass


class EmptyAnnotationDir(EngineError):
    pass


class FilterNameNotFound(EngineError):
    pass


class UnknownKey(EngineError):
    pass


class InvalidValue(EngineError):
    pass


# --- probing ---

class TooFewSamples(EngineError):
    pass


class NonFiniteLoss(EngineError):
    pass


class WidthMismatch(EngineError):
    pass


class MissingId(EngineError):
    pass


# --- metrics ---

class LengthMismatch(EngineError):
    pass


class SingleClass(EngineError):
    pass


# --- scoring ---

class EmptyFolds(EngineError):
    pass


class MissingTaskRank(EngineError):
    pass


class MismatchedTasks(EngineError):
    pass


# --- persistence / service ---

class DuplicateRecord(EngineError):
    pass


class UnknownPhase(EngineError):
    pass


class IoFailure(EngineError):
    pass


class InvalidSpec(EngineError):
    pass
