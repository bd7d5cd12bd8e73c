"""Exception taxonomy shared across the pipeline stages."""


class FairsetError(Exception):
    """Base class for all errors raised by this package."""


# --- IDX codec ---

class IdxError(FairsetError):
    pass


class MalformedMagicError(IdxError):
    pass


class UnsupportedTypeError(IdxError):
    pass


class LengthMismatchError(IdxError):
    pass


class DecompressionError(IdxError):
    pass


class CapacityError(IdxError):
    pass


class PairingError(IdxError):
    pass


class LabelRangeError(IdxError):
    pass


class ShapeError(FairsetError):
    """Tensor/array shape does not match what the operation requires."""


# --- dataset store ---

class NotFoundError(FairsetError):
    pass


class IntegrityError(FairsetError):
    """Checksum of a source file does not match the expected value."""


class FetchError(FairsetError):
    def __init__(self, msg, retries=0):
        super().__init__(msg)
        self.retries = retries


class CorruptionError(FairsetError):
    """Stored artifact payload no longer matches its recorded digest."""


class VersionError(FairsetError):
    pass


class LockError(FairsetError):
    """Another process holds the advisory lock."""


# --- neural net ---

class ConfigError(FairsetError):
    pass


class NumericError(FairsetError):
    pass


class DegenerateBatchError(FairsetError):
    pass


class DivergenceError(FairsetError):
    def __init__(self, msg, epoch=None, step=None):
        super().__init__(msg)
        self.epoch = epoch
        self.step = step


class ModeError(FairsetError):
    pass


class StateError(FairsetError):
    pass


# --- labeling session ---

class SessionRankingMismatchError(FairsetError):
    pass


class LogCorruptionError(FairsetError):
    def __init__(self, msg, position=None):
        super().__init__(msg)
        self.position = position


class ConflictError(FairsetError):
    """Submitted verdict does not match the currently presented pair."""


# --- bench / cli ---

class DataError(FairsetError):
    pass


class StageDependencyError(FairsetError):
    pass


class ProvenanceError(FairsetError):
    pass
