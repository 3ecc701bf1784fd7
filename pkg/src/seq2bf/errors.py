"""Exception types raised across the package."""


class Seq2BFError(Exception):
    pass


class ConfigurationError(Seq2BFError, ValueError):
    """Invalid or inconsistent configuration (empty corpus, bad ratios, ...)."""


class DataError(Seq2BFError, ValueError):
    """Malformed input data: out-of-range ids, missing fields, bad files."""


class ConstraintError(Seq2BFError, ValueError):
    """A structural constraint was violated, e.g. an empty phrase."""


class TrainingError(Seq2BFError, RuntimeError):
    def __init__(self, message, batch_id=None):
        super().__init__(message if batch_id is None else f"{message} (batch {batch_id})")
        self.batch_id = batch_id
