"""Exception types raised across the harness."""


class InputError(ValueError):
    """Invalid argument: bad state/action id, bad size, mismatched shapes."""


class ConfigError(ValueError):
    """Run or CLI configuration violates an invariant."""


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed.

    ``record`` is the 0-based index of the first offending transition record,
    or ``None`` when the problem is in the header.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class DatasetValidationError(DatasetFormatError):
    """A dataset file parsed but its contents contradict its own header."""


class ProtocolError(RuntimeError):
    """An operation was called in the wrong phase of a run."""


class BufferExhausted(Exception):
    """Raised by ``SequentialBuffer.extend`` once all offline data is visible."""


class UndefinedMetric(LookupError):
    """A model-card statistic has no defined value for the given curve."""


class DegenerateReference(ValueError):
    """Normalization references coincide (expert_ref == random_ref)."""
