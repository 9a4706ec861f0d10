"""Shared exception types."""


class BlowupError(RuntimeError):
    """Integration produced a non-finite or absurdly large state.

    Carries enough provenance (stage, step, time, sample) to locate the
    failure inside nested loops.
    """

    def __init__(self, message, stage=None, step=None, time=None, sample=None):
        super().__init__(message)
        self.stage = stage
        self.step = step
        self.time = time
        self.sample = sample


class ConfigError(ValueError):
    """Invalid run configuration (bad value, unknown key, missing file)."""


class FormatError(ValueError):
    """Corrupt or incompatible binary/JSON artifact on disk."""
