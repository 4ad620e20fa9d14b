"""Exception types shared across the pipeline."""


class WSTrackError(Exception):
    pass


class ConfigError(WSTrackError, ValueError):
    """Invalid configuration value."""


class InputError(WSTrackError, ValueError):
    """Malformed or inconsistent input (shapes, positions, empty data)."""


class TrainingError(WSTrackError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class StageError(WSTrackError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
