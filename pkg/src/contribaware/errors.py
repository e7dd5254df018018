"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration, shapes or hyperparameters."""


class DataError(ValueError):
    """Invalid data content (labels out of range, empty sets, ...)."""


class IngestionError(DataError):
    """A dataset file could not be parsed."""

    def __init__(self, path, message):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class UndefinedMetricError(ValueError):
    """A metric has no meaningful value for the given inputs."""


class TrainingError(RuntimeError):
    """Training of one ensemble member failed."""

    def __init__(self, contributor_id, cause):
        self.contributor_id = contributor_id
        super().__init__(f"contributor {contributor_id}: {cause}")
