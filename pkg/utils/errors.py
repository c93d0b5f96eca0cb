"""Exceptions shared by every stage of the pipeline.

Each one subclasses the closest builtin so callers can catch broadly.
run.py maps them onto exit codes.
"""


class ConfigError(ValueError):
    """Invalid configuration value, unknown key or unusable input set."""


class ShapeError(ValueError):
    """Operand dimensions do not agree."""


class ClassIndexError(IndexError):
    """Class index outside the logits range."""


class TrackingError(LookupError):
    """Gradient requested for a tensor the tape never recorded."""


class FormatError(ValueError):
    """Corrupt or truncated binary artifact."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = '%s (at byte offset %d)' % (message, offset)
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(ValueError):
    """A fairness metric needs a stratum that has no rows."""

    def __init__(self, metric, stratum):
        super().__init__('%s is undefined: stratum %s is empty' % (metric, stratum))
        self.metric = metric
        self.stratum = stratum


class PipelineOrderError(RuntimeError):
    """A stage was run before the stage it depends on."""


class MissingArtifactError(FileNotFoundError):
    """An input artifact (dataset, checkpoint) does not exist."""


class NumericError(ArithmeticError):
    """Non-finite value or violated numeric invariant."""
