"""Exception taxonomy shared across the pipeline.

The CLI maps these onto process exit codes (config 2, data 3, numerics 4) so
batch sweeps can tell misconfiguration apart from bad inputs and diverging
training runs.
"""


class PipelineError(Exception):
    exit_code = 1


class ConfigurationError(PipelineError):
    """Invalid or inconsistent configuration; nothing was computed."""

    exit_code = 2


class DataError(PipelineError):
    """Input data violates a precondition (shape, labels, missing files)."""

    exit_code = 3


class NumericalError(PipelineError):
    """Non-finite values or numerically impossible requests at run time."""

    exit_code = 4
