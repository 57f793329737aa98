"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes, so new error types should
subclass one of the three roots below rather than raising bare exceptions.
"""


class ConfigError(ValueError):
    """Invalid configuration, hyperparameters, or unachievable targets. Exit code 2."""


class DivergedError(RuntimeError):
    """Training or a solver produced non-finite values or failed to converge. Exit code 3."""

    def __init__(self, message, step=None, traces=None):
        super().__init__(message)
        self.step = step
        # partial per-epoch traces accumulated before the failure, if any
        self.traces = traces


class DataError(ValueError):
    """Malformed or inconsistent input data files. Exit code 4."""


class InitializationError(ConfigError):
    """Rejection sampling could not satisfy the truncation bounds.

    Signals that the lower truncation threshold is too large relative to the
    layer's base sigma, which is a configuration problem.
    """


class LayerCollapseError(ConfigError):
    """A pruning target would remove every weight of some layer."""
