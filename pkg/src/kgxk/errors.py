"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data/contract
errors -> 2, training divergence -> 3.
"""


class KgxkError(Exception):
    """Base class for all package errors."""


class ParseError(KgxkError):
    """A triple file line could not be parsed; carries the line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class VocabError(KgxkError):
    """A surface name could not be resolved against a fixed vocabulary."""


class BoundsError(KgxkError):
    """An entity/relation/edge id fell outside the graph's id space."""


class ConfigError(KgxkError):
    """Invalid configuration value or unknown configuration key."""


class ContractError(KgxkError):
    """A documented precondition of an operation was violated by the caller."""


class TrainingError(KgxkError):
    """Training diverged (non-finite loss); carries the epoch index."""

    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class CheckpointError(KgxkError):
    """A checkpoint file is malformed or incompatible with the graph."""


class ProtocolError(KgxkError):
    """An evaluation-protocol contract was violated (e.g. over-budget subgraph)."""
