"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class ReweError(Exception):
    """Base class for all toolkit errors."""


class UsageError(ReweError):
    """Bad command-line arguments or malformed configuration."""


class DataError(ReweError):
    """Corpus, vocabulary, embedding-file or checkpoint content problems."""


class NumericError(ReweError):
    """Non-finite values, gradient-check failures and other numeric trouble."""
