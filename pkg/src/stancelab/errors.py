"""Shared exception types."""


class StancelabError(Exception):
    """Base class for all library errors."""


class DataError(StancelabError):
    """Bad input data: unreadable files, malformed records, misaligned bins.

    CLI maps this to exit code 2.
    """


class DegenerateMarginalsError(StancelabError):
    """Agreement statistic undefined because chance agreement is exactly 1."""
