"""Exception hierarchy shared by every module.

``DataError`` subclasses signal bad input (the CLI maps them to exit code 3);
``InvariantError`` signals a broken internal guarantee (exit code 4).
"""


class SyntempoError(Exception):
    pass


class DataError(SyntempoError):
    pass


class InvariantError(SyntempoError):
    pass


class ParseError(DataError):
    """Malformed bracket string. ``offset`` is a byte offset into the UTF-8 input."""

    def __init__(self, message, offset=None, line=None):
        self.reason = message
        self.offset = offset
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class UnbalancedParens(ParseError):
    pass


class EmptyLabel(ParseError):
    pass


class TrailingContent(ParseError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyLibrary(DataError):
    pass


class SampleTooLarge(DataError):
    pass


class LibraryTooSmall(DataError):
    pass


class FormatVersionMismatch(DataError):
    pass


# checkpoints use the same failure mode under the name the model API documents
VersionMismatch = FormatVersionMismatch


class EmptyInput(DataError):
    pass


class DimMismatch(DataError):
    pass


class TraceMismatch(DataError):
    pass


class StaleCache(DataError):
    pass


class OracleMiss(DataError):
    pass


class NonFiniteLoss(DataError):
    pass


class ZeroVariance(DataError):
    pass


class KTooLarge(DataError):
    pass


class NoPairings(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class TooFewParaphrases(DataError):
    pass


class MissingEmbedding(DataError):
    pass


class ZeroVector(DataError):
    pass
