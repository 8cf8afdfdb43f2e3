"""Exception hierarchy shared across the package.

Every domain failure derives from :class:`FabricError` so the CLI can map
them to exit status 1 without listing each one.
"""


class FabricError(Exception):
    """Base class for domain errors (as opposed to usage/config errors)."""


class MalformedTlp(FabricError, ValueError):
    pass


class UnknownTag(FabricError):
    pass


class TableError(FabricError):
    pass


class NoFreeBus(TableError):
    pass


class OverlappingWindow(TableError):
    pass


class EntryNotUsed(TableError):
    pass


class SlotInvalid(TableError):
    pass


class SlotBusy(TableError):
    pass


class NotBound(TableError):
    pass


class CodecError(FabricError):
    pass


class MtuTooSmall(CodecError, ValueError):
    pass


class CrcMismatch(CodecError):
    pass


class IncompleteGroup(CodecError):
    pass


class ReorderedGroup(CodecError):
    pass


class Insufficient(FabricError):
    pass


class EmptyTrace(FabricError, ValueError):
    pass


class InvalidSpec(FabricError, ValueError):
    pass


class TraceParseError(FabricError, ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno
