"""Exception types shared across the pipeline."""

from __future__ import annotations


class IssueViewError(Exception):
    """Base class for all pipeline errors."""


class MalformedRecord(IssueViewError):
    def __init__(self, line_number: int, detail: str = ""):
        self.line_number = line_number
        super().__init__(f"malformed record at line {line_number}" + (f": {detail}" if detail else ""))


class MissingField(IssueViewError):
    def __init__(self, name: str, line_number: int | None = None):
        self.name = name
        self.line_number = line_number
        where = f" at line {line_number}" if line_number is not None else ""
        super().__init__(f"missing field {name!r}{where}")


class ParseError(IssueViewError):
    def __init__(self, line_number: int, detail: str = ""):
        self.line_number = line_number
        super().__init__(f"parse error at line {line_number}" + (f": {detail}" if detail else ""))


class LengthMismatch(IssueViewError):
    pass


class DegenerateCorpus(IssueViewError):
    pass


class EmptyCorpus(IssueViewError):
    pass


class EmptyText(IssueViewError):
    pass


class EmptyConversation(IssueViewError):
    pass


class EmptyQueryEntities(IssueViewError):
    pass


class QueryMismatch(IssueViewError):
    pass


class FormatError(IssueViewError):
    pass


class VersionError(IssueViewError):
    pass


class OrphanReplyWarning(UserWarning):
    """A reply points at a thread root that is not in the log."""
