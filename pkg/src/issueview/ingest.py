"""Chat export parsing and native-thread grouping.

The export format is JSON lines, one message object per line:

    {"id": str, "ts": "<decimal seconds>", "user": str, "text": str,
     "thread_ts": optional str, "bot": optional bool}

Timestamps are carried as ``Decimal`` so that sub-second digits survive a
parse -> serialize round trip bit-identically.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import IO, Iterable

from .errors import MalformedRecord, MissingField, OrphanReplyWarning

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("id", "ts", "user", "text")


@dataclass(frozen=True)
class RawMessage:
    """One channel message as it appears in the export."""

    id: str
    channel_id: str
    author: str
    timestamp: Decimal
    text: str
    parent_thread_id: str | None = None
    is_bot: bool = False

    def sort_key(self) -> tuple[Decimal, str]:
        return (self.timestamp, self.id)


@dataclass
class ChannelLog:
    """Time-ordered message log for a single channel."""

    messages: list[RawMessage]
    channel_id: str

    def __post_init__(self) -> None:
        self.messages = sorted(self.messages, key=RawMessage.sort_key)


@dataclass
class Thread:
    """A native thread: a root message plus its replies."""

    root: RawMessage
    replies: list[RawMessage] = field(default_factory=list)

    @property
    def thread_id(self) -> str:
        return self.root.id

    @property
    def participants(self) -> set[str]:
        return {self.root.author} | {m.author for m in self.replies}

    @property
    def t_start(self) -> Decimal:
        return min([self.root.timestamp] + [m.timestamp for m in self.replies])

    @property
    def t_end(self) -> Decimal:
        return max([self.root.timestamp] + [m.timestamp for m in self.replies])

    def messages(self) -> list[RawMessage]:
        return sorted([self.root] + self.replies, key=RawMessage.sort_key)


def _parse_record(obj: dict, line_number: int) -> RawMessage:
    for name in REQUIRED_FIELDS:
        if name not in obj:
            raise MissingField(name, line_number)
    try:
        ts = Decimal(str(obj["ts"]))
    except InvalidOperation:
        raise MalformedRecord(line_number, f"bad timestamp {obj['ts']!r}") from None
    if ts < 0:
        raise MalformedRecord(line_number, "negative timestamp")
    text = str(obj["text"])
    is_bot = bool(obj.get("bot", False))
    if not text and not is_bot:
        raise MalformedRecord(line_number, "empty text on non-bot message")
    return RawMessage(
        id=str(obj["id"]),
        channel_id="",  # filled by caller
        author=str(obj["user"]),
        timestamp=ts,
        text=text,
        parent_thread_id=str(obj["thread_ts"]) if obj.get("thread_ts") is not None else None,
        is_bot=is_bot,
    )


def parse_chat_export(
    stream: IO[str] | Iterable[str],
    format: str = "json-lines",
    channel_id: str = "default",
    on_malformed: str = "abort",
) -> ChannelLog:
    """Parse a chat export stream into a sorted :class:`ChannelLog`.

    ``on_malformed`` is either ``"abort"`` (raise on the first bad record,
    the default) or ``"skip"`` (drop bad records with a warning).
    """
    if format != "json-lines":
        raise ValueError(f"unsupported export format {format!r}")
    if on_malformed not in ("abort", "skip"):
        raise ValueError(f"on_malformed must be 'abort' or 'skip', got {on_malformed!r}")

    messages: list[RawMessage] = []
    seen_ids: set[str] = set()
    skipped = 0
    for line_number, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_number, str(exc)) from None
            if not isinstance(obj, dict):
                raise MalformedRecord(line_number, "record is not an object")
            msg = _parse_record(obj, line_number)
            if msg.id in seen_ids:
                raise MalformedRecord(line_number, f"duplicate message id {msg.id!r}")
        except (MalformedRecord, MissingField):
            if on_malformed == "abort":
                raise
            skipped += 1
            logger.warning("skipping bad record at line %d", line_number)
            continue
        seen_ids.add(msg.id)
        messages.append(
            RawMessage(
                id=msg.id,
                channel_id=channel_id,
                author=msg.author,
                timestamp=msg.timestamp,
                text=msg.text,
                parent_thread_id=msg.parent_thread_id,
                is_bot=msg.is_bot,
            )
        )
    log = ChannelLog(messages=messages, channel_id=channel_id)
    logger.info("parsed %d messages (%d skipped)", len(log.messages), skipped)
    return log


def serialize_chat_export(log: ChannelLog) -> str:
    """Inverse of :func:`parse_chat_export`; emits sorted JSON lines."""
    lines = []
    for m in log.messages:
        obj: dict = {"id": m.id, "ts": str(m.timestamp), "user": m.author, "text": m.text}
        if m.parent_thread_id is not None:
            obj["thread_ts"] = m.parent_thread_id
        if m.is_bot:
            obj["bot"] = True
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


def native_threads(log: ChannelLog) -> tuple[list[Thread], list[RawMessage]]:
    """Group messages into native threads using the channel metadata.

    Returns ``(threads, unthreaded)`` where every message of the log lands in
    exactly one thread or in the unthreaded pool.  A message is the root of a
    thread when its id equals the referenced thread id.  Replies whose root is
    missing from the log form a degenerate thread rooted at the earliest
    reply (an :class:`OrphanReplyWarning` is emitted).
    """
    by_id = {m.id: m for m in log.messages}
    groups: dict[str, list[RawMessage]] = {}
    for m in log.messages:
        if m.parent_thread_id is not None:
            groups.setdefault(m.parent_thread_id, []).append(m)

    threads: list[Thread] = []
    claimed: set[str] = set()
    for thread_id in sorted(groups, key=lambda t: (min(groups[t], key=RawMessage.sort_key).sort_key())):
        members = sorted(groups[thread_id], key=RawMessage.sort_key)
        root = by_id.get(thread_id)
        if root is None:
            warnings.warn(
                f"thread {thread_id!r} has no root message; using earliest reply",
                OrphanReplyWarning,
                stacklevel=2,
            )
            root, replies = members[0], members[1:]
        else:
            replies = [m for m in members if m.id != root.id]
        threads.append(Thread(root=root, replies=replies))
        claimed.add(root.id)
        claimed.update(m.id for m in replies)

    unthreaded = [m for m in log.messages if m.id not in claimed and m.parent_thread_id is None]
    threads.sort(key=lambda t: (t.t_start, t.thread_id))
    return threads, unthreaded
