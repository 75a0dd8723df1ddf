"""Merge contextual messages into native threads to form conversations.

A message written outside any native thread joins a thread when it falls in
the thread's temporal window and its author is one of the thread
participants.  Each unthreaded message joins at most one conversation: when
several threads want it, the one whose nearest boundary (start or end) is
closest in time wins, with ties going to the earlier thread.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal

from .errors import LengthMismatch
from .ingest import ChannelLog, RawMessage, Thread, native_threads

logger = logging.getLogger(__name__)


@dataclass
class DisentangleConfig:
    window_seconds: int = 7200
    max_context_before: int = 50
    max_context_after: int = 50
    include_bots: bool = False

    def __post_init__(self) -> None:
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be > 0")
        if self.max_context_before <= 0 or self.max_context_after <= 0:
            raise ValueError("context caps must be > 0")


@dataclass
class Conversation:
    """A thread plus the contextual messages merged into it."""

    conversation_id: str
    messages: list[RawMessage]
    source_thread_id: str
    merged_context_ids: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.messages = sorted(self.messages, key=RawMessage.sort_key)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float | None:
        denom = self.tp + self.fp
        return self.tp / denom if denom else None

    @property
    def recall(self) -> float | None:
        denom = self.tp + self.fn
        return self.tp / denom if denom else None


def _unthreaded_pool(log: ChannelLog) -> list[RawMessage]:
    _, pool = native_threads(log)
    return pool


def candidate_context(
    log: ChannelLog,
    thread: Thread,
    config: DisentangleConfig,
    pool: list[RawMessage] | None = None,
) -> list[RawMessage]:
    """Potential contextual messages for a thread.

    Before-window is [t_start - w, t_start), after-window is
    (t_end, t_end + w].  Each side is capped at the configured count,
    keeping the messages nearest to the thread boundary.  ``pool`` lets a
    caller that already computed the unthreaded pool skip recomputing it.
    """
    if pool is None:
        pool = _unthreaded_pool(log)
    if not config.include_bots:
        pool = [m for m in pool if not m.is_bot]

    w = Decimal(config.window_seconds)
    t_start, t_end = thread.t_start, thread.t_end

    before = [m for m in pool if t_start - w <= m.timestamp < t_start]
    after = [m for m in pool if t_end < m.timestamp <= t_end + w]

    # nearest-first caps: keep the latest `before` and earliest `after` ones
    before = before[-config.max_context_before:]
    after = after[: config.max_context_after]
    return before + after


def merge_contextual(thread: Thread, candidates: list[RawMessage]) -> Conversation:
    """Merge the candidates written by thread participants into the thread."""
    participants = thread.participants
    merged = [m for m in candidates if m.author in participants]
    return Conversation(
        conversation_id=thread.thread_id,
        messages=thread.messages() + merged,
        source_thread_id=thread.thread_id,
        merged_context_ids={m.id for m in merged},
    )


def _boundary_distance(message: RawMessage, thread: Thread) -> Decimal:
    if message.timestamp < thread.t_start:
        return thread.t_start - message.timestamp
    return message.timestamp - thread.t_end


def disentangle_all(log: ChannelLog, config: DisentangleConfig) -> list[Conversation]:
    """Run candidate extraction and merging over every native thread.

    Claims are resolved exclusively: an unthreaded message ends up in at most
    one conversation.  Unclaimed unthreaded messages are discarded (counted
    in the log output).
    """
    threads, pool = native_threads(log)
    if not threads:
        return []

    # claims[msg_id] -> (distance, thread t_start, thread id)
    claims: dict[str, tuple[Decimal, Decimal, str]] = {}
    eligibility: dict[str, list[RawMessage]] = {t.thread_id: [] for t in threads}
    for thread in threads:
        for m in candidate_context(log, thread, config, pool=pool):
            if m.author not in thread.participants:
                continue
            key = (_boundary_distance(m, thread), thread.t_start, thread.thread_id)
            if m.id not in claims or key < claims[m.id]:
                claims[m.id] = key

    by_id = {m.id: m for m in pool}
    for msg_id, (_, _, thread_id) in claims.items():
        eligibility[thread_id].append(by_id[msg_id])

    conversations = [
        merge_contextual(thread, sorted(eligibility[thread.thread_id], key=RawMessage.sort_key))
        for thread in threads
    ]
    discarded = len(pool) - len(claims)
    logger.info(
        "disentangled %d conversations, merged %d contextual messages, discarded %d",
        len(conversations), len(claims), discarded,
    )
    return conversations


def sample_spaced_threads(threads: list[Thread], min_gap_seconds: int = 86400) -> list[Thread]:
    """Evaluation-protocol helper: greedily keep threads so consecutive kept
    threads start at least ``min_gap_seconds`` apart.  Not part of the
    disentanglement algorithm itself; used to build annotation sets whose
    context windows cannot overlap."""
    gap = Decimal(min_gap_seconds)
    kept: list[Thread] = []
    for thread in sorted(threads, key=lambda t: (t.t_start, t.thread_id)):
        if not kept or thread.t_start - kept[-1].t_start >= gap:
            kept.append(thread)
    return kept


def eval_disentanglement(predicted: list[bool], gold: list[bool]) -> ConfusionCounts:
    """Confusion counts over per-candidate merge decisions."""
    if len(predicted) != len(gold):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(gold)} gold labels")
    tp = sum(1 for p, g in zip(predicted, gold) if p and g)
    fp = sum(1 for p, g in zip(predicted, gold) if p and not g)
    tn = sum(1 for p, g in zip(predicted, gold) if not p and not g)
    fn = sum(1 for p, g in zip(predicted, gold) if not p and g)
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def serialize_conversations(conversations: list[Conversation]) -> str:
    """Conversations as JSON lines (ids only; messages live in the export)."""
    lines = []
    for c in conversations:
        lines.append(
            json.dumps(
                {
                    "conversation_id": c.conversation_id,
                    "source_thread_id": c.source_thread_id,
                    "message_ids": [m.id for m in c.messages],
                    "merged_context_ids": sorted(c.merged_context_ids),
                },
                ensure_ascii=False,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def load_conversations(stream, log: ChannelLog) -> list[Conversation]:
    """Rehydrate conversations serialized by :func:`serialize_conversations`."""
    by_id = {m.id: m for m in log.messages}
    conversations = []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        conversations.append(
            Conversation(
                conversation_id=obj["conversation_id"],
                messages=[by_id[i] for i in obj["message_ids"]],
                source_thread_id=obj["source_thread_id"],
                merged_context_ids=set(obj["merged_context_ids"]),
            )
        )
    return conversations
