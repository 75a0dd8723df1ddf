from __future__ import annotations

import json
from decimal import Decimal

import pytest

from issueview.annotate import QueryDetector
from issueview.artefacts import ActionDictionary
from issueview.ingest import ChannelLog, RawMessage


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    """Echo the acceptance-criterion results after capture is released."""
    try:
        from test_acceptance import CRITERION_RESULTS
    except ImportError:
        return
    if CRITERION_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def detector() -> QueryDetector:
    return QueryDetector.bundled()


@pytest.fixture(scope="session")
def dictionary() -> ActionDictionary:
    return ActionDictionary.bundled()


def msg(
    mid: str,
    ts: str,
    user: str = "alice",
    text: str = "hello",
    thread: str | None = None,
    bot: bool = False,
) -> RawMessage:
    return RawMessage(
        id=mid,
        channel_id="chan",
        author=user,
        timestamp=Decimal(ts),
        text=text,
        parent_thread_id=thread,
        is_bot=bot,
    )


def log_of(*messages: RawMessage) -> ChannelLog:
    return ChannelLog(messages=list(messages), channel_id="chan")


def export_line(mid: str, ts: str, user: str, text: str, thread: str | None = None,
                bot: bool = False) -> str:
    obj = {"id": mid, "ts": ts, "user": user, "text": text}
    if thread is not None:
        obj["thread_ts"] = thread
    if bot:
        obj["bot"] = True
    return json.dumps(obj)
