from __future__ import annotations

import io
from decimal import Decimal

import pytest

from issueview.errors import MalformedRecord, MissingField, OrphanReplyWarning
from issueview.ingest import native_threads, parse_chat_export, serialize_chat_export

from conftest import export_line, log_of, msg


def test_empty_stream_gives_empty_log() -> None:
    log = parse_chat_export(io.StringIO(""))
    assert log.messages == []


def test_messages_sorted_by_timestamp() -> None:
    lines = "\n".join(
        [
            export_line("m1", "5.0", "a", "x"),
            export_line("m2", "1.0", "a", "y"),
            export_line("m3", "3.0", "a", "z"),
        ]
    )
    log = parse_chat_export(io.StringIO(lines))
    assert [m.id for m in log.messages] == ["m2", "m3", "m1"]
    assert [m.timestamp for m in log.messages] == [Decimal("1.0"), Decimal("3.0"), Decimal("5.0")]


def test_missing_ts_field_raises() -> None:
    line = '{"id": "m1", "user": "a", "text": "x"}'
    with pytest.raises(MissingField) as err:
        parse_chat_export(io.StringIO(line))
    assert err.value.name == "ts"


def test_malformed_json_aborts_by_default() -> None:
    with pytest.raises(MalformedRecord) as err:
        parse_chat_export(io.StringIO("not json\n"))
    assert err.value.line_number == 1


def test_skip_mode_drops_bad_records() -> None:
    lines = "\n".join([export_line("m1", "1.0", "a", "x"), "garbage"])
    log = parse_chat_export(io.StringIO(lines), on_malformed="skip")
    assert [m.id for m in log.messages] == ["m1"]


def test_duplicate_id_rejected() -> None:
    lines = "\n".join([export_line("m1", "1.0", "a", "x"), export_line("m1", "2.0", "a", "y")])
    with pytest.raises(MalformedRecord):
        parse_chat_export(io.StringIO(lines))


def test_empty_text_allowed_only_for_bots() -> None:
    ok = parse_chat_export(io.StringIO(export_line("m1", "1.0", "a", "", bot=True)))
    assert ok.messages[0].is_bot
    with pytest.raises(MalformedRecord):
        parse_chat_export(io.StringIO(export_line("m1", "1.0", "a", "")))


def test_roundtrip_is_bit_identical() -> None:
    lines = [
        export_line("m1", "1698242302.123456", "alice", "first"),
        export_line("m2", "1698242310.000001", "bob", "second", thread="m1"),
        export_line("m3", "1698242311.5", "carol", "", bot=True),
    ]
    text = "\n".join(lines) + "\n"
    log = parse_chat_export(io.StringIO(text))
    assert serialize_chat_export(log) == text
    again = parse_chat_export(io.StringIO(serialize_chat_export(log)))
    assert serialize_chat_export(again) == text


def test_native_threads_no_thread_ids() -> None:
    log = log_of(msg("m1", "1"), msg("m2", "2"))
    threads, pool = native_threads(log)
    assert threads == []
    assert [m.id for m in pool] == ["m1", "m2"]


def test_native_threads_groups_root_and_replies() -> None:
    log = log_of(
        msg("m1", "1", "a"),
        msg("m2", "2", "b", thread="m1"),
        msg("m3", "3", "c", thread="m1"),
        msg("m4", "4", "d"),
    )
    threads, pool = native_threads(log)
    assert len(threads) == 1
    t = threads[0]
    assert t.root.id == "m1"
    assert [m.id for m in t.replies] == ["m2", "m3"]
    assert t.participants == {"a", "b", "c"}
    assert [m.id for m in pool] == ["m4"]


def test_orphan_reply_becomes_degenerate_thread() -> None:
    log = log_of(msg("m1", "1"), msg("m2", "2", thread="zzz"), msg("m3", "3", thread="zzz"))
    with pytest.warns(OrphanReplyWarning):
        threads, pool = native_threads(log)
    assert len(threads) == 1
    assert threads[0].root.id == "m2"
    assert [m.id for m in threads[0].replies] == ["m3"]
    assert [m.id for m in pool] == ["m1"]


def test_every_message_lands_exactly_once() -> None:
    log = log_of(
        msg("m1", "1"),
        msg("m2", "2", thread="m1"),
        msg("m3", "3"),
        msg("m4", "4", thread="m9"),
        msg("m5", "5"),
    )
    with pytest.warns(OrphanReplyWarning):
        threads, pool = native_threads(log)
    seen = [m.id for t in threads for m in t.messages()] + [m.id for m in pool]
    assert sorted(seen) == ["m1", "m2", "m3", "m4", "m5"]
    assert len(seen) == len(set(seen))
