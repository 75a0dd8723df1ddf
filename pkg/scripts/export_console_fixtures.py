"""Regenerate the console's stub-server fixtures from a live in-process
service, so the frontend tests replay real response shapes.

Usage: python scripts/export_console_fixtures.py [outdir]
"""

from __future__ import annotations

import json
import pathlib
import sys
from decimal import Decimal

from fastapi.testclient import TestClient

from issueview.annotate import QueryDetector
from issueview.artefacts import ActionDictionary
from issueview.disentangle import Conversation
from issueview.embed import TrainConfig, train
from issueview.ingest import RawMessage
from issueview.service import FeedbackLog, build_store, create_app


def message(mid: str, ts: str, user: str, text: str) -> RawMessage:
    return RawMessage(id=mid, channel_id="chan", author=user, timestamp=Decimal(ts), text=text)


QUERY_TEXT = "users are not able to login to the portal wall"

CONVERSATIONS = [
    Conversation(
        conversation_id="iss-login",
        messages=[
            message("l0", "1700000000.000100", "alice", QUERY_TEXT),
            message("l1", "1700000060.000200", "bob", "which region is affected ?"),
            message("l2", "1700000120.000300", "bob", "is it only new sessions ?"),
            message("l3", "1700000180.000400", "carol", "Restarting the auth pod now."),
        ],
        source_thread_id="iss-login",
    ),
    Conversation(
        conversation_id="iss-login-old",
        messages=[
            message("o0", "1690000000.000100", "dave", "login portal wall errors for new users"),
            message("o1", "1690000060.000200", "erin", "when did it start ?"),
            message("o2", "1690000120.000300", "dave", "Scaled the login pool and rotated the session keys."),
        ],
        source_thread_id="iss-login-old",
    ),
    Conversation(
        conversation_id="iss-search",
        messages=[
            message("s0", "1695000000.000100", "fred", "search api timeouts on every request"),
            message("s1", "1695000060.000200", "gina", "Restarted the search cluster."),
        ],
        source_thread_id="iss-search",
    ),
]


def main() -> int:
    outdir = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "frontend/fixtures")
    outdir.mkdir(parents=True, exist_ok=True)

    texts = [c.messages[0].text.lower().split() for c in CONVERSATIONS]
    model = train(
        texts * 40,
        TrainConfig(dim=24, epochs=40, window=3, negatives=3, learning_rate=0.08,
                    bucket_count=1 << 14, seed=13, batch_pairs=1024),
    )
    detector = QueryDetector.bundled()
    dictionary = ActionDictionary.bundled()
    store = build_store(CONVERSATIONS, detector, dictionary, model, model_ref="fixtures")
    client = TestClient(create_app(store, model, dictionary, FeedbackLog("/dev/null")))

    query = client.post("/v1/query", json={"text": QUERY_TEXT, "k": 5, "mode": "M2"})
    assert query.status_code == 200
    body = query.json()
    assert body["results"][0]["issue_id"] == "iss-login", body
    (outdir / "query_response.json").write_text(json.dumps(body, indent=2) + "\n")

    detail = client.get("/v1/issues/iss-login")
    assert detail.status_code == 200
    (outdir / "issue_detail.json").write_text(json.dumps(detail.json(), indent=2) + "\n")

    detail_other = client.get("/v1/issues/iss-login-old")
    assert detail_other.status_code == 200
    (outdir / "issue_detail_old.json").write_text(json.dumps(detail_other.json(), indent=2) + "\n")

    (outdir / "feedback_ack.json").write_text(json.dumps({"accepted": True}, indent=2) + "\n")
    (outdir / "snapshot.json").write_text(json.dumps({"snapshot": store.snapshot}, indent=2) + "\n")
    print(f"fixtures written to {outdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
