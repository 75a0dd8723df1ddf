"""Issue store persistence and the HTTP query/browse/feedback service.

The store is built once from disentangled conversations, persisted as JSON
lines, and served read-only; feedback lands in a separate append-only log.
Every response carries the store snapshot hash so clients can detect a
reindex.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from typing import Iterable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .annotate import QueryDetector, fallback_annotate
from .artefacts import (
    ActionDictionary,
    IssueRecord,
    build_issue_record,
    extract_entities,
    link_action_entity,
)
from .disentangle import Conversation
from .embed import EmbeddingModel, vector
from .retrieve import (
    EntityTermSet,
    IssueCategory,
    SimilarityConfig,
    SymptomLexicon,
    WeightedEntity,
    categorize_first_turn,
    idf_weights,
    retrieve_similar,
    weight_for,
)

logger = logging.getLogger(__name__)


@dataclass
class IssueStore:
    records: list[IssueRecord]
    term_sets: dict[str, EntityTermSet]
    weights: dict[str, float]
    model_ref: str
    built_at: str
    snapshot: str = ""

    @property
    def n_issues(self) -> int:
        return len(self.term_sets)

    def record(self, issue_id: str) -> IssueRecord | None:
        for r in self.records:
            if r.conversation_id == issue_id:
                return r
        return None


def _term_set_from_text(
    text: str,
    issue_id: str,
    dictionary: ActionDictionary,
    model: EmbeddingModel,
    weights: dict[str, float],
    n_issues: int,
    rarity: bool = False,
    utterance=None,
) -> EntityTermSet:
    if utterance is None:
        utterance = fallback_annotate(text)
    entities = extract_entities(utterance)
    links = link_action_entity(utterance, dictionary)
    verb_by_span = {link.entity.span: link.verb_lemma for link in links}
    weighted = [
        WeightedEntity(
            phrase=e.phrase,
            weight=weight_for(e.phrase, weights, max(n_issues, 1), rarity),
            vector=vector(model, e.phrase),
            attached_verb=verb_by_span.get(e.span),
        )
        for e in entities
    ]
    return EntityTermSet(issue_id=issue_id, entities=weighted)


def build_store(
    conversations: Iterable[Conversation],
    detector: QueryDetector,
    dictionary: ActionDictionary,
    model: EmbeddingModel,
    config: SimilarityConfig | None = None,
    symptoms: SymptomLexicon | None = None,
    model_ref: str = "",
    annotations: dict | None = None,
) -> IssueStore:
    """Categorize every conversation, extract artefacts, and weight the
    entity sets of the issue-category records.  Externally supplied parses
    (keyed by message id) take precedence over the fallback annotator.
    Deterministic given inputs; built_at derives from the newest message,
    not the wall clock."""
    config = config or SimilarityConfig()
    symptoms = symptoms or SymptomLexicon.bundled()
    records: list[IssueRecord] = []
    issue_firsts: list[tuple[str, str, str]] = []  # (issue id, text, first message id)
    for conversation in conversations:
        first = conversation.messages[0]
        category = categorize_first_turn(first.text, dictionary, symptoms)
        record = build_issue_record(
            conversation, detector, dictionary, category.value, annotations=annotations
        )
        records.append(record)
        if category is IssueCategory.ISSUE:
            issue_firsts.append((record.conversation_id, record.issue_text, first.id))

    def first_utterance(text: str, message_id: str):
        if annotations and message_id in annotations:
            return annotations[message_id]
        return fallback_annotate(text)

    # first pass for document frequencies, second for the final weights
    plain_sets = []
    for issue_id, text, first_id in issue_firsts:
        plain_sets.append(
            EntityTermSet(
                issue_id=issue_id,
                entities=[
                    WeightedEntity(phrase=e.phrase, weight=0.0, vector=None)
                    for e in extract_entities(first_utterance(text, first_id))
                ],
            )
        )
    weights = idf_weights(plain_sets, rarity=config.rarity_weighting) if plain_sets else {}
    term_sets = {
        issue_id: _term_set_from_text(
            text, issue_id, dictionary, model, weights, len(issue_firsts),
            config.rarity_weighting, utterance=first_utterance(text, first_id),
        )
        for issue_id, text, first_id in issue_firsts
    }

    built_at = max((r.closed_at for r in records), default="0")
    store = IssueStore(
        records=records,
        term_sets=term_sets,
        weights=weights,
        model_ref=model_ref,
        built_at=built_at,
    )
    store.snapshot = _snapshot_hash(store)
    logger.info(
        "store built: %d records, %d issue term sets", len(records), len(term_sets)
    )
    return store


def _store_lines(store: IssueStore) -> list[str]:
    lines = [
        json.dumps(
            {
                "kind": "meta",
                "schema": 1,
                "model_ref": store.model_ref,
                "built_at": store.built_at,
                "weights": {k: store.weights[k] for k in sorted(store.weights)},
            },
            sort_keys=True,
        )
    ]
    for record in store.records:
        lines.append(record.to_json())
    for issue_id in sorted(store.term_sets):
        ts = store.term_sets[issue_id]
        lines.append(
            json.dumps(
                {
                    "kind": "term_set",
                    "issue_id": ts.issue_id,
                    "entities": [
                        {"phrase": e.phrase, "weight": e.weight, "verb": e.attached_verb}
                        for e in ts.entities
                    ],
                },
                sort_keys=True,
            )
        )
    return lines


def _snapshot_hash(store: IssueStore) -> str:
    digest = hashlib.sha256()
    for line in _store_lines(store):
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def save_store(store: IssueStore, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in _store_lines(store):
            fh.write(line + "\n")


def load_store(path: str, model: EmbeddingModel) -> IssueStore:
    """Entity vectors are not persisted; they are recomposed from the model,
    which must be the one the store was indexed with."""
    records: list[IssueRecord] = []
    term_sets: dict[str, EntityTermSet] = {}
    meta: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("kind")
            if kind == "meta":
                meta = obj
            elif kind == "term_set":
                term_sets[obj["issue_id"]] = EntityTermSet(
                    issue_id=obj["issue_id"],
                    entities=[
                        WeightedEntity(
                            phrase=e["phrase"],
                            weight=e["weight"],
                            vector=vector(model, e["phrase"]),
                            attached_verb=e.get("verb"),
                        )
                        for e in obj["entities"]
                    ],
                )
            else:
                records.append(IssueRecord.from_json(line))
    store = IssueStore(
        records=records,
        term_sets=term_sets,
        weights=meta.get("weights", {}),
        model_ref=meta.get("model_ref", ""),
        built_at=meta.get("built_at", "0"),
    )
    store.snapshot = _snapshot_hash(store)
    return store


# ---------------------------------------------------------------------------
# Queries against a store snapshot
# ---------------------------------------------------------------------------

def query_store(
    store: IssueStore,
    model: EmbeddingModel,
    dictionary: ActionDictionary,
    text: str,
    k: int = 10,
    mode: str | None = None,
    config: SimilarityConfig | None = None,
) -> list[dict]:
    """Ranked hits with the artefacts a responder needs: score, issue text,
    diagnostics, and the verb-entity resolution summaries."""
    config = config or SimilarityConfig()
    if mode is not None:
        config = SimilarityConfig(
            jaro_gate=config.jaro_gate,
            weight_gate=config.weight_gate,
            threshold=config.threshold,
            clamp_negative_cosine=config.clamp_negative_cosine,
            mode=mode,
            rarity_weighting=config.rarity_weighting,
        )
    query_set = _term_set_from_text(
        text, "\x00query", dictionary, model, store.weights, max(store.n_issues, 1),
        config.rarity_weighting,
    )
    if not query_set.entities:
        return []
    ranked = retrieve_similar(query_set, list(store.term_sets.values()), dictionary, config, k)
    results = []
    for issue_id, score in ranked:
        record = store.record(issue_id)
        results.append(
            {
                "issue_id": issue_id,
                "score": score,
                "issue_text": record.issue_text if record else "",
                "diagnostics": record.diagnostics if record else [],
                "resolution_summaries": [
                    {"verb": s["verb"], "entity": s["entity"]}
                    for s in (record.resolution_summaries if record else [])
                ],
                "opened_at": record.opened_at if record else "0",
            }
        )
    return results


# ---------------------------------------------------------------------------
# Feedback log
# ---------------------------------------------------------------------------

VERDICTS = ("relevant", "not_relevant")


@dataclass
class FeedbackEvent:
    query_id: str
    result_issue_id: str
    verdict: str
    user: str
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "query_id": self.query_id,
                "result_issue_id": self.result_issue_id,
                "verdict": self.verdict,
                "user": self.user,
                "timestamp": self.timestamp,
            },
            sort_keys=True,
        )


class FeedbackLog:
    """Append-only JSON-lines log; a single writer serializes appends."""

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()

    def append(self, event: FeedbackEvent) -> None:
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(event.to_json() + "\n")

    def replay(self) -> list[FeedbackEvent]:
        events = []
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    events.append(FeedbackEvent(**obj))
        except FileNotFoundError:
            pass
        return events


# ---------------------------------------------------------------------------
# HTTP app
# ---------------------------------------------------------------------------

def create_app(
    store: IssueStore,
    model: EmbeddingModel,
    dictionary: ActionDictionary,
    feedback_log: FeedbackLog,
    config: SimilarityConfig | None = None,
):
    """FastAPI app over an immutable store snapshot."""
    config = config or SimilarityConfig()
    app = FastAPI(title="issueview", docs_url=None, redoc_url=None)

    @app.middleware("http")
    async def snapshot_header(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Snapshot"] = store.snapshot
        return response

    def bad_request(detail: str) -> JSONResponse:
        return JSONResponse({"error": detail}, status_code=400)

    @app.get("/v1/health")
    async def health():
        return {"status": "ok", "snapshot": store.snapshot}

    @app.post("/v1/query")
    async def query(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return bad_request("body must be JSON")
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str) or not payload["text"].strip():
            return bad_request("'text' (non-empty string) is required")
        k = payload.get("k", 10)
        if not isinstance(k, int) or isinstance(k, bool) or k <= 0:
            return bad_request("'k' must be a positive integer")
        mode = payload.get("mode", config.mode)
        if mode not in ("M1", "M2"):
            return bad_request("'mode' must be 'M1' or 'M2'")
        results = query_store(store, model, dictionary, payload["text"], k=k, mode=mode, config=config)
        return {"results": results, "snapshot": store.snapshot}

    @app.get("/v1/issues/{issue_id}")
    async def issue_detail(issue_id: str):
        record = store.record(issue_id)
        if record is None:
            return JSONResponse({"error": f"unknown issue {issue_id!r}"}, status_code=404)
        return json.loads(record.to_json())

    @app.post("/v1/feedback")
    async def feedback(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return bad_request("body must be JSON")
        required = ("query_id", "result_issue_id", "verdict", "user")
        if not isinstance(payload, dict) or any(not isinstance(payload.get(f), str) for f in required):
            return bad_request(f"fields {required} are required strings")
        if payload["verdict"] not in VERDICTS:
            return bad_request(f"verdict must be one of {VERDICTS}")
        if store.record(payload["result_issue_id"]) is None:
            return JSONResponse(
                {"error": f"unknown result id {payload['result_issue_id']!r}"}, status_code=409
            )
        feedback_log.append(
            FeedbackEvent(
                query_id=payload["query_id"],
                result_issue_id=payload["result_issue_id"],
                verdict=payload["verdict"],
                user=payload["user"],
                timestamp=time.time(),
            )
        )
        return JSONResponse({"accepted": True}, status_code=202)

    return app
