"""Acceptance suite: one test per release criterion, each printing a
[PASS]/[FAIL] line with its runtime.  The embedding model used by the
quality and retrieval criteria is trained once per session (its training
time is charged to both runtime budgets)."""

from __future__ import annotations

import json
import sys
import time
from contextlib import contextmanager
from decimal import Decimal

import numpy as np
import pytest
from fastapi.testclient import TestClient

from issueview.artefacts import ActionDictionary
from issueview.cli import main as cli_main
from issueview.disentangle import (
    Conversation,
    DisentangleConfig,
    disentangle_all,
    eval_disentanglement,
)
from issueview.embed import TrainConfig, nearest, train, vector
from issueview.ingest import ChannelLog, RawMessage, native_threads
from issueview.retrieve import (
    EntityTermSet,
    SimilarityConfig,
    WeightedEntity,
    entity_similarity,
    evaluate,
    issue_sim,
    jaro,
    tfidf_baseline,
)
from issueview.service import FeedbackLog, build_store, create_app, query_store

from conftest import msg
from synthcorpus import corpus_with_issue_sentences, make_cluster_corpus, make_issue_fixtures
from test_retrieve import reference_jaro


CRITERION_RESULTS: list[str] = []


def _report(line: str) -> None:
    CRITERION_RESULTS.append(line)
    sys.__stderr__.write(line + "\n")  # live view when capture is off


@contextmanager
def criterion(name: str, limit_seconds: float, extra_seconds: float = 0.0):
    """Run a criterion body, record one pass/fail line, enforce the budget."""
    start = time.monotonic()
    try:
        yield
    except BaseException:
        _report(f"[FAIL] {name}")
        raise
    elapsed = time.monotonic() - start + extra_seconds
    ok = elapsed < limit_seconds
    _report(f"[{'PASS' if ok else 'FAIL'}] {name} ({elapsed:.1f}s / limit {limit_seconds:.0f}s)")
    assert ok, f"{name} exceeded its runtime budget: {elapsed:.1f}s >= {limit_seconds}s"


# ---------------------------------------------------------------------------
# shared heavyweight fixtures
# ---------------------------------------------------------------------------

ACCEPT_TRAIN = TrainConfig(
    dim=50, epochs=200, window=3, negatives=3, learning_rate=0.08,
    bucket_count=1 << 18, seed=7, batch_pairs=8192, min_count=1,
)


@pytest.fixture(scope="session")
def corpus_world():
    corpus = make_cluster_corpus(seed=11)
    fixtures = make_issue_fixtures(corpus, seed=23, variants=10)
    return corpus, fixtures


@pytest.fixture(scope="session")
def trained(corpus_world):
    corpus, fixtures = corpus_world
    sentences = corpus_with_issue_sentences(corpus, fixtures)
    start = time.monotonic()
    model = train(sentences, ACCEPT_TRAIN)
    return model, time.monotonic() - start


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_confusion_arithmetic() -> None:
    with criterion("confusion arithmetic reproduces reported precision/recall", 1.0):
        counts = eval_disentanglement(
            [True] * 87 + [False] * 421,
            [True] * 58 + [False] * 29 + [False] * 409 + [True] * 12,
        )
        assert (counts.tp, counts.fp, counts.tn, counts.fn) == (58, 29, 409, 12)
        assert counts.precision == pytest.approx(0.667, abs=0.001)
        assert counts.recall == pytest.approx(0.829, abs=0.001)


def _brute_force_merges(log: ChannelLog, config: DisentangleConfig) -> dict[str, str]:
    """Independent 20-line restatement of the merge rules."""
    threads, pool = native_threads(log)
    pool = [m for m in pool if not m.is_bot]
    w = Decimal(config.window_seconds)
    decisions: dict[str, tuple] = {}
    for t in threads:
        before = [m for m in pool if t.t_start - w <= m.timestamp < t.t_start]
        after = [m for m in pool if t.t_end < m.timestamp <= t.t_end + w]
        for m in before[-config.max_context_before:] + after[: config.max_context_after]:
            if m.author not in t.participants:
                continue
            gap = (t.t_start - m.timestamp) if m.timestamp < t.t_start else (m.timestamp - t.t_end)
            key = (gap, t.t_start, t.thread_id)
            if m.id not in decisions or key < decisions[m.id]:
                decisions[m.id] = key
    return {mid: key[2] for mid, key in decisions.items()}


def test_disentanglement_matches_brute_force() -> None:
    with criterion("disentanglement merge decisions match rule oracle", 5.0):
        rng = np.random.default_rng(2024)
        users = [f"u{i}" for i in range(15)]
        messages: list[RawMessage] = []
        t = 500000
        for k in range(60):
            t += int(rng.integers(400, 5000))
            messages.append(msg(f"t{k}", str(t), users[int(rng.integers(15))]))
            for r in range(int(rng.integers(1, 5))):
                messages.append(
                    msg(f"t{k}r{r}", str(t + 5 + 7 * r), users[int(rng.integers(15))], thread=f"t{k}")
                )
        base = 500000
        span = t - base
        n_context = 500 - len(messages)
        for j in range(n_context):
            messages.append(
                msg(f"c{j:03d}", str(base + int(rng.integers(0, span + 20000))),
                    users[int(rng.integers(15))])
            )
        assert len(messages) == 500
        log = ChannelLog(messages=messages, channel_id="chan")
        config = DisentangleConfig()

        expected = _brute_force_merges(log, config)
        conversations = disentangle_all(log, config)
        actual = {m: c.conversation_id for c in conversations for m in c.merged_context_ids}
        assert actual == expected  # 100% of candidate decisions agree


def test_jaro_oracle() -> None:
    with criterion("jaro matches quadratic reference oracle", 5.0):
        assert jaro("martha", "marhta") == pytest.approx(0.944, abs=0.001)
        assert jaro("grafana", "grafana") == 1.0
        assert jaro("abc", "xyz") == 0.0
        rng = np.random.default_rng(8)
        alphabet = "abcdefgh"
        for _ in range(1000):
            s1 = "".join(alphabet[int(rng.integers(8))] for _ in range(int(rng.integers(0, 14))))
            s2 = "".join(alphabet[int(rng.integers(8))] for _ in range(int(rng.integers(0, 14))))
            assert jaro(s1, s2) == pytest.approx(reference_jaro(s1, s2), abs=1e-12)


def test_pairwise_and_issue_similarity_invariants(dictionary: ActionDictionary) -> None:
    with criterion("entity/issue similarity invariants", 10.0):
        rng = np.random.default_rng(99)
        alphabet = "abcdefghijklmnopqrstuvwxyz"
        config = SimilarityConfig()

        def random_entity(verb=None) -> WeightedEntity:
            phrase = "".join(alphabet[int(rng.integers(26))] for _ in range(int(rng.integers(1, 12))))
            vec = rng.normal(size=10)
            return WeightedEntity(
                phrase=phrase, weight=float(rng.random()),
                vector=vec / np.linalg.norm(vec), attached_verb=verb,
            )

        # delta stays within [0, 1] on randomized entities
        for _ in range(10000):
            d = entity_similarity(random_entity(), random_entity(), config)
            assert 0.0 <= d <= 1.0

        # self-similarity equals the mean weight when per-entity verbs are
        # mutually unrelated (the verb indicator suppresses cross-entity
        # matches); the pool must avoid dictionary variants like restart/reboot
        verb_pool: list[str] = []
        for verb in sorted(dictionary.verbs):
            if all(not dictionary.verbs_match(verb, kept) for kept in verb_pool):
                verb_pool.append(verb)
        for _ in range(1000):
            n = int(rng.integers(1, 6))
            verbs = [verb_pool[int(v)] for v in rng.choice(len(verb_pool), size=n, replace=False)]
            s = EntityTermSet(issue_id="s", entities=[random_entity(v) for v in verbs])
            expected = float(np.mean([e.weight for e in s.entities]))
            assert issue_sim(s, s, dictionary) == pytest.approx(expected, abs=1e-9)

        # M1 never scores below M2
        for _ in range(2000):
            sm = EntityTermSet(issue_id="m", entities=[
                random_entity(verb_pool[int(rng.integers(len(verb_pool)))] if rng.random() < 0.7 else None)
                for _ in range(int(rng.integers(1, 4)))
            ])
            sn = EntityTermSet(issue_id="n", entities=[
                random_entity(verb_pool[int(rng.integers(len(verb_pool)))] if rng.random() < 0.7 else None)
                for _ in range(int(rng.integers(1, 4)))
            ])
            m1 = issue_sim(sm, sn, dictionary, SimilarityConfig(mode="M1"))
            m2 = issue_sim(sm, sn, dictionary, SimilarityConfig(mode="M2"))
            assert m1 >= m2 - 1e-12

        # documented asymmetry on an l_m != l_n fixture
        shared = WeightedEntity("shared thing", 0.8, np.array([1.0, 0, 0]), None)
        extra = WeightedEntity("solo item", 0.8, np.array([0, 1.0, 0]), None)
        sm = EntityTermSet(issue_id="m", entities=[shared, extra])
        sn = EntityTermSet(issue_id="n", entities=[shared])
        assert issue_sim(sm, sn, dictionary) != issue_sim(sn, sm, dictionary)


def test_metric_oracle() -> None:
    with criterion("ranking metrics match hand-computed fixtures", 1.0):
        cases = [
            # (rankings, gold, n, expected P@n, expected MAP, expected A@n)
            ({"q": ["b", "a", "c"]}, {"q": {"a"}}, 3, 1 / 3, 0.5, 1.0),
            ({"q": ["a", "b"]}, {"q": {"a", "b"}}, 2, 1.0, 1.0, 1.0),
            ({"q": ["x", "y", "z"]}, {"q": {"a"}}, 3, 0.0, 0.0, 0.0),
            ({"q": ["a", "x", "b"]}, {"q": {"a", "b"}}, 3, 2 / 3, (1.0 + 2 / 3) / 2, 1.0),
            ({"q": ["x", "a"]}, {"q": {"a", "gone"}}, 2, 0.5, 0.25, 1.0),
        ]
        for rankings, gold, n, p, map_, a in cases:
            metrics = evaluate(rankings, gold, ns=(1, n))
            assert metrics.p_at[n] == pytest.approx(p, abs=1e-12)
            assert metrics.map == pytest.approx(map_, abs=1e-12)
            assert metrics.a_at[n] == pytest.approx(a, abs=1e-12)
        bac = evaluate({"q": ["b", "a", "c"]}, {"q": {"a"}}, ns=(1, 3))
        assert bac.p_at[1] == 0.0 and bac.map == 0.5 and bac.a_at[3] == 1.0


def test_embedding_quality(corpus_world, trained) -> None:
    corpus, _ = corpus_world
    model, train_seconds = trained
    with criterion("embedding quality on the clustered corpus", 300.0, extra_seconds=train_seconds):
        # (a) loss net-decreases over every 10-epoch span
        losses = model.losses
        assert len(losses) == 200
        assert all(losses[i + 10] < losses[i] for i in range(len(losses) - 10))

        # (b) correct spelling in top-3 neighbors for >= 80% of misspellings
        hits = sum(
            correct in [w for w, _ in nearest(model, wrong, 3)]
            for correct, wrong, _ in corpus.misspellings
        )
        assert hits / len(corpus.misspellings) >= 0.8

        # (c) intra-cluster mean cosine beats inter-cluster by >= 0.15
        mats = [
            np.stack([vector(model, w) for w in words]) for words in corpus.cluster_words
        ]
        intra, inter = [], []
        for a in range(len(mats)):
            sims = mats[a] @ mats[a].T
            iu = np.triu_indices(len(mats[a]), k=1)
            intra.append(float(sims[iu].mean()))
            for b in range(a + 1, len(mats)):
                inter.append(float((mats[a] @ mats[b].T).mean()))
        assert np.mean(intra) - np.mean(inter) >= 0.15


def test_end_to_end_retrieval_ordering(corpus_world, trained, detector, dictionary) -> None:
    corpus, fixtures = corpus_world
    model, train_seconds = trained
    with criterion("retrieval ordering M2 >= M1 >= tfidf on the 60-issue store", 360.0,
                   extra_seconds=train_seconds):
        conversations = [
            Conversation(
                conversation_id=f.issue_id,
                messages=[msg(f"{f.issue_id}-m0", str(1000 + i), f"user{i % 7}", f.text)],
                source_thread_id=f.issue_id,
            )
            for i, f in enumerate(fixtures)
        ]
        store = build_store(conversations, detector, dictionary, model)
        assert store.n_issues == 60  # every templated text categorizes as an issue

        gold = {
            f.issue_id: {g.issue_id for g in fixtures if g.family == f.family and g is not f}
            for f in fixtures
        }
        rankings: dict[str, dict[str, list[str]]] = {"M1": {}, "M2": {}, "tfidf": {}}
        texts = [(f.issue_id, f.text) for f in fixtures]
        for f in fixtures:
            for mode in ("M1", "M2"):
                hits = query_store(store, model, dictionary, f.text, k=10, mode=mode)
                rankings[mode][f.issue_id] = [
                    h["issue_id"] for h in hits if h["issue_id"] != f.issue_id
                ]
            ranked = tfidf_baseline(f.text, texts, k=11)
            rankings["tfidf"][f.issue_id] = [d for d, _ in ranked if d != f.issue_id][:10]

        scores = {
            name: evaluate(rankings[name], gold, ns=(3, 5, 10)) for name in rankings
        }
        _report(
            "    A@3: M2=%.2f M1=%.2f tfidf=%.2f | MAP: M2=%.3f M1=%.3f tfidf=%.3f"
            % (
                scores["M2"].a_at[3], scores["M1"].a_at[3], scores["tfidf"].a_at[3],
                scores["M2"].map, scores["M1"].map, scores["tfidf"].map,
            )
        )
        assert scores["M2"].a_at[3] >= 0.8
        assert scores["M2"].map >= scores["M1"].map
        assert scores["M1"].map >= scores["tfidf"].map - 0.02


def test_query_detection_accuracy(detector) -> None:
    from issueview.annotate import bundled_seed_corpus, is_diagnostic

    with criterion("query detection accuracy on the bundled labeled set", 5.0):
        corpus = bundled_seed_corpus()
        assert len(corpus) == 100
        correct = sum(
            1 for item in corpus
            if is_diagnostic(item["text"], detector).is_diagnostic == item["is_question"]
        )
        assert correct / len(corpus) >= 0.85
        assert is_diagnostic("Which services are affected ?", detector).is_diagnostic
        assert is_diagnostic("I was wondering what is the latest impact.", detector).is_diagnostic


def test_determinism_of_training_and_pipeline(tmp_path) -> None:
    with criterion("seeded training and pipeline reruns are byte-identical", 120.0):
        corpus_path = tmp_path / "corpus.txt"
        corpus_path.write_text(
            "\n".join("alpha beta gamma delta epsilon zeta" for _ in range(60))
        )
        for run in ("one", "two"):
            assert cli_main([
                "train-embed", "--corpus", str(corpus_path), "--dim", "24",
                "--epochs", "15", "--window", "2", "--negatives", "3",
                "--buckets", str(1 << 14), "--seed", "7", "--workers", "1",
                "--out", str(tmp_path / f"model-{run}"),
            ]) == 0
        assert (tmp_path / "model-one.vec").read_bytes() == (tmp_path / "model-two.vec").read_bytes()
        assert (tmp_path / "model-one.itve").read_bytes() == (tmp_path / "model-two.itve").read_bytes()

        export = tmp_path / "export.jsonl"
        export.write_text(
            "\n".join(
                json.dumps(o)
                for o in [
                    {"id": "t1", "ts": "1000", "user": "a", "text": "search api is down with errors"},
                    {"id": "t1r1", "ts": "1010", "user": "b", "text": "which cluster ?", "thread_ts": "t1"},
                    {"id": "t1r2", "ts": "1020", "user": "a", "text": "Restarted the search pod.", "thread_ts": "t1"},
                    {"id": "c1", "ts": "1100", "user": "a", "text": "alerts cleared"},
                ]
            )
            + "\n"
        )
        stores = []
        for run in ("one", "two"):
            conv = tmp_path / f"conv-{run}.jsonl"
            records = tmp_path / f"records-{run}.jsonl"
            store = tmp_path / f"store-{run}.jsonl"
            assert cli_main(["disentangle", "--export", str(export), "--out", str(conv)]) == 0
            assert cli_main([
                "extract", "--export", str(export), "--conversations", str(conv),
                "--out", str(records),
            ]) == 0
            assert cli_main([
                "index", "--export", str(export), "--conversations", str(conv),
                "--model", str(tmp_path / "model-one"), "--out", str(store),
            ]) == 0
            stores.append(store.read_bytes())
        assert stores[0] == stores[1]


def test_service_contract(trained, detector, dictionary, tmp_path) -> None:
    model, _ = trained
    with criterion("service endpoints honor the query/browse/feedback contract", 60.0):
        conversations = [
            Conversation(
                conversation_id="iss-dup",
                messages=[
                    msg("d0", "1000", "alice", "payment api is down with timeouts"),
                    msg("d1", "1010", "bob", "which region ?"),
                    msg("d2", "1020", "carol", "Restarted the payment pod."),
                ],
                source_thread_id="iss-dup",
            ),
            Conversation(
                conversation_id="iss-other",
                messages=[msg("o0", "2000", "dave", "metrics disk errors in grafana")],
                source_thread_id="iss-other",
            ),
        ]
        store = build_store(conversations, detector, dictionary, model)
        log = FeedbackLog(str(tmp_path / "feedback.jsonl"))
        http = TestClient(create_app(store, model, dictionary, log))

        hit = http.post("/v1/query", json={"text": "payment api is down with timeouts", "k": 5})
        assert hit.status_code == 200
        body = hit.json()
        assert body["results"][0]["issue_id"] == "iss-dup"
        assert {"issue_id", "score", "issue_text", "diagnostics", "resolution_summaries",
                "opened_at"} <= set(body["results"][0])
        assert body["snapshot"] == store.snapshot

        assert http.get("/v1/issues/iss-dup").status_code == 200
        assert http.get("/v1/issues/unknown").status_code == 404
        assert http.post("/v1/query", json={}).status_code == 400

        fb = http.post("/v1/feedback", json={
            "query_id": "q1", "result_issue_id": "iss-dup", "verdict": "relevant", "user": "sre",
        })
        assert fb.status_code == 202
        assert len(log.replay()) == 1
        assert http.post("/v1/feedback", json={
            "query_id": "q1", "result_issue_id": "ghost", "verdict": "relevant", "user": "sre",
        }).status_code == 409
