from __future__ import annotations

import io
import json

import pytest

from issueview.annotate import fallback_annotate, load_annotations
from issueview.artefacts import (
    ActionDictionary,
    AnnotatedRoleLabeler,
    IssueRecord,
    build_issue_record,
    classify_utterances,
    extract_entities,
    link_action_entity,
    load_records,
    save_records,
)
from issueview.disentangle import Conversation
from issueview.errors import EmptyConversation

from conftest import msg


def entities_of(text: str) -> set[str]:
    return {e.phrase for e in extract_entities(fallback_annotate(text))}


def links_of(text: str, dictionary: ActionDictionary) -> list[tuple[str, str]]:
    links = link_action_entity(fallback_annotate(text), dictionary)
    return [(l.verb_lemma, l.entity.phrase) for l in links]


def test_extract_entities_scale_example() -> None:
    assert "elasticsearch node" in entities_of("Team, could you scale up the Elasticsearch node")


def test_extract_entities_catalog_example() -> None:
    found = entities_of(
        "Hi, I have not been able to create standard node.js application "
        "from the catalog for the last hour"
    )
    assert {"catalog", "standard node.js application"} <= found


def test_extract_entities_stopwords_only() -> None:
    assert entities_of("the a an this") == set()


def test_extract_entities_case_and_whitespace_invariant() -> None:
    a = entities_of("  Team, could you scale up the Elasticsearch NODE  ")
    b = entities_of("team, could you scale up the elasticsearch node")
    assert a == b


def test_dependency_path_filters_by_relation() -> None:
    conllu = (
        "# message_id = m1\n"
        "1\tscale\tscale\tVERB\t_\t_\t0\troot\t_\t_\n"
        "2\tthe\tthe\tDET\t_\t_\t4\tdet\t_\t_\n"
        "3\telasticsearch\telasticsearch\tNOUN\t_\t_\t4\tcompound\t_\t_\n"
        "4\tnode\tnode\tNOUN\t_\t_\t1\tobj\t_\t_\n"
        "5\ton\ton\tADP\t_\t_\t6\tcase\t_\t_\n"
        "6\tmonday\tmonday\tNOUN\t_\t_\t1\tnmod\t_\t_\n"
    )
    utt = load_annotations(io.StringIO(conllu))[0]
    phrases = {e.phrase for e in extract_entities(utt)}
    # the object chunk survives; the temporal modifier chunk does not
    assert phrases == {"elasticsearch node"}


def test_link_scale_elasticsearch(dictionary: ActionDictionary) -> None:
    assert links_of("Team, could you scale up the Elasticsearch node", dictionary) == [
        ("scale", "elasticsearch node")
    ]


def test_link_nothing_without_dictionary_verb(dictionary: ActionDictionary) -> None:
    assert links_of("The dashboard looks great", dictionary) == []


def test_link_two_predicates(dictionary: ActionDictionary) -> None:
    assert links_of(
        "please restart the api-server pod and increase the replica count", dictionary
    ) == [("restart", "api-server pod"), ("increase", "replica count")]


def test_link_passive_falls_back_to_left_subject(dictionary: ActionDictionary) -> None:
    assert links_of("the checkout pod was restarted", dictionary) == [("restart", "checkout pod")]


def test_link_verb_with_no_patient(dictionary: ActionDictionary) -> None:
    assert links_of("please restart", dictionary) == []


def test_role_annotations_override_pattern(dictionary: ActionDictionary) -> None:
    # A1 marked on "cluster", although "pod" is the nearest right entity
    conllu = (
        "# message_id = m1\n"
        "1\trestart\trestart\tVERB\t_\t_\t0\troot\t_\t_\n"
        "2\tpod\tpod\tNOUN\t_\t_\t1\tobj\t_\t_\n"
        "3\ton\ton\tADP\t_\t_\t4\tcase\t_\t_\n"
        "4\tcluster\tcluster\tNOUN\t_\t_\t1\tobl\t_\tPred=1|Role=A1\n"
    )
    utt = load_annotations(io.StringIO(conllu))[0]
    links = link_action_entity(utt, dictionary, AnnotatedRoleLabeler())
    # dep path: "pod" (obj) and "cluster" (obl) chunks; obl is filtered out,
    # so the A1 annotation cannot land on an entity and no link is produced
    # for cluster; patient resolution respects the annotation, not proximity
    assert [(l.verb_lemma, l.entity.phrase) for l in links] == []


def test_every_link_verb_is_in_dictionary(dictionary: ActionDictionary) -> None:
    texts = [
        "please restart the api-server pod and increase the replica count",
        "we scaled the ingest cluster and rotated the certs",
        "deleted the stale deployment, recreated the service account",
    ]
    for text in texts:
        for link in link_action_entity(fallback_annotate(text), dictionary):
            assert link.verb_lemma in dictionary.verbs


def conversation_fixture() -> Conversation:
    return Conversation(
        conversation_id="conv1",
        messages=[
            msg("m1", "1000", "alice",
                "Hi, I have not been able to create standard node.js application from the catalog"),
            msg("m2", "1010", "bob", "Which services are affected ?"),
            msg("m3", "1020", "bob", "what does the error log say"),
            msg("m4", "1030", "carol", "Scaling up the Elasticsearch node now."),
        ],
        source_thread_id="m1",
    )


def test_classify_partition(detector, dictionary) -> None:
    partition = classify_utterances(conversation_fixture(), detector, dictionary)
    assert [u.message_id for u in partition.diagnostics] == ["m2", "m3"]
    assert [u.message_id for u in partition.resolutions] == ["m4"]
    assert [u.message_id for u in partition.resolution_summaries] == ["m4"]
    assert [(l.verb_lemma, l.entity.phrase) for l in partition.links] == [
        ("scale", "elasticsearch node")
    ]


def test_classify_all_questions(detector, dictionary) -> None:
    conversation = Conversation(
        conversation_id="conv2",
        messages=[
            msg("m1", "1", "a", "the gateway is down"),
            msg("m2", "2", "b", "who is on call ?"),
            msg("m3", "3", "c", "when did it start ?"),
        ],
        source_thread_id="m1",
    )
    partition = classify_utterances(conversation, detector, dictionary)
    assert len(partition.diagnostics) == 2
    assert partition.resolutions == []
    assert partition.links == []


def test_classify_single_message(detector, dictionary) -> None:
    conversation = Conversation(
        conversation_id="conv3",
        messages=[msg("m1", "1", "a", "the gateway is down")],
        source_thread_id="m1",
    )
    partition = classify_utterances(conversation, detector, dictionary)
    assert partition.diagnostics == [] and partition.resolutions == []


def test_build_record_fixture_golden(detector, dictionary) -> None:
    record = build_issue_record(conversation_fixture(), detector, dictionary, "Issue")
    golden = {
        "schema": 1,
        "conversation_id": "conv1",
        "issue_text": "Hi, I have not been able to create standard node.js application from the catalog",
        "category": "Issue",
        "diagnostics": [
            {"message_id": "m2", "speaker": "bob", "text": "Which services are affected ?"},
            {"message_id": "m3", "speaker": "bob", "text": "what does the error log say"},
        ],
        "resolutions": [
            {"message_id": "m4", "speaker": "carol", "text": "Scaling up the Elasticsearch node now."},
        ],
        "resolution_summaries": [
            {"verb": "scale", "entity": "elasticsearch node", "message_id": "m4"},
        ],
        "participants": ["alice", "bob", "carol"],
        "opened_at": "1000",
        "closed_at": "1030",
    }
    assert json.loads(record.to_json()) == golden


def test_record_partition_invariants(detector, dictionary) -> None:
    record = build_issue_record(conversation_fixture(), detector, dictionary, "Issue")
    diag_ids = {d["message_id"] for d in record.diagnostics}
    res_ids = {r["message_id"] for r in record.resolutions}
    assert diag_ids & res_ids == set()
    assert {s["message_id"] for s in record.resolution_summaries} <= res_ids


def test_build_record_empty_conversation(detector, dictionary) -> None:
    empty = Conversation(conversation_id="c0", messages=[], source_thread_id="t0")
    with pytest.raises(EmptyConversation):
        build_issue_record(empty, detector, dictionary, "Other")


def test_record_roundtrip(detector, dictionary) -> None:
    record = build_issue_record(conversation_fixture(), detector, dictionary, "Issue")
    text = save_records([record])
    loaded = load_records(io.StringIO(text))
    assert len(loaded) == 1
    assert loaded[0].to_json() == record.to_json()
