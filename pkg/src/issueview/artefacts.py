"""Entity extraction, action-entity linking, and issue record assembly.

An issue record is one row of the issue database: the reported issue text,
the diagnostic (query) utterances, the resolution utterances, and the
action-entity links distilled from the resolution utterances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Protocol

from .annotate import AnnotatedUtterance, QueryDetector, _load_data, fallback_annotate, is_diagnostic
from .disentangle import Conversation
from .errors import EmptyConversation

CHUNK_POS = ("NOUN", "PROPN", "ADJ")
# dependency relations that mark a key entity's chunk head
ENTITY_RELATIONS = ("acl", "dobj", "obj", "pobj", "nsubj")


def load_stopwords() -> set[str]:
    return {w.strip() for w in _load_data("stopwords.txt").splitlines() if w.strip()}


_STOPWORDS: set[str] | None = None


def _stopwords() -> set[str]:
    global _STOPWORDS
    if _STOPWORDS is None:
        _STOPWORDS = load_stopwords()
    return _STOPWORDS


# ---------------------------------------------------------------------------
# Action dictionary
# ---------------------------------------------------------------------------

class ActionDictionary:
    """State-change verbs with their inflection/synonym variants."""

    def __init__(self, verbs: dict[str, Iterable[str]]):
        self.verbs: set[str] = {v.lower() for v in verbs}
        self.variants: dict[str, set[str]] = {
            lemma.lower(): {lemma.lower()} | {v.lower() for v in extra}
            for lemma, extra in verbs.items()
        }
        # a form that is itself a lemma resolves to that lemma, not to a
        # dictionary entry that lists it as a variant
        self._form_to_lemma: dict[str, str] = {lemma: lemma for lemma in self.variants}
        for lemma in sorted(self.variants):
            for form in sorted(self.variants[lemma]):
                self._form_to_lemma.setdefault(form, lemma)

    @classmethod
    def bundled(cls) -> "ActionDictionary":
        raw = json.loads(_load_data("action_verbs.json"))
        return cls(raw["verbs"])

    @staticmethod
    def _stem_candidates(form: str) -> list[str]:
        """Plausible lemmas for an inflected surface form."""
        out = [form]
        if form.endswith("ies") and len(form) > 4:
            out.append(form[:-3] + "y")
        for suffix in ("ing", "ed", "es", "s"):
            if form.endswith(suffix) and len(form) > len(suffix) + 2:
                stem = form[: -len(suffix)]
                out.append(stem)
                out.append(stem + "e")          # scal -> scale
                if len(stem) > 2 and stem[-1] == stem[-2]:
                    out.append(stem[:-1])       # stopp -> stop
        return out

    def lookup(self, surface: str) -> str | None:
        """Map a surface form to a dictionary lemma, or None."""
        for cand in self._stem_candidates(surface.lower()):
            if cand in self._form_to_lemma:
                return self._form_to_lemma[cand]
        return None

    def verbs_match(self, a: str | None, b: str | None) -> bool:
        """True when two lemmas are the same verb or listed variants."""
        if a is None or b is None:
            return a is None and b is None
        a, b = a.lower(), b.lower()
        return a == b or b in self.variants.get(a, set()) or a in self.variants.get(b, set())


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Entity:
    phrase: str
    span: tuple[int, int]  # token index range, half-open
    dep_rel_of_head: str | None = None


@dataclass(frozen=True)
class ActionEntityLink:
    verb_lemma: str
    entity: Entity
    source_message_id: str = ""


def _chunks(utterance: AnnotatedUtterance) -> list[tuple[int, int]]:
    """Maximal contiguous NOUN/PROPN/ADJ spans."""
    spans = []
    start = None
    for i, tok in enumerate(utterance.tokens):
        if tok.pos in CHUNK_POS:
            if start is None:
                start = i
        elif start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(utterance.tokens)))
    return spans


def _chunk_head(utterance: AnnotatedUtterance, span: tuple[int, int]) -> int:
    """Token of the chunk whose syntactic head lies outside the chunk."""
    start, end = span
    for i in range(start, end):
        head = utterance.tokens[i].head
        if head is None or not (start <= head < end):
            return i
    return end - 1


def _entity_relation(dep_rel: str | None) -> bool:
    if dep_rel is None:
        return False
    base = dep_rel.split(":")[0].lower()
    return base in ENTITY_RELATIONS


def extract_entities(utterance: AnnotatedUtterance) -> list[Entity]:
    """Key entities of an utterance.

    With dependency annotations, a noun chunk is kept only when its head
    token fills one of the entity-bearing relations (clausal modifier,
    object, prepositional object, nominal subject).  Without them, every
    maximal NOUN/PROPN/ADJ chunk is kept.  Phrases are lowercased with
    stopwords stripped from the edges.
    """
    stop = _stopwords()
    use_deps = utterance.has_dependencies
    entities: list[Entity] = []
    for start, end in _chunks(utterance):
        dep_rel = None
        if use_deps:
            head = _chunk_head(utterance, (start, end))
            dep_rel = utterance.tokens[head].dep_rel
            if not _entity_relation(dep_rel):
                continue
        while start < end and utterance.tokens[start].lower in stop:
            start += 1
        while end > start and utterance.tokens[end - 1].lower in stop:
            end -= 1
        if start >= end:
            continue
        phrase = " ".join(t.lower for t in utterance.tokens[start:end])
        entities.append(Entity(phrase=phrase, span=(start, end), dep_rel_of_head=dep_rel))
    return entities


# ---------------------------------------------------------------------------
# Role labeling (patient / A1 argument of a predicate)
# ---------------------------------------------------------------------------

class RoleLabeler(Protocol):
    def find_patient(
        self, utterance: AnnotatedUtterance, entities: list[Entity], verb_index: int
    ) -> Entity | None:
        """The entity acted upon by the predicate at ``verb_index``."""
        ...


CLAUSE_BREAK_POS = ("PUNCT", "CCONJ", "SCONJ")


class PatternRoleLabeler:
    """Heuristic patient finder: nearest entity to the right of the verb
    inside the clause; for passives, nearest subject entity to the left."""

    def _clause_bounds(self, utterance: AnnotatedUtterance, verb_index: int) -> tuple[int, int]:
        start, end = 0, len(utterance.tokens)
        for i in range(verb_index - 1, -1, -1):
            if utterance.tokens[i].pos in CLAUSE_BREAK_POS:
                start = i + 1
                break
        for i in range(verb_index + 1, len(utterance.tokens)):
            if utterance.tokens[i].pos in CLAUSE_BREAK_POS:
                end = i
                break
        return start, end

    def _is_passive(self, utterance: AnnotatedUtterance, verb_index: int) -> bool:
        for i in range(max(0, verb_index - 2), verb_index):
            if utterance.tokens[i].pos == "AUX":
                return True
        return False

    def find_patient(
        self, utterance: AnnotatedUtterance, entities: list[Entity], verb_index: int
    ) -> Entity | None:
        start, end = self._clause_bounds(utterance, verb_index)
        rightward = [
            e for e in entities if verb_index < e.span[0] and e.span[1] <= end
        ]
        if rightward:
            return min(rightward, key=lambda e: e.span[0])
        if self._is_passive(utterance, verb_index):
            leftward = [
                e for e in entities
                if e.span[1] <= verb_index and e.span[0] >= start
                and (e.dep_rel_of_head is None or e.dep_rel_of_head.split(":")[0] == "nsubj")
            ]
            if leftward:
                return max(leftward, key=lambda e: e.span[1])
        return None


class AnnotatedRoleLabeler:
    """Uses role annotations carried on the utterance (e.g. from a CoNLL-U
    file with Pred=/Role= MISC fields); falls back to the pattern labeler
    for predicates without annotations."""

    def __init__(self, fallback: RoleLabeler | None = None):
        self.fallback = fallback or PatternRoleLabeler()

    def find_patient(
        self, utterance: AnnotatedUtterance, entities: list[Entity], verb_index: int
    ) -> Entity | None:
        spans = utterance.roles.get(verb_index)
        if not spans:
            return self.fallback.find_patient(utterance, entities, verb_index)
        a1_indices = {i for role, i in spans if role.upper() == "A1"}
        if not a1_indices:
            return None
        best, best_overlap = None, 0
        for e in entities:
            overlap = len(a1_indices & set(range(*e.span)))
            if overlap > best_overlap:
                best, best_overlap = e, overlap
        return best


def link_action_entity(
    utterance: AnnotatedUtterance,
    dictionary: ActionDictionary,
    role_labeler: RoleLabeler | None = None,
) -> list[ActionEntityLink]:
    """One (verb, patient entity) link per dictionary predicate.

    A token is a predicate when its part-of-speech is VERB and its lemma is
    in the action dictionary.  Predicates with no locatable patient produce
    no link.
    """
    labeler = role_labeler or AnnotatedRoleLabeler()
    entities = extract_entities(utterance)
    links = []
    for i, tok in enumerate(utterance.tokens):
        if tok.pos != "VERB":
            continue
        lemma = dictionary.lookup(tok.lower)
        if lemma is None:
            continue
        patient = labeler.find_patient(utterance, entities, i)
        if patient is not None:
            links.append(
                ActionEntityLink(
                    verb_lemma=lemma, entity=patient, source_message_id=utterance.message_id
                )
            )
    return links


# ---------------------------------------------------------------------------
# Issue records
# ---------------------------------------------------------------------------

@dataclass
class UtterancePartition:
    diagnostics: list[AnnotatedUtterance] = field(default_factory=list)
    resolutions: list[AnnotatedUtterance] = field(default_factory=list)
    resolution_summaries: list[AnnotatedUtterance] = field(default_factory=list)
    links: list[ActionEntityLink] = field(default_factory=list)


@dataclass
class IssueRecord:
    conversation_id: str
    issue_text: str
    category: str  # "Issue" | "ChangeRequest" | "Other"
    diagnostics: list[dict]
    resolutions: list[dict]
    resolution_summaries: list[dict]
    participants: list[str]
    opened_at: str
    closed_at: str
    schema: int = 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": self.schema,
                "conversation_id": self.conversation_id,
                "issue_text": self.issue_text,
                "category": self.category,
                "diagnostics": self.diagnostics,
                "resolutions": self.resolutions,
                "resolution_summaries": self.resolution_summaries,
                "participants": self.participants,
                "opened_at": self.opened_at,
                "closed_at": self.closed_at,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "IssueRecord":
        obj = json.loads(line)
        return cls(
            conversation_id=obj["conversation_id"],
            issue_text=obj["issue_text"],
            category=obj["category"],
            diagnostics=obj["diagnostics"],
            resolutions=obj["resolutions"],
            resolution_summaries=obj["resolution_summaries"],
            participants=obj["participants"],
            opened_at=obj["opened_at"],
            closed_at=obj["closed_at"],
            schema=obj.get("schema", 1),
        )


def annotate_conversation(
    conversation: Conversation,
    annotations: dict[str, AnnotatedUtterance] | None = None,
) -> list[AnnotatedUtterance]:
    """Annotated utterances for every message, preferring externally supplied
    parses keyed by message id."""
    out = []
    for m in conversation.messages:
        if annotations and m.id in annotations:
            ann = annotations[m.id]
            ann.speaker, ann.timestamp, ann.message_id = m.author, m.timestamp, m.id
            if not ann.raw:
                ann.raw = m.text
            out.append(ann)
        else:
            out.append(
                fallback_annotate(
                    m.text, speaker=m.author, timestamp=m.timestamp, message_id=m.id
                )
            )
    return out


def classify_utterances(
    conversation: Conversation,
    detector: QueryDetector,
    dictionary: ActionDictionary,
    annotations: dict[str, AnnotatedUtterance] | None = None,
    role_labeler: RoleLabeler | None = None,
) -> UtterancePartition:
    """Partition non-first-turn utterances into diagnostics and resolutions.

    Resolution utterances with at least one action-entity link are
    additionally flagged as resolution summaries.
    """
    if not conversation.messages:
        raise EmptyConversation(conversation.conversation_id)
    annotated = annotate_conversation(conversation, annotations)
    partition = UtterancePartition()
    for utt in annotated[1:]:
        if is_diagnostic(utt, detector):
            partition.diagnostics.append(utt)
            continue
        partition.resolutions.append(utt)
        links = link_action_entity(utt, dictionary, role_labeler)
        if links:
            partition.resolution_summaries.append(utt)
            partition.links.extend(links)
    return partition


def _utterance_dict(utt: AnnotatedUtterance) -> dict:
    return {"message_id": utt.message_id, "speaker": utt.speaker, "text": utt.raw}


def build_issue_record(
    conversation: Conversation,
    detector: QueryDetector,
    dictionary: ActionDictionary,
    category: str,
    annotations: dict[str, AnnotatedUtterance] | None = None,
    role_labeler: RoleLabeler | None = None,
) -> IssueRecord:
    if not conversation.messages:
        raise EmptyConversation(conversation.conversation_id)
    partition = classify_utterances(conversation, detector, dictionary, annotations, role_labeler)
    first, last = conversation.messages[0], conversation.messages[-1]
    return IssueRecord(
        conversation_id=conversation.conversation_id,
        issue_text=first.text,
        category=category,
        diagnostics=[_utterance_dict(u) for u in partition.diagnostics],
        resolutions=[_utterance_dict(u) for u in partition.resolutions],
        resolution_summaries=[
            {
                "verb": link.verb_lemma,
                "entity": link.entity.phrase,
                "message_id": link.source_message_id,
            }
            for link in partition.links
        ],
        participants=sorted({m.author for m in conversation.messages}),
        opened_at=str(first.timestamp),
        closed_at=str(last.timestamp),
    )


def save_records(records: Iterable[IssueRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def load_records(stream: IO[str] | Iterable[str]) -> list[IssueRecord]:
    out = []
    for line in stream:
        line = line.strip()
        if line:
            out.append(IssueRecord.from_json(line))
    return out
