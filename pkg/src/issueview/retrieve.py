"""Issue filtering, entity-weighted similarity, ranking, and evaluation.

Past issues are represented as weighted entity sets.  Entity weight is
``w = n / (n + idf)`` over the issue corpus (idf normalized into [0, 1]), so
common entities weigh close to 1.  Pairwise entity similarity uses a
Jaro-gated branch for spelling variants and a weighted-cosine branch
otherwise; issue-level similarity averages each query entity's best match,
gated by an action-verb indicator.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .annotate import _load_data
from .artefacts import ActionDictionary
from .errors import EmptyCorpus, EmptyQueryEntities, QueryMismatch


class IssueCategory(str, Enum):
    ISSUE = "Issue"
    CHANGE_REQUEST = "ChangeRequest"
    OTHER = "Other"


@dataclass
class SymptomLexicon:
    patterns: list[re.Pattern]

    @classmethod
    def bundled(cls) -> "SymptomLexicon":
        raw = json.loads(_load_data("symptom_patterns.json"))
        return cls(patterns=[re.compile(p, re.IGNORECASE) for p in raw["patterns"]])

    def detects(self, text: str) -> bool:
        return any(p.search(text) for p in self.patterns)


def categorize_first_turn(
    text: str,
    dictionary: ActionDictionary,
    symptoms: SymptomLexicon | None = None,
) -> IssueCategory:
    """Issue when a symptom pattern matches; otherwise ChangeRequest when an
    action verb is present; otherwise Other."""
    symptoms = symptoms or SymptomLexicon.bundled()
    if symptoms.detects(text):
        return IssueCategory.ISSUE
    for word in re.findall(r"[\w.'\-/]+", text.lower()):
        if dictionary.lookup(word) is not None:
            return IssueCategory.CHANGE_REQUEST
    return IssueCategory.OTHER


# ---------------------------------------------------------------------------
# Weighted entity sets
# ---------------------------------------------------------------------------

@dataclass
class WeightedEntity:
    phrase: str
    weight: float
    vector: np.ndarray | None  # unit vector in the embedding space
    attached_verb: str | None = None


@dataclass
class EntityTermSet:
    issue_id: str
    entities: list[WeightedEntity] = field(default_factory=list)

    @property
    def rankable(self) -> bool:
        return len(self.entities) > 0


@dataclass
class SimilarityConfig:
    jaro_gate: float = 0.95
    weight_gate: float = 0.8
    threshold: float = 0.35
    clamp_negative_cosine: bool = True
    mode: str = "M2"  # M1 ignores verb attachment, M2 applies it
    rarity_weighting: bool = False  # w = idf instead of n/(n+idf)


def mode_select(config: SimilarityConfig) -> str:
    """The effective similarity variant: M1 scores entities alone, M2 adds
    the action-verb indicator (the default)."""
    if config.mode not in ("M1", "M2"):
        raise ValueError(f"mode must be 'M1' or 'M2', got {config.mode!r}")
    return config.mode


def idf_weights(corpus: list[EntityTermSet], rarity: bool = False) -> dict[str, float]:
    """Entity phrase -> weight over the issue corpus.

    idf is log(n/df) normalized by log(n) into [0, 1]; the weight
    n/(n+idf) then grows toward 1 for entities appearing in many issues.
    The rarity flag inverts the emphasis by using idf itself as the weight.
    """
    n = len(corpus)
    if n == 0:
        raise EmptyCorpus("no issues to weight")
    df: dict[str, int] = {}
    for term_set in corpus:
        for phrase in {e.phrase for e in term_set.entities}:
            df[phrase] = df.get(phrase, 0) + 1
    weights = {}
    log_n = math.log(max(n, 2))
    for phrase, d in df.items():
        idf = math.log(n / d) / log_n
        weights[phrase] = idf if rarity else n / (n + idf)
    return weights


def weight_for(phrase: str, weights: dict[str, float], n: int, rarity: bool = False) -> float:
    """Weight of a possibly-unseen phrase: unseen phrases score as if they
    appeared in a single issue (idf = 1)."""
    if phrase in weights:
        return weights[phrase]
    return 1.0 if rarity else n / (n + 1.0)


# ---------------------------------------------------------------------------
# String similarity
# ---------------------------------------------------------------------------

def jaro(s1: str, s2: str) -> float:
    """Standard Jaro similarity in [0, 1]."""
    if s1 == s2:
        return 1.0
    len1, len2 = len(s1), len(s2)
    if len1 == 0 or len2 == 0:
        return 0.0
    window = max(len1, len2) // 2 - 1
    flags1 = [False] * len1
    flags2 = [False] * len2
    matches = 0
    for i, ch in enumerate(s1):
        lo = max(0, i - window)
        hi = min(len2 - 1, i + window)
        for j in range(lo, hi + 1):
            if not flags2[j] and s2[j] == ch:
                flags1[i] = flags2[j] = True
                matches += 1
                break
    if matches == 0:
        return 0.0
    transpositions = 0
    j = 0
    for i in range(len1):
        if flags1[i]:
            while not flags2[j]:
                j += 1
            if s1[i] != s2[j]:
                transpositions += 1
            j += 1
    t = transpositions // 2
    m = float(matches)
    return (m / len1 + m / len2 + (m - t) / m) / 3.0


# ---------------------------------------------------------------------------
# Entity and issue similarity
# ---------------------------------------------------------------------------

def entity_similarity(
    e_i: WeightedEntity, e_j: WeightedEntity, config: SimilarityConfig | None = None
) -> float:
    """Pairwise entity similarity.

    Spelling variants (very high Jaro between two high-weight entities) skip
    the embedding and score by the Jaro value itself; every other pair scores
    by cosine in the embedding space.  Both branches scale by the larger
    entity weight.
    """
    config = config or SimilarityConfig()
    w = max(e_i.weight, e_j.weight)
    j = jaro(e_i.phrase, e_j.phrase)
    if j > config.jaro_gate and w > config.weight_gate:
        return w * j
    cos = float(np.dot(e_i.vector, e_j.vector))
    if config.clamp_negative_cosine:
        cos = min(max(cos, 0.0), 1.0)
    return w * cos


def _indicator(e_i: WeightedEntity, e_j: WeightedEntity, dictionary: ActionDictionary) -> bool:
    if e_i.attached_verb is None:
        return True
    if e_j.attached_verb is None:
        return False
    return dictionary.verbs_match(e_i.attached_verb, e_j.attached_verb)


def issue_sim(
    s_m: EntityTermSet,
    s_n: EntityTermSet,
    dictionary: ActionDictionary,
    config: SimilarityConfig | None = None,
) -> float:
    """Mean over the query's entities of their best match in the candidate.

    A pair only counts when the query entity has no attached verb or the
    candidate entity carries the same verb (or a dictionary variant).  Not
    symmetric: normalization is by the query's entity count.
    """
    config = config or SimilarityConfig()
    mode = mode_select(config)
    if not s_m.entities:
        raise EmptyQueryEntities(s_m.issue_id)
    total = 0.0
    for e_i in s_m.entities:
        best = 0.0
        for e_j in s_n.entities:
            if mode != "M1" and not _indicator(e_i, e_j, dictionary):
                continue
            delta = entity_similarity(e_i, e_j, config)
            if delta > best:
                best = delta
        total += best
    score = total / len(s_m.entities)
    return min(max(score, 0.0), 1.0)


def retrieve_similar(
    query: EntityTermSet,
    store: list[EntityTermSet],
    dictionary: ActionDictionary,
    config: SimilarityConfig | None = None,
    k: int = 10,
) -> list[tuple[str, float]]:
    """Top-k issues scoring above the threshold, descending; score ties break
    by ascending issue id; the query issue itself is excluded."""
    config = config or SimilarityConfig()
    if not query.entities:
        raise EmptyQueryEntities(query.issue_id)
    scored = []
    for candidate in store:
        if candidate.issue_id == query.issue_id or not candidate.rankable:
            continue
        score = issue_sim(query, candidate, dictionary, config)
        if score > config.threshold:
            scored.append((candidate.issue_id, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


# ---------------------------------------------------------------------------
# TF-IDF baseline over raw first-turn text
# ---------------------------------------------------------------------------

def _bow(text: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for w in re.findall(r"[\w.'\-/]+", text.lower()):
        counts[w] = counts.get(w, 0) + 1
    return counts


def tfidf_baseline(
    query_text: str, store_texts: list[tuple[str, str]], k: int = 10
) -> list[tuple[str, float]]:
    """Cosine over tf*idf bag-of-words vectors, idf = ln(N/df) computed over
    the store documents; same ranking contract as retrieve_similar but
    without a threshold."""
    n = len(store_texts)
    if n == 0:
        return []
    docs = [(doc_id, _bow(text)) for doc_id, text in store_texts]
    df: dict[str, int] = {}
    for _, bow in docs:
        for w in bow:
            df[w] = df.get(w, 0) + 1
    idf = {w: math.log(n / d) for w, d in df.items() if d < n or n == 1}
    # words in every document get idf 0 unless the store is a single doc
    for w, d in df.items():
        if w not in idf:
            idf[w] = 0.0
    if n == 1:
        idf = {w: 1.0 for w in df}

    def vectorize(bow: dict[str, int]) -> dict[str, float]:
        return {w: c * idf.get(w, 0.0) for w, c in bow.items()}

    def cosine_sparse(a: dict[str, float], b: dict[str, float]) -> float:
        na = math.sqrt(sum(x * x for x in a.values()))
        nb = math.sqrt(sum(x * x for x in b.values()))
        if na == 0.0 or nb == 0.0:
            return 0.0
        dot = sum(a[w] * b.get(w, 0.0) for w in a)
        return dot / (na * nb)

    qv = vectorize(_bow(query_text))
    scored = [(doc_id, cosine_sparse(qv, vectorize(bow))) for doc_id, bow in docs]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


# ---------------------------------------------------------------------------
# Ranking evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalMetrics:
    p_at: dict[int, float]
    map: float
    a_at: dict[int, float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "p_at": {str(n): v for n, v in sorted(self.p_at.items())},
                "map": self.map,
                "a_at": {str(n): v for n, v in sorted(self.a_at.items())},
            },
            sort_keys=True,
        )


def average_precision(ranking: list[str], relevant: set[str]) -> float:
    """Mean of precision-at-hit over the gold items; gold items never
    retrieved contribute zero."""
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(ranking, start=1):
        if doc_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def evaluate(
    rankings: dict[str, list[str]],
    gold: dict[str, set[str]],
    ns: tuple[int, ...] = (1, 3, 5, 10),
) -> EvalMetrics:
    """P@N, MAP, and A@N over per-query rankings against gold relevance."""
    if set(rankings) != set(gold):
        raise QueryMismatch(
            f"queries differ: {sorted(set(rankings) ^ set(gold))[:5]}"
        )
    if not rankings:
        raise QueryMismatch("no queries to evaluate")
    p_at = {n: 0.0 for n in ns}
    a_at = {n: 0.0 for n in ns}
    ap_total = 0.0
    for query_id, ranking in rankings.items():
        relevant = gold[query_id]
        ap_total += average_precision(ranking, relevant)
        for n in ns:
            top = ranking[:n]
            hits = sum(1 for doc_id in top if doc_id in relevant)
            p_at[n] += hits / n
            a_at[n] += 1.0 if hits > 0 else 0.0
    q = len(rankings)
    return EvalMetrics(
        p_at={n: v / q for n, v in p_at.items()},
        map=ap_total / q,
        a_at={n: v / q for n, v in a_at.items()},
    )


def metrics_table(rows: dict[str, EvalMetrics], ns_p: tuple[int, int] = (5, 10),
                  ns_a: tuple[int, int] = (3, 5)) -> str:
    """Aligned text table: Method, P@5, P@10, MAP, A@3, A@5."""
    header = ["Method", f"P@{ns_p[0]}", f"P@{ns_p[1]}", "MAP", f"A@{ns_a[0]}", f"A@{ns_a[1]}"]
    lines = [header]
    for method, m in rows.items():
        lines.append(
            [
                method,
                f"{m.p_at.get(ns_p[0], 0.0):.2f}",
                f"{m.p_at.get(ns_p[1], 0.0):.2f}",
                f"{m.map:.2f}",
                f"{m.a_at.get(ns_a[0], 0.0):.2f}",
                f"{m.a_at.get(ns_a[1], 0.0):.2f}",
            ]
        )
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    return "\n".join(
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in lines
    )


def load_gold(stream) -> dict[str, set[str]]:
    """Gold relevance: JSON lines {"query_id": str, "relevant": [str, ...]}."""
    gold = {}
    for line in stream:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        gold[obj["query_id"]] = set(obj["relevant"])
    return gold
