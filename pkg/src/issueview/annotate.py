"""Utterance tokenization, annotation, and diagnostic-query detection.

Diagnostic utterances are question/query-type messages.  Detection unions
two signals: a lexical rule (question mark, 5W1H words in interrogative
position, politeness/modal triggers) and a multinomial Naive Bayes
classifier over bag-of-words.  An utterance counts as non-diagnostic only
when both signals say no.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from typing import IO, Iterable

from .errors import DegenerateCorpus, ParseError

TOKEN_RE = re.compile(
    r"`[^`]+`"                 # code span
    r"|https?://\S+"           # URL
    r"|www\.\S+"               # URL without scheme
    r"|@[\w.\-]+"              # mention
    r"|\w+(?:[.'\-/]\w+)*"     # word, keeping internal . ' - / (node.js, api-server)
    r"|[^\w\s]"                # any lone punctuation mark
)

URL_RE = re.compile(r"^(https?://|www\.)")
NUM_RE = re.compile(r"^\d+([.,:]\d+)*$")
PUNCT_RE = re.compile(r"^[^\w\s]+$")


@dataclass
class Token:
    surface: str
    lower: str = ""
    pos: str | None = None
    dep_rel: str | None = None
    head: int | None = None  # 0-based index into the utterance; None = root/unknown

    def __post_init__(self) -> None:
        if not self.lower:
            self.lower = self.surface.lower()


@dataclass
class AnnotatedUtterance:
    tokens: list[Token]
    speaker: str = ""
    timestamp: Decimal | None = None
    raw: str = ""
    message_id: str = ""
    # predicate token index -> list of (role label, token index)
    roles: dict[int, list[tuple[str, int]]] = field(default_factory=dict)

    @property
    def has_dependencies(self) -> bool:
        return any(t.dep_rel is not None for t in self.tokens)


def tokenize(text: str) -> list[Token]:
    """Split on whitespace/punctuation, keeping URLs, @mentions, and
    `code spans` whole."""
    return [Token(surface=m.group(0)) for m in TOKEN_RE.finditer(text)]


# ---------------------------------------------------------------------------
# Part-of-speech fallback (lexicon + suffix heuristics)
# ---------------------------------------------------------------------------

def _load_data(name: str) -> str:
    return resources.files("issueview.data").joinpath(name).read_text(encoding="utf-8")


class _PosLexicon:
    def __init__(self) -> None:
        raw = json.loads(_load_data("pos_lexicon.json"))
        self.words: dict[str, str] = raw["words"]
        self.suffixes: list[tuple[str, str]] = [tuple(pair) for pair in raw["suffixes"]]

    def tag(self, token: Token) -> str:
        t = token.lower
        if PUNCT_RE.match(token.surface):
            return "PUNCT"
        if URL_RE.match(t):
            return "X"
        if token.surface.startswith("@"):
            return "PROPN"
        if token.surface.startswith("`"):
            return "NOUN"
        if NUM_RE.match(t):
            return "NUM"
        if t in self.words:
            return self.words[t]
        # plural / 3rd-person-singular back-off
        for suffix in ("es", "s"):
            if t.endswith(suffix) and t[: -len(suffix)] in self.words:
                return self.words[t[: -len(suffix)]]
        for suffix, tag in self.suffixes:
            if len(t) > len(suffix) + 1 and t.endswith(suffix):
                return tag
        return "NOUN"


_LEXICON: _PosLexicon | None = None


def _lexicon() -> _PosLexicon:
    global _LEXICON
    if _LEXICON is None:
        _LEXICON = _PosLexicon()
    return _LEXICON


def fallback_annotate(tokens: list[Token] | str, **meta) -> AnnotatedUtterance:
    """Annotate with lexicon/suffix POS tags only; dependency fields stay
    unset, which routes downstream entity extraction to the chunk path."""
    if isinstance(tokens, str):
        meta.setdefault("raw", tokens)
        tokens = tokenize(tokens)
    lex = _lexicon()
    tagged = [
        Token(surface=t.surface, lower=t.lower, pos=lex.tag(t), dep_rel=None, head=None)
        for t in tokens
    ]
    return AnnotatedUtterance(tokens=tagged, **meta)


# ---------------------------------------------------------------------------
# CoNLL-U loading (externally produced parses, optionally with role columns)
# ---------------------------------------------------------------------------

_ID_RE = re.compile(r"^\d+$")


def load_annotations(stream: IO[str] | Iterable[str]) -> list[AnnotatedUtterance]:
    """Read CoNLL-U sentences into annotated utterances.

    Each sentence must carry a ``# message_id = <id>`` comment.  A MISC field
    of the form ``Pred=<token id>|Role=<label>`` marks the token as filling
    that semantic role for the given predicate (both 1-based CoNLL ids).
    """
    utterances: list[AnnotatedUtterance] = []
    tokens: list[Token] = []
    roles: dict[int, list[tuple[str, int]]] = {}
    message_id: str | None = None
    raw_text = ""
    last_line = 0

    def flush(line_number: int) -> None:
        nonlocal tokens, roles, message_id, raw_text
        if not tokens:
            return
        if message_id is None:
            raise ParseError(line_number, "sentence has no '# message_id =' metadata")
        _check_heads(tokens, line_number)
        utterances.append(
            AnnotatedUtterance(
                tokens=tokens, message_id=message_id, raw=raw_text, roles=roles,
            )
        )
        tokens, roles, message_id, raw_text = [], {}, None, ""

    for line_number, line in enumerate(stream, start=1):
        last_line = line_number
        line = line.rstrip("\n")
        if not line.strip():
            flush(line_number)
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                key, value = key.strip(), value.strip()
                if key == "message_id":
                    message_id = value
                elif key == "text":
                    raw_text = value
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ParseError(line_number, f"expected 10 columns, got {len(cols)}")
        if not _ID_RE.match(cols[0]):
            continue  # skip multiword ranges (1-2) and empty nodes (1.1)
        try:
            head = int(cols[6]) if cols[6] != "_" else 0
        except ValueError:
            raise ParseError(line_number, f"bad HEAD value {cols[6]!r}") from None
        surface = cols[1]
        token = Token(
            surface=surface,
            pos=cols[3] if cols[3] != "_" else None,
            dep_rel=cols[7] if cols[7] != "_" else None,
            head=head - 1 if head > 0 else None,
        )
        index = len(tokens)
        tokens.append(token)
        misc = cols[9]
        if misc != "_":
            attrs = dict(
                part.split("=", 1) for part in misc.split("|") if "=" in part
            )
            if "Role" in attrs and "Pred" in attrs:
                try:
                    pred = int(attrs["Pred"]) - 1
                except ValueError:
                    raise ParseError(line_number, f"bad Pred value {attrs['Pred']!r}") from None
                roles.setdefault(pred, []).append((attrs["Role"], index))
    flush(last_line + 1)
    return utterances


def _check_heads(tokens: list[Token], line_number: int) -> None:
    """Heads must index the sentence and must not form a cycle."""
    n = len(tokens)
    for i, t in enumerate(tokens):
        if t.head is not None and not (0 <= t.head < n):
            raise ParseError(line_number, f"head of token {i + 1} out of range")
    for start in range(n):
        seen = set()
        node: int | None = start
        while node is not None:
            if node in seen:
                raise ParseError(line_number, f"dependency cycle through token {start + 1}")
            seen.add(node)
            node = tokens[node].head


# ---------------------------------------------------------------------------
# Lexical query rule
# ---------------------------------------------------------------------------

@dataclass
class LexicalConfig:
    fivew1h: set[str]
    modal_triggers: set[str]
    question_mark: bool = True
    interrogative_window: int = 3

    @classmethod
    def bundled(cls) -> "LexicalConfig":
        raw = json.loads(_load_data("question_triggers.json"))
        return cls(
            fivew1h=set(raw["fivew1h"]),
            modal_triggers=set(raw["modal_triggers"]),
            question_mark=raw.get("question_mark", True),
            interrogative_window=raw.get("interrogative_window", 3),
        )


def _is_verb(token: Token) -> bool:
    if token.pos is not None:
        return token.pos in ("VERB", "AUX")
    return _lexicon().tag(token) in ("VERB", "AUX")


def lexical_query_rule(utterance: AnnotatedUtterance | list[Token], config: LexicalConfig | None = None) -> bool:
    """True when the utterance looks like an explicit question."""
    if config is None:
        config = LexicalConfig.bundled()
    tokens = utterance.tokens if isinstance(utterance, AnnotatedUtterance) else utterance
    if config.question_mark and any(t.surface == "?" for t in tokens):
        return True
    window = tokens[: config.interrogative_window]
    if any(t.lower in config.fivew1h for t in window):
        return True
    for i, t in enumerate(tokens):
        if t.lower in config.modal_triggers and any(_is_verb(x) for x in tokens[i + 1:]):
            return True
    return False


# ---------------------------------------------------------------------------
# Naive Bayes query classifier
# ---------------------------------------------------------------------------

QUESTION = "question"
NON_QUESTION = "non-question"
UNKNOWN_WORD = "\x00unk"


@dataclass
class NaiveBayesModel:
    log_prior: dict[str, float]
    log_likelihood: dict[str, dict[str, float]]  # class -> word -> log P(word | class)
    alpha: float = 1.0

    def posterior_question(self, text_or_tokens: str | list[Token]) -> float:
        tokens = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else text_or_tokens
        words = [t.lower for t in tokens]
        scores = {}
        for cls, prior in self.log_prior.items():
            table = self.log_likelihood[cls]
            unk = table[UNKNOWN_WORD]
            scores[cls] = prior + sum(table.get(w, unk) for w in words)
        m = max(scores.values())
        denom = sum(math.exp(s - m) for s in scores.values())
        return math.exp(scores[QUESTION] - m) / denom


def train_query_nb(corpus: Iterable[dict] | Iterable[tuple[str, bool]], alpha: float = 1.0) -> NaiveBayesModel:
    """Multinomial NB with Laplace smoothing over lowercased bag-of-words.

    Unknown words at inference share a single smoothed bucket, so per-class
    probabilities sum to 1 over vocabulary + unknown.
    """
    counts: dict[str, Counter] = {QUESTION: Counter(), NON_QUESTION: Counter()}
    docs = {QUESTION: 0, NON_QUESTION: 0}
    for item in corpus:
        if isinstance(item, dict):
            text, is_question = item["text"], bool(item["is_question"])
        else:
            text, is_question = item
        cls = QUESTION if is_question else NON_QUESTION
        docs[cls] += 1
        counts[cls].update(t.lower for t in tokenize(text))
    if docs[QUESTION] == 0 or docs[NON_QUESTION] == 0:
        raise DegenerateCorpus("need at least one utterance of each class")

    vocab = set(counts[QUESTION]) | set(counts[NON_QUESTION])
    total_docs = docs[QUESTION] + docs[NON_QUESTION]
    log_prior = {cls: math.log(docs[cls] / total_docs) for cls in counts}
    log_likelihood: dict[str, dict[str, float]] = {}
    for cls, counter in counts.items():
        denom = sum(counter.values()) + alpha * (len(vocab) + 1)
        table = {w: math.log((counter[w] + alpha) / denom) for w in vocab}
        table[UNKNOWN_WORD] = math.log(alpha / denom)
        log_likelihood[cls] = table
    return NaiveBayesModel(log_prior=log_prior, log_likelihood=log_likelihood, alpha=alpha)


def load_labeled_corpus(stream: IO[str] | Iterable[str]) -> list[dict]:
    """Labeled query corpus: JSON lines {"text": str, "is_question": bool}."""
    out = []
    for line in stream:
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def bundled_seed_corpus() -> list[dict]:
    return load_labeled_corpus(_load_data("query_seed_corpus.jsonl").splitlines())


# ---------------------------------------------------------------------------
# The union detector
# ---------------------------------------------------------------------------

@dataclass
class QueryDetector:
    lexical_config: LexicalConfig
    nb_model: NaiveBayesModel
    threshold: float = 0.5

    @classmethod
    def bundled(cls, threshold: float = 0.5) -> "QueryDetector":
        return cls(
            lexical_config=LexicalConfig.bundled(),
            nb_model=train_query_nb(bundled_seed_corpus()),
            threshold=threshold,
        )


@dataclass(frozen=True)
class DiagnosticDecision:
    is_diagnostic: bool
    provenance: str | None  # "lexical" | "bayes" | "both" | None

    def __bool__(self) -> bool:
        return self.is_diagnostic


def is_diagnostic(utterance: AnnotatedUtterance | list[Token] | str, detector: QueryDetector) -> DiagnosticDecision:
    """Negative only when both the lexical rule and the NB model say no."""
    if isinstance(utterance, str):
        utterance = fallback_annotate(utterance)
    tokens = utterance.tokens if isinstance(utterance, AnnotatedUtterance) else utterance
    lexical = lexical_query_rule(tokens, detector.lexical_config)
    bayes = detector.nb_model.posterior_question(tokens) > detector.threshold
    if lexical and bayes:
        return DiagnosticDecision(True, "both")
    if lexical:
        return DiagnosticDecision(True, "lexical")
    if bayes:
        return DiagnosticDecision(True, "bayes")
    return DiagnosticDecision(False, None)
