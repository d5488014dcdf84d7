"""CoNLL-style corpus handling: parsing, BIO validation/repair, chunking,
splitting and statistics.

File conventions: UTF-8, LF line endings, blank line between sentences,
``# <id>`` comment lines carry sentence ids, fields joined by single spaces
on write. Token text is Unicode-NFC-normalized at parse time; any further
normalization is a caller-supplied hook.
"""

import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Token",
    "Sentence",
    "TagSet",
    "LabeledCorpus",
    "Chunk",
    "ColumnConfig",
    "StatsReport",
    "CorpusError",
    "ParseError",
    "parse_conll",
    "write_conll",
    "validate_bio",
    "repair_bio",
    "extract_chunks",
    "split_corpus",
    "corpus_stats",
]

BIO_TAG_RE = re.compile(r"^(O|[BI]-\S+)$")


class CorpusError(ValueError):
    """Invalid corpus content or misuse of a corpus operation."""


class ParseError(CorpusError):
    """Malformed CoNLL input; carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


def _check_bio_grammar(tag):
    if not BIO_TAG_RE.match(tag):
        raise CorpusError(f"tag {tag!r} does not match the BIO grammar O | B-<class> | I-<class>")


def tag_class(tag):
    """Entity class of a BIO tag, or None for O."""
    return None if tag == "O" else tag[2:]


@dataclass(frozen=True)
class Token:
    """One token: surface form, optional POS, gold BIO tag, plus any
    extra file columns preserved for round-tripping."""

    surface: str
    gold_tag: str = "O"
    pos: str | None = None
    extras: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.surface or any(ch.isspace() for ch in self.surface):
            raise CorpusError(f"token surface {self.surface!r} is empty or contains whitespace")
        _check_bio_grammar(self.gold_tag)


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError(f"sentence {self.id!r} has no tokens")

    def __len__(self):
        return len(self.tokens)

    @property
    def surfaces(self):
        return [t.surface for t in self.tokens]

    @property
    def gold_tags(self):
        return [t.gold_tag for t in self.tokens]


class TagSet:
    """Ordered entity-class inventory with the derived BIO label list.

    Labels are ``O`` followed by ``B-X``/``I-X`` per class in sorted class
    order; label <-> index is a bijection.
    """

    def __init__(self, classes):
        self.classes = tuple(sorted(set(classes)))
        for c in self.classes:
            if not c:
                raise CorpusError("entity class names must be non-empty")
        self.labels = ["O"]
        for c in self.classes:
            self.labels.append(f"B-{c}")
            self.labels.append(f"I-{c}")
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return isinstance(other, TagSet) and self.classes == other.classes

    def __repr__(self):
        return f"TagSet(classes={list(self.classes)})"

    def index(self, label):
        try:
            return self._index[label]
        except KeyError:
            raise CorpusError(f"label {label!r} not in tagset {list(self.labels)}") from None

    def label(self, index):
        return self.labels[index]

    def union(self, other):
        return TagSet(self.classes + other.classes)


@dataclass
class LabeledCorpus:
    sentences: list[Sentence]
    tagset: TagSet
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.sentences:
            raise CorpusError("corpus has no sentences")
        seen = set()
        for sent in self.sentences:
            if sent.id in seen:
                raise CorpusError(f"duplicate sentence id {sent.id!r}")
            seen.add(sent.id)
            for tok in sent.tokens:
                cls = tag_class(tok.gold_tag)
                if cls is not None and cls not in self.tagset.classes:
                    raise CorpusError(
                        f"sentence {sent.id!r}: tag {tok.gold_tag!r} outside tagset "
                        f"{list(self.tagset.classes)}"
                    )

    def __len__(self):
        return len(self.sentences)

    @property
    def n_tokens(self):
        return sum(len(s) for s in self.sentences)

    def with_provenance(self, note):
        return LabeledCorpus(self.sentences, self.tagset, self.provenance + [note])


@dataclass(frozen=True)
class Chunk:
    """Entity mention as a half-open token span."""

    cls: str
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise CorpusError(f"invalid chunk span [{self.start}, {self.end})")


@dataclass(frozen=True)
class ColumnConfig:
    """Which whitespace-separated columns hold what.

    ``tag_col`` indexes from the end when negative (default: last column);
    ``pos_col`` is optional. Columns that are neither token nor tag nor pos
    are kept verbatim in ``Token.extras``.
    """

    token_col: int = 0
    tag_col: int = -1
    pos_col: int | None = None


def _normalize(text, hook=None):
    text = unicodedata.normalize("NFC", text)
    return hook(text) if hook is not None else text


def parse_conll(text, columns=ColumnConfig(), normalizer=None):
    """Parse CoNLL-style text into a LabeledCorpus.

    Blank lines separate sentences; ``#``-prefixed lines carry the id of the
    sentence that follows; ids are generated as s0, s1, ... where absent.
    ``normalizer`` is an optional text hook applied after NFC.

    Raises ParseError with a line number on malformed lines.
    """
    if not text.strip():
        raise ParseError("empty input")

    sentences = []
    classes = set()
    pending_id = None
    tokens = []
    generated = 0

    def flush():
        nonlocal pending_id, tokens, generated
        if tokens:
            sid = pending_id
            if sid is None:
                sid = f"s{generated}"
                generated += 1
            sentences.append(Sentence(sid, tuple(tokens)))
        pending_id = None
        tokens = []

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            pending_id = _normalize(line[1:].strip(), normalizer) or None
            continue
        cols = line.split()
        n = len(cols)
        tag_idx = columns.tag_col if columns.tag_col >= 0 else n + columns.tag_col
        needed = {columns.token_col, tag_idx}
        if columns.pos_col is not None:
            needed.add(columns.pos_col)
        if n < 2 or max(needed) >= n or min(needed) < 0 or len(needed) < (2 + (columns.pos_col is not None)):
            raise ParseError(f"expected at least 2 distinct columns, got {n}: {line!r}", lineno)
        surface = _normalize(cols[columns.token_col], normalizer)
        tag = cols[tag_idx]
        if not BIO_TAG_RE.match(tag):
            raise ParseError(f"tag {tag!r} does not match the BIO grammar", lineno)
        pos = cols[columns.pos_col] if columns.pos_col is not None else None
        extras = tuple(
            cols[i] for i in range(n) if i not in (columns.token_col, tag_idx, columns.pos_col)
        )
        try:
            tokens.append(Token(surface, tag, pos, extras))
        except CorpusError as exc:
            raise ParseError(str(exc), lineno) from exc
        cls = tag_class(tag)
        if cls is not None:
            classes.add(cls)
    flush()

    if not sentences:
        raise ParseError("input contains no sentences")
    return LabeledCorpus(sentences, TagSet(classes), provenance=["parse_conll"])


def write_conll(corpus, predictions=None, scores=None):
    """Render a corpus back to CoNLL text (canonical form).

    Column order per line: token, pos (if set), extras, gold tag, then the
    predicted tag and its score when given. ``predictions`` (and ``scores``)
    must align one sentence list per corpus sentence, one entry per token.
    """
    if scores is not None and predictions is None:
        raise CorpusError("scores given without predictions")
    if predictions is not None and len(predictions) != len(corpus.sentences):
        raise CorpusError(
            f"predictions cover {len(predictions)} sentences, corpus has {len(corpus.sentences)}"
        )
    lines = []
    for si, sent in enumerate(corpus.sentences):
        pred = None
        if predictions is not None:
            pred = predictions[si]
            if len(pred) != len(sent):
                raise CorpusError(
                    f"sentence {sent.id!r}: {len(pred)} predictions for {len(sent)} tokens"
                )
        sc = None
        if scores is not None:
            sc = scores[si]
            if len(sc) != len(sent):
                raise CorpusError(f"sentence {sent.id!r}: score column misaligned")
        lines.append(f"# {sent.id}")
        for ti, tok in enumerate(sent.tokens):
            cols = [tok.surface]
            if tok.pos is not None:
                cols.append(tok.pos)
            cols.extend(tok.extras)
            cols.append(tok.gold_tag)
            if pred is not None:
                cols.append(pred[ti])
            if sc is not None:
                cols.append(f"{sc[ti]:.6f}")
            lines.append(" ".join(cols))
        lines.append("")
    return "\n".join(lines)


def validate_bio(tags):
    """Positions where an I-tag has no matching B-/I- of the same class
    directly before it. Grammar violations raise; scheme violations are data.
    """
    violations = []
    prev = "O"
    for i, tag in enumerate(tags):
        _check_bio_grammar(tag)
        if tag.startswith("I-"):
            cls = tag_class(tag)
            if not (prev == f"B-{cls}" or prev == f"I-{cls}"):
                violations.append(i)
        prev = tag
    return violations


def repair_bio(tags):
    """Rewrite orphan I-X tags to B-X, left to right. Valid input comes back
    unchanged; output always validates clean."""
    repaired = []
    prev = "O"
    for tag in tags:
        _check_bio_grammar(tag)
        if tag.startswith("I-"):
            cls = tag_class(tag)
            if not (prev == f"B-{cls}" or prev == f"I-{cls}"):
                tag = f"B-{cls}"
        repaired.append(tag)
        prev = tag
    return repaired


def extract_chunks(tags):
    """Maximal B-X (I-X)* runs as Chunk objects, ordered by start.

    The sequence must already be valid BIO; run repair_bio first otherwise.
    """
    if validate_bio(tags):
        raise CorpusError("invalid BIO sequence; apply repair_bio before extracting chunks")
    chunks = []
    start = None
    cls = None
    for i, tag in enumerate(tags):
        if tag.startswith("B-"):
            if start is not None:
                chunks.append(Chunk(cls, start, i))
            start, cls = i, tag_class(tag)
        elif tag == "O":
            if start is not None:
                chunks.append(Chunk(cls, start, i))
            start, cls = None, None
        # I-X continues the open chunk; validity guarantees class match
    if start is not None:
        chunks.append(Chunk(cls, start, len(tags)))
    return chunks


def split_corpus(corpus, train_fraction, seed):
    """Sentence-level shuffle under ``seed``, then split at
    ceil(n * train_fraction). Returns (train, dev); together they partition
    the corpus."""
    if not (0.0 < train_fraction < 1.0):
        raise CorpusError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(corpus.sentences)
    if n < 2:
        raise CorpusError("need at least 2 sentences to split")
    order = np.random.default_rng(seed).permutation(n)
    # tolerate float fuzz so e.g. 15300 * 0.7 lands on 10710, not 10711
    n_train = math.ceil(round(n * train_fraction, 9))
    n_train = min(max(n_train, 1), n - 1)
    train_sents = [corpus.sentences[i] for i in order[:n_train]]
    dev_sents = [corpus.sentences[i] for i in order[n_train:]]
    note = f"split(train_fraction={train_fraction}, seed={seed})"
    train = LabeledCorpus(train_sents, corpus.tagset, corpus.provenance + [note + "[train]"])
    dev = LabeledCorpus(dev_sents, corpus.tagset, corpus.provenance + [note + "[dev]"])
    return train, dev


@dataclass
class StatsReport:
    n_sentences: int
    n_tokens: int
    class_chunks: dict[str, int]
    single_token_chunks: int
    multi_token_chunks: int

    @property
    def total_chunks(self):
        return self.single_token_chunks + self.multi_token_chunks

    def render_table(self):
        rows = [
            ("sentences", self.n_sentences),
            ("tokens", self.n_tokens),
            ("chunks", self.total_chunks),
            ("single-token chunks", self.single_token_chunks),
            ("multi-token chunks", self.multi_token_chunks),
        ]
        rows.extend((f"chunks[{c}]", n) for c, n in sorted(self.class_chunks.items()))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)

    def render_kv(self):
        pairs = [
            ("sentences", self.n_sentences),
            ("tokens", self.n_tokens),
            ("chunks_total", self.total_chunks),
            ("chunks_single", self.single_token_chunks),
            ("chunks_multi", self.multi_token_chunks),
        ]
        pairs.extend((f"chunks.{c}", n) for c, n in sorted(self.class_chunks.items()))
        return "\n".join(f"{k} = {v}" for k, v in pairs)


def corpus_stats(corpus):
    """Sentence/token counts, per-class chunk frequencies, and the
    single- vs multi-token chunk tally."""
    class_chunks = Counter()
    single = 0
    multi = 0
    n_tokens = 0
    for sent in corpus.sentences:
        n_tokens += len(sent)
        for chunk in extract_chunks(repair_bio(sent.gold_tags)):
            class_chunks[chunk.cls] += 1
            if chunk.end - chunk.start == 1:
                single += 1
            else:
                multi += 1
    return StatsReport(len(corpus.sentences), n_tokens, dict(class_chunks), single, multi)
