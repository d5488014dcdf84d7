"""Threshold-gated majority voting over aligned per-token predictions.

The rule per token: discard votes whose score does not exceed the
threshold; if one label is held by strictly more than half of the models,
it wins; otherwise the surviving label with the highest total score wins
(ties broken toward the lexicographically smallest label); if nothing
survives, O. Voting happens on raw labels; BIO repair runs once on the
voted sequence, never on the inputs.
"""

from collections import Counter
from dataclasses import dataclass, field

from .corpus import BIO_TAG_RE, ParseError, repair_bio
from .tagger import TokenPrediction

__all__ = [
    "EnsembleError",
    "VoteConfig",
    "PredictionSet",
    "TokenDiag",
    "EnsembleDiagnostics",
    "majority_vote",
    "ensemble_corpus",
    "read_prediction_file",
    "write_prediction_file",
]

FALLBACK_POLICIES = ("highest-total-score",)
MAJORITY_DENOMINATORS = ("models", "survivors")


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class VoteConfig:
    score_threshold: float = 0.5
    fallback: str = "highest-total-score"
    majority_of: str = "models"

    def __post_init__(self):
        if not (0.0 <= self.score_threshold <= 1.0):
            raise EnsembleError(
                f"score threshold {self.score_threshold} outside [0, 1]"
            )
        if self.fallback not in FALLBACK_POLICIES:
            raise EnsembleError(f"unknown fallback policy {self.fallback!r}")
        if self.majority_of not in MAJORITY_DENOMINATORS:
            raise EnsembleError(f"majority_of must be one of {MAJORITY_DENOMINATORS}")


@dataclass
class PredictionSet:
    """One model's predictions aligned to a reference corpus: one
    TokenPrediction list per sentence. ``sentence_ids`` is kept when read
    from a file so misalignments can be reported precisely."""

    model_id: str
    predictions: list
    sentence_ids: list | None = None


def _support(survivors, label):
    scores = [v.score for v in survivors if v.label == label]
    return sum(scores) / len(scores) if scores else 0.0


def _vote(votes, config):
    """Returns (label, surviving_count, outcome, support) with outcome in
    {majority, fallback, empty}; support is the mean surviving score for
    the winning label."""
    survivors = [v for v in votes if v.score > config.score_threshold]
    denominator = len(votes) if config.majority_of == "models" else len(survivors)
    counts = Counter(v.label for v in survivors)
    for label in sorted(counts):
        if 2 * counts[label] > denominator:
            return label, len(survivors), "majority", _support(survivors, label)
    if not survivors:
        return "O", 0, "empty", 0.0
    totals = {}
    for v in survivors:
        totals[v.label] = totals.get(v.label, 0.0) + v.score
    label = min(totals.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    return label, len(survivors), "fallback", _support(survivors, label)


def majority_vote(votes, config=VoteConfig()):
    """Ensemble label for one token given one vote per model."""
    if not votes:
        raise EnsembleError("cannot vote on an empty vote list")
    return _vote(votes, config)[0]


@dataclass(frozen=True)
class TokenDiag:
    label: str  # final (post-repair) label
    surviving: int
    outcome: str  # majority | fallback | empty
    score: float  # mean surviving score behind the winning label


@dataclass
class EnsembleDiagnostics:
    config: VoteConfig
    model_ids: list
    per_sentence: list = field(default_factory=list)  # (sentence_id, [TokenDiag])

    @property
    def n_fallbacks(self):
        return sum(
            1 for _, diags in self.per_sentence
            for d in diags if d.outcome != "majority"
        )

    def render(self):
        lines = [
            f"# threshold {self.config.score_threshold}",
            f"# fallback {self.config.fallback}",
            f"# majority_of {self.config.majority_of}",
            f"# models {','.join(self.model_ids)}",
            f"# non_majority_tokens {self.n_fallbacks}",
        ]
        for sid, diags in self.per_sentence:
            lines.append(f"# sentence {sid}")
            for i, d in enumerate(diags):
                lines.append(f"{i} {d.label} {d.surviving} {d.outcome}")
        return "\n".join(lines) + "\n"


def _check_alignment(pset, reference):
    if len(pset.predictions) != len(reference.sentences):
        raise EnsembleError(
            f"model {pset.model_id!r}: {len(pset.predictions)} sentences, "
            f"reference has {len(reference.sentences)}"
        )
    for si, sent in enumerate(reference.sentences):
        if pset.sentence_ids is not None and pset.sentence_ids[si] != sent.id:
            raise EnsembleError(
                f"model {pset.model_id!r}: sentence {pset.sentence_ids[si]!r} "
                f"where reference has {sent.id!r}"
            )
        if len(pset.predictions[si]) != len(sent):
            raise EnsembleError(
                f"model {pset.model_id!r}: sentence {sent.id!r} has "
                f"{len(pset.predictions[si])} predictions for {len(sent)} tokens"
            )


def ensemble_corpus(sets, reference, config=VoteConfig()):
    """Vote every token across ``sets``, repair the voted sequences, and
    return (label sequences, diagnostics)."""
    if len(sets) < 2:
        raise EnsembleError(f"need at least 2 prediction sets, got {len(sets)}")
    for pset in sets:
        _check_alignment(pset, reference)

    diagnostics = EnsembleDiagnostics(config, [p.model_id for p in sets])
    all_labels = []
    for si, sent in enumerate(reference.sentences):
        voted = []
        details = []
        for ti in range(len(sent)):
            votes = [pset.predictions[si][ti] for pset in sets]
            label, surviving, outcome, support = _vote(votes, config)
            voted.append(label)
            details.append((surviving, outcome, support))
        repaired = repair_bio(voted)
        all_labels.append(repaired)
        diagnostics.per_sentence.append(
            (sent.id, [TokenDiag(lab, s, o, sc)
                       for lab, (s, o, sc) in zip(repaired, details)])
        )
    return all_labels, diagnostics


def write_prediction_file(corpus, predictions, include_gold=True):
    """Render per-token predictions as CoNLL-style text: `# id` headers and
    `token [gold] predicted score` rows, blank line between sentences."""
    if len(predictions) != len(corpus.sentences):
        raise EnsembleError(
            f"{len(predictions)} prediction lists for {len(corpus.sentences)} sentences"
        )
    lines = []
    for sent, preds in zip(corpus.sentences, predictions):
        if len(preds) != len(sent):
            raise EnsembleError(
                f"sentence {sent.id!r}: {len(preds)} predictions for {len(sent)} tokens"
            )
        lines.append(f"# {sent.id}")
        for tok, p in zip(sent.tokens, preds):
            cols = [tok.surface]
            if include_gold:
                cols.append(tok.gold_tag)
            cols.append(p.label)
            cols.append(f"{p.score:.6f}")
            lines.append(" ".join(cols))
        lines.append("")
    return "\n".join(lines)


@dataclass
class PredictionFileData:
    sentence_ids: list
    surfaces: list
    gold_tags: list | None  # None when the file has no gold column
    predictions: list

    def to_set(self, model_id):
        return PredictionSet(model_id, self.predictions, list(self.sentence_ids))


def read_prediction_file(text):
    """Parse prediction text back into sentences of TokenPredictions.

    Rows carry 4 columns (token gold predicted score) or 3 (token predicted
    score); the two may not be mixed within one file.
    """
    if not text.strip():
        raise ParseError("empty prediction file")
    sentence_ids = []
    surfaces = []
    gold_tags = []
    predictions = []
    has_gold = None
    pending_id = None
    generated = 0
    cur_surfaces, cur_gold, cur_preds = [], [], []

    def flush():
        nonlocal pending_id, cur_surfaces, cur_gold, cur_preds, generated
        if cur_surfaces:
            sid = pending_id
            if sid is None:
                sid = f"s{generated}"
                generated += 1
            sentence_ids.append(sid)
            surfaces.append(cur_surfaces)
            gold_tags.append(cur_gold)
            predictions.append(cur_preds)
        pending_id = None
        cur_surfaces, cur_gold, cur_preds = [], [], []

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            pending_id = line[1:].strip() or None
            continue
        cols = line.split()
        if len(cols) not in (3, 4):
            raise ParseError(
                f"expected 3 or 4 columns (token [gold] predicted score), got {len(cols)}",
                lineno,
            )
        row_has_gold = len(cols) == 4
        if has_gold is None:
            has_gold = row_has_gold
        elif has_gold != row_has_gold:
            raise ParseError("mixed 3- and 4-column rows in one file", lineno)
        token = cols[0]
        gold = cols[1] if row_has_gold else None
        pred, score_text = cols[-2], cols[-1]
        if gold is not None and not BIO_TAG_RE.match(gold):
            raise ParseError(f"gold tag {gold!r} does not match the BIO grammar", lineno)
        try:
            score = float(score_text)
        except ValueError:
            raise ParseError(f"malformed score {score_text!r}", lineno) from None
        try:
            tp = TokenPrediction(pred, score)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        cur_surfaces.append(token)
        if gold is not None:
            cur_gold.append(gold)
        cur_preds.append(tp)
    flush()

    if not surfaces:
        raise ParseError("prediction file contains no sentences")
    return PredictionFileData(
        sentence_ids, surfaces, gold_tags if has_gold else None, predictions
    )
