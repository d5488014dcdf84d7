"""BiLSTM sequence tagger: configurable feature stack (word, contextual,
char-CNN, POS embeddings), softmax or CRF head, mini-batch training with
early stopping, and byte-deterministic model files.

Pipeline per sentence: concatenate enabled embeddings, apply dropout, run
the BiLSTM stack, optionally multi-head attention, then a linear head.
With the CRF head the linear outputs are emission scores; otherwise they
pass through a row softmax.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from .corpus import BIO_TAG_RE, TagSet, repair_bio
from .crf import Transitions, bio_constraint_penalty, crf_marginals, crf_nll_grad, viterbi
from .evaluation import evaluate
from .nn import (
    AdamOptimizer,
    BiLstm,
    CharCNN,
    EmbeddingTable,
    Linear,
    MultiHeadAttention,
    ParamStore,
    dropout_apply,
)

__all__ = [
    "ConfigError",
    "ModelError",
    "TaggerConfig",
    "TaggerModel",
    "TokenPrediction",
    "EpochStats",
    "TrainHistory",
    "EarlyStopper",
    "parse_config",
    "write_config",
    "build_model",
    "model_forward",
    "train",
    "predict",
    "predict_corpus",
    "save_model",
    "load_model",
]

MODEL_MAGIC = b"SEQTAGM1"
MODEL_FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``keys`` names every offending field."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class ModelError(ValueError):
    """Model construction, loading, or inference failure."""


@dataclass
class TaggerConfig:
    word_dim: int = 32
    use_char_cnn: bool = False
    char_dim: int = 8
    char_kernel: int = 3
    char_filters: int = 16
    use_pos: bool = False
    pos_dim: int = 8
    use_contextual_slot: bool = False
    use_mha: bool = False
    mha_heads: int = 2
    use_crf: bool = True
    crf_constrain_bio: bool = False
    crf_decode_only: bool = False
    lstm_layers: int = 2
    hidden: int = 32
    dropout: float = 0.1
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 5
    learning_rate: float = 0.001
    weight_decay: float = 0.01
    early_stop_metric: str = "eval_f1"
    seed: int = 42

    def validate(self):
        problems = []
        for key in ("word_dim", "char_dim", "char_kernel", "char_filters",
                    "pos_dim", "mha_heads", "lstm_layers", "hidden",
                    "batch_size", "max_epochs", "patience"):
            if getattr(self, key) < 1:
                problems.append((key, "must be >= 1"))
        if not (0.0 <= self.dropout < 1.0):
            problems.append(("dropout", "must lie in [0, 1)"))
        if self.learning_rate <= 0.0:
            problems.append(("learning_rate", "must be positive"))
        if self.weight_decay < 0.0:
            problems.append(("weight_decay", "must be non-negative"))
        if self.early_stop_metric not in ("eval_loss", "eval_f1"):
            problems.append(("early_stop_metric", "must be eval_loss or eval_f1"))
        if self.use_mha and self.mha_heads >= 1 and (2 * self.hidden) % self.mha_heads != 0:
            problems.append(("mha_heads", f"must divide BiLSTM output dim {2 * self.hidden}"))
        if self.crf_decode_only and not self.use_crf:
            problems.append(("crf_decode_only", "requires use_crf"))
        if problems:
            detail = "; ".join(f"{k}: {msg}" for k, msg in problems)
            raise ConfigError(f"invalid config: {detail}", keys=[k for k, _ in problems])
        return self


def _convert(name, kind, raw):
    if kind is bool:
        low = raw.lower()
        if low in ("true", "false"):
            return low == "true"
        raise ConfigError(f"key {name}: expected true or false, got {raw!r}", keys=[name])
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"key {name}: cannot parse {raw!r} as {kind.__name__}", keys=[name]
        ) from None


def parse_config(text, validate=True):
    """Parse flat ``key = value`` lines into a TaggerConfig. Field names
    match the dataclass exactly; ``#`` lines are comments."""
    kinds = {f.name: type(f.default) for f in fields(TaggerConfig)}
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in kinds:
            raise ConfigError(f"line {line_no}: unknown config key {key!r}", keys=[key])
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate config key {key!r}", keys=[key])
        values[key] = _convert(key, kinds[key], raw)
    config = TaggerConfig(**values)
    if validate:
        config.validate()
    return config


def write_config(config):
    lines = []
    for f in fields(TaggerConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class TokenPrediction:
    label: str
    score: float

    def __post_init__(self):
        if not BIO_TAG_RE.match(self.label):
            raise ModelError(f"invalid BIO label {self.label!r}")
        if not (0.0 <= self.score <= 1.0):
            raise ModelError(f"prediction score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    eval_loss: float
    eval_macro_f1: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats]
    stopped_epoch: int
    best_epoch: int

    def render(self):
        lines = ["# epoch train_loss eval_loss eval_macro_f1"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch} {e.train_loss:.6f} {e.eval_loss:.6f} {e.eval_macro_f1:.6f}"
            )
        lines.append(f"# stopped_epoch {self.stopped_epoch}")
        lines.append(f"# best_epoch {self.best_epoch}")
        return "\n".join(lines) + "\n"


class EarlyStopper:
    """Stop after ``patience`` consecutive evaluations without strict
    improvement; ties count as non-improving."""

    def __init__(self, patience, mode):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        if mode not in ("min", "max"):
            raise ValueError(f"mode must be min or max, got {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best_value = None
        self.best_epoch = 0
        self.bad_count = 0

    def update(self, epoch, value):
        """Record one evaluation; returns True when training should stop."""
        if self.best_value is None:
            improved = True
        elif self.mode == "min":
            improved = value < self.best_value
        else:
            improved = value > self.best_value
        if improved:
            self.best_value = value
            self.best_epoch = epoch
            self.bad_count = 0
        else:
            self.bad_count += 1
        return self.bad_count >= self.patience


class TaggerModel:
    """Immutable-by-convention container: config, vocabularies, tagset, and
    the parameter store with all layer objects. Forward passes share the
    model across threads safely; only training mutates parameters."""

    def __init__(self, config, tagset, word_vocab, char_vocab, pos_vocab,
                 contextual_dim=0):
        config.validate()
        self.config = config
        self.tagset = tagset
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.pos_vocab = pos_vocab
        self.contextual_dim = contextual_dim
        if config.use_contextual_slot and contextual_dim < 1:
            raise ConfigError(
                "use_contextual_slot requires a contextual vector file",
                keys=["use_contextual_slot"],
            )
        if config.use_pos and pos_vocab is None:
            raise ConfigError(
                "use_pos requires a corpus with a POS column", keys=["use_pos"]
            )
        self.store = ParamStore()
        rng = np.random.default_rng(config.seed)

        self.word_emb = EmbeddingTable(
            self.store, "word.emb", len(word_vocab) + 1, config.word_dim, rng
        )
        input_dim = config.word_dim
        self.char_cnn = None
        if config.use_char_cnn:
            self.char_cnn = CharCNN(
                self.store, "char", len(char_vocab) + 1, config.char_dim,
                config.char_kernel, config.char_filters, rng,
            )
            input_dim += config.char_filters
        self.pos_emb = None
        if config.use_pos:
            self.pos_emb = EmbeddingTable(
                self.store, "pos.emb", len(pos_vocab) + 1, config.pos_dim, rng
            )
            input_dim += config.pos_dim
        if config.use_contextual_slot:
            input_dim += contextual_dim
        self.bilstm = BiLstm(
            self.store, "lstm", input_dim, config.hidden, config.lstm_layers, rng
        )
        self.mha = None
        if config.use_mha:
            self.mha = MultiHeadAttention(
                self.store, "mha", 2 * config.hidden, config.mha_heads, rng
            )
        self.head = Linear(self.store, "head", 2 * config.hidden, len(tagset), rng)
        if config.use_crf:
            t = len(tagset)
            self.store.add("crf.matrix", np.zeros((t, t)))
            self.store.add("crf.start", np.zeros(t))
            self.store.add("crf.end", np.zeros(t))

    @property
    def n_labels(self):
        return len(self.tagset)

    def transitions(self):
        """Effective CRF transitions: stored parameters plus the optional
        BIO-validity penalty."""
        trans = Transitions(
            self.store["crf.matrix"], self.store["crf.start"], self.store["crf.end"]
        )
        if self.config.crf_constrain_bio:
            matrix_penalty, start_penalty = bio_constraint_penalty(self.tagset)
            trans = trans.penalized(matrix_penalty, start_penalty)
        return trans


def build_model(config, corpus, pretrained_vectors=None, contextual_vectors=None):
    """Construct a model whose vocabularies come from ``corpus``; index 0 of
    every vocabulary is the unknown slot. Word rows for tokens covered by
    ``pretrained_vectors`` are copied verbatim; everything else is random
    under ``config.seed``."""
    config.validate()
    if pretrained_vectors is not None and pretrained_vectors.dim != config.word_dim:
        raise ConfigError(
            f"pretrained vectors have dimension {pretrained_vectors.dim}, "
            f"config word_dim is {config.word_dim}",
            keys=["word_dim"],
        )
    surfaces = sorted({t.surface for s in corpus.sentences for t in s.tokens})
    word_vocab = {tok: i + 1 for i, tok in enumerate(surfaces)}
    chars = sorted({ch for tok in surfaces for ch in tok})
    char_vocab = {ch: i + 1 for i, ch in enumerate(chars)}
    pos_vocab = None
    if config.use_pos:
        tags = {t.pos for s in corpus.sentences for t in s.tokens}
        if None in tags:
            raise ConfigError(
                "use_pos is enabled but the corpus has tokens without POS tags",
                keys=["use_pos"],
            )
        pos_vocab = {p: i + 1 for i, p in enumerate(sorted(tags))}
    contextual_dim = 0
    if config.use_contextual_slot:
        if contextual_vectors is None:
            raise ConfigError(
                "use_contextual_slot requires a contextual vector file",
                keys=["use_contextual_slot"],
            )
        contextual_dim = contextual_vectors.dim
    model = TaggerModel(config, corpus.tagset, word_vocab, char_vocab, pos_vocab,
                        contextual_dim)
    if pretrained_vectors is not None:
        table = model.store["word.emb"]
        for token, idx in word_vocab.items():
            vec = pretrained_vectors.get(token)
            if vec is not None:
                table[idx] = vec
    return model


def _forward(model, sentence, mode, rng, contextual):
    cfg = model.config
    n = len(sentence.tokens)
    if n == 0:
        raise ModelError("cannot run the model on an empty sentence")
    if mode == "train" and cfg.dropout > 0.0 and rng is None:
        raise ModelError("training-mode forward pass needs an rng for dropout")

    widx = np.array([model.word_vocab.get(s, 0) for s in sentence.surfaces],
                    dtype=np.int64)
    word_rows, word_cache = model.word_emb.lookup(widx)
    parts = [word_rows]
    routes = [("word", cfg.word_dim, word_cache)]

    if cfg.use_contextual_slot:
        if contextual is None:
            raise ModelError(
                f"sentence {sentence.id!r}: model uses contextual vectors "
                "but none were provided"
            )
        if contextual.dim != model.contextual_dim:
            raise ModelError(
                f"contextual vectors have dimension {contextual.dim}, "
                f"model expects {model.contextual_dim}"
            )
        try:
            ctx_rows = contextual.lookup_sentence(sentence.id, n)
        except KeyError as exc:
            raise ModelError(str(exc.args[0])) from None
        parts.append(ctx_rows)
        routes.append(("frozen", model.contextual_dim, None))

    if cfg.use_char_cnn:
        char_rows = np.empty((n, cfg.char_filters))
        char_caches = []
        for i, surface in enumerate(sentence.surfaces):
            cidx = [model.char_vocab.get(ch, 0) for ch in surface]
            vec, cache = model.char_cnn.forward(cidx)
            char_rows[i] = vec
            char_caches.append(cache)
        parts.append(char_rows)
        routes.append(("char", cfg.char_filters, char_caches))

    if cfg.use_pos:
        pidx = np.array(
            [model.pos_vocab.get(t.pos, 0) if t.pos is not None else 0
             for t in sentence.tokens],
            dtype=np.int64,
        )
        pos_rows, pos_cache = model.pos_emb.lookup(pidx)
        parts.append(pos_rows)
        routes.append(("pos", cfg.pos_dim, pos_cache))

    x = np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]
    x, drop_mask = dropout_apply(x, cfg.dropout, mode, rng)
    h, lstm_caches = model.bilstm.forward(x)
    mha_cache = None
    if cfg.use_mha:
        h, mha_cache = model.mha.forward(h)
    emissions, head_cache = model.head.forward(h)
    return emissions, (routes, drop_mask, lstm_caches, mha_cache, head_cache)


def _backward(model, d_emissions, cache):
    routes, drop_mask, lstm_caches, mha_cache, head_cache = cache
    d = model.head.backward(d_emissions, head_cache)
    if mha_cache is not None:
        d = model.mha.backward(d, mha_cache)
    d = model.bilstm.backward(d, lstm_caches)
    if drop_mask is not None:
        d = d * drop_mask
    offset = 0
    for kind, width, route_cache in routes:
        part = d[:, offset:offset + width]
        offset += width
        if kind == "word":
            model.word_emb.backward(part, route_cache)
        elif kind == "char":
            for i, char_cache in enumerate(route_cache):
                model.char_cnn.backward(np.ascontiguousarray(part[i]), char_cache)
        elif kind == "pos":
            model.pos_emb.backward(part, route_cache)
        # frozen slots (contextual vectors) receive no gradient


def _log_softmax(emissions):
    m = emissions.max(axis=1, keepdims=True)
    shifted = emissions - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _uses_crf_loss(cfg):
    return cfg.use_crf and not cfg.crf_decode_only


def _sentence_loss(model, emissions, gold_idx, weight=1.0, want_grad=False):
    """Per-sentence loss: CRF NLL, or mean per-token cross-entropy. With
    ``want_grad`` also returns d_loss/d_emissions scaled by ``weight`` and
    accumulates CRF transition gradients."""
    if _uses_crf_loss(model.config):
        loss, d_emis, d_matrix, d_start, d_end = crf_nll_grad(
            emissions, model.transitions(), gold_idx
        )
        if not want_grad:
            return loss, None
        acc = model.store.accumulate
        acc("crf.matrix", weight * d_matrix)
        acc("crf.start", weight * d_start)
        acc("crf.end", weight * d_end)
        return loss, weight * d_emis
    n = emissions.shape[0]
    logp = _log_softmax(emissions)
    rows = np.arange(n)
    loss = -logp[rows, gold_idx].mean()
    if not want_grad:
        return float(loss), None
    d = np.exp(logp)
    d[rows, gold_idx] -= 1.0
    return float(loss), d * (weight / n)


def model_forward(model, sentence, mode="eval", rng=None, contextual=None):
    """Per-token scores: raw emissions [n, T] with the CRF head, otherwise
    row-softmax probabilities."""
    emissions, _ = _forward(model, sentence, mode, rng, contextual)
    if model.config.use_crf:
        return emissions
    return np.exp(_log_softmax(emissions))


def _predictions_from_emissions(model, emissions):
    if model.config.use_crf:
        trans = model.transitions()
        path, _ = viterbi(emissions, trans)
        marginals = crf_marginals(emissions, trans)
        labels = [model.tagset.label(t) for t in path]
        scores = [min(max(float(marginals[i, t]), 0.0), 1.0)
                  for i, t in enumerate(path)]
    else:
        probs = np.exp(_log_softmax(emissions))
        best = probs.argmax(axis=1)
        labels = [model.tagset.label(t) for t in best]
        scores = [min(max(float(probs[i, t]), 0.0), 1.0)
                  for i, t in enumerate(best)]
    repaired = repair_bio(labels)
    return [TokenPrediction(lab, score) for lab, score in zip(repaired, scores)]


def predict(model, sentence, contextual=None):
    """Label a sentence: Viterbi path with marginal scores under the CRF
    head, per-row argmax probability otherwise. Labels are BIO-repaired
    with scores carried over unchanged."""
    emissions, _ = _forward(model, sentence, "eval", None, contextual)
    return _predictions_from_emissions(model, emissions)


def predict_corpus(model, corpus, contextual=None):
    return [predict(model, sent, contextual) for sent in corpus.sentences]


def _gold_indices(model, sentence):
    return np.array([model.tagset.index(t) for t in sentence.gold_tags],
                    dtype=np.int64)


def _evaluate_dev(model, dev, contextual):
    losses = []
    predictions = []
    for sent in dev.sentences:
        emissions, _ = _forward(model, sent, "eval", None, contextual)
        loss, _ = _sentence_loss(model, emissions, _gold_indices(model, sent))
        losses.append(loss)
        predictions.append([p.label for p in _predictions_from_emissions(model, emissions)])
    report = evaluate(dev, predictions)
    return float(np.mean(losses)), report.macro_f1


def train(model, train_corpus, dev_corpus, config=None,
          train_contextual=None, dev_contextual=None):
    """Mini-batch training with per-epoch dev evaluation and early
    stopping; returns the model restored to its best-epoch parameters plus
    the full history."""
    cfg = (config or model.config).validate()
    optimizer = AdamOptimizer(model.store, cfg.learning_rate, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    mode = "min" if cfg.early_stop_metric == "eval_loss" else "max"
    stopper = EarlyStopper(cfg.patience, mode)
    best_values = model.store.copy_values()
    history = []
    stopped_epoch = cfg.max_epochs

    for epoch in range(1, cfg.max_epochs + 1):
        stopped_epoch = epoch
        order = rng.permutation(len(train_corpus.sentences))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            weight = 1.0 / len(batch)
            for si in batch:
                sent = train_corpus.sentences[si]
                emissions, cache = _forward(model, sent, "train", rng, train_contextual)
                loss, d_emis = _sentence_loss(
                    model, emissions, _gold_indices(model, sent),
                    weight=weight, want_grad=True,
                )
                if not math.isfinite(loss):
                    raise ModelError(
                        f"non-finite training loss at epoch {epoch}, "
                        f"sentence {sent.id!r}"
                    )
                _backward(model, d_emis, cache)
                epoch_losses.append(loss)
            optimizer.step()

        eval_loss, eval_f1 = _evaluate_dev(model, dev_corpus, dev_contextual)
        if not math.isfinite(eval_loss):
            raise ModelError(f"non-finite evaluation loss at epoch {epoch}")
        history.append(EpochStats(epoch, float(np.mean(epoch_losses)), eval_loss, eval_f1))
        metric = eval_loss if cfg.early_stop_metric == "eval_loss" else eval_f1
        should_stop = stopper.update(epoch, metric)
        if stopper.best_epoch == epoch:
            best_values = model.store.copy_values()
        if should_stop:
            break

    model.store.load_values(best_values)
    return model, TrainHistory(history, stopped_epoch=stopped_epoch,
                               best_epoch=stopper.best_epoch)


def _header_dict(model):
    word_tokens = [None] * len(model.word_vocab)
    for tok, idx in model.word_vocab.items():
        word_tokens[idx - 1] = tok
    char_tokens = [None] * len(model.char_vocab)
    for ch, idx in model.char_vocab.items():
        char_tokens[idx - 1] = ch
    pos_tokens = None
    if model.pos_vocab is not None:
        pos_tokens = [None] * len(model.pos_vocab)
        for p, idx in model.pos_vocab.items():
            pos_tokens[idx - 1] = p
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "classes": list(model.tagset.classes),
        "word_tokens": word_tokens,
        "char_tokens": char_tokens,
        "pos_tokens": pos_tokens,
        "contextual_dim": model.contextual_dim,
        "params": [[name, list(model.store[name].shape)]
                   for name in model.store.names()],
    }


def save_model(model, path):
    """Serialize to a self-describing binary: magic, length-prefixed JSON
    header, then raw little-endian float64 parameter blocks in sorted name
    order. Byte-deterministic for a given model."""
    header = json.dumps(_header_dict(model), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    blocks = [MODEL_MAGIC, struct.pack("<Q", len(header)), header]
    for name in model.store.names():
        blocks.append(np.ascontiguousarray(model.store[name], dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(blocks))


def load_model(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MODEL_MAGIC) + 8 or not data.startswith(MODEL_MAGIC):
        raise ModelError(f"{path}: not a model file")
    header_len = struct.unpack_from("<Q", data, len(MODEL_MAGIC))[0]
    body_start = len(MODEL_MAGIC) + 8
    if len(data) < body_start + header_len:
        raise ModelError(f"{path}: truncated model file")
    try:
        header = json.loads(data[body_start:body_start + header_len])
    except json.JSONDecodeError:
        raise ModelError(f"{path}: corrupt model header") from None
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelError(
            f"{path}: unsupported model format version {header.get('format_version')}"
        )
    config = TaggerConfig(**header["config"])
    word_vocab = {tok: i + 1 for i, tok in enumerate(header["word_tokens"])}
    char_vocab = {ch: i + 1 for i, ch in enumerate(header["char_tokens"])}
    pos_vocab = None
    if header["pos_tokens"] is not None:
        pos_vocab = {p: i + 1 for i, p in enumerate(header["pos_tokens"])}
    model = TaggerModel(config, TagSet(header["classes"]), word_vocab, char_vocab,
                        pos_vocab, header["contextual_dim"])

    names = model.store.names()
    header_params = [(name, tuple(shape)) for name, shape in header["params"]]
    if header_params != [(n, model.store[n].shape) for n in names]:
        raise ModelError(f"{path}: parameter inventory does not match its config")
    offset = body_start + header_len
    values = {}
    for name in names:
        shape = model.store[name].shape
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if end > len(data):
            raise ModelError(f"{path}: truncated model file")
        values[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise ModelError(f"{path}: trailing bytes after parameter blocks")
    model.store.load_values(values)
    return model
