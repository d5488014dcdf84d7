"""Independent brute-force oracles and fixture builders shared by the test
modules. Everything here is deliberately naive: enumeration, run scanning,
set intersection. None of it calls the code paths it checks."""

import itertools
import math

import numpy as np

from seqtag.corpus import LabeledCorpus, Sentence, TagSet, Token


def enumerate_crf(emissions, matrix, start, end):
    """Exhaustive path enumeration for small (n, T) CRF instances.

    Returns (log_partition, best_path, best_score, marginals, pair_counts)
    where pair_counts[i, j] is the expected number of i->j transitions.
    """
    n, n_tags = emissions.shape
    scores = []
    paths = list(itertools.product(range(n_tags), repeat=n))
    for path in paths:
        s = start[path[0]] + end[path[-1]]
        for t, y in enumerate(path):
            s += emissions[t, y]
        for t in range(n - 1):
            s += matrix[path[t], path[t + 1]]
        scores.append(s)
    scores = np.array(scores)
    m = scores.max()
    log_z = m + math.log(np.sum(np.exp(scores - m)))
    probs = np.exp(scores - log_z)

    best_idx = int(np.argmax(scores))
    best_path = list(paths[best_idx])
    best_score = float(scores[best_idx])

    marginals = np.zeros((n, n_tags))
    pair_counts = np.zeros((n_tags, n_tags))
    for path, p in zip(paths, probs):
        for t, y in enumerate(path):
            marginals[t, y] += p
        for t in range(n - 1):
            pair_counts[path[t], path[t + 1]] += p
    return float(log_z), best_path, best_score, marginals, pair_counts


def brute_chunks(tags):
    """Run scanner for valid BIO sequences, independent of extract_chunks."""
    out = []
    i = 0
    while i < len(tags):
        if tags[i].startswith("B-"):
            cls = tags[i][2:]
            j = i + 1
            while j < len(tags) and tags[j] == f"I-{cls}":
                j += 1
            out.append((cls, i, j))
            i = j
        else:
            i += 1
    return out


def brute_prf(gold_chunk_lists, pred_chunk_lists):
    """Set-intersection chunk scorer over per-sentence (cls, start, end)
    triples. Returns {cls: (precision, recall, f1)} plus macro f1."""
    classes = set()
    tp = {}
    n_gold = {}
    n_pred = {}
    for gold, pred in zip(gold_chunk_lists, pred_chunk_lists):
        gset, pset = set(gold), set(pred)
        for c, _, _ in gset | pset:
            classes.add(c)
        for chunk in gset & pset:
            tp[chunk[0]] = tp.get(chunk[0], 0) + 1
        for chunk in gset:
            n_gold[chunk[0]] = n_gold.get(chunk[0], 0) + 1
        for chunk in pset:
            n_pred[chunk[0]] = n_pred.get(chunk[0], 0) + 1
    per_class = {}
    for c in classes:
        t = tp.get(c, 0)
        p = t / n_pred[c] if n_pred.get(c) else 0.0
        r = t / n_gold[c] if n_gold.get(c) else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class[c] = (p, r, f)
    macro_f1 = sum(v[2] for v in per_class.values()) / len(per_class) if per_class else 0.0
    return per_class, macro_f1


def brute_vote(labels, scores, threshold, n_models):
    """Reimplementation of the thresholded majority vote, written from the
    rule statement rather than the ensemble module."""
    surviving = [(l, s) for l, s in zip(labels, scores) if s > threshold]
    if not surviving:
        return "O"
    counts = {}
    for l, _ in surviving:
        counts[l] = counts.get(l, 0) + 1
    majority = [l for l, c in counts.items() if c > n_models / 2.0]
    if majority:
        return majority[0]
    totals = {}
    for l, s in surviving:
        totals[l] = totals.get(l, 0.0) + s
    best = max(totals.values())
    return min(l for l, s in totals.items() if s == best)


def random_bio_tags(rng, length, classes):
    """Random valid BIO sequence."""
    tags = []
    prev_cls = None
    for _ in range(length):
        r = rng.random()
        if r < 0.5 or not classes:
            tags.append("O")
            prev_cls = None
        elif r < 0.8 or prev_cls is None:
            cls = classes[rng.integers(len(classes))]
            tags.append(f"B-{cls}")
            prev_cls = cls
        else:
            tags.append(f"I-{prev_cls}")
    return tags


def random_corpus(rng, n_sentences, classes=("PER", "LOC", "CW"), min_len=1, max_len=8,
                  vocab=None, prefix="s"):
    """Small synthetic corpus with valid BIO gold tags."""
    if vocab is None:
        vocab = [f"w{i}" for i in range(30)]
    sentences = []
    for si in range(n_sentences):
        length = int(rng.integers(min_len, max_len + 1))
        tags = random_bio_tags(rng, length, list(classes))
        tokens = tuple(
            Token(vocab[rng.integers(len(vocab))], tag) for tag in tags
        )
        sentences.append(Sentence(f"{prefix}{si}", tokens))
    return LabeledCorpus(sentences, TagSet(classes), provenance=["synthetic"])


def tiny_fixture_corpus():
    """Three handwritten sentences over {PER, LOC, CW} with POS tags."""
    def sent(sid, rows):
        return Sentence(sid, tuple(Token(s, t, pos=p) for s, p, t in rows))

    sentences = [
        sent("s0", [("mehta", "NNP", "B-PER"), ("visited", "VBD", "O"),
                    ("dhaka", "NNP", "B-LOC"), ("university", "NN", "I-LOC")]),
        sent("s1", [("the", "DT", "O"), ("old", "JJ", "B-CW"), ("man", "NN", "I-CW"),
                    ("and", "CC", "I-CW"), ("the", "DT", "I-CW"), ("sea", "NN", "I-CW")]),
        sent("s2", [("rahim", "NNP", "B-PER"), ("met", "VBD", "O"), ("karim", "NNP", "B-PER")]),
    ]
    return LabeledCorpus(sentences, TagSet(["PER", "LOC", "CW"]), provenance=["fixture"])
