"""First-order linear-chain CRF: log-partition, Viterbi decoding,
forward-backward marginals, and NLL gradients.

A path through emissions ``e`` (n, T) under transitions ``trans`` scores
``start[y0] + sum_t e[t, y_t] + sum_t trans[y_(t-1), y_t] + end[y_(n-1)]``.
All recursions run in log space via the kernels module.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import crf_alphas, crf_betas, logsumexp, viterbi_decode

__all__ = [
    "Transitions",
    "log_partition",
    "viterbi",
    "crf_marginals",
    "crf_nll_grad",
    "path_score",
    "bio_constraint_penalty",
]

CONSTRAINT_PENALTY = -1e4


@dataclass
class Transitions:
    """Tag-pair scores plus explicit start and end scores. matrix[i, j]
    scores tag i followed by tag j."""

    matrix: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.start = np.asarray(self.start, dtype=np.float64)
        self.end = np.asarray(self.end, dtype=np.float64)
        t = self.matrix.shape[0]
        if self.matrix.shape != (t, t):
            raise ValueError(f"transition matrix must be square, got {self.matrix.shape}")
        if self.start.shape != (t,) or self.end.shape != (t,):
            raise ValueError("start/end score lengths must match the tag count")

    @property
    def n_tags(self):
        return self.matrix.shape[0]

    @classmethod
    def zeros(cls, n_tags):
        return cls(np.zeros((n_tags, n_tags)), np.zeros(n_tags), np.zeros(n_tags))

    def penalized(self, matrix_penalty, start_penalty):
        return Transitions(self.matrix + matrix_penalty, self.start + start_penalty, self.end)


def _check(emissions, trans):
    emissions = np.ascontiguousarray(emissions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise ValueError(f"emissions must be (n>=1, T), got shape {emissions.shape}")
    if emissions.shape[1] != trans.n_tags:
        raise ValueError(
            f"emissions have {emissions.shape[1]} tags, transitions {trans.n_tags}"
        )
    return emissions


def path_score(emissions, trans, tags):
    """Score of one explicit tag path."""
    emissions = _check(emissions, trans)
    tags = np.asarray(tags, dtype=np.int64)
    score = trans.start[tags[0]] + emissions[np.arange(len(tags)), tags].sum()
    score += trans.matrix[tags[:-1], tags[1:]].sum()
    return float(score + trans.end[tags[-1]])


def log_partition(emissions, trans):
    """log sum over all T^n paths of exp(path score)."""
    emissions = _check(emissions, trans)
    alphas = crf_alphas(emissions, trans.matrix, trans.start)
    return float(logsumexp(alphas[-1] + trans.end))


def viterbi(emissions, trans):
    """Best-scoring tag path and its score; ties break toward lower tag
    indices at every backpointer."""
    emissions = _check(emissions, trans)
    path, score = viterbi_decode(emissions, trans.matrix, trans.start, trans.end)
    return list(int(t) for t in path), float(score)


def crf_marginals(emissions, trans):
    """Per-position tag probabilities under the CRF distribution (n, T);
    rows sum to 1."""
    emissions = _check(emissions, trans)
    alphas = crf_alphas(emissions, trans.matrix, trans.start)
    betas = crf_betas(emissions, trans.matrix, trans.end)
    log_z = logsumexp(alphas[-1] + trans.end)
    return np.exp(alphas + betas - log_z)


def crf_nll_grad(emissions, trans, gold):
    """Negative log-likelihood of the gold path and its gradients.

    Returns (loss, d_emissions, d_matrix, d_start, d_end) where each
    gradient is expected counts under the model minus gold counts.
    """
    emissions = _check(emissions, trans)
    n, n_tags = emissions.shape
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != (n,):
        raise ValueError(f"gold path length {gold.shape} does not match {n} positions")
    if gold.size and (gold.min() < 0 or gold.max() >= n_tags):
        raise ValueError("gold tag index out of range")

    alphas = crf_alphas(emissions, trans.matrix, trans.start)
    betas = crf_betas(emissions, trans.matrix, trans.end)
    log_z = logsumexp(alphas[-1] + trans.end)
    marginals = np.exp(alphas + betas - log_z)

    loss = log_z - path_score(emissions, trans, gold)

    d_emissions = marginals.copy()
    d_emissions[np.arange(n), gold] -= 1.0

    d_matrix = np.zeros_like(trans.matrix)
    for t in range(n - 1):
        # pairwise marginals xi_t[i, j] = P(y_t = i, y_(t+1) = j)
        joint = (
            alphas[t][:, None]
            + trans.matrix
            + (emissions[t + 1] + betas[t + 1])[None, :]
            - log_z
        )
        d_matrix += np.exp(joint)
    np.add.at(d_matrix, (gold[:-1], gold[1:]), -1.0)

    d_start = marginals[0].copy()
    d_start[gold[0]] -= 1.0
    d_end = marginals[-1].copy()
    d_end[gold[-1]] -= 1.0
    return float(loss), d_emissions, d_matrix, d_start, d_end


def bio_constraint_penalty(tagset):
    """Additive penalties forbidding transitions into I-X from anything but
    B-X/I-X, including at sentence start. Returns (matrix_penalty,
    start_penalty) to add to transition scores."""
    t = len(tagset)
    matrix = np.zeros((t, t))
    start = np.zeros(t)
    for j, label in enumerate(tagset.labels):
        if not label.startswith("I-"):
            continue
        cls = label[2:]
        allowed = {f"B-{cls}", f"I-{cls}"}
        start[j] = CONSTRAINT_PENALTY
        for i, prev in enumerate(tagset.labels):
            if prev not in allowed:
                matrix[i, j] = CONSTRAINT_PENALTY
    return matrix, start
