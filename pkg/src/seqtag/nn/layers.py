"""Neural layers with forward passes and hand-derived backward passes.

Every layer follows the same protocol: ``forward`` returns (output, cache)
and mutates nothing, ``backward(d_out, cache)`` accumulates parameter
gradients into the ParamStore and returns the gradient w.r.t. the layer
input. Caches travel with the caller, so forward passes on a shared model
are thread-safe.
"""

import numpy as np

from ..kernels import lstm_forward, lstm_backward
from .params import uniform_init

__all__ = [
    "EmbeddingTable",
    "CharCNN",
    "BiLstm",
    "MultiHeadAttention",
    "Linear",
    "dropout_apply",
    "Dropout",
    "softmax_rows",
]


def softmax_rows(x):
    """Row-wise softmax, stable under large scores."""
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


class EmbeddingTable:
    """Index -> row lookup over a trainable table. Index 0 is the unknown
    slot by convention; callers map out-of-vocabulary items to it."""

    def __init__(self, store, name, vocab_size, dim, rng, frozen=False):
        self.name = name
        self.dim = dim
        self.frozen = frozen
        self.table = store.add(name, uniform_init(rng, (vocab_size, dim), dim))
        self._store = store

    def lookup(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.table.shape[0]):
            raise ValueError(
                f"embedding index out of range for table {self.name!r} "
                f"({self.table.shape[0]} rows)"
            )
        return self.table[indices], indices

    def backward(self, d_out, indices):
        if self.frozen:
            return
        np.add.at(self._store.grad(self.name), indices, d_out)


class CharCNN:
    """Character embeddings -> 1-D convolution -> ReLU -> max-pool, giving a
    fixed-size feature vector per word. Pooling gradient goes to the first
    maximal position."""

    def __init__(self, store, prefix, n_chars, char_dim, kernel, filters, rng):
        if kernel < 1 or filters < 1:
            raise ValueError("kernel size and filter count must be positive")
        self.kernel = kernel
        self.filters = filters
        self.char_dim = char_dim
        self.chars = EmbeddingTable(store, f"{prefix}.chars", n_chars, char_dim, rng)
        self.w = store.add(
            f"{prefix}.w", uniform_init(rng, (kernel * char_dim, filters), kernel * char_dim)
        )
        self.b = store.add(f"{prefix}.b", np.zeros(filters))
        self._store = store
        self._prefix = prefix

    def forward(self, char_indices):
        emb, indices = self.chars.lookup(char_indices)
        m = emb.shape[0]
        if m < self.kernel:  # zero-pad short words up to one window
            emb = np.vstack([emb, np.zeros((self.kernel - m, self.char_dim))])
        n_pos = emb.shape[0] - self.kernel + 1
        windows = np.empty((n_pos, self.kernel * self.char_dim))
        for p in range(n_pos):
            windows[p] = emb[p:p + self.kernel].ravel()
        z = windows @ self.w + self.b
        r = np.maximum(z, 0.0)
        argmax = np.argmax(r, axis=0)
        out = r[argmax, np.arange(self.filters)]
        return out, (indices, m, windows, z, argmax)

    def backward(self, d_out, cache):
        indices, m, windows, z, argmax = cache
        dz = np.zeros_like(z)
        cols = np.arange(self.filters)
        dz[argmax, cols] = d_out * (z[argmax, cols] > 0.0)
        self._store.accumulate(f"{self._prefix}.w", windows.T @ dz)
        self._store.accumulate(f"{self._prefix}.b", dz.sum(axis=0))
        d_windows = dz @ self.w.T
        d_emb = np.zeros((max(m, self.kernel), self.char_dim))
        for p in range(d_windows.shape[0]):
            d_emb[p:p + self.kernel] += d_windows[p].reshape(self.kernel, self.char_dim)
        self.chars.backward(d_emb[:m], indices)


class _LstmDirection:
    def __init__(self, store, prefix, input_dim, hidden, rng):
        self.hidden = hidden
        self.w_x = store.add(f"{prefix}.w_x", uniform_init(rng, (input_dim, 4 * hidden), input_dim))
        self.w_h = store.add(f"{prefix}.w_h", uniform_init(rng, (hidden, 4 * hidden), hidden))
        self.b = store.add(f"{prefix}.b", np.zeros(4 * hidden))
        self._store = store
        self._prefix = prefix

    def forward(self, x):
        zeros = np.zeros(self.hidden)
        xw = x @ self.w_x + self.b
        hs, cs, tanh_cs, gates = lstm_forward(xw, self.w_h, zeros, zeros)
        return hs, (x, hs, cs, tanh_cs, gates)

    def backward(self, d_hs, cache):
        x, hs, cs, tanh_cs, gates = cache
        zeros = np.zeros(self.hidden)
        d_xw, d_wh, _, _ = lstm_backward(
            np.ascontiguousarray(d_hs), hs, cs, tanh_cs, gates, self.w_h, zeros, zeros
        )
        self._store.accumulate(f"{self._prefix}.w_x", x.T @ d_xw)
        self._store.accumulate(f"{self._prefix}.w_h", d_wh)
        self._store.accumulate(f"{self._prefix}.b", d_xw.sum(axis=0))
        return d_xw @ self.w_x.T


class BiLstm:
    """Stack of bidirectional LSTM layers; each position's output is the
    concatenation of the forward and backward hidden states (n, 2h)."""

    def __init__(self, store, prefix, input_dim, hidden, layers, rng):
        if layers < 1:
            raise ValueError("BiLSTM needs at least one layer")
        self.hidden = hidden
        self.layers = []
        d = input_dim
        for l in range(layers):
            fw = _LstmDirection(store, f"{prefix}.l{l}.fw", d, hidden, rng)
            bw = _LstmDirection(store, f"{prefix}.l{l}.bw", d, hidden, rng)
            self.layers.append((fw, bw))
            d = 2 * hidden
        self.output_dim = 2 * hidden

    def forward(self, x):
        caches = []
        for fw, bw in self.layers:
            h_f, cache_f = fw.forward(np.ascontiguousarray(x))
            x_rev = np.ascontiguousarray(x[::-1])
            h_b_rev, cache_b = bw.forward(x_rev)
            x = np.concatenate([h_f, h_b_rev[::-1]], axis=1)
            caches.append((cache_f, cache_b))
        return x, caches

    def backward(self, d_out, caches):
        h = self.hidden
        for (fw, bw), (cache_f, cache_b) in zip(reversed(self.layers), reversed(caches)):
            d_f = fw.backward(d_out[:, :h], cache_f)
            d_b_rev = bw.backward(np.ascontiguousarray(d_out[:, h:][::-1]), cache_b)
            d_out = d_f + d_b_rev[::-1]
        return d_out


class MultiHeadAttention:
    """Scaled dot-product self-attention over all positions (no mask), with
    per-head softmax, head concatenation, and an output projection. Output
    shape equals input shape.

    The query/key/value projections carry no bias: a key bias shifts every
    score in a softmax row equally, so it can never affect the output and
    its gradient is identically zero (which also breaks finite-difference
    verification). Only the output projection has a bias."""

    def __init__(self, store, prefix, dim, heads, rng):
        if dim % heads != 0:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self._store = store
        self._prefix = prefix
        self.w_q = store.add(f"{prefix}.w_q", uniform_init(rng, (dim, dim), dim))
        self.w_k = store.add(f"{prefix}.w_k", uniform_init(rng, (dim, dim), dim))
        self.w_v = store.add(f"{prefix}.w_v", uniform_init(rng, (dim, dim), dim))
        self.w_o = store.add(f"{prefix}.w_o", uniform_init(rng, (dim, dim), dim))
        self.b_o = store.add(f"{prefix}.b_o", np.zeros(dim))

    def _split(self, x):
        n = x.shape[0]
        return x.reshape(n, self.heads, self.head_dim).transpose(1, 0, 2)

    def forward(self, x):
        n = x.shape[0]
        q = self._split(x @ self.w_q)
        k = self._split(x @ self.w_k)
        v = self._split(x @ self.w_v)
        scale = 1.0 / np.sqrt(self.head_dim)
        scores = np.einsum("hid,hjd->hij", q, k) * scale
        attn = softmax_rows(scores)
        heads_out = np.einsum("hij,hjd->hid", attn, v)
        concat = heads_out.transpose(1, 0, 2).reshape(n, self.dim)
        y = concat @ self.w_o + self.b_o
        return y, (x, q, k, v, attn, concat)

    def backward(self, d_y, cache):
        x, q, k, v, attn, concat = cache
        n = x.shape[0]
        pre = self._prefix
        acc = self._store.accumulate
        acc(f"{pre}.w_o", concat.T @ d_y)
        acc(f"{pre}.b_o", d_y.sum(axis=0))
        d_concat = d_y @ self.w_o.T
        d_heads = self._split(d_concat)
        d_attn = np.einsum("hid,hjd->hij", d_heads, v)
        d_v = np.einsum("hij,hid->hjd", attn, d_heads)
        # softmax backward per row: a * (g - sum(g * a))
        inner = np.sum(d_attn * attn, axis=2, keepdims=True)
        d_scores = attn * (d_attn - inner) / np.sqrt(self.head_dim)
        d_q = np.einsum("hij,hjd->hid", d_scores, k)
        d_k = np.einsum("hij,hid->hjd", d_scores, q)
        d_x = np.zeros_like(x)
        for name, d_proj, w in (("q", d_q, self.w_q), ("k", d_k, self.w_k), ("v", d_v, self.w_v)):
            flat = d_proj.transpose(1, 0, 2).reshape(n, self.dim)
            acc(f"{pre}.w_{name}", x.T @ flat)
            d_x += flat @ w.T
        return d_x


class Linear:
    def __init__(self, store, prefix, d_in, d_out, rng):
        self.w = store.add(f"{prefix}.w", uniform_init(rng, (d_in, d_out), d_in))
        self.b = store.add(f"{prefix}.b", np.zeros(d_out))
        self._store = store
        self._prefix = prefix

    def forward(self, x):
        return x @ self.w + self.b, x

    def backward(self, d_y, cache):
        x = cache
        self._store.accumulate(f"{self._prefix}.w", x.T @ d_y)
        self._store.accumulate(f"{self._prefix}.b", d_y.sum(axis=0))
        return d_y @ self.w.T


def dropout_apply(x, rate, mode, rng):
    """Inverted dropout: zero each element with probability ``rate`` and
    scale survivors by 1/(1-rate) in train mode; identity in eval mode.
    Returns (output, mask); mask is None when nothing was dropped."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep, keep


class Dropout:
    def __init__(self, rate):
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, mode, rng):
        return dropout_apply(x, self.rate, mode, rng)

    def backward(self, d_y, mask):
        return d_y if mask is None else d_y * mask
