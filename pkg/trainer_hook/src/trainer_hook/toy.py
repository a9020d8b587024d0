"""Toy training stack for exercising ExportSession end to end.

A tiny numpy MLP trained on Gaussian blobs, with dropout available at
inference for MC passes; a unigram scorer standing in for an MLM; and
deterministic bag-of-token sentence embeddings.  None of it aspires to
realism: the point is a complete, reproducible training session whose
captures satisfy every bundle input the engine can consume.
"""

import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .session import ExportSession


@dataclass
class ToyTask:
    """Class-labelled blob features plus a synthetic text per sample."""

    x: np.ndarray
    y: np.ndarray
    texts: list

    @property
    def n_samples(self):
        return int(self.x.shape[0])

    @property
    def n_classes(self):
        return int(self.y.max()) + 1


def make_toy_task(n_samples, n_classes, input_dim=6, vocab_size=20,
                  rng_seed=0):
    """Balanced Gaussian blobs in dataset order, with toy word sequences."""
    rng = np.random.default_rng(rng_seed)
    centers = rng.normal(0.0, 4.0, size=(n_classes, input_dim))
    y = np.arange(n_samples) % n_classes
    x = centers[y] + rng.normal(0.0, 1.0, size=(n_samples, input_dim))
    texts = []
    for _ in range(n_samples):
        length = int(rng.integers(3, 9))
        tokens = rng.integers(0, vocab_size, size=length)
        texts.append(" ".join(f"w{t}" for t in tokens))
    return ToyTask(x=x, y=y.astype(np.int64), texts=texts)


class TinyMlp:
    """One-hidden-layer softmax classifier trained by full-batch gradient steps.

    Dropout is off during training and applied only on request at
    inference, which is exactly the MC-dropout capture discipline.
    """

    def __init__(self, input_dim, hidden_dim, n_classes, seed):
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, 0.4, size=(input_dim, hidden_dim))
        self.b1 = np.zeros(hidden_dim)
        self.w2 = rng.normal(0.0, 0.4, size=(hidden_dim, n_classes))
        self.b2 = np.zeros(n_classes)

    def _hidden(self, x, drop_rng=None, drop_p=0.5):
        h = np.tanh(x @ self.w1 + self.b1)
        if drop_rng is not None:
            mask = (drop_rng.random(h.shape) >= drop_p) / (1.0 - drop_p)
            h = h * mask
        return h

    def _logits(self, x, drop_rng=None):
        return self._hidden(x, drop_rng) @ self.w2 + self.b2

    def log_probs(self, x):
        return log_softmax(self._logits(x), axis=1)

    def probs(self, x):
        return softmax(self._logits(x), axis=1)

    def mc_log_probs(self, x, pass_seed):
        """One dropout-active inference pass under a fixed per-pass seed."""
        rng = np.random.default_rng(pass_seed)
        return log_softmax(self._logits(x, drop_rng=rng), axis=1)

    def embedding(self, x, layer):
        """Per-sample representation from the selected layer."""
        if layer == "input":
            return np.asarray(x, dtype=np.float64)
        if layer == "hidden":
            return self._hidden(x)
        raise ValueError(f"unknown embedding layer {layer!r}; "
                         "use 'input' or 'hidden'")

    def train_epoch(self, x, y, lr=0.5):
        """One full-batch cross-entropy gradient step."""
        n = x.shape[0]
        h = self._hidden(x)
        p = softmax(h @ self.w2 + self.b2, axis=1)
        g_logits = p.copy()
        g_logits[np.arange(n), y] -= 1.0
        g_logits /= n
        g_h = g_logits @ self.w2.T
        g_pre = g_h * (1.0 - h * h)
        self.w2 -= lr * (h.T @ g_logits)
        self.b2 -= lr * g_logits.sum(axis=0)
        self.w1 -= lr * (x.T @ g_pre)
        self.b1 -= lr * g_pre.sum(axis=0)


def unigram_scorer(corpus):
    """MLM stand-in: score each whitespace token by corpus log-frequency."""
    counts = {}
    total = 0
    for text in corpus:
        for token in text.split():
            counts[token] = counts.get(token, 0) + 1
            total += 1

    def score(texts):
        rows = []
        for text in texts:
            tokens = text.split()
            rows.append(np.asarray(
                [np.log(counts[t] / total) for t in tokens],
                dtype=np.float32,
            ))
        return rows

    return score


def _token_vector(token, dim, seed):
    # stable per-token vector; crc32 keeps it independent of hash salting
    key = zlib.crc32(token.encode("utf-8"))
    return np.random.default_rng([seed, key]).normal(0.0, 1.0, size=dim)


def sentence_embeddings(texts, dim=8, seed=0):
    """Deterministic bag-of-token embeddings: mean of per-token vectors."""
    out = np.zeros((len(texts), dim))
    for i, text in enumerate(texts):
        tokens = text.split()
        if tokens:
            out[i] = np.mean(
                [_token_vector(t, dim, seed) for t in tokens], axis=0
            )
    return out


def train_toy_model(task, seed, epochs, hidden_dim=16, lr=0.5):
    model = TinyMlp(task.x.shape[1], hidden_dim, task.n_classes, seed=seed)
    for _ in range(epochs):
        model.train_epoch(task.x, task.y, lr=lr)
    return model


def run_toy_session(out_dir, n_samples=24, n_classes=3, epochs=4,
                    seeds=(0, 1, 2), mc_passes=3, embedding_layer="hidden",
                    input_dim=6, hidden_dim=16, lr=0.5, sent_dim=8,
                    rng_seed=0, with_labels=True):
    """Train the toy model, capture everything, and export a bundle.

    Returns (bundle_dir, task).  The first declared seed trains the main
    model whose epoch trajectory, static probabilities, embeddings, and MC
    passes are captured; every other seed contributes one ensemble member.
    """
    task = make_toy_task(n_samples, n_classes, input_dim=input_dim,
                         rng_seed=rng_seed)
    session = ExportSession(
        out_dir,
        n_samples=task.n_samples,
        n_classes=n_classes,
        epochs=epochs,
        seeds=seeds,
        mc_passes=mc_passes,
        embedding_layer=embedding_layer,
        mlm_source=unigram_scorer(task.texts),
        notes="toy mlp session",
    )

    main_seed = seeds[0] if seeds else rng_seed
    main = TinyMlp(input_dim, hidden_dim, n_classes, seed=main_seed)
    for epoch in range(epochs):
        main.train_epoch(task.x, task.y, lr=lr)
        session.capture_epoch(epoch, main.log_probs(task.x))

    session.set_static_probs(main.probs(task.x))
    session.set_embeddings(
        main.embedding(task.x, embedding_layer),
        sentence_embeddings(task.texts, dim=sent_dim, seed=rng_seed),
    )
    for seed in seeds:
        member = main if seed == main_seed else \
            train_toy_model(task, seed, epochs, hidden_dim=hidden_dim, lr=lr)
        session.capture_seed_model(seed, member.log_probs(task.x))
    for mc_pass in range(mc_passes):
        session.capture_mc_pass(main.mc_log_probs(task.x, pass_seed=1000 + mc_pass))
    if with_labels:
        session.set_labels(task.y)
    session.set_texts(task.texts)
    return session.finalize(), task
