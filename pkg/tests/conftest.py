"""Shared test helpers: tolerance checks and hand-buildable bundles."""

import numpy as np

from metaselect import RunBundle, SynthConfig

# agreement bar between the engine and the naive reference route
REL_TOL = 1e-9


def hybrid_rel_err(a, b):
    """Elementwise |a-b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return np.abs(a - b) / scale


def assert_close(a, b, tol=REL_TOL, what=""):
    err = hybrid_rel_err(a, b)
    worst = float(err.max()) if err.size else 0.0
    assert worst <= tol, f"{what or 'values'} disagree: max rel err {worst:.3e}"


def logprobs(prob_rows):
    """float32 log-probabilities from exact probability rows."""
    p = np.asarray(prob_rows, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(p).astype(np.float32)


def make_bundle(static_probs, epoch_probs=None, seed_probs=None,
                clf_embedding=None, mc_probs=None, sent_embedding=None,
                token_logprobs=None, labels=None, notes=""):
    """Hand bundle from probability arrays; stacks become log-probabilities."""
    static = np.asarray(static_probs, dtype=np.float32)
    n = static.shape[0]
    if epoch_probs is None:
        epoch_probs = static[None]
    if seed_probs is None:
        seed_probs = static[None]
    if clf_embedding is None:
        clf_embedding = np.linspace(0.0, 1.0, 2 * n).reshape(n, 2)
    return RunBundle(
        static_probs=static,
        epoch_logprobs=logprobs(epoch_probs),
        seed_logprobs=logprobs(seed_probs),
        clf_embedding=np.asarray(clf_embedding, dtype=np.float32),
        mc_logprobs=None if mc_probs is None else logprobs(mc_probs),
        sent_embedding=None if sent_embedding is None
        else np.asarray(sent_embedding, dtype=np.float32),
        token_logprobs=None if token_logprobs is None
        else [np.asarray(s, dtype=np.float32) for s in token_logprobs],
        labels=None if labels is None else np.asarray(labels, dtype=np.int32),
        notes=notes,
    )


def draw_config(rng):
    """Random generator config; sizes keep every kNN candidate set viable at K=5."""
    c = int(rng.integers(2, 6))
    lo = max(8, 6 * c)
    n = int(rng.integers(lo, 65))
    return SynthConfig(
        n_samples=n,
        n_classes=c,
        epochs=int(rng.integers(1, 9)),
        seed_models=int(rng.integers(1, 7)),
        mc_passes=int(rng.integers(1, 7)),
        clf_dim=int(rng.integers(3, 17)),
        sent_dim=int(rng.integers(3, 13)),
        separation=float(rng.uniform(1.5, 6.0)),
        planted_noise_fraction=float(rng.choice([0.0, 0.1, 0.2])),
        rng_seed=int(rng.integers(0, 2**31)),
    )
