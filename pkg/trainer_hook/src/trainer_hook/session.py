"""Capture model outputs from a training loop and export a run bundle.

An ExportSession collects per-epoch, per-seed, and per-MC-pass class
log-probabilities plus embeddings, labels, and token scores, then writes
the bundle directory format the metaselect engine reads: ``manifest.json``
plus raw row-major little-endian tensor payloads.  The writer here is
self-contained; the engine is consumed only through that documented
format, never imported.

Sample order is the dataset's canonical order and must be identical
across every capture.  Shapes are checked the moment data arrives, so a
session can never finalize tensors that violate the bundle contract.
"""

import json
import os

import numpy as np

from .errors import IncompleteCapture, OutOfOrderEpoch, ShapeMismatch

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"

_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


def _as_f32(arr):
    # float64 model outputs down-cast with IEEE round-to-nearest
    return np.ascontiguousarray(arr, dtype=np.float32)


class ExportSession:
    """Single-writer capture session for one dataset and one output directory.

    The constructor declares the capture plan: how many epochs, which
    ensemble seeds, how many MC-dropout passes, which embedding layer the
    caller extracts, and the callable that turns the raw texts into
    per-token log-probabilities.  ``finalize`` refuses to write until the
    plan is fully satisfied.
    """

    def __init__(self, out_dir, n_samples, n_classes, epochs, seeds=(),
                 mc_passes=0, embedding_layer="hidden", mlm_source=None,
                 notes=""):
        if n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {n_samples}")
        if n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {n_classes}")
        if epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {epochs}")
        if mc_passes < 0:
            raise ValueError(f"mc_passes must be >= 0, got {mc_passes}")
        seeds = tuple(seeds)
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be distinct")

        self.out_dir = os.fspath(out_dir)
        self.n_samples = int(n_samples)
        self.n_classes = int(n_classes)
        self.epochs = int(epochs)
        self.seeds = seeds
        self.mc_passes = int(mc_passes)
        self.embedding_layer = embedding_layer
        self.mlm_source = mlm_source
        self.notes = notes

        self._epoch_slabs = []
        self._seed_slabs = {}
        self._mc_slabs = []
        self._static = None
        self._clf = None
        self._sent = None
        self._labels = None
        self._texts = None

    def _slab(self, what, arr):
        got = np.asarray(arr)
        if got.shape != (self.n_samples, self.n_classes):
            raise ShapeMismatch(
                f"{what} must be [{self.n_samples} x {self.n_classes}], "
                f"got shape {got.shape}"
            )
        return _as_f32(got)

    def capture_epoch(self, epoch, log_probs):
        """Record the end-of-epoch [N x C] log-probability slab."""
        expected = len(self._epoch_slabs)
        if expected >= self.epochs:
            raise OutOfOrderEpoch(
                f"all {self.epochs} declared epochs are already captured"
            )
        if epoch != expected:
            raise OutOfOrderEpoch(f"expected epoch {expected}, got {epoch}")
        self._epoch_slabs.append(self._slab("epoch log-probs", log_probs))

    def capture_seed_model(self, seed, log_probs):
        """Record the final [N x C] log-probability slab of one ensemble member."""
        if seed not in self.seeds:
            raise ValueError(f"seed {seed!r} was not declared for this session")
        if seed in self._seed_slabs:
            raise ValueError(f"seed {seed!r} was already captured")
        self._seed_slabs[seed] = self._slab("seed-model log-probs", log_probs)

    def capture_mc_pass(self, log_probs):
        """Record one dropout-active inference pass, in pass order."""
        if len(self._mc_slabs) >= self.mc_passes:
            raise ValueError(
                f"all {self.mc_passes} declared mc passes are already captured"
            )
        self._mc_slabs.append(self._slab("mc-pass log-probs", log_probs))

    def set_static_probs(self, probs):
        """Final-model class probabilities, [N x C] rows on the simplex."""
        self._static = self._slab("static probabilities", probs)

    def set_embeddings(self, clf_embedding, sent_embedding=None):
        """Per-sample embeddings from the layer named by ``embedding_layer``."""
        self._clf = self._embedding("classifier embedding", clf_embedding)
        self._sent = None if sent_embedding is None else \
            self._embedding("sentence embedding", sent_embedding)

    def _embedding(self, what, arr):
        got = np.asarray(arr)
        if got.ndim != 2 or got.shape[0] != self.n_samples or got.shape[1] < 1:
            raise ShapeMismatch(
                f"{what} must be [{self.n_samples} x d] with d >= 1, "
                f"got shape {got.shape}"
            )
        return _as_f32(got)

    def set_labels(self, labels):
        got = np.asarray(labels)
        if got.shape != (self.n_samples,):
            raise ShapeMismatch(
                f"labels must be [{self.n_samples}], got shape {got.shape}"
            )
        if got.size and (int(got.min()) < 0 or int(got.max()) >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        self._labels = np.ascontiguousarray(got, dtype=np.int32)

    def set_texts(self, texts):
        """Raw per-sample texts; tokenization and scoring stay inside finalize."""
        if len(texts) != self.n_samples:
            raise ShapeMismatch(
                f"expected {self.n_samples} texts, got {len(texts)}"
            )
        self._texts = [str(t) for t in texts]

    def _check_complete(self):
        if len(self._epoch_slabs) < self.epochs:
            raise IncompleteCapture(
                f"captured {len(self._epoch_slabs)} of {self.epochs} epochs"
            )
        missing = [s for s in self.seeds if s not in self._seed_slabs]
        if missing:
            raise IncompleteCapture(f"seed models never captured: {missing}")
        if len(self._mc_slabs) < self.mc_passes:
            raise IncompleteCapture(
                f"captured {len(self._mc_slabs)} of {self.mc_passes} mc passes"
            )
        if self._static is None:
            raise IncompleteCapture("static probabilities were never set")
        if self._clf is None:
            raise IncompleteCapture("classifier embedding was never set")
        if (self._texts is None) != (self.mlm_source is None):
            raise IncompleteCapture(
                "texts and an MLM source must be provided together"
            )

    def _token_rows(self):
        if self._texts is None:
            return None
        rows = [np.asarray(r, dtype=np.float32).reshape(-1)
                for r in self.mlm_source(self._texts)]
        if len(rows) != self.n_samples:
            raise ShapeMismatch(
                f"MLM source returned {len(rows)} rows for "
                f"{self.n_samples} texts"
            )
        return rows

    def finalize(self):
        """Write the bundle directory; returns its path."""
        self._check_complete()
        epoch_stack = np.stack(self._epoch_slabs)
        if self.seeds:
            seed_stack = np.stack([self._seed_slabs[s] for s in self.seeds])
        else:
            # no seed models declared: the trained model itself stands in
            # as a single-member ensemble
            seed_stack = epoch_stack[-1:]
        token_rows = self._token_rows()

        os.makedirs(self.out_dir, exist_ok=True)
        entries = []

        def emit(name, arr, tag):
            fname = f"{name}.{tag}"
            data = np.ascontiguousarray(arr, dtype=_DTYPES[tag])
            with open(os.path.join(self.out_dir, fname), "wb") as fh:
                fh.write(data.tobytes())
            entries.append({
                "name": name,
                "path": fname,
                "shape": [int(s) for s in data.shape],
                "dtype": tag,
            })

        emit("static_probs", self._static, "f32")
        emit("epoch_logprobs", epoch_stack, "f32")
        emit("seed_logprobs", seed_stack, "f32")
        if self._mc_slabs:
            emit("mc_logprobs", np.stack(self._mc_slabs), "f32")
        emit("clf_embedding", self._clf, "f32")
        if self._sent is not None:
            emit("sent_embedding", self._sent, "f32")
        if token_rows is not None:
            flat = np.concatenate(token_rows) if token_rows \
                else np.zeros(0, np.float32)
            emit("token_logprobs_flat", flat, "f32")
            emit("token_lengths",
                 np.asarray([len(r) for r in token_rows], dtype=np.int32),
                 "i32")
        if self._labels is not None:
            emit("labels", self._labels, "i32")

        manifest = {
            "version": FORMAT_VERSION,
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "tensors": entries,
            "has_labels": self._labels is not None,
            "notes": self.notes,
        }
        mpath = os.path.join(self.out_dir, MANIFEST_NAME)
        with open(mpath, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
        return self.out_dir
