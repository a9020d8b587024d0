"""Run-bundle data model and its on-disk format.

A bundle is a directory holding ``manifest.json`` plus raw tensor payloads
(float32/int32, row-major, little-endian).  It packages every serialized
model output needed downstream: the final model's class probabilities,
per-epoch and per-seed (and optionally MC-dropout) log-probability stacks,
classifier and sentence-encoder embeddings, optional per-token
log-probabilities, and optional gold labels.
"""

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensorio
from .errors import (
    EmptyBundle,
    IoFailure,
    LabelOutOfRange,
    ManifestError,
    MissingFile,
    NonFiniteTensor,
    ProbabilityRowNotNormalized,
    ShapeMismatch,
)

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1

# float32 storage error budgets
PROB_SUM_TOL = 1e-6
LOGPROB_SUM_TOL = 1e-5

GOLD = "gold"
PSEUDO = "pseudo"


@dataclass
class RunBundle:
    """All serialized model outputs for one dataset.

    Required tensors: ``static_probs`` [N,C], ``epoch_logprobs`` [E,N,C],
    ``seed_logprobs`` [T,N,C], ``clf_embedding`` [N,d].  Optional:
    ``mc_logprobs`` [M,N,C], ``sent_embedding`` [N,d'], ``token_logprobs``
    (ragged per-sample float32 sequences), ``labels`` [N].
    All float tensors are float32; labels are int32.
    """

    static_probs: np.ndarray
    epoch_logprobs: np.ndarray
    seed_logprobs: np.ndarray
    clf_embedding: np.ndarray
    mc_logprobs: np.ndarray | None = None
    sent_embedding: np.ndarray | None = None
    token_logprobs: list | None = None
    labels: np.ndarray | None = None
    notes: str = ""

    @property
    def n_samples(self):
        return int(self.static_probs.shape[0])

    @property
    def n_classes(self):
        return int(self.static_probs.shape[1])

    @property
    def n_epochs(self):
        return int(self.epoch_logprobs.shape[0])

    @property
    def n_seed_models(self):
        return int(self.seed_logprobs.shape[0])

    @property
    def n_mc_passes(self):
        return 0 if self.mc_logprobs is None else int(self.mc_logprobs.shape[0])

    @property
    def has_labels(self):
        return self.labels is not None

    def without_labels(self):
        """Copy of this bundle with gold labels dropped (pseudo-label mode)."""
        return replace(self, labels=None)


def _check_prob_rows(name, probs):
    # rows must be near-simplex points: nonnegative within float32 noise, sum 1
    p = probs.astype(np.float64, copy=False)
    if p.size and float(p.min()) < -1e-6:
        row = int(np.argmin(p.min(axis=-1)))
        raise ProbabilityRowNotNormalized(
            name, row, float(p.reshape(-1, p.shape[-1])[row].sum()), "negative entry"
        )
    totals = p.sum(axis=-1)
    bad = np.abs(totals - 1.0) > PROB_SUM_TOL
    if bad.any():
        row = int(np.argmax(bad.reshape(-1)))
        raise ProbabilityRowNotNormalized(name, row, float(totals.reshape(-1)[row]))


def _check_logprob_rows(name, logprobs):
    totals = np.exp(logprobs.astype(np.float64, copy=False)).sum(axis=-1)
    bad = np.abs(totals - 1.0) > LOGPROB_SUM_TOL
    if bad.any():
        row = int(np.argmax(bad.reshape(-1)))
        raise ProbabilityRowNotNormalized(
            name, row, float(totals.reshape(-1)[row]), "after exponentiation"
        )


def validate_bundle(bundle):
    """Check every RunBundle invariant; raise a BundleError on the first violation."""
    sp = bundle.static_probs
    if sp.ndim != 2:
        raise ShapeMismatch(f"static_probs must be [N,C], got shape {sp.shape}")
    n, c = sp.shape
    if n == 0:
        raise EmptyBundle("bundle has zero samples")
    if c < 2:
        raise ShapeMismatch(f"n_classes must be >= 2, got {c}")

    for name, t, want_rank in (
        ("epoch_logprobs", bundle.epoch_logprobs, 3),
        ("seed_logprobs", bundle.seed_logprobs, 3),
        ("mc_logprobs", bundle.mc_logprobs, 3),
    ):
        if t is None:
            continue
        if t.ndim != want_rank or t.shape[0] < 1:
            raise ShapeMismatch(f"{name} must be [K,N,C] with K >= 1, got {t.shape}")
        if t.shape[1] != n or t.shape[2] != c:
            raise ShapeMismatch(
                f"{name} shape {t.shape} disagrees with N={n}, C={c}"
            )

    for name, t in (
        ("clf_embedding", bundle.clf_embedding),
        ("sent_embedding", bundle.sent_embedding),
    ):
        if t is None:
            continue
        if t.ndim != 2 or t.shape[0] != n or t.shape[1] < 1:
            raise ShapeMismatch(f"{name} shape {t.shape} disagrees with N={n}")
        if not np.isfinite(t).all():
            raise NonFiniteTensor(f"{name} contains NaN/Inf")

    if bundle.token_logprobs is not None:
        if len(bundle.token_logprobs) != n:
            raise ShapeMismatch(
                f"token_logprobs has {len(bundle.token_logprobs)} sequences, N={n}"
            )
        for i, seq in enumerate(bundle.token_logprobs):
            if np.asarray(seq).ndim != 1:
                raise ShapeMismatch(f"token_logprobs[{i}] is not a 1-D sequence")
            if not np.isfinite(seq).all():
                raise NonFiniteTensor(f"token_logprobs[{i}] contains NaN/Inf")

    _check_prob_rows("static_probs", sp)
    _check_logprob_rows("epoch_logprobs", bundle.epoch_logprobs)
    _check_logprob_rows("seed_logprobs", bundle.seed_logprobs)
    if bundle.mc_logprobs is not None:
        _check_logprob_rows("mc_logprobs", bundle.mc_logprobs)

    if bundle.labels is not None:
        y = bundle.labels
        if y.ndim != 1 or y.shape[0] != n:
            raise ShapeMismatch(f"labels shape {y.shape} disagrees with N={n}")
        if y.size and (int(y.min()) < 0 or int(y.max()) >= c):
            bad = int(np.argmax((y < 0) | (y >= c)))
            raise LabelOutOfRange(
                f"labels[{bad}]={int(y[bad])} outside [0,{c})"
            )
    return bundle


def resolve_labels(bundle):
    """Gold labels when present, else argmax pseudo-labels from static_probs.

    Ties in the argmax break toward the lowest class index.  The returned
    vector is int64 and independent of tensor memory layout.
    """
    if bundle.labels is not None:
        return bundle.labels.astype(np.int64)
    return np.argmax(np.ascontiguousarray(bundle.static_probs), axis=1).astype(np.int64)


def label_source(bundle):
    """'gold' or 'pseudo', matching what resolve_labels will return."""
    return GOLD if bundle.has_labels else PSEUDO


def _as_f32(arr):
    return np.ascontiguousarray(arr, dtype=np.float32)


def _as_i32(arr):
    return np.ascontiguousarray(arr, dtype=np.int32)


def write_bundle(bundle, dir_path):
    """Serialize a validated bundle; round-trips bit-exactly through load_bundle."""
    validate_bundle(bundle)
    try:
        os.makedirs(dir_path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {dir_path}: {exc}") from exc

    tensors = {}
    tensors["static_probs"] = _as_f32(bundle.static_probs)
    tensors["epoch_logprobs"] = _as_f32(bundle.epoch_logprobs)
    tensors["seed_logprobs"] = _as_f32(bundle.seed_logprobs)
    if bundle.mc_logprobs is not None:
        tensors["mc_logprobs"] = _as_f32(bundle.mc_logprobs)
    tensors["clf_embedding"] = _as_f32(bundle.clf_embedding)
    if bundle.sent_embedding is not None:
        tensors["sent_embedding"] = _as_f32(bundle.sent_embedding)
    if bundle.token_logprobs is not None:
        seqs = [_as_f32(s) for s in bundle.token_logprobs]
        flat = np.concatenate(seqs) if seqs else np.zeros(0, np.float32)
        tensors["token_logprobs_flat"] = _as_f32(flat)
        tensors["token_lengths"] = _as_i32([len(s) for s in seqs])
    if bundle.labels is not None:
        tensors["labels"] = _as_i32(bundle.labels)

    entries = []
    for name, arr in tensors.items():
        fname = f"{name}.{tensorio.dtype_tag(arr)}"
        tensorio.write_tensor(os.path.join(dir_path, fname), arr)
        entries.append(tensorio.tensor_entry(name, fname, arr))

    manifest = {
        "version": FORMAT_VERSION,
        "n_samples": bundle.n_samples,
        "n_classes": bundle.n_classes,
        "tensors": entries,
        "has_labels": bundle.has_labels,
        "notes": bundle.notes,
    }
    try:
        with open(os.path.join(dir_path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write manifest: {exc}") from exc


def load_bundle(dir_path):
    """Load and fully validate a bundle directory."""
    mpath = os.path.join(dir_path, MANIFEST_NAME)
    if not os.path.isfile(mpath):
        raise MissingFile(f"no {MANIFEST_NAME} in {dir_path}")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse {mpath}: {exc}") from exc

    for key in ("version", "n_samples", "n_classes", "tensors", "has_labels", "notes"):
        if key not in manifest:
            raise ManifestError(f"manifest missing key {key!r}")
    if manifest["version"] != FORMAT_VERSION:
        raise ManifestError(f"unsupported manifest version {manifest['version']!r}")

    n = int(manifest["n_samples"])
    if n == 0:
        raise EmptyBundle("manifest declares zero samples")

    arrays = {}
    for entry in manifest["tensors"]:
        name = entry["name"]
        arrays[name] = tensorio.read_tensor(
            os.path.join(dir_path, entry["path"]), entry["shape"], entry["dtype"]
        )

    for required in ("static_probs", "epoch_logprobs", "seed_logprobs", "clf_embedding"):
        if required not in arrays:
            raise ManifestError(f"manifest lacks required tensor {required!r}")

    token_logprobs = None
    if "token_logprobs_flat" in arrays or "token_lengths" in arrays:
        if "token_logprobs_flat" not in arrays or "token_lengths" not in arrays:
            raise ManifestError("token tensors must appear as flat+lengths pair")
        lengths = arrays["token_lengths"].astype(np.int64)
        flat = arrays["token_logprobs_flat"]
        if lengths.shape != (n,):
            raise ShapeMismatch(f"token_lengths shape {lengths.shape}, N={n}")
        if int(lengths.sum()) != flat.shape[0]:
            raise ShapeMismatch(
                f"token_logprobs_flat has {flat.shape[0]} values, "
                f"lengths sum to {int(lengths.sum())}"
            )
        offsets = np.cumsum(lengths)[:-1]
        token_logprobs = [np.ascontiguousarray(s) for s in np.split(flat, offsets)]

    labels = arrays.get("labels")
    if manifest["has_labels"] != (labels is not None):
        raise ManifestError("has_labels flag disagrees with labels tensor presence")

    bundle = RunBundle(
        static_probs=arrays["static_probs"],
        epoch_logprobs=arrays["epoch_logprobs"],
        seed_logprobs=arrays["seed_logprobs"],
        clf_embedding=arrays["clf_embedding"],
        mc_logprobs=arrays.get("mc_logprobs"),
        sent_embedding=arrays.get("sent_embedding"),
        token_logprobs=token_logprobs,
        labels=labels,
        notes=str(manifest["notes"]),
    )
    if bundle.n_samples != n or bundle.n_classes != int(manifest["n_classes"]):
        raise ShapeMismatch(
            f"manifest declares N={n}, C={manifest['n_classes']} but static_probs is "
            f"{bundle.static_probs.shape}"
        )
    return validate_bundle(bundle)
