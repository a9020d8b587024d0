"""The 23 per-sample measures computed from a run bundle.

Five groups: static quantities of the final model (kNN densities,
confidence, entropy, gradient norm), training dynamics over epoch
snapshots, predictive uncertainty over a seed ensemble, the same
uncertainty family over MC-dropout passes, and pre-trained-model
quantities (semantic density, summed token log-likelihood).  Everything
here is a pure function of bundle tensors; no model is ever run.

Conventions shared by all measures: natural logarithm, probabilities
clamped to >= 1e-12 before taking logs (so 0*ln 0 = 0), argmax ties broken
toward the lowest class index, float64 arithmetic internally.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .bundle import GOLD, PSEUDO, resolve_labels
from .errors import (
    EmptyTokenSequence,
    MissingInput,
    TooFewCandidates,
    UnknownMeasure,
)

DEFAULT_KNN_K = 5
PROB_FLOOR = 1e-12
LOG_FLOOR = float(np.log(1e-12))

STATIC = "Static"
TRAINING_DYNAMICS = "TrainingDynamics"
ENSEMBLE = "ModelUncertaintyEnsemble"
MC = "ModelUncertaintyMC"
PRETRAINED = "PretrainedKnowledge"


@dataclass(frozen=True)
class MeasureSpec:
    """Registry entry: canonical name, category, and required bundle fields."""

    name: str
    category: str
    required_inputs: tuple


def _spec(name, category, *required):
    return MeasureSpec(name, category, tuple(required))


# Registry order is the canonical column order everywhere downstream.
REGISTRY = (
    _spec("task_density", STATIC, "clf_embedding"),
    _spec("relative_density", STATIC, "clf_embedding"),
    _spec("static_confidence", STATIC, "static_probs"),
    _spec("static_entropy", STATIC, "static_probs"),
    _spec("badge", STATIC, "static_probs", "clf_embedding"),
    _spec("avg_confidence", TRAINING_DYNAMICS, "epoch_logprobs"),
    _spec("variability", TRAINING_DYNAMICS, "epoch_logprobs"),
    _spec("forgetting", TRAINING_DYNAMICS, "epoch_logprobs"),
    _spec("aum", TRAINING_DYNAMICS, "epoch_logprobs"),
    _spec("ens_el2n", ENSEMBLE, "seed_logprobs"),
    _spec("ens_entropy", ENSEMBLE, "seed_logprobs"),
    _spec("ens_bald", ENSEMBLE, "seed_logprobs"),
    _spec("ens_variation_ratio", ENSEMBLE, "seed_logprobs"),
    _spec("ens_confidence", ENSEMBLE, "seed_logprobs"),
    _spec("ens_variability", ENSEMBLE, "seed_logprobs"),
    _spec("mc_el2n", MC, "mc_logprobs"),
    _spec("mc_entropy", MC, "mc_logprobs"),
    _spec("mc_bald", MC, "mc_logprobs"),
    _spec("mc_variation_ratio", MC, "mc_logprobs"),
    _spec("mc_confidence", MC, "mc_logprobs"),
    _spec("mc_variability", MC, "mc_logprobs"),
    _spec("semantic_density", PRETRAINED, "sent_embedding"),
    _spec("pll", PRETRAINED, "token_logprobs"),
)

REGISTRY_NAMES = tuple(s.name for s in REGISTRY)
_BY_NAME = {s.name: s for s in REGISTRY}


def measure_spec(name):
    """Look up a registry entry by canonical name."""
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownMeasure(name) from None


@dataclass
class MeasureMatrix:
    """Raw per-sample measure values, one column per computed measure.

    Columns follow registry order; `skipped` lists (name, missing_field)
    pairs for measures dropped because an optional bundle field was absent.
    """

    values: np.ndarray
    column_specs: list
    label_source: str
    skipped: list = field(default_factory=list)

    @property
    def names(self):
        return [s.name for s in self.column_specs]

    def column(self, name):
        names = self.names
        if name not in names:
            raise UnknownMeasure(name)
        return self.values[:, names.index(name)]


def _entropy(p):
    # p: [..., C] on the simplex; the clamp keeps 0*ln 0 at exactly 0
    return -np.sum(p * np.log(np.maximum(p, PROB_FLOOR)), axis=-1)


def _query(tree, pts, kk):
    dist, idx = tree.query(pts, k=kk)
    if kk == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    return dist, idx


def _kth_excluding_self(points, k, detail):
    """Kth-NN distance from every point to all the others."""
    n = points.shape[0]
    if n - 1 < k:
        raise TooFewCandidates(detail, k)
    tree = cKDTree(points)
    dist, idx = _query(tree, points, k + 1)
    rows = np.arange(n)
    hits = idx == rows[:, None]
    has_self = hits.any(axis=1)
    self_pos = np.argmax(hits, axis=1)
    # drop the self hit; when duplicates crowd it out of the result every
    # returned distance is zero and dropping any entry is equivalent
    return np.where(has_self & (self_pos < k), dist[:, k], dist[:, k - 1])


def knn_distance(points, candidate_mask, k):
    """Kth-smallest Euclidean distance from each point to its candidate set.

    candidate_mask[i, j] marks j as a candidate for query i; the diagonal
    must be False (a point is never its own candidate).  Returns positive
    distances; density measures negate them.
    """
    pts = np.asarray(points, dtype=np.float64)
    mask = np.asarray(candidate_mask, dtype=bool)
    n = pts.shape[0]
    counts = mask.sum(axis=1)
    if (counts < k).any():
        i = int(np.argmax(counts < k))
        raise TooFewCandidates(f"query {i}", k)
    out = np.empty(n)
    block = max(1, int(2**22 // max(n, 1)))
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        d2[~mask[start:stop]] = np.inf
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        out[start:stop] = np.sqrt(kth)
    return out


def _kth_within(points, members, k, detail):
    """Kth-NN distance among a subset, one value per subset member."""
    if members.size - 1 < k:
        raise TooFewCandidates(detail, k)
    sub = points[members]
    tree = cKDTree(sub)
    dist, idx = _query(tree, sub, k + 1)
    rows = np.arange(members.size)
    hits = idx == rows[:, None]
    has_self = hits.any(axis=1)
    self_pos = np.argmax(hits, axis=1)
    return np.where(has_self & (self_pos < k), dist[:, k], dist[:, k - 1])


def same_class_knn_distance(points, labels, k=DEFAULT_KNN_K):
    """Kth-NN Euclidean distance from each point to others sharing its label."""
    pts = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels)
    out = np.empty(pts.shape[0])
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        out[members] = _kth_within(
            pts, members, k, f"class {int(c)} same-class candidates"
        )
    return out


def _same_other_knn(points, labels, k):
    """Per-point Kth-NN distance within its own class and within the rest."""
    n = points.shape[0]
    d_same = np.empty(n)
    d_other = np.empty(n)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        rest = np.flatnonzero(labels != c)
        if rest.size < k:
            raise TooFewCandidates(f"class {int(c)} other-class candidates", k)
        d_same[members] = _kth_within(
            points, members, k, f"class {int(c)} same-class candidates"
        )
        rest_tree = cKDTree(points[rest])
        rest_dist, _ = _query(rest_tree, points[members], k)
        d_other[members] = rest_dist[:, k - 1]
    return d_same, d_other


def densities(clf_embedding, sent_embedding, labels, k=DEFAULT_KNN_K):
    """Task, relative, and semantic kNN densities.

    Density is the negated Kth-NN Euclidean distance, so crowded points sit
    near zero and isolated points go strongly negative.  Relative density is
    the same-class density minus the other-class density.  semantic density
    is None when no sentence embedding is given.
    """
    pts = np.asarray(clf_embedding, dtype=np.float64)
    y = np.asarray(labels)
    task = -_kth_excluding_self(pts, k, "all-sample candidates")
    d_same, d_other = _same_other_knn(pts, y, k)
    relative = d_other - d_same
    semantic = None
    if sent_embedding is not None:
        spts = np.asarray(sent_embedding, dtype=np.float64)
        semantic = -_kth_excluding_self(spts, k, "all-sample candidates")
    return task, relative, semantic


def static_confidence_entropy(static_probs, labels):
    """Final-model confidence in the label class paired with predictive entropy."""
    p = np.asarray(static_probs, dtype=np.float64)
    y = np.asarray(labels)
    confidence = p[np.arange(p.shape[0]), y]
    return confidence, _entropy(p)


def badge_score(static_probs, labels, clf_embedding):
    """Gradient norm of the linear head: ||p - onehot(y)||_2 * ||z||_2.

    Equal to the Frobenius norm of the outer-product gradient
    (p - onehot(y)) z^T, since ||a b^T||_F = ||a||_2 ||b||_2.
    """
    p = np.asarray(static_probs, dtype=np.float64)
    z = np.asarray(clf_embedding, dtype=np.float64)
    y = np.asarray(labels)
    residual = p.copy()
    residual[np.arange(p.shape[0]), y] -= 1.0
    return np.linalg.norm(residual, axis=1) * np.linalg.norm(z, axis=1)


def correctness(epoch_logprobs, labels):
    """Fraction of epochs whose argmax prediction matches the label."""
    lp = np.asarray(epoch_logprobs, dtype=np.float64)
    y = np.asarray(labels)
    preds = np.argmax(lp, axis=2)
    return (preds == y[None, :]).mean(axis=0)


def training_dynamics(epoch_logprobs, labels):
    """Confidence mean/std, forgetting count, and margin area over epochs.

    Variability uses the population denominator E.  Forgetting counts
    correct-to-incorrect transitions between consecutive epochs; a sample
    that is never correct scores 0.  The margin is the label-class
    log-probability minus the best other class, averaged over epochs
    (log-probability margins equal logit margins by softmax shift
    invariance).
    """
    lp = np.asarray(epoch_logprobs, dtype=np.float64)
    e, n, c = lp.shape
    y = np.asarray(labels)
    rows = np.arange(n)

    conf = np.exp(lp[:, rows, y])
    avg_confidence = conf.mean(axis=0)
    variability = conf.std(axis=0)

    preds = np.argmax(lp, axis=2)
    acc = preds == y[None, :]
    if e > 1:
        forgetting = (acc[:-1] & ~acc[1:]).sum(axis=0).astype(np.float64)
    else:
        forgetting = np.zeros(n)

    clamped = np.maximum(lp, LOG_FLOOR)
    true_lp = clamped[:, rows, y]
    others = clamped.copy()
    others[:, rows, y] = -np.inf
    aum = (true_lp - others.max(axis=2)).mean(axis=0)
    return avg_confidence, variability, forgetting, aum


def ensemble_uncertainty(stack_logprobs, labels):
    """The six uncertainty measures over a stack of T member predictions.

    Returns (el2n, entropy, bald, variation_ratio, confidence, variability).
    el2n sums the per-member L2 error norms over T.  Entropy and the mutual
    information (bald) are taken on the member-averaged distribution; the
    variation ratio counts members whose argmax disagrees with the averaged
    prediction.  With T=1 the disagreement measures are exactly zero.
    """
    lp = np.asarray(stack_logprobs, dtype=np.float64)
    t, n, c = lp.shape
    y = np.asarray(labels)
    rows = np.arange(n)

    p = np.exp(lp)
    residual = p.copy()
    residual[:, rows, y] -= 1.0
    el2n = np.sqrt(np.einsum("tnc,tnc->tn", residual, residual)).sum(axis=0)

    p_avg = p.mean(axis=0)
    ens_entropy = _entropy(p_avg)
    bald = ens_entropy - _entropy(p).mean(axis=0)

    pred_avg = np.argmax(p_avg, axis=1)
    member_preds = np.argmax(p, axis=2)
    f_m = (member_preds == pred_avg[None, :]).sum(axis=0)
    variation_ratio = 1.0 - f_m / t

    conf = p[:, rows, y]
    return el2n, ens_entropy, bald, variation_ratio, conf.mean(axis=0), conf.std(axis=0)


def pll(token_logprobs, per_token_mean=False):
    """Summed token log-probabilities per sample (optionally the per-token mean)."""
    out = np.empty(len(token_logprobs))
    for i, seq in enumerate(token_logprobs):
        arr = np.asarray(seq, dtype=np.float64)
        if arr.size == 0:
            raise EmptyTokenSequence(i)
        total = arr.sum()
        out[i] = total / arr.size if per_token_mean else total
    return out


def _resolve_selection(measures):
    if measures is None or measures == "all":
        return list(REGISTRY_NAMES), False
    wanted = []
    for name in measures:
        measure_spec(name)
        if name not in wanted:
            wanted.append(name)
    return wanted, True


def compute_all(bundle, measures=None, knn_k=DEFAULT_KNN_K, pll_mean=False):
    """Compute measures from a bundle into a MeasureMatrix.

    `measures` is None or "all" for every computable measure (absent
    optional inputs skip their measures, recorded in `skipped`), or an
    explicit list of names (absent inputs raise MissingInput).  Columns come
    out in registry order regardless of request order.
    """
    wanted, strict = _resolve_selection(measures)
    y = resolve_labels(bundle)
    source = GOLD if bundle.has_labels else PSEUDO

    active = []
    skipped = []
    for spec in REGISTRY:
        if spec.name not in wanted:
            continue
        missing = next(
            (f for f in spec.required_inputs if getattr(bundle, f) is None), None
        )
        if missing is not None:
            if strict:
                raise MissingInput(spec.name, missing)
            skipped.append((spec.name, missing))
            continue
        active.append(spec.name)

    need = set(active)
    values = {}
    if need & {"task_density", "relative_density"}:
        pts = np.asarray(bundle.clf_embedding, dtype=np.float64)
        if "task_density" in need:
            values["task_density"] = -_kth_excluding_self(
                pts, knn_k, "all-sample candidates"
            )
        if "relative_density" in need:
            d_same, d_other = _same_other_knn(pts, y, knn_k)
            values["relative_density"] = d_other - d_same
    if "semantic_density" in need:
        spts = np.asarray(bundle.sent_embedding, dtype=np.float64)
        values["semantic_density"] = -_kth_excluding_self(
            spts, knn_k, "all-sample candidates"
        )
    if need & {"static_confidence", "static_entropy"}:
        conf, ent = static_confidence_entropy(bundle.static_probs, y)
        values["static_confidence"] = conf
        values["static_entropy"] = ent
    if "badge" in need:
        values["badge"] = badge_score(bundle.static_probs, y, bundle.clf_embedding)
    if need & {"avg_confidence", "variability", "forgetting", "aum"}:
        avg, var, forg, aum = training_dynamics(bundle.epoch_logprobs, y)
        values.update(
            avg_confidence=avg, variability=var, forgetting=forg, aum=aum
        )
    for prefix, stack in (("ens", bundle.seed_logprobs), ("mc", bundle.mc_logprobs)):
        group = [f"{prefix}_{t}" for t in
                 ("el2n", "entropy", "bald", "variation_ratio", "confidence",
                  "variability")]
        if need & set(group):
            results = ensemble_uncertainty(stack, y)
            values.update(zip(group, results))
    if "pll" in need:
        values["pll"] = pll(bundle.token_logprobs, per_token_mean=pll_mean)

    specs = [_BY_NAME[name] for name in active]
    if active:
        matrix = np.column_stack([values[name] for name in active])
    else:
        matrix = np.zeros((bundle.n_samples, 0))
    return MeasureMatrix(
        values=matrix, column_specs=specs, label_source=source, skipped=skipped
    )


def to_csv(matrix, path):
    """Write a MeasureMatrix as CSV with canonical measure names as header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["index"] + matrix.names) + "\n")
        for i, row in enumerate(matrix.values):
            fh.write(",".join([str(i)] + [repr(float(v)) for v in row]) + "\n")
