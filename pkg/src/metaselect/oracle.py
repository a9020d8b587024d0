"""Synthetic fixtures and brute-force reference measures.

The generator plants Gaussian class clusters and a slow-confidence noise
cohort so directional claims (noisy samples look noisy) hold by
construction.  `reference_measures` recomputes every measure by literal
per-sample transcription of the defining formulas: O(N^2) kNN scans,
explicit outer-product gradient, plain Python accumulation loops.  It
shares registry metadata with the engine but no numerical code, so the two
routes check each other.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .bundle import GOLD, PSEUDO, RunBundle, resolve_labels, validate_bundle
from .errors import (
    EmptyTokenSequence,
    MissingInput,
    TooFewCandidates,
    UnknownMeasure,
)
from .measures import (
    DEFAULT_KNN_K,
    LOG_FLOOR,
    PROB_FLOOR,
    REGISTRY,
    MeasureMatrix,
)

NOISE_KEY = "planted_noise_indices"

# per-epoch label-class confidence ramps; the clean floor (0.70) stays
# strictly above the noisy ceiling (0.66) at every epoch count
CLEAN_BASE, CLEAN_GAIN, CLEAN_LO, CLEAN_HI = 0.60, 0.37, 0.70, 0.98
NOISY_BASE, NOISY_GAIN, NOISY_LO, NOISY_HI = 0.28, 0.35, 0.02, 0.66


@dataclass
class SynthConfig:
    """Knobs for the synthetic bundle generator."""

    n_samples: int = 48
    n_classes: int = 2
    epochs: int = 4
    seed_models: int = 3
    mc_passes: int = 3
    clf_dim: int = 16
    sent_dim: int = 12
    separation: float = 4.0
    planted_noise_fraction: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        for name in ("epochs", "seed_models", "mc_passes", "clf_dim", "sent_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.planted_noise_fraction < 0.5:
            raise ValueError("planted_noise_fraction must be in [0, 0.5)")


def _centers(n_classes, dim, separation, rng):
    if n_classes <= dim:
        m = np.zeros((n_classes, dim))
        m[np.arange(n_classes), np.arange(n_classes)] = separation
        return m
    return separation * rng.normal(size=(n_classes, dim)) / np.sqrt(dim)


def _assemble_probs(conf, y, content, noise_idx, n_classes):
    """Rows summing to exactly 1: label class holds `conf`, the rest of the
    mass goes mostly to the content class for noisy samples."""
    lead = conf.shape[:-1]
    n = conf.shape[-1]
    rows = np.arange(n)
    rem = 1.0 - conf
    probs = np.empty(lead + (n, n_classes))
    probs[...] = (rem / (n_classes - 1))[..., None]
    probs[..., rows, y] = conf
    if noise_idx.size and n_classes > 2:
        ni = noise_idx
        rem_n = rem[..., ni]
        probs[..., ni, :] = (0.25 * rem_n / (n_classes - 2))[..., None]
        probs[..., ni, y[ni]] = conf[..., ni]
        probs[..., ni, content[ni]] = 0.75 * rem_n
    return probs


def generate_bundle(cfg):
    """Deterministic synthetic RunBundle; byte-identical per rng_seed."""
    rng = np.random.default_rng(cfg.rng_seed)
    n, c = cfg.n_samples, cfg.n_classes
    y = np.arange(n, dtype=np.int64) % c

    noise_n = int(np.floor(cfg.planted_noise_fraction * n))
    if noise_n:
        noise_idx = np.sort(rng.choice(n, size=noise_n, replace=False))
    else:
        noise_idx = np.empty(0, dtype=np.int64)
    is_noise = np.zeros(n, dtype=bool)
    is_noise[noise_idx] = True

    # noisy samples carry a corrupted label: their content belongs elsewhere
    content = y.copy()
    if noise_n:
        shift = 1 + rng.integers(0, c - 1, size=noise_n)
        content[noise_idx] = (y[noise_idx] + shift) % c

    clf_centers = _centers(c, cfg.clf_dim, cfg.separation, rng)
    clf = clf_centers[content] + rng.normal(size=(n, cfg.clf_dim))
    sent_centers = _centers(c, cfg.sent_dim, cfg.separation, rng)
    sent = sent_centers[content] + rng.normal(size=(n, cfg.sent_dim))

    u = rng.uniform(size=n)
    peak = np.where(is_noise, 0.55 + 0.10 * u, 0.94 + 0.04 * u)
    static = np.empty((n, c))
    static[...] = ((1.0 - peak) / (c - 1))[:, None]
    static[np.arange(n), content] = peak

    e = cfg.epochs
    r = np.arange(1, e + 1)[:, None] / e
    base = np.where(
        is_noise[None, :],
        NOISY_BASE + NOISY_GAIN * r**2,
        CLEAN_BASE + CLEAN_GAIN * np.sqrt(r),
    )
    conf = base + rng.normal(scale=0.01, size=(e, n))
    lo = np.where(is_noise, NOISY_LO, CLEAN_LO)
    hi = np.where(is_noise, NOISY_HI, CLEAN_HI)
    conf = np.clip(conf, lo, hi)
    epoch_probs = _assemble_probs(conf, y, content, noise_idx, c)

    def stacked(count, sigma_clean, sigma_noisy):
        final = np.where(is_noise, NOISY_BASE + NOISY_GAIN, CLEAN_BASE + CLEAN_GAIN)
        sigma = np.where(is_noise, sigma_noisy, sigma_clean)
        member_conf = final[None, :] + rng.normal(size=(count, n)) * sigma[None, :]
        member_conf = np.clip(member_conf, lo, hi)
        return _assemble_probs(member_conf, y, content, noise_idx, c)

    seed_probs = stacked(cfg.seed_models, 0.015, 0.05)
    mc_probs = stacked(cfg.mc_passes, 0.02, 0.06)

    lengths = rng.integers(3, 9, size=n)
    flat = -(0.05 + rng.exponential(1.0, size=int(lengths.sum())))
    flat = flat * np.repeat(np.where(is_noise, 1.8, 1.0), lengths)
    token_logprobs = [
        seq.astype(np.float32)
        for seq in np.split(flat, np.cumsum(lengths)[:-1])
    ]

    notes = json.dumps(
        {
            NOISE_KEY: [int(i) for i in noise_idx],
            "planted_noise_fraction": cfg.planted_noise_fraction,
            "separation": cfg.separation,
            "rng_seed": cfg.rng_seed,
        }
    )
    bundle = RunBundle(
        static_probs=static.astype(np.float32),
        epoch_logprobs=np.log(epoch_probs).astype(np.float32),
        seed_logprobs=np.log(seed_probs).astype(np.float32),
        clf_embedding=clf.astype(np.float32),
        mc_logprobs=np.log(mc_probs).astype(np.float32),
        sent_embedding=sent.astype(np.float32),
        token_logprobs=token_logprobs,
        labels=y.astype(np.int32),
        notes=notes,
    )
    return validate_bundle(bundle)


def planted_noise_indices(bundle):
    """Recover the planted-noise index list recorded by generate_bundle."""
    return np.asarray(json.loads(bundle.notes)[NOISE_KEY], dtype=np.int64)


# --- naive reference route -------------------------------------------------

def _naive_argmax(row):
    best = 0
    for k in range(1, len(row)):
        if row[k] > row[best]:
            best = k
    return best


def _naive_entropy(row):
    total = 0.0
    for p in row:
        total -= p * math.log(max(p, PROB_FLOOR))
    return total


def _naive_dist(a, b):
    total = 0.0
    for av, bv in zip(a, b):
        total += (float(av) - float(bv)) ** 2
    return math.sqrt(total)


def _naive_kth(values, k, detail):
    if len(values) < k:
        raise TooFewCandidates(detail, k)
    return sorted(values)[k - 1]


def _naive_dist_matrix(pts):
    n = len(pts)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            v = _naive_dist(pts[i], pts[j])
            d[i][j] = v
            d[j][i] = v
    return d


def _resolve_reference_selection(bundle, measures):
    """Requested measure names that are computable, plus the skipped list.

    Mirrors the engine's contract independently: None or "all" computes
    whatever the bundle supports and records the rest as skipped; an
    explicit list raises on unknown names and absent required inputs.
    """
    known = [spec.name for spec in REGISTRY]
    if measures is None or measures == "all":
        wanted = known
        strict = False
    else:
        wanted = []
        for name in measures:
            if name not in known:
                raise UnknownMeasure(name)
            if name not in wanted:
                wanted.append(name)
        strict = True
    active = []
    skipped = []
    for spec in REGISTRY:
        if spec.name not in wanted:
            continue
        missing = None
        for field in spec.required_inputs:
            if getattr(bundle, field) is None:
                missing = field
                break
        if missing is not None:
            if strict:
                raise MissingInput(spec.name, missing)
            skipped.append((spec.name, missing))
        else:
            active.append(spec.name)
    return active, skipped


def reference_measures(bundle, measures=None, knn_k=DEFAULT_KNN_K, pll_mean=False):
    """Recompute requested measures by direct formula transcription."""
    n, c = bundle.n_samples, bundle.n_classes
    y = [int(v) for v in resolve_labels(bundle)]
    source = GOLD if bundle.has_labels else PSEUDO
    active, skipped = _resolve_reference_selection(bundle, measures)
    need = set(active)

    clf = bundle.clf_embedding.astype(np.float64)
    static = bundle.static_probs.astype(np.float64)
    epochs = bundle.epoch_logprobs.astype(np.float64)

    values = {}

    if need & {"task_density", "relative_density"}:
        clf_dists = _naive_dist_matrix(clf)
        if "task_density" in need:
            task = []
            for i in range(n):
                all_d = [clf_dists[i][j] for j in range(n) if j != i]
                task.append(-_naive_kth(all_d, knn_k, "all-sample candidates"))
            values["task_density"] = task
        if "relative_density" in need:
            rel = []
            for i in range(n):
                same_d = [
                    clf_dists[i][j] for j in range(n) if j != i and y[j] == y[i]
                ]
                other_d = [clf_dists[i][j] for j in range(n) if y[j] != y[i]]
                d_same = _naive_kth(
                    same_d, knn_k, f"class {y[i]} same-class candidates"
                )
                d_other = _naive_kth(
                    other_d, knn_k, f"class {y[i]} other-class candidates"
                )
                rel.append((-d_same) - (-d_other))
            values["relative_density"] = rel

    if "static_confidence" in need:
        values["static_confidence"] = [float(static[i][y[i]]) for i in range(n)]
    if "static_entropy" in need:
        values["static_entropy"] = [_naive_entropy(static[i]) for i in range(n)]

    if "badge" in need:
        badge = []
        for i in range(n):
            residual = static[i].copy()
            residual[y[i]] -= 1.0
            outer = np.outer(residual, clf[i])
            badge.append(float(np.linalg.norm(outer)))
        values["badge"] = badge

    if need & {"avg_confidence", "variability", "forgetting", "aum"}:
        e_count = epochs.shape[0]
        avg_conf = []
        variability = []
        forgetting = []
        aum = []
        for i in range(n):
            confs = [math.exp(float(epochs[e][i][y[i]])) for e in range(e_count)]
            mean = sum(confs) / e_count
            avg_conf.append(mean)
            variability.append(
                math.sqrt(sum((v - mean) ** 2 for v in confs) / e_count)
            )
            accs = [_naive_argmax(epochs[e][i]) == y[i] for e in range(e_count)]
            forgetting.append(
                float(sum(1 for e in range(e_count - 1)
                          if accs[e] and not accs[e + 1]))
            )
            margins = []
            for e in range(e_count):
                row = [max(float(v), LOG_FLOOR) for v in epochs[e][i]]
                true_lp = row[y[i]]
                other = max(v for k, v in enumerate(row) if k != y[i])
                margins.append(true_lp - other)
            aum.append(sum(margins) / e_count)
        if "avg_confidence" in need:
            values["avg_confidence"] = avg_conf
        if "variability" in need:
            values["variability"] = variability
        if "forgetting" in need:
            values["forgetting"] = forgetting
        if "aum" in need:
            values["aum"] = aum

    def stack_measures(stack):
        t_count = stack.shape[0]
        el2n = []
        entropy = []
        bald = []
        variation = []
        conf_mean = []
        conf_std = []
        for i in range(n):
            members = [
                [math.exp(float(stack[t][i][k])) for k in range(c)]
                for t in range(t_count)
            ]
            err_total = 0.0
            for member in members:
                err = 0.0
                for k in range(c):
                    target = 1.0 if k == y[i] else 0.0
                    err += (member[k] - target) ** 2
                err_total += math.sqrt(err)
            el2n.append(err_total)
            p_avg = [
                sum(members[t][k] for t in range(t_count)) / t_count
                for k in range(c)
            ]
            h_avg = _naive_entropy(p_avg)
            entropy.append(h_avg)
            bald.append(
                h_avg
                - sum(_naive_entropy(member) for member in members) / t_count
            )
            pred_avg = _naive_argmax(p_avg)
            agree = sum(
                1 for member in members if _naive_argmax(member) == pred_avg
            )
            variation.append(1.0 - agree / t_count)
            confs = [member[y[i]] for member in members]
            mean = sum(confs) / t_count
            conf_mean.append(mean)
            conf_std.append(
                math.sqrt(sum((v - mean) ** 2 for v in confs) / t_count)
            )
        return el2n, entropy, bald, variation, conf_mean, conf_std

    stack_names = ("el2n", "entropy", "bald", "variation_ratio", "confidence",
                   "variability")
    if need & {f"ens_{t}" for t in stack_names}:
        seed_stack = bundle.seed_logprobs.astype(np.float64)
        for name, vals in zip(stack_names, stack_measures(seed_stack)):
            if f"ens_{name}" in need:
                values[f"ens_{name}"] = vals

    if need & {f"mc_{t}" for t in stack_names}:
        mc_stack = bundle.mc_logprobs.astype(np.float64)
        for name, vals in zip(stack_names, stack_measures(mc_stack)):
            if f"mc_{name}" in need:
                values[f"mc_{name}"] = vals

    if "semantic_density" in need:
        sent = bundle.sent_embedding.astype(np.float64)
        sent_dists = _naive_dist_matrix(sent)
        semantic = []
        for i in range(n):
            dists = [sent_dists[i][j] for j in range(n) if j != i]
            semantic.append(-_naive_kth(dists, knn_k, "all-sample candidates"))
        values["semantic_density"] = semantic

    if "pll" in need:
        plls = []
        for i, seq in enumerate(bundle.token_logprobs):
            if len(seq) == 0:
                raise EmptyTokenSequence(i)
            total = 0.0
            for v in np.asarray(seq, dtype=np.float64):
                total += float(v)
            plls.append(total / len(seq) if pll_mean else total)
        values["pll"] = plls

    specs = [spec for spec in REGISTRY if spec.name in values]
    matrix = np.array(
        [[values[spec.name][i] for spec in specs] for i in range(n)],
        dtype=np.float64,
    )
    if not specs:
        matrix = matrix.reshape(n, 0)
    return MeasureMatrix(
        values=matrix, column_specs=specs, label_source=source, skipped=skipped
    )
