"""Subset selection: DPP kernel, fast greedy MAP, and baseline selectors.

The kernel is L = diag(q) S diag(q) with S_ij = exp(-beta ||x_i - x_j||^2)
on normalized features and q a per-sample quality score from class-
conditional kNN distance: 1/d for pruning (favor dense, representative
points), d for acquisition (favor sparse, novel points).  Greedy MAP adds
whichever item most increases the subset log-determinant, with incremental
Cholesky-style updates so the whole run costs O(N k^2).
"""

import itertools
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    BudgetExceedsN,
    CombinatorialBlowup,
    NonPositiveBeta,
    NonPositiveScore,
    RankDeficientWarning,
    UnknownMethod,
)
from .measures import DEFAULT_KNN_K, same_class_knn_distance

DEFAULT_BETA = 0.5
DEFAULT_MATERIALIZE_THRESHOLD = 20000
DISTANCE_FLOOR = 1e-9
EXHAUSTIVE_CAP = 1_000_000
# placeholder gain for slots filled past the kernel's numerical rank,
# keeping every serialized gain finite
GAIN_FLOOR = float(np.log(1e-300))

PRUNE = "prune"
ACQUIRE = "acquire"
MODES = (PRUNE, ACQUIRE)

METHODS = ("dpp", "random", "coreset", "kmeans", "density")
TOPK_PREFIX = "topk:"


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _points_of(features):
    values = getattr(features, "values", features)
    return np.ascontiguousarray(values, dtype=np.float64)


@dataclass
class DppKernel:
    """Quality/diversity kernel over normalized feature rows.

    `L` is the dense kernel when N is at or below the materialization
    threshold; above it rows are recomputed on demand from `points`.
    """

    points: np.ndarray
    q: np.ndarray
    beta: float
    L: np.ndarray | None

    @property
    def n(self):
        return int(self.points.shape[0])

    def diagonal(self):
        # S_ii = 1, so the kernel diagonal is exactly q^2
        return self.q * self.q

    def row(self, i):
        if self.L is not None:
            return self.L[i]
        diff = self.points - self.points[i]
        d2 = np.einsum("nf,nf->n", diff, diff)
        return self.q[i] * self.q * np.exp(-self.beta * d2)

    def submatrix(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        if self.L is not None:
            return self.L[np.ix_(idx, idx)]
        pts = self.points[idx]
        g = pts @ pts.T
        sq = np.diagonal(g).copy()
        d2 = sq[:, None] + sq[None, :] - 2.0 * g
        np.clip(d2, 0.0, None, out=d2)
        np.fill_diagonal(d2, 0.0)
        qq = self.q[idx]
        return qq[:, None] * np.exp(-self.beta * d2) * qq[None, :]


def build_kernel(features, q, beta=DEFAULT_BETA,
                 materialize_threshold=DEFAULT_MATERIALIZE_THRESHOLD):
    """Assemble a DppKernel from feature rows and positive scores."""
    x = _points_of(features)
    qv = np.asarray(q, dtype=np.float64)
    if qv.ndim != 1 or qv.shape[0] != x.shape[0]:
        raise NonPositiveScore(
            f"q must be a vector of length {x.shape[0]}, got shape {qv.shape}"
        )
    if not np.isfinite(qv).all() or not (qv > 0).all():
        raise NonPositiveScore("every score must be strictly positive and finite")
    if not (np.isfinite(beta) and beta > 0):
        raise NonPositiveBeta(f"beta must be strictly positive, got {beta!r}")

    n = x.shape[0]
    dense = None
    if n <= materialize_threshold:
        # squared distances via the Gram matrix, rebuilt in place so only
        # one [N x N] float64 buffer ever exists
        g = x @ x.T
        sq = np.diagonal(g).copy()
        g *= -2.0
        g += sq[:, None]
        g += sq[None, :]
        np.clip(g, 0.0, None, out=g)
        np.fill_diagonal(g, 0.0)
        g *= -beta
        np.exp(g, out=g)
        g *= qv[:, None]
        g *= qv[None, :]
        dense = g
    return DppKernel(points=x, q=qv, beta=float(beta), L=dense)


def density_score(features, labels, mode, k=DEFAULT_KNN_K):
    """Per-sample quality score from class-conditional kNN distance.

    d_i is the Kth nearest same-class Euclidean distance, clamped to
    >= 1e-9.  Prune mode returns 1/d (dense points score high); acquire
    mode returns d (sparse points score high).  The two vectors multiply
    to exactly one element-wise.
    """
    _check_mode(mode)
    x = _points_of(features)
    d = same_class_knn_distance(x, labels, k)
    d = np.maximum(d, DISTANCE_FLOOR)
    return 1.0 / d if mode == PRUNE else d


@dataclass
class SelectionResult:
    """Ordered chosen indices with per-step marginal log-det gains."""

    indices: list
    gains: list
    total_logdet: float
    method: str = ""
    mode: str = ""
    seed: int = 0
    beta: float = DEFAULT_BETA
    knn_k: int = DEFAULT_KNN_K
    rank_deficient: bool = False


def result_to_json(result):
    """SelectionResult as a JSON-ready dict with pinned key order."""
    return {
        "method": result.method,
        "mode": result.mode,
        "seed": result.seed,
        "beta": result.beta,
        "knn_k": result.knn_k,
        "indices": [int(i) for i in result.indices],
        "gains": [float(g) for g in result.gains],
        "total_logdet": float(result.total_logdet),
    }


def save_result(result, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result_to_json(result), fh, indent=2)
        fh.write("\n")


def _fill_by_score(q, chosen, count):
    mask = np.ones(q.shape[0], dtype=bool)
    mask[chosen] = False
    candidates = np.flatnonzero(mask)
    order = candidates[np.argsort(-q[candidates], kind="stable")]
    return [int(i) for i in order[:count]]


def greedy_map(kernel, k):
    """Fast greedy MAP: k items maximizing the subset log-determinant.

    Each iteration picks the item with the largest marginal gain (ties to
    the lowest index) and updates all remaining gains in O(N) via an
    incremental Cholesky row.  When the kernel's numerical rank runs out
    before k items, the rest are filled by descending score with a
    RankDeficientWarning and placeholder gains of ln(1e-300).
    """
    n = kernel.n
    if k > n:
        raise BudgetExceedsN(f"budget {k} exceeds {n} samples")
    if k == 0:
        return SelectionResult(indices=[], gains=[], total_logdet=0.0, method="dpp")

    di2s = kernel.diagonal().astype(np.float64, copy=True)
    # rank cutoff scales with the kernel so selections are invariant to
    # uniformly rescaling q
    eps = 1e-12 * float(di2s.max())
    cis = np.empty((k, n))
    indices = []
    gains = []
    rank_deficient = False
    for t in range(k):
        j = int(np.argmax(di2s))
        if not di2s[j] > eps:
            rank_deficient = True
            break
        indices.append(j)
        gains.append(float(np.log(di2s[j])))
        if len(indices) == k:
            break
        elements = kernel.row(j)
        if t == 0:
            ci = elements / np.sqrt(di2s[j])
        else:
            ci = (elements - cis[:t, j] @ cis[:t]) / np.sqrt(di2s[j])
        cis[t] = ci
        di2s -= ci * ci
        di2s[j] = -np.inf

    if rank_deficient:
        warnings.warn(
            "kernel rank exhausted before the budget; filling remaining "
            "slots by descending score",
            RankDeficientWarning,
        )
        fill = _fill_by_score(kernel.q, indices, k - len(indices))
        indices.extend(fill)
        gains.extend([GAIN_FLOOR] * len(fill))

    total = float(np.sum(gains)) if gains else 0.0
    return SelectionResult(
        indices=indices,
        gains=gains,
        total_logdet=total,
        method="dpp",
        rank_deficient=rank_deficient,
    )


def _prefix_gains(lsub):
    """Log-det gains of a fixed pick order, via an incremental Cholesky.

    Once a pivot goes non-positive the subset is numerically singular and
    every later gain is the finite placeholder.
    """
    k = lsub.shape[0]
    gains = []
    chol = np.zeros((k, k))
    singular = False
    for t in range(k):
        if singular:
            gains.append(GAIN_FLOOR)
            continue
        if t == 0:
            w = np.zeros(0)
            pivot2 = float(lsub[0, 0])
        else:
            w = solve_triangular(chol[:t, :t], lsub[:t, t], lower=True)
            pivot2 = float(lsub[t, t] - w @ w)
        if not pivot2 > 1e-300:
            singular = True
            gains.append(GAIN_FLOOR)
            continue
        chol[t, :t] = w
        chol[t, t] = np.sqrt(pivot2)
        gains.append(float(np.log(pivot2)))
    return gains


def exhaustive_map(kernel, k):
    """Exact MAP by scanning every k-subset; test oracle for desk scales."""
    n = kernel.n
    if k > n:
        raise BudgetExceedsN(f"budget {k} exceeds {n} samples")
    if k == 0:
        return SelectionResult(indices=[], gains=[], total_logdet=0.0,
                               method="exhaustive")
    if math.comb(n, k) > EXHAUSTIVE_CAP:
        raise CombinatorialBlowup(
            f"C({n},{k}) = {math.comb(n, k)} exceeds {EXHAUSTIVE_CAP}"
        )
    full = kernel.L if kernel.L is not None else kernel.submatrix(np.arange(n))
    best = None
    best_ld = -np.inf
    for combo in itertools.combinations(range(n), k):
        idx = np.asarray(combo)
        sign, ld = np.linalg.slogdet(full[np.ix_(idx, idx)])
        if sign > 0 and ld > best_ld:
            best_ld = ld
            best = combo
    if best is None:
        # every k-subset is singular; report the top-score subset instead
        best = tuple(_fill_by_score(kernel.q, [], k))
    chosen = list(best)
    gains = _prefix_gains(full[np.ix_(chosen, chosen)])
    return SelectionResult(
        indices=chosen,
        gains=gains,
        total_logdet=float(np.sum(gains)),
        method="exhaustive",
    )


def _coreset_indices(pts, budget):
    # k-center greedy, seeded at the point farthest from the centroid
    centroid = pts.mean(axis=0)
    first = int(np.argmax(np.linalg.norm(pts - centroid, axis=1)))
    chosen = [first]
    mind = np.linalg.norm(pts - pts[first], axis=1)
    mind[first] = -1.0
    for _ in range(budget - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1), out=mind)
        mind[nxt] = -1.0
    return chosen


def _sq_dists(pts, centers):
    d2 = (
        (pts * pts).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * pts @ centers.T
    )
    np.clip(d2, 0.0, None, out=d2)
    return d2


def _kmeanspp(pts, k, rng):
    n = pts.shape[0]
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[int(rng.integers(n))]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(np.argmin(d2))
        centers[c] = pts[idx]
        np.minimum(d2, ((pts - centers[c]) ** 2).sum(axis=1), out=d2)
    return centers


def _kmeans_indices(pts, budget, seed, max_iter=100):
    rng = np.random.default_rng(seed)
    n = pts.shape[0]
    centers = _kmeanspp(pts, budget, rng)
    assign = None
    for _ in range(max_iter):
        d2 = _sq_dists(pts, centers)
        new_assign = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(budget):
            members = assign == c
            if members.any():
                centers[c] = pts[members].mean(axis=0)
    d2 = _sq_dists(pts, centers)
    chosen = []
    for c in range(budget):
        members = np.flatnonzero(assign == c)
        if members.size:
            chosen.append(int(members[np.argmin(d2[members, c])]))
    if len(chosen) < budget:
        # empty clusters leave a shortfall; fill with the unchosen points
        # closest to any center
        mask = np.ones(n, dtype=bool)
        mask[chosen] = False
        rest = np.flatnonzero(mask)
        order = rest[np.argsort(d2[rest].min(axis=1), kind="stable")]
        chosen.extend(int(i) for i in order[: budget - len(chosen)])
    return chosen


def _topk_indices(column, budget, ascending):
    key = column if ascending else -column
    order = np.argsort(key, kind="stable")
    return [int(i) for i in order[:budget]]


def select(features, labels, mode, budget, method, seed=0, beta=DEFAULT_BETA,
           knn_k=DEFAULT_KNN_K, points=None, ascending=False,
           materialize_threshold=DEFAULT_MATERIALIZE_THRESHOLD):
    """Run one selection method and score it under the mode's DPP kernel.

    `points` optionally swaps the geometry used by the coreset, kmeans, and
    density baselines (e.g. classifier embeddings); DPP and topk always
    operate on the normalized feature space.  Every method's result carries
    gains and total_logdet evaluated on the same feature-space kernel, so
    methods are directly comparable.
    """
    _check_mode(mode)
    x = _points_of(features)
    n = x.shape[0]
    if budget > n:
        raise BudgetExceedsN(f"budget {budget} exceeds {n} samples")
    y = np.asarray(labels)
    geometry = x if points is None else np.ascontiguousarray(points, np.float64)

    q = density_score(features, y, mode, k=knn_k)
    kernel = build_kernel(features, q, beta=beta,
                          materialize_threshold=materialize_threshold)

    rank_deficient = False
    if method == "dpp":
        picked = greedy_map(kernel, budget)
        indices = picked.indices
        gains = picked.gains
        rank_deficient = picked.rank_deficient
    else:
        if method == "random":
            rng = np.random.default_rng(seed)
            indices = [int(i) for i in rng.choice(n, size=budget, replace=False)]
        elif method.startswith(TOPK_PREFIX):
            name = method[len(TOPK_PREFIX):]
            col = x[:, features.column_index(name)]
            indices = _topk_indices(col, budget, ascending)
        elif method == "coreset":
            indices = _coreset_indices(geometry, budget)
        elif method == "kmeans":
            indices = _kmeans_indices(geometry, budget, seed)
        elif method == "density":
            if points is None:
                score = q
            else:
                score = density_score(geometry, y, mode, k=knn_k)
            indices = _topk_indices(score, budget, ascending=False)
        else:
            raise UnknownMethod(f"unknown method {method!r}")
        gains = _prefix_gains(kernel.submatrix(indices)) if indices else []
        rank_deficient = GAIN_FLOOR in gains

    return SelectionResult(
        indices=indices,
        gains=gains,
        total_logdet=float(np.sum(gains)) if gains else 0.0,
        method=method,
        mode=mode,
        seed=seed,
        beta=float(beta),
        knn_k=int(knn_k),
        rank_deficient=rank_deficient,
    )
