"""DPP kernel construction, greedy/exhaustive MAP, and baseline selectors."""

import itertools
import json

import numpy as np
import pytest

from metaselect import (
    SynthConfig,
    build_kernel,
    compute_all,
    density_score,
    exhaustive_map,
    generate_bundle,
    greedy_map,
    normalize,
    resolve_labels,
    result_to_json,
    save_result,
    select,
)
from metaselect.errors import (
    BudgetExceedsN,
    CombinatorialBlowup,
    NonPositiveBeta,
    NonPositiveScore,
    RankDeficientWarning,
    TooFewCandidates,
    UnknownMethod,
)
from metaselect.selection import GAIN_FLOOR

from conftest import assert_close

LN36 = 3.58351893845611

# off-diagonal similarities underflow to exactly zero at this spread
FAR = np.asarray([[0.0, 0.0], [1000.0, 0.0], [0.0, 1000.0]])


def random_kernel(rng, n=16, f=4):
    x = rng.standard_normal((n, f))
    q = rng.lognormal(sigma=0.5, size=n)
    return build_kernel(x, q)


# --- kernel -----------------------------------------------------------------

def test_kernel_identical_rows_have_unit_similarity():
    x = np.asarray([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    kern = build_kernel(x, np.ones(3))
    assert kern.L[0, 1] == 1.0


def test_kernel_pinned_gaussian_value():
    x = np.asarray([[0.0, 0.0], [1.0, 1.0]])  # squared distance 2
    kern = build_kernel(x, np.ones(2), beta=0.5)
    assert_close(kern.L[0, 1], 0.36787944117144233)


def test_kernel_diagonal_case():
    kern = build_kernel(FAR[:2], np.asarray([3.0, 2.0]))
    np.testing.assert_array_equal(kern.L, [[9.0, 0.0], [0.0, 4.0]])
    assert_close(kern.diagonal(), [9.0, 4.0])


def test_kernel_invariants_on_random_features():
    rng = np.random.default_rng(0)
    kern = random_kernel(rng, n=30)
    s = kern.L / np.outer(kern.q, kern.q)
    assert_close(s, s.T)
    assert_close(np.diagonal(s), np.ones(30))
    assert s.min() > 0.0 and s.max() <= 1.0
    assert np.linalg.eigvalsh(kern.L).min() >= -1e-8


def test_lazy_kernel_matches_dense():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 3))
    q = rng.lognormal(size=20)
    dense = build_kernel(x, q)
    lazy = build_kernel(x, q, materialize_threshold=0)
    assert lazy.L is None
    for i in (0, 7, 19):
        assert_close(lazy.row(i), dense.L[i])
    idx = [3, 11, 4, 18]
    assert_close(lazy.submatrix(idx), dense.L[np.ix_(idx, idx)])


def test_kernel_rejects_bad_scores_and_beta():
    x = np.zeros((3, 2))
    with pytest.raises(NonPositiveScore):
        build_kernel(x, np.asarray([1.0, 0.0, 1.0]))
    with pytest.raises(NonPositiveScore):
        build_kernel(x, np.asarray([1.0, -2.0, 1.0]))
    with pytest.raises(NonPositiveScore):
        build_kernel(x, np.ones(2))
    with pytest.raises(NonPositiveBeta):
        build_kernel(x, np.ones(3), beta=0.0)


# --- density scores ---------------------------------------------------------

def test_density_score_prune_inverts_distance():
    pts = np.asarray([[0.0], [2.0]])
    assert_close(density_score(pts, [0, 0], "prune", k=1), [0.5, 0.5])
    assert_close(density_score(pts, [0, 0], "acquire", k=1), [2.0, 2.0])


def test_density_score_clamps_duplicates():
    pts = np.asarray([[1.0], [1.0]])
    q = density_score(pts, [0, 0], "prune", k=1)
    assert_close(q, [1e9, 1e9])


def test_density_score_modes_multiply_to_one():
    rng = np.random.default_rng(21)
    pts = rng.normal(size=(30, 4))
    y = rng.integers(0, 2, size=30)
    prune = density_score(pts, y, "prune", k=3)
    acquire = density_score(pts, y, "acquire", k=3)
    assert_close(prune * acquire, np.ones(30), tol=1e-12)


def test_density_score_needs_enough_class_members():
    pts = np.zeros((4, 2))
    with pytest.raises(TooFewCandidates):
        density_score(pts, [0, 0, 0, 1], "prune", k=1)


# --- greedy MAP -------------------------------------------------------------

def test_greedy_on_diagonal_kernel_takes_top_scores():
    kern = build_kernel(FAR, np.asarray([3.0, 2.0, 1.0]))
    got = greedy_map(kern, 2)
    assert got.indices == [0, 1]
    assert_close(got.total_logdet, LN36)
    assert_close(got.gains, [np.log(9.0), np.log(4.0)])


def test_greedy_prefers_diversity_over_score():
    x = np.asarray([[0.0, 0.0], [0.0, 0.0], [10.0, 10.0]])
    kern = build_kernel(x, np.asarray([10.0, 10.0, 1.0]))
    got = greedy_map(kern, 2)
    assert got.indices == [0, 2]


def test_greedy_full_budget_matches_slogdet():
    rng = np.random.default_rng(2)
    kern = random_kernel(rng, n=8)
    got = greedy_map(kern, 8)
    assert sorted(got.indices) == list(range(8))
    _, expected = np.linalg.slogdet(kern.L)
    assert_close(got.total_logdet, expected)


def test_greedy_zero_budget_and_overbudget():
    rng = np.random.default_rng(3)
    kern = random_kernel(rng, n=5)
    empty = greedy_map(kern, 0)
    assert empty.indices == [] and empty.total_logdet == 0.0
    with pytest.raises(BudgetExceedsN):
        greedy_map(kern, 6)


def test_greedy_tie_breaks_to_lowest_index():
    kern = build_kernel(FAR, np.asarray([2.0, 2.0, 2.0]))
    got = greedy_map(kern, 1)
    assert got.indices == [0]


def test_greedy_invariant_to_score_rescaling():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((20, 3))
    q = rng.lognormal(size=20)
    base = greedy_map(build_kernel(x, q), 6)
    scaled = greedy_map(build_kernel(x, 1000.0 * q), 6)
    assert base.indices == scaled.indices


def test_greedy_gains_are_non_increasing():
    for seed in range(8):
        rng = np.random.default_rng(seed)
        kern = random_kernel(rng, n=18)
        got = greedy_map(kern, 10)
        gains = np.asarray(got.gains)
        assert (np.diff(gains) <= 1e-9).all(), f"seed {seed}"


def test_greedy_rank_deficient_fills_by_score():
    x = np.zeros((4, 2))  # all-duplicate points: rank-1 kernel
    q = np.asarray([1.0, 5.0, 3.0, 2.0])
    kern = build_kernel(x, q)
    with pytest.warns(RankDeficientWarning):
        got = greedy_map(kern, 3)
    assert got.rank_deficient
    assert got.indices == [1, 2, 3]  # best gain first, then fill by q
    assert got.gains[1:] == [GAIN_FLOOR, GAIN_FLOOR]
    assert np.isfinite(got.gains).all()


# --- exhaustive MAP ---------------------------------------------------------

def test_exhaustive_on_diagonal_kernel_takes_top_scores():
    kern = build_kernel(FAR, np.asarray([1.0, 3.0, 2.0]))
    got = exhaustive_map(kern, 2)
    assert sorted(got.indices) == [1, 2]
    assert_close(got.total_logdet, LN36)


def test_exhaustive_matches_independent_determinant_scan():
    rng = np.random.default_rng(6)
    kern = random_kernel(rng, n=12)
    got = exhaustive_map(kern, 4)
    best_ld = -np.inf
    best = None
    for combo in itertools.combinations(range(12), 4):
        sub = kern.L[np.ix_(combo, combo)]
        eig = np.linalg.eigvalsh(sub)
        if eig.min() <= 0:
            continue
        ld = float(np.sum(np.log(eig)))
        if ld > best_ld:
            best_ld = ld
            best = combo
    assert tuple(got.indices) == best
    assert_close(got.total_logdet, best_ld, tol=1e-8)


def test_exhaustive_zero_budget_and_cap():
    rng = np.random.default_rng(7)
    kern = random_kernel(rng, n=5)
    empty = exhaustive_map(kern, 0)
    assert empty.indices == [] and empty.total_logdet == 0.0

    big = build_kernel(np.zeros((50, 2)), np.ones(50))
    with pytest.raises(CombinatorialBlowup):
        exhaustive_map(big, 25)


def test_greedy_never_beats_exhaustive():
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        kern = random_kernel(rng, n=10)
        k = 2 + seed % 3
        g = greedy_map(kern, k)
        e = exhaustive_map(kern, k)
        assert g.total_logdet <= e.total_logdet + 1e-9, f"seed {seed}"


# --- select dispatch --------------------------------------------------------

def synth_features(n=30, seed=0, noise=0.0):
    bundle = generate_bundle(SynthConfig(
        n_samples=n, n_classes=2, rng_seed=seed,
        planted_noise_fraction=noise))
    matrix = compute_all(bundle)
    return bundle, normalize(matrix), resolve_labels(bundle)


def test_select_returns_budget_distinct_indices_per_method():
    bundle, features, labels = synth_features()
    for method in ("dpp", "random", "topk:avg_confidence", "coreset",
                   "kmeans", "density"):
        got = select(features, labels, mode="prune", budget=7, method=method)
        assert len(got.indices) == 7, method
        assert len(set(got.indices)) == 7, method
        assert all(0 <= i < 30 for i in got.indices), method
        assert np.isfinite(got.gains).all(), method
        assert got.method == method


def test_select_is_deterministic_per_seed():
    _, features, labels = synth_features()
    for method in ("dpp", "random", "kmeans", "coreset"):
        a = select(features, labels, mode="prune", budget=6, method=method,
                   seed=42)
        b = select(features, labels, mode="prune", budget=6, method=method,
                   seed=42)
        assert a.indices == b.indices, method
        assert a.gains == b.gains, method


def test_select_random_seeds_differ():
    _, features, labels = synth_features()
    a = select(features, labels, mode="prune", budget=6, method="random", seed=1)
    b = select(features, labels, mode="prune", budget=6, method="random", seed=2)
    assert a.indices != b.indices


def test_select_topk_sorts_descending():
    from metaselect.measures import MeasureMatrix, measure_spec
    m = MeasureMatrix(
        values=np.asarray([[0.1], [0.7], [0.3]]),
        column_specs=[measure_spec("static_entropy")],
        label_source="gold",
    )
    features = normalize(m)
    got = select(features, [0, 0, 0], mode="prune", budget=2,
                 method="topk:static_entropy", knn_k=1)
    assert got.indices == [1, 2]
    flipped = select(features, [0, 0, 0], mode="prune", budget=2,
                     method="topk:static_entropy", knn_k=1, ascending=True)
    assert flipped.indices == [0, 2]


def test_select_density_matches_topk_on_quality():
    _, features, labels = synth_features()
    got = select(features, labels, mode="prune", budget=5, method="density")
    q = density_score(features, labels, "prune")
    expected = list(np.argsort(-q, kind="stable")[:5])
    assert got.indices == expected


def test_select_embedding_space_changes_baseline_geometry():
    bundle, features, labels = synth_features(seed=3)
    in_feature = select(features, labels, mode="prune", budget=6,
                        method="coreset")
    in_embedding = select(features, labels, mode="prune", budget=6,
                          method="coreset",
                          points=bundle.clf_embedding.astype(np.float64))
    assert in_feature.indices != in_embedding.indices


def test_select_rejects_unknown_method_and_overbudget():
    _, features, labels = synth_features()
    with pytest.raises(UnknownMethod):
        select(features, labels, mode="prune", budget=3, method="sorcery")
    with pytest.raises(BudgetExceedsN):
        select(features, labels, mode="prune", budget=31, method="random")
    with pytest.raises(ValueError):
        select(features, labels, mode="sideways", budget=3, method="random")


def test_dpp_total_logdet_tops_every_baseline():
    for seed in range(5):
        _, features, labels = synth_features(n=40, seed=200 + seed)
        results = {
            method: select(features, labels, mode="prune", budget=8,
                           method=method, seed=seed)
            for method in ("dpp", "random", "topk:static_confidence",
                           "coreset", "kmeans", "density")
        }
        best = results.pop("dpp")
        for method, got in results.items():
            assert best.total_logdet >= got.total_logdet - 1e-9, \
                f"seed {seed}: {method}"


def test_acquire_mode_prefers_sparse_points():
    _, features, labels = synth_features(n=40, seed=77, noise=0.1)
    prune_q = density_score(features, labels, "prune")
    acquire_q = density_score(features, labels, "acquire")
    assert int(np.argmax(prune_q)) != int(np.argmax(acquire_q))


# --- results ----------------------------------------------------------------

def test_result_json_key_order_and_round_trip(tmp_path):
    _, features, labels = synth_features()
    got = select(features, labels, mode="acquire", budget=4, method="dpp",
                 seed=9)
    payload = result_to_json(got)
    assert list(payload) == ["method", "mode", "seed", "beta", "knn_k",
                             "indices", "gains", "total_logdet"]
    path = tmp_path / "sel.json"
    save_result(got, path)
    text = path.read_text()
    assert text.endswith("\n")
    loaded = json.loads(text)
    assert loaded == payload
    assert loaded["mode"] == "acquire"
    assert loaded["seed"] == 9
    assert loaded["beta"] == 0.5
    assert loaded["knn_k"] == 5
