import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from breathscreen.errors import DegenerateMatrix, KTooLarge, ShapeMismatch, SingleClass
from breathscreen.select import (
    SelectionConfig,
    SelectionResult,
    correlation_select,
    fit_pca,
    fit_selection,
    jacobi_eigh,
    pca_pick,
    pca_project,
    pca_transform,
    pearson_with_label,
    rf_select,
    top_k,
    train_random_forest,
)
from breathscreen.stats import FeatureMatrix


def fm(X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or [f"c{i}" for i in range(X.shape[1])]
    return FeatureMatrix(X, names, np.asarray(y), [f"p{i}" for i in range(X.shape[0])])


def planted(seed, n=200, reps=1):
    rng = np.random.default_rng(seed)
    c0, c1 = rng.standard_normal(n), rng.standard_normal(n)
    X = np.column_stack([c0, c1])
    y = (c0 > 0).astype(int)
    return np.repeat(X, reps, axis=0), np.repeat(y, reps)


def test_top_k_rules():
    assert sorted(top_k([0.5, 0.3, 0.2], 2).tolist()) == [0, 1]
    assert top_k([0.1, 0.1, 0.1], 1).tolist() == [0]
    assert top_k([0.2, 0.5, 0.5, 0.1], 3).tolist() == [1, 2, 0]
    with pytest.raises(KTooLarge):
        top_k([1.0], 2)


def test_rf_duplicated_rows_still_rank_signal():
    for seed in range(10):
        X, y = planted(seed, n=100, reps=3)
        rf = train_random_forest((X, y), n_trees=30, seed=seed)
        assert rf.importance[0] > rf.importance[1]


def test_single_stump_all_mass_on_splitter():
    X = np.column_stack([np.arange(10.0), np.random.default_rng(0).normal(size=10)])
    y = (X[:, 0] > 4.5).astype(int)
    rf = train_random_forest((X, y), n_trees=1, max_depth=1, min_leaf=1, features_per_split=2, seed=0)
    imp = rf.importance
    assert imp[0] > 0 and imp[1] == 0.0


def test_rf_select_planted():
    X, y = planted(1)
    rf = train_random_forest((X, y), n_trees=50, seed=1)
    assert rf_select(rf, 1).selected.tolist() == [0]
    with pytest.raises(KTooLarge):
        rf_select(rf, 3)


def test_rf_errors():
    with pytest.raises(SingleClass):
        train_random_forest((np.ones((4, 2)), np.zeros(4)))
    with pytest.raises(DegenerateMatrix):
        train_random_forest((np.ones((4, 0)), np.array([0, 1, 0, 1])))


def test_rf_deterministic_and_tree_streams_independent():
    X, y = planted(2, n=80)
    a = train_random_forest((X, y), n_trees=10, seed=5)
    b = train_random_forest((X, y), n_trees=10, seed=5)
    assert np.array_equal(a.importance, b.importance)
    c = train_random_forest((X, y), n_trees=4, seed=5)
    # the first trees of a bigger forest are the same trees
    assert all(ta.structure() == tc.structure() for ta, tc in zip(a.trees[:4], c.trees))


def test_rf_scaled_feature_same_structure():
    X, y = planted(4, n=60)
    a = train_random_forest((X, y), n_trees=5, seed=2)
    b = train_random_forest((X * [3.0, 1.0], y), n_trees=5, seed=2)
    for ta, tb in zip(a.trees, b.trees):
        assert ta.structure() == tb.structure()
        for f, t1, t2 in zip(ta.feature, ta.threshold, tb.threshold):
            if f == 0:
                assert abs(t2 - 3 * t1) < 1e-12
    assert np.allclose(a.importance, b.importance, atol=1e-15)


def test_pca_collinear():
    X = np.array([[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]])
    m = fit_pca(X, k=1)
    assert np.allclose(np.abs(m.W[:, 0]), [1 / math.sqrt(2)] * 2, atol=1e-12)
    assert abs(m.explained_ratio[0] - 1.0) < 1e-12
    z = pca_transform(m, [[2.0, 2.0]])[0, 0]
    assert abs(abs(z) - 2 * math.sqrt(2)) < 1e-12


def test_pca_isotropic():
    X = np.random.default_rng(0).standard_normal((4000, 2))
    m = fit_pca(X, k=2)
    assert m.eigenvalues[1] / m.eigenvalues[0] > 0.9
    assert np.max(np.abs(m.W.T @ m.W - np.eye(2))) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(2, 12))
def test_pca_properties(seed, d, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) * rng.uniform(0.1, 3, d)
    k = min(n, d)
    m = fit_pca(X, k=k)
    assert np.all(np.diff(m.eigenvalues) <= 1e-12) and np.all(m.eigenvalues >= -1e-10)
    assert np.max(np.abs(m.W.T @ m.W - np.eye(k))) < 1e-8
    Z = pca_transform(m, X)
    assert np.allclose(Z.var(axis=0, ddof=1), m.eigenvalues, atol=1e-8)
    assert np.allclose(pca_transform(m, X.mean(0, keepdims=True)), 0, atol=1e-12)
    if k == d:
        Xc = X - X.mean(0)
        assert np.max(np.abs(Xc - Z @ m.W.T)) < 1e-8
        assert np.allclose(np.linalg.norm(Z, axis=1), np.linalg.norm(Xc, axis=1), atol=1e-9)


def test_pca_errors():
    with pytest.raises(KTooLarge):
        fit_pca(np.ones((3, 2)), k=3)
    m = fit_pca(np.random.default_rng(0).normal(size=(5, 3)), k=2)
    with pytest.raises(ShapeMismatch):
        pca_transform(m, np.ones((2, 4)))


def test_pca_rank_deficient_ok():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(10, 1))
    m = fit_pca(np.hstack([a, 2 * a, -a]), k=3)
    assert abs(m.eigenvalues[1]) < 1e-10 and abs(m.eigenvalues[2]) < 1e-10


def test_jacobi_vs_oracle_3x3():
    rng = np.random.default_rng(11)
    A = rng.normal(size=(3, 3))
    A = A + A.T
    lam, V = jacobi_eigh(A)
    ol, ov = oracles.sym3_eigen(A.tolist())
    assert np.allclose(lam, ol, atol=1e-10)
    for j in range(3):
        assert min(np.abs(V[:, j] - ov[j]).max(), np.abs(V[:, j] + ov[j]).max()) < 1e-8


def test_pca_variance_rule():
    X = np.random.default_rng(1).normal(size=(50, 5)) * [10, 5, 1, 0.1, 0.01]
    m = fit_pca(X)
    cum = np.cumsum(m.all_eigenvalues) / m.all_eigenvalues.sum()
    assert cum[m.k - 1] >= 0.95 and (m.k == 1 or cum[m.k - 2] < 0.95)


def test_correlation_closed_form():
    rho = pearson_with_label(np.array([[1.0], [2.0], [3.0]]), np.array([0, 0, 1]))
    assert abs(rho[0] - math.sqrt(3) / 2) < 1e-12


def test_correlation_ranking_rules():
    rng = np.random.default_rng(0)
    y = np.array([0, 1] * 10)
    X = np.column_stack([np.ones(20), rng.normal(size=20), y.astype(float), -y + 0.01 * rng.normal(size=20)])
    res = correlation_select(fm(X, y), 3)
    assert res.selected.tolist()[0] == 2
    assert 0 not in res.selected.tolist()
    assert res.scores[0] == 0.0
    with pytest.raises(KTooLarge):
        correlation_select(fm(X, y), 5)
    with pytest.raises(SingleClass):
        correlation_select(fm(X, np.zeros(20, dtype=int)), 1)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_correlation_scale_invariant(seed, g):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 3))
    y = np.array([0, 1] * 7 + [1])
    a = pearson_with_label(X, y)
    b = pearson_with_label(X * [g, 1, 1], y)
    assert np.max(np.abs(np.abs(a) - np.abs(b))) <= 1e-12


def test_correlation_matches_loop_oracle():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(30, 4))
    y = (rng.random(30) < 0.5).astype(int)
    got = pearson_with_label(X, y)
    for j in range(4):
        xs, ys = X[:, j].tolist(), y.tolist()
        mx, my = sum(xs) / 30, sum(ys) / 30
        cov = sum((a - mx) * (b - my) for a, b in zip(xs, ys)) / 30
        sx = math.sqrt(sum((a - mx) ** 2 for a in xs) / 30)
        sy = math.sqrt(sum((b - my) ** 2 for b in ys) / 30)
        assert abs(got[j] - cov / (sx * sy)) < 1e-12


def test_selection_result_roundtrip_and_determinism():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 6))
    y = (X[:, 2] > 0).astype(int)
    data = fm(X, y)
    for cfg in (SelectionConfig("rf", k=3, rf_trees=20), SelectionConfig("corr", k=2),
                SelectionConfig("pca", k=2), SelectionConfig("pca", pca_mode="pick", pca_pick=4),
                SelectionConfig("none")):
        a = fit_selection(data, cfg)
        b = fit_selection(data, cfg)
        assert a.to_text() == b.to_text()
        back = SelectionResult.from_text(a.to_text())
        assert np.allclose(back.transform(X), a.transform(X), atol=1e-12)
        assert back.output_names == a.output_names
    assert fit_selection(data, SelectionConfig("rf", k=1, rf_trees=30)).selected_names == ["c2"]


def test_pca_modes():
    X = np.random.default_rng(4).normal(size=(30, 8))
    data = fm(X, np.array([0, 1] * 15))
    proj = pca_project(data, k=3)
    assert proj.projects and proj.n_outputs == 3 and proj.output_names == ["pc1", "pc2", "pc3"]
    pick = pca_pick(data, 5, k=3)
    assert not pick.projects and pick.n_outputs == 5
    assert np.array_equal(pick.transform(X), X[:, pick.selected])


def test_selected_indices_validated():
    with pytest.raises(ValueError):
        SelectionResult("rf", ["a", "b"], selected=np.array([0, 0]))
    with pytest.raises(ValueError):
        SelectionResult("rf", ["a", "b"], selected=np.array([2]))
