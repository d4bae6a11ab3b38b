import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scr_dynpredict import feature_select as fs


# ------------------------------------------------------------------ oracle


def _oracle_cart(X, y, max_depth, min_leaf):
    """Exhaustive enumeration of every (feature, threshold) at every node.

    Each candidate's impurity decrease is the drop in sum of squared errors,
    computed directly from the two child partitions.
    """
    n, p = X.shape
    scores = np.zeros(p)

    def sse(v):
        return float(np.sum((v - v.mean()) ** 2)) if v.size else 0.0

    def node(idx, depth):
        yy = y[idx]
        if depth >= max_depth or idx.size < 2 * min_leaf or np.ptp(yy) == 0:
            return
        parent = sse(yy)
        best = (0.0, None, None)
        for f in range(p):
            vals = np.unique(X[idx, f])
            for a, b in zip(vals[:-1], vals[1:]):
                thr = 0.5 * (a + b)
                left = idx[X[idx, f] <= thr]
                right = idx[X[idx, f] > thr]
                if left.size < min_leaf or right.size < min_leaf:
                    continue
                gain = parent - sse(y[left]) - sse(y[right])
                if gain > best[0] + 1e-10 * parent:
                    best = (gain, f, thr)
        gain, f, thr = best
        if f is None or gain <= 1e-12 * parent:
            return
        scores[f] += gain / n
        node(idx[X[idx, f] <= thr], depth + 1)
        node(idx[X[idx, f] > thr], depth + 1)

    node(np.arange(n), 0)
    return scores


def _collect_splits(node, out):
    if node.is_leaf:
        assert node.impurity_decrease == 0.0
        return out
    out.append((node.feature, node.threshold, node.n_samples))
    _collect_splits(node.left, out)
    _collect_splits(node.right, out)
    return out


# -------------------------------------------------------------------- CART


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 60), st.integers(1, 4), st.integers(1, 3), st.integers(1, 5),
       st.integers(0, 10_000))
def test_cart_matches_exhaustive_oracle(n, p, depth, min_leaf, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = np.sin(2 * X[:, 0]) + X[:, -1] ** 2 + 0.3 * rng.standard_normal(n)
    got = fs.fit_cart_importance(X, y, max_depth=depth, min_leaf=min_leaf)
    want = _oracle_cart(X, y, depth, min_leaf)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_perfect_single_split():
    rng = np.random.default_rng(0)
    x0 = np.repeat([0.0, 1.0], 20)
    X = np.column_stack([x0, rng.standard_normal(40)])
    root, scores = fs.fit_cart(X, x0, max_depth=1, min_leaf=1)
    assert scores[0] > 0 and scores[1] == 0
    assert root.feature == 0 and root.threshold == 0.5


def test_constant_target_scores_zero():
    X = np.random.default_rng(0).standard_normal((30, 3))
    np.testing.assert_array_equal(fs.fit_cart_importance(X, np.full(30, 2.0)), 0.0)
    np.testing.assert_array_equal(fs.fit_forest_importance(X, np.full(30, 2.0), n_trees=3), 0.0)


def test_tree_predict_is_piecewise_mean():
    X = np.arange(10.0)[:, None]
    y = np.r_[np.zeros(5), np.ones(5)]
    root, _ = fs.fit_cart(X, y, max_depth=3, min_leaf=1)
    np.testing.assert_array_equal(fs.tree_predict(root, X), y)


# ------------------------------------------------------------------ forest


def test_degenerate_forest_equals_cart():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((80, 5))
    y = X[:, 1] * X[:, 2] + rng.standard_normal(80)
    cart = fs.fit_cart_importance(X, y, max_depth=6, min_leaf=3)
    forest = fs.fit_forest_importance(X, y, n_trees=1, max_features=5, seed=9, max_depth=6,
                                      min_leaf=3, bootstrap=False)
    np.testing.assert_array_equal(forest, cart)


def test_forest_deterministic_and_thread_independent(monkeypatch):
    rng = np.random.default_rng(4)
    X = rng.standard_normal((120, 6))
    y = X[:, 0] + rng.standard_normal(120)
    a = fs.fit_forest_importance(X, y, n_trees=10, seed=5)
    b = fs.fit_forest_importance(X, y, n_trees=10, seed=5)
    monkeypatch.setenv("SCR_DYNPREDICT_THREADS", "3")
    c = fs.fit_forest_importance(X, y, n_trees=10, seed=5)
    assert a.tobytes() == b.tobytes() == c.tobytes()


def test_forest_ranks_generating_feature_first():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((300, 9))
    y = 2 * X[:, 0] + 0.1 * rng.standard_normal(300)
    scores = fs.fit_forest_importance(X, y, n_trees=50, seed=0)
    assert np.argmax(scores) == 0


def test_permuting_a_feature_does_not_raise_its_importance():
    wins = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((150, 4))
        y = X[:, 0] + 0.5 * X[:, 1] + 0.3 * rng.standard_normal(150)
        before = fs.fit_forest_importance(X, y, n_trees=15, seed=seed)[1]
        Xp = X.copy()
        Xp[:, 1] = rng.permutation(Xp[:, 1])
        after = fs.fit_forest_importance(Xp, y, n_trees=15, seed=seed)[1]
        wins += after <= before
    assert wins >= 15


def test_forest_rejects_zero_trees():
    with pytest.raises(ValueError):
        fs.fit_forest_importance(np.ones((5, 1)), np.arange(5.0), n_trees=0)


# ---------------------------------------------------------------- boosting


def test_one_round_boosting_picks_cart_split():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((60, 4))
    y = np.abs(X[:, 2]) + 0.2 * rng.standard_normal(60)
    root, _ = fs.fit_cart(X, y, max_depth=1, min_leaf=1)
    model, gains = fs.fit_gbt(X, y, n_rounds=1, learning_rate=0.5, max_depth=1, lam=0.0)
    tree = model.trees[0]
    assert (tree.feature, tree.threshold) == (root.feature, root.threshold)
    # with lam = 0 the boosting gain equals the SSE drop
    cart_gain = fs.fit_cart_importance(X, y, max_depth=1, min_leaf=1) * y.size
    np.testing.assert_allclose(gains, cart_gain, rtol=1e-12)


def test_boosting_loss_never_increases():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((200, 5))
    y = X[:, 0] * X[:, 1] + np.sin(X[:, 2])
    model, _ = fs.fit_gbt(X, y, n_rounds=40)
    assert all(b <= a + 1e-12 for a, b in zip(model.losses, model.losses[1:]))
    assert np.mean((model.predict(X) - y) ** 2) == pytest.approx(model.losses[-1])


def test_boosting_finds_pure_interaction():
    rng = np.random.default_rng(9)
    X = rng.uniform(-1, 1, (400, 5))
    y = X[:, 0] * X[:, 1]
    gains = fs.fit_gbt_importance(X, y, n_rounds=30, max_depth=2)
    assert gains[0] > 0 and gains[1] > 0
    assert gains[2:].max() < 0.05 * (gains[0] + gains[1])


def test_boosting_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        fs.fit_gbt(np.ones((5, 1)), np.arange(5.0), learning_rate=0.0)


# ------------------------------------------------------------- combining

PLANT_LABELS = ("NOx", "O2in", "CO", "F", "Pin", "Tin", "Q", "3AB", "Pout", "Tout", "O2out",
                "NH3", "Ne", "TF", "TA")
PLANT_CART = [0.241, 0.21, 0.305, 0.176, 0.165, 0.361, 1, 0, 0.186, 0.301, 0.2, 0.144, 0.249, 0.126, 0.311]
PLANT_RF = [0.159, 0.254, 0.096, 0.032, 0.041, 0.304, 1, 0, 0.021, 0.315, 0.152, 0.118, 0.151, 0.089, 0.183]
PLANT_XGB = [0.055, 0.189, 0.068, 0.019, 0.025, 0.302, 1, 0, 0.029, 0.506, 0.25, 0.187, 0.218, 0.077, 0.204]


def _plant_report():
    return fs.combine_importance(PLANT_LABELS, PLANT_CART, PLANT_RF, PLANT_XGB)


def test_published_plant_rows_combine():
    rep = _plant_report()
    assert rep.score("Q") == 1.0
    assert rep.score("3AB") == 0.0
    assert rep.score("NOx") == pytest.approx((0.241 + 0.159 + 0.055) / 3, abs=1e-15)
    assert rep.score("NOx") == pytest.approx(0.1517, abs=5e-5)


def test_published_plant_selection():
    chosen = fs.select_features(_plant_report())
    assert set(chosen) == {"Q", "Tout", "Tin", "TA", "O2in", "Ne", "O2out", "NOx"}
    assert chosen[0] == "Q"
    comb = [_plant_report().score(l) for l in chosen]
    assert comb == sorted(comb, reverse=True)


def test_selection_edge_cases():
    rep = _plant_report()
    assert fs.select_features(rep, threshold=1.1) == ["NOx"]
    assert fs.select_features(rep, forced=("Q",)).count("Q") == 1
    with pytest.raises(KeyError):
        fs.select_features(rep, forced=("nope",))


def test_all_equal_scores_warn_and_zero():
    with pytest.warns(UserWarning, match="forest"):
        rep = fs.combine_importance(["a", "b"], [1.0, 2.0], [3.0, 3.0], [0.0, 5.0])
    np.testing.assert_array_equal(rep.forest, [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 15), st.integers(0, 10_000), st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_combine_bounded_and_affine_invariant(p, seed, scale, shift):
    rng = np.random.default_rng(seed)
    raw = [rng.uniform(0, 5, p) for _ in range(3)]
    labels = [f"v{i}" for i in range(p)]
    rep = fs.combine_importance(labels, *raw)
    for arr in (rep.cart, rep.forest, rep.boosted):
        assert arr.min() == 0.0 and arr.max() == 1.0
    assert np.all((rep.combined >= 0) & (rep.combined <= 1))
    moved = fs.combine_importance(labels, raw[0] * scale + shift, raw[1], raw[2])
    np.testing.assert_allclose(moved.combined, rep.combined, atol=1e-9)


def test_report_json_and_csv_round_trip(tmp_path):
    rep = _plant_report()
    rep.save(tmp_path / "r.json")
    back = fs.ImportanceReport.load(tmp_path / "r.json")
    assert back.labels == rep.labels
    for name in ("cart", "forest", "boosted"):
        np.testing.assert_array_equal(getattr(back, name), getattr(rep, name))
    rep.save_csv(tmp_path / "r.csv")
    rows = np.loadtxt(tmp_path / "r.csv", delimiter=",", skiprows=1, usecols=1)
    np.testing.assert_array_equal(rows, rep.combined)


def test_feature_importances_end_to_end():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((300, 6))
    y = 3 * np.tanh(X[:, 0]) + X[:, 3] + 0.1 * rng.standard_normal(300)
    rep = fs.feature_importances(X, y, list("abcdef"), fs.TreeParams(n_trees=20, gbt_rounds=30))
    assert set(fs.select_features(rep, forced=("b",))) == {"a", "b", "d"}


def test_tree_node_invariants():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((60, 3))
    y = X[:, 0] ** 2 + rng.standard_normal(60)
    root, scores = fs.fit_cart(X, y, max_depth=4, min_leaf=3)
    splits = _collect_splits(root, [])
    assert splits and all(n >= 6 for _, _, n in splits)
    assert np.all(scores >= 0)
