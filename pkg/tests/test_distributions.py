import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from tabablate.data import Dataset, categorical, encode, numeric
from tabablate.distributions import (
    BaselineKind,
    PerturbationSampler,
    TrainContext,
    apply_replacements,
    baseline_kind,
    build_baseline,
    perturb_row_in_encoded,
    perturbation_kind,
)
from tabablate.errors import ConfigRoleViolation, NoOppositeClassRows, SingleCategoryFeature
from tabablate.model import LinearModel, predict

ABC = categorical("c", ["A", "B", "C"])


def context(rows, labels, schema):
    return TrainContext.from_dataset(Dataset(tuple(schema), np.asarray(rows, dtype=float), labels))


def group_sums_ok(view, X):
    for j, f in enumerate(view.schema):
        if f.is_categorical:
            lo, hi = view.groups[j]
            if not np.all(X[..., lo:hi].sum(axis=-1) == 1.0):
                return False
            if not np.all(np.isin(X[..., lo:hi], (0.0, 1.0))):
                return False
    return True


# ---------------------------------------------------------------- roles

def test_role_table():
    assert perturbation_kind("marginal").value == "marginal"
    assert baseline_kind("constant_median").value == "constant_median"
    assert perturbation_kind("constant_median").value == "constant_median"
    with pytest.raises(ConfigRoleViolation):
        baseline_kind("marginal")
    with pytest.raises(ConfigRoleViolation):
        baseline_kind("max_distance")
    with pytest.raises(ConfigRoleViolation):
        perturbation_kind("training")
    with pytest.raises(ValueError):
        baseline_kind("nonsense")


# ---------------------------------------------------------------- baselines

def test_constant_median_baseline():
    ctx = context([[1, 0], [2, 2], [100, 2]], [0, 1, 0], [numeric("x"), ABC])
    b = build_baseline("constant_median", ctx, None, ctx.matrix)
    assert b.rows.shape == (1, 1, 4) and b.sample_size == 1
    row = ctx.view.decode(b.rows[0])[0]
    assert row[0] == 2.0  # median of {1, 2, 100}
    assert row[1] == 2.0  # mode category


def test_mode_ties_go_to_lowest_index():
    ctx = context([[0], [1], [2], [2], [1]], [0, 1, 0, 1, 0], [ABC])
    b = build_baseline("constant_median", ctx, None, ctx.matrix)
    np.testing.assert_array_equal(b.rows[0, 0], [0, 1, 0])


def test_training_baseline_rows_are_training_rows(prep_mlp):
    ctx = prep_mlp.context
    X = prep_mlp.encoded(prep_mlp.test)
    b = build_baseline("training", ctx, prep_mlp.model, X, 50, seed=3)
    assert b.rows.shape == (1, 50, ctx.view.d_enc) and b.shared
    train_keys = {r.tobytes() for r in ctx.matrix}
    assert all(r.tobytes() in train_keys for r in b.rows[0])
    # without replacement: 50 distinct training rows
    assert len({r.tobytes() for r in b.rows[0]}) == 50


def test_training_baseline_with_replacement_when_small():
    ctx = context([[0.0], [1.0], [2.0]], [0, 1, 0], [numeric("x")])
    b = build_baseline("training", ctx, None, ctx.matrix, 10, seed=0)
    assert b.rows.shape == (1, 10, 1)


def test_full_training_baseline():
    ctx = context([[0.0], [1.0], [2.0]], [0, 1, 0], [numeric("x")])
    b = build_baseline("training", ctx, None, ctx.matrix, None)
    np.testing.assert_array_equal(b.rows[0], ctx.matrix)


def test_nearest_neighbor_contains_self(prep_mlp):
    ctx = prep_mlp.context
    X = ctx.matrix[:20]
    b = build_baseline("nearest_neighbors", ctx, prep_mlp.model, X, k=5)
    assert b.rows.shape == (20, 5, ctx.view.d_enc)
    np.testing.assert_array_equal(b.rows[:, 0], X)


def test_nearest_neighbors_brute_force(prep_mlp):
    ctx = prep_mlp.context
    X = prep_mlp.encoded(prep_mlp.test)[:10]
    b = build_baseline("nearest_neighbors", ctx, prep_mlp.model, X, k=5)
    for i, x in enumerate(X):
        d = np.sqrt(((ctx.matrix - x) ** 2).sum(axis=1))
        expect = ctx.matrix[np.argsort(d, kind="stable")[:5]]
        np.testing.assert_allclose(b.rows[i], expect)


def test_nearest_neighbor_ties_by_row_index():
    ctx = context([[1.0], [-1.0], [1.0], [3.0]], [0, 1, 0, 1], [numeric("x")])
    b = build_baseline("nearest_neighbors", ctx, None, ctx.view.transform(np.array([[0.0]])), k=2)
    # rows 0 and 1 are equidistant from 0; row index order wins
    np.testing.assert_allclose(ctx.view.decode(b.rows[0])[:, 0], [1.0, -1.0])


def test_opposite_class_rows_have_other_label(prep_mlp):
    ctx, model = prep_mlp.context, prep_mlp.model
    X = prep_mlp.encoded(prep_mlp.test)[:30]
    b = build_baseline("opposite_class", ctx, model, X, 50, seed=1)
    assert b.rows.shape == (30, 50, ctx.view.d_enc)
    label_of = {r.tobytes(): y for r, y in zip(ctx.matrix, ctx.data.labels)}
    pred = (predict(model, X) >= 0.5).astype(int)
    for i in range(30):
        assert {label_of[r.tobytes()] for r in b.rows[i]} == {1 - pred[i]}


def test_opposite_class_needs_both_classes():
    ctx = context([[0.0], [1.0]], [1, 1], [numeric("x")])
    model = LinearModel(np.array([1.0]), 5.0)  # predicts 1 everywhere
    with pytest.raises(NoOppositeClassRows):
        build_baseline("opposite_class", ctx, model, ctx.matrix, 5)


def test_baselines_are_valid_encodings(prep_mlp):
    ctx = prep_mlp.context
    X = prep_mlp.encoded(prep_mlp.test)[:15]
    for kind in BaselineKind:
        b = build_baseline(kind, ctx, prep_mlp.model, X, 20, seed=2)
        assert group_sums_ok(ctx.view, b.rows)


def test_baselines_deterministic(prep_mlp):
    ctx = prep_mlp.context
    X = prep_mlp.encoded(prep_mlp.test)[:15]
    for kind in BaselineKind:
        a = build_baseline(kind, ctx, prep_mlp.model, X, 20, seed=7)
        b = build_baseline(kind, ctx, prep_mlp.model, X, 20, seed=7)
        assert a.rows.tobytes() == b.rows.tobytes()


# ---------------------------------------------------------------- perturbations

def test_numeric_max_distance_takes_far_endpoint():
    train = Dataset((numeric("x"),), np.array([[-1.0], [0.5], [4.0]]), [0, 1, 0])
    s = PerturbationSampler("max_distance", train)
    assert s.perturb([4.0], 0) == -1.0
    assert s.perturb([-1.0], 0) == 4.0
    assert s.perturb([3.0], 0) == -1.0
    assert s.perturb([0.0], 0) == 4.0


def test_categorical_max_distance_uniform_over_others():
    rows = np.array([[0], [1], [2]] * 10, dtype=float)
    s = PerturbationSampler("max_distance", Dataset((ABC,), rows, [0, 1] * 15))
    rng = np.random.default_rng(0)
    draws = np.array([s.perturb([0.0], 0, rng) for _ in range(10000)])
    assert 0 not in draws
    assert abs((draws == 1).mean() - 0.5) < 0.02
    assert abs((draws == 2).mean() - 0.5) < 0.02


def test_single_observed_category():
    s = PerturbationSampler("max_distance", Dataset((ABC,), np.zeros((4, 1)), [0, 1, 0, 1]))
    with pytest.raises(SingleCategoryFeature):
        s.perturb([0.0], 0)


def test_marginal_frequencies_chi_square():
    rows = np.array([[1.0], [2.0], [3.0]] * 20)
    s = PerturbationSampler("marginal", Dataset((numeric("x"),), rows, [0, 1] * 30))
    draws = s.draw(np.zeros((10000, 1)), np.random.default_rng(1))[:, 0]
    counts = np.array([(draws == v).sum() for v in (1.0, 2.0, 3.0)])
    assert counts.sum() == 10000
    assert stats.chisquare(counts).pvalue > 0.01


def test_constant_median_perturbation():
    train = Dataset((numeric("x"), ABC), np.array([[1, 2], [2, 2], [100, 0]], dtype=float), [0, 1, 0])
    s = PerturbationSampler("constant_median", train)
    assert s.perturb([50.0, 1.0], 0) == 2.0
    assert s.perturb([50.0, 1.0], 1) == 2.0


def test_sampler_stream_is_seeded():
    train = Dataset((numeric("x"),), np.arange(50.0)[:, None], [0, 1] * 25)
    a = PerturbationSampler("marginal", train, seed=4).draw(np.zeros((100, 1)))
    b = PerturbationSampler("marginal", train, seed=4).draw(np.zeros((100, 1)))
    c = PerturbationSampler("marginal", train, seed=5).draw(np.zeros((100, 1)))
    assert a.tobytes() == b.tobytes() and a.tobytes() != c.tobytes()


# ---------------------------------------------------------------- encoded updates

def test_categorical_update_in_encoded_row():
    ctx = context([[0], [1], [2]], [0, 1, 0], [ABC])
    out = perturb_row_in_encoded(ctx.view, np.array([1.0, 0.0, 0.0]), 0, 2)
    np.testing.assert_array_equal(out, [0, 0, 1])


def test_numeric_update_is_standardized_and_idempotent():
    ctx = context([[0.0, 0], [2.0, 1], [4.0, 2]], [0, 1, 0], [numeric("x"), ABC])
    row = ctx.matrix[1]
    np.testing.assert_array_equal(perturb_row_in_encoded(ctx.view, row, 0, 2.0), row)
    moved = perturb_row_in_encoded(ctx.view, row, 0, 4.0)
    assert moved[0] == ctx.matrix[2, 0]
    np.testing.assert_array_equal(moved[1:], row[1:])


@pytest.mark.parametrize("kind", ["constant_median", "marginal", "max_distance"])
def test_random_perturbations_keep_one_hot_valid(prep_mlp, kind):
    ctx = prep_mlp.context
    data = prep_mlp.test
    s = PerturbationSampler(kind, ctx.data)
    X = prep_mlp.encoded(data).copy()
    logical = data.rows.copy()
    rng = np.random.default_rng(2)
    observed = ctx.data.rows
    for _ in range(10000):
        i, j = int(rng.integers(data.n)), int(rng.integers(data.d))
        v = s.perturb(logical[i], j, rng)
        if data.schema[j].is_categorical:
            assert v in set(observed[:, j])  # in-category closure
            if kind == "max_distance":
                assert v != logical[i, j]
        apply_replacements(ctx.view, X, [i], [j], [v])
        logical[i, j] = v
    assert group_sums_ok(ctx.view, X)
    np.testing.assert_allclose(ctx.view.decode(X), logical, atol=1e-9)


@given(st.integers(0, 2), st.integers(0, 2**31))
def test_max_distance_never_returns_current(a, seed):
    s = PerturbationSampler("max_distance", Dataset((ABC,), np.array([[0], [1], [2]], dtype=float), [0, 1, 0]))
    assert s.perturb([float(a)], 0, np.random.default_rng(seed)) != a


def test_marginal_matches_training_distribution_ks(prep_mlp):
    ctx = prep_mlp.context
    s = PerturbationSampler("marginal", ctx.data)
    draws = s.draw(np.zeros((10000, ctx.data.d)), np.random.default_rng(3))
    for j, f in enumerate(ctx.data.schema):
        train_col = ctx.data.rows[:, j]
        if f.is_categorical:
            k = len(f.categories)
            obs = np.bincount(draws[:, j].astype(int), minlength=k)
            expected = np.bincount(train_col.astype(int), minlength=k) / train_col.size * 10000
            keep = expected > 0
            assert stats.chisquare(obs[keep], expected[keep]).pvalue > 0.01
        else:
            assert stats.ks_2samp(draws[:, j], train_col).pvalue > 0.01


def test_encode_view_matches_context(prep_mlp):
    ctx = prep_mlp.context
    again = encode(ctx.data)
    np.testing.assert_array_equal(again.matrix, ctx.matrix)
