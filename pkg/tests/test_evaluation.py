import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sensorfill.evaluation import (
    CvReport, FoldError, SavedModel, abs_error, compare_methods, cross_validate, fit_model,
    fold_seed, make_batch, reconstruct, write_reconstruction_csv,
)
from sensorfill.field_data import (
    FieldConfig, FieldDataError, NormParams, clean_field, fit_normalizer, gen_synthetic,
    select_subsets, split_kfold,
)
from sensorfill.mlp import Network, NetworkSpec, ShapeError, forward, sse_loss
from sensorfill.optimizers import TrainConfig, TrainingError

FIXED = ("s01", "s02", "s03", "s06")
QUICK = TrainConfig("hybrid", 30, record_time=False)


@pytest.fixture(scope="module")
def small_split(small_dataset):
    return select_subsets(small_dataset, method="explicit-list", fixed_ids=FIXED)


def _linear_model(d, split, eps=1e-4):
    """A tanh network reproducing the exact linear fixed -> moved relation
    of a noiseless field: hidden = tanh(eps * z), output = M hidden / eps + c."""
    norm = fit_normalizer(d)
    zx = norm.select(split.fixed_ids).normalize(d.columns(split.fixed_ids))
    zy = norm.select(split.moved_ids).normalize(d.columns(split.moved_ids))
    design = np.column_stack([zx, np.ones(len(zx))])
    coef, *_ = np.linalg.lstsq(design, zy, rcond=None)
    assert np.max(np.abs(design @ coef - zy)) < 1e-10
    m, c = coef[:-1].T, coef[-1]
    n = len(split.fixed_ids)
    spec = NetworkSpec((n, n, len(split.moved_ids)))
    net = Network(spec, (eps * np.eye(n), m / eps), (np.zeros(n), c))
    return SavedModel(net, norm, split, d.valid_range)


# -- abs_error --------------------------------------------------------------------

def test_abs_error_trivial():
    y = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert abs_error(y, y) == 0.0
    assert abs_error([[3.5]], [[2.5]]) == 1.0


def test_abs_error_matches_double_loop(rng):
    y, p = rng.normal(size=(10, 3)) * 10, rng.normal(size=(10, 3)) * 10
    total = 0.0
    for j in range(10):
        for c in range(3):
            total += abs(y[j, c] - p[j, c])
    assert abs_error(y, p) == pytest.approx(total / 30, abs=1e-12)


def test_abs_error_shape_mismatch():
    with pytest.raises(ShapeError):
        abs_error(np.zeros((2, 3)), np.zeros((3, 2)))


@given(st.integers(0, 10_000))
def test_abs_error_nonnegative_and_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(5, 2))
    p = y.copy()
    assert abs_error(y, p) == 0.0
    p[rng.integers(5), rng.integers(2)] += rng.uniform(1e-9, 1.0)
    assert abs_error(y, p) > 0.0


# -- reconstruct -------------------------------------------------------------------

def test_reconstruct_matches_closed_form(small_field, small_dataset, small_split):
    model = _linear_model(small_dataset, small_split)
    batch = make_batch(small_dataset, small_split, model.norm)
    assert sse_loss(model.network, batch) < 1e-12
    rec = reconstruct(model, small_dataset)
    truth = clean_field(small_field)[:, small_dataset.column_indices(small_split.moved_ids)]
    assert np.max(np.abs(rec.estimates - truth)) <= 1e-6
    assert rec.n_clamped == 0
    np.testing.assert_array_equal(rec.timestamps, small_dataset.timestamps)


def test_reconstruct_constant_field():
    cfg = FieldConfig(sensors=5, samples=100, positions=((0, 0), (1, 0), (0, 1), (1, 1), (0.5, 0.5)),
                      base=15.0, diurnal_amplitude=0.0)
    d = gen_synthetic(cfg)
    assert np.all(d.readings == 15.0)
    split = select_subsets(d, method="explicit-list", fixed_ids=["s01", "s02", "s03"])
    model, _ = fit_model(d, split, NetworkSpec((3, 2, 2)), TrainConfig("hybrid", 100))
    rec = reconstruct(model, d.columns(split.fixed_ids))
    assert np.all(np.abs(rec.estimates - 15.0) <= 0.5)


def test_reconstruct_single_row(small_dataset, small_split):
    model = _linear_model(small_dataset, small_split)
    rec = reconstruct(model, small_dataset.columns(FIXED)[:1], timestamps=[123.0])
    assert rec.estimates.shape == (1, 2)
    assert rec.timestamps.tolist() == [123.0]


def test_reconstruct_input_errors(small_dataset, small_split):
    model = _linear_model(small_dataset, small_split)
    with pytest.raises(ShapeError):
        reconstruct(model, np.zeros((3, 5)))
    with pytest.raises(FieldDataError, match="outside"):
        reconstruct(model, np.full((1, 4), 80.0))


def test_reconstruct_clamps_and_flags(small_dataset, small_split):
    model = _linear_model(small_dataset, small_split)
    net = model.network
    hot = Network(net.spec, net.weights, (net.biases[0], net.biases[1] + np.array([5.0, 0.0])))
    rec = reconstruct(replace(model, network=hot), small_dataset.columns(FIXED)[:3])
    assert np.all(rec.estimates[:, 0] == 60.0)
    assert rec.clamped[:, 0].all() and not rec.clamped[:, 1].any()


def test_abs_error_independent_of_normalization(small_dataset, small_split):
    """Re-expressing the same Celsius model under another normalization
    leaves the Celsius error unchanged."""
    model = _linear_model(small_dataset, small_split)
    d, split = small_dataset, small_split
    rng = np.random.default_rng(1)
    net = Network(model.network.spec,
                  (model.network.weights[0], model.network.weights[1] + rng.normal(0, 50, size=(2, 4))),
                  model.network.biases)
    model = replace(model, network=net)
    ids = model.norm.sensor_ids
    new = NormParams(ids, model.norm.offset + rng.normal(0, 3, len(ids)),
                     model.norm.scale * rng.uniform(0.5, 2.0, len(ids)))
    fx, mv = model.norm.select(split.fixed_ids), model.norm.select(split.moved_ids)
    nfx, nmv = new.select(split.fixed_ids), new.select(split.moved_ids)
    w1, w2 = net.weights
    b1, b2 = net.biases
    w1n = w1 * (nfx.scale / fx.scale)
    b1n = b1 + w1 @ ((nfx.offset - fx.offset) / fx.scale)
    w2n = w2 * (mv.scale / nmv.scale)[:, None]
    b2n = (mv.scale * b2 + mv.offset - nmv.offset) / nmv.scale
    other = SavedModel(Network(net.spec, (w1n, w2n), (b1n, b2n)), new, split, d.valid_range)
    targets = d.columns(split.moved_ids)
    a = abs_error(targets, reconstruct(model, d).estimates)
    b = abs_error(targets, reconstruct(other, d).estimates)
    assert a > 0.01  # perturbed model is not an exact fit
    assert b == pytest.approx(a, rel=1e-10)


# -- saved model --------------------------------------------------------------------

def test_model_json_round_trip(small_dataset, small_split, tmp_path):
    model, _ = fit_model(small_dataset, small_split, NetworkSpec((4, 3, 2), init_seed=9), QUICK,
                         meta={"note": "x"})
    path = tmp_path / "model.json"
    model.save(path)
    back = SavedModel.load(path)
    assert back.to_json() == model.to_json()
    assert back.model_id == model.model_id
    x = small_dataset.columns(FIXED)
    np.testing.assert_array_equal(reconstruct(back, x).estimates, reconstruct(model, x).estimates)


def test_model_rejects_foreign_document():
    with pytest.raises(ValueError):
        SavedModel.from_dict({"format": "other"})


def test_model_requires_matching_shapes(small_dataset, small_split):
    model = _linear_model(small_dataset, small_split)
    with pytest.raises(ShapeError):
        SavedModel(model.network, model.norm, select_subsets(
            small_dataset, method="explicit-list", fixed_ids=["s01"]), small_dataset.valid_range)


def test_reconstruction_csv(small_dataset, small_split, tmp_path):
    model = _linear_model(small_dataset, small_split)
    rec = reconstruct(model, small_dataset)
    path = tmp_path / "p.csv"
    write_reconstruction_csv(rec, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "timestamp,s04,s05,clamped"
    assert len(lines) == small_dataset.n_samples + 1
    first = lines[1].split(",")
    assert float(first[1]) == rec.estimates[0, 0]


# -- cross-validation ----------------------------------------------------------------

def test_cv_fold_sizes(reference_dataset):
    d = reference_dataset.take(np.arange(100))
    split = select_subsets(d, 14)
    report = cross_validate(d, split, NetworkSpec("14:11:9"), TrainConfig("rprop", 3), k=5)
    assert report.k == 5
    assert [(f.n_train, f.n_test) for f in report.folds] == [(80, 20)] * 5
    assert report.mean_abs_error == pytest.approx(np.mean(report.abs_errors), abs=1e-12)
    assert report.config["k"] == 5 and report.config["split"]["fixed_ids"] == list(split.fixed_ids)


def test_cv_each_sample_tested_once(small_dataset, small_split):
    plan = split_kfold(small_dataset.n_samples, 4, seed=11)
    report = cross_validate(small_dataset, small_split, NetworkSpec((4, 3, 2)), QUICK, k=4, seed=11)
    assert sum(f.n_test for f in report.folds) == small_dataset.n_samples
    assert [f.n_test for f in report.folds] == plan.sizes().tolist()


def test_cv_fold_seeds_distinct_and_reported(small_dataset, small_split):
    report = cross_validate(small_dataset, small_split, NetworkSpec((4, 3, 2)), QUICK, k=3, seed=2)
    seeds = [f.init_seed for f in report.folds]
    assert seeds == [fold_seed(2, i) for i in range(3)]
    assert len(set(seeds)) == 3


def test_cv_deterministic_and_parallel_identical(small_dataset, small_split):
    args = (small_dataset, small_split, NetworkSpec((4, 3, 2)), QUICK)
    a = cross_validate(*args, k=4, seed=5)
    b = cross_validate(*args, k=4, seed=5)
    c = cross_validate(*args, k=4, seed=5, n_jobs=3)
    assert a.to_json() == b.to_json() == c.to_json()


def test_cv_report_csv(small_dataset, small_split, tmp_path):
    report = cross_validate(small_dataset, small_split, NetworkSpec((4, 3, 2)), QUICK, k=3)
    report.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("fold,n_train,n_test,train_sse,test_sse,test_abs_error")
    assert len(lines) == 4


def test_cv_wraps_training_errors_with_fold(small_dataset, small_split, monkeypatch):
    import sensorfill.evaluation as ev

    def boom(net, batch, cfg):
        raise TrainingError("diverged")
    monkeypatch.setattr(ev, "train", boom)
    with pytest.raises(FoldError, match="fold 0: diverged") as info:
        cross_validate(small_dataset, small_split, NetworkSpec((4, 3, 2)), QUICK, k=2)
    assert info.value.fold == 0


def test_cv_rejects_bad_k_and_shape(small_dataset, small_split):
    with pytest.raises(ValueError):
        cross_validate(small_dataset, small_split, NetworkSpec((4, 3, 2)), QUICK, k=1)
    with pytest.raises(ShapeError):
        cross_validate(small_dataset, small_split, NetworkSpec((5, 3, 2)), QUICK, k=2)


# -- compare -----------------------------------------------------------------------

def test_compare_grid_shape(small_dataset, small_split):
    table = compare_methods(small_dataset, small_split, ["4:3:2", "4:3:3:2"], QUICK, k=2, seeds=[0])
    assert len(table.rows) == 6
    assert {(r.method, r.architecture) for r in table.rows} == {
        (m, a) for m in ("rprop", "bfgs", "hybrid") for a in ("4:3:2", "4:3:3:2")}
    assert "4:3:3:2" in table.format()


def test_compare_single_cell_equals_cross_validate(small_dataset, small_split):
    table = compare_methods(small_dataset, small_split, ["4:3:2"], QUICK, k=3, seeds=[7],
                            methods=["bfgs"])
    assert len(table.rows) == 1
    alone = cross_validate(small_dataset, small_split, NetworkSpec("4:3:2"),
                           replace(QUICK, method="bfgs"), k=3, seed=7)
    assert table.reports[("bfgs", "4:3:2", 7)].to_json() == alone.to_json()
    assert table.rows[0].mean_abs_error == alone.mean_abs_error


def test_compare_requires_seeds(small_dataset, small_split):
    with pytest.raises(ValueError):
        compare_methods(small_dataset, small_split, ["4:3:2"], QUICK, k=2, seeds=[])


def test_compare_serialization(small_dataset, small_split, tmp_path):
    table = compare_methods(small_dataset, small_split, ["4:3:2"], QUICK, k=2, seeds=[0, 1],
                            n_jobs=2)
    again = compare_methods(small_dataset, small_split, ["4:3:2"], QUICK, k=2, seeds=[0, 1])
    assert table.to_json() == again.to_json()
    table.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "method,architecture,mean_abs_error,median_abs_error,mean_wall_time,n_seeds"
    assert len(lines) == 4
