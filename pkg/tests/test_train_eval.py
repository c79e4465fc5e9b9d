import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lanecast.errors import BadBinWidth, Diverged, EmptyData, EmptyMatrix
from lanecast.features import fit_normalizer, stack_arrays
from lanecast.models import build_model
from lanecast.synthetic import generate_separable_toy
from lanecast.train_eval import (
    ConfusionMatrix,
    MetricsReport,
    TrainConfig,
    accuracy,
    delta_acc,
    evaluate,
    parse_grid,
    per_class_metrics,
    prediction_time_histogram,
    sweep,
    train,
)


def toy_arrays(n_per_class=40, n=8, seed=0):
    mats = generate_separable_toy(n_per_class, n, seed)
    norm = fit_normalizer(mats)
    X, y, _ = stack_arrays(mats, norm)
    return X, y


# -- metrics -----------------------------------------------------------------------

def test_accuracy_examples():
    assert accuracy(ConfusionMatrix(np.diag([10, 10, 10]))) == 100.0
    cm = ConfusionMatrix(np.array([[1607, 17, 27], [28, 728, 0], [39, 0, 919]]))
    assert round(accuracy(cm), 2) == 96.70


def test_accuracy_empty():
    with pytest.raises(EmptyMatrix):
        accuracy(ConfusionMatrix(np.zeros((3, 3), dtype=int)))


@pytest.mark.parametrize("tr,te,d", [(95, 95, 0), (98.2, 96.7, 1.5), (90, 95, -5)])
def test_delta_acc(tr, te, d):
    assert delta_acc(tr, te) == pytest.approx(d)


def test_per_class_perfect():
    m = per_class_metrics(ConfusionMatrix(np.diag([5, 5, 5])))
    assert m.recall == m.precision == m.f1 == (100.0, 100.0, 100.0)
    assert not any(m.degenerate)


def test_per_class_degenerate():
    m = per_class_metrics(ConfusionMatrix(np.array([[4, 1, 0], [2, 3, 0], [0, 0, 0]])))
    assert m.recall[2] == 0.0 and m.precision[2] == 0.0 and m.f1[2] == 0.0
    assert m.degenerate == (False, False, True)


@given(arrays(np.int64, (3, 3), elements=st.integers(0, 500)))
@settings(max_examples=200)
def test_f1_between_precision_and_recall(counts):
    if counts.sum() == 0:
        return
    m = per_class_metrics(ConfusionMatrix(counts))
    for k in range(3):
        if m.degenerate[k]:
            continue
        lo, hi = sorted((m.precision[k], m.recall[k]))
        assert lo - 1e-9 <= m.f1[k] <= hi + 1e-9
    assert 0 <= accuracy(ConfusionMatrix(counts)) <= 100


def test_confusion_from_predictions():
    cm = ConfusionMatrix.from_predictions([0, 0, 1, 2, 2], [0, 1, 1, 2, 0])
    assert cm.to_list() == [[1, 1, 0], [0, 1, 0], [1, 0, 1]]
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[-1, 0, 0], [0, 0, 0], [0, 0, 0]]))


def test_report_dict():
    cm = ConfusionMatrix(np.diag([3, 3, 3]))
    r = MetricsReport.build(cm, ConfusionMatrix(np.diag([4, 4, 4])))
    d = r.to_dict()
    assert d["acc"] == 100.0 and d["delta_acc"] == 0.0
    assert json.loads(json.dumps(d)) == d


# -- histogram ---------------------------------------------------------------------

def test_histogram_all_correct_identical():
    pt = np.array([0.1, 0.25, 0.26, 2.9, 3.0, np.nan])
    y = np.array([1, 2, 1, 2, 1, 0])
    h = prediction_time_histogram(y, y, pt, 3.0, 0.25)
    assert len(h.total_counts) == 12
    assert np.array_equal(h.total_counts, h.correct_counts)
    assert h.total_counts.sum() == 5
    assert h.total_counts[0] == 2 and h.total_counts[1] == 1 and h.total_counts[-1] == 2


def test_histogram_fails_beyond_two_seconds():
    rng = np.random.default_rng(0)
    pt = rng.uniform(0, 3, size=200)
    pt[pt == 0] = 0.1
    y = rng.integers(1, 3, size=200)
    pred = np.where(pt > 2.0, 0, y)
    h = prediction_time_histogram(y, pred, pt, 3.0, 0.25)
    assert h.correct_counts[8:].sum() == 0
    assert np.array_equal(h.correct_counts[:8], h.total_counts[:8])


def test_histogram_bad_width():
    for w in (0.0, -1.0, float("nan")):
        with pytest.raises(BadBinWidth):
            prediction_time_histogram([1], [1], [1.0], 3.0, w)


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.floats(1e-3, 4.0)), min_size=1, max_size=80),
       st.sampled_from([0.1, 0.25, 0.5, 1.0]))
@settings(max_examples=100)
def test_histogram_conservation(rows, width):
    y, pred, pt = map(np.array, zip(*rows))
    pt = np.where(y == 0, np.nan, pt)
    h = prediction_time_histogram(y, pred, pt, 4.0, width)
    cm = ConfusionMatrix.from_predictions(y, pred)
    assert h.total_counts.sum() == (y != 0).sum()
    assert h.correct_counts.sum() == cm.counts[1, 1] + cm.counts[2, 2]
    assert (h.correct_counts <= h.total_counts).all()
    assert h.bin_edges[0] == 0 and h.bin_edges[-1] == 4.0


# -- evaluation and training --------------------------------------------------------

class Constant:
    dtype = np.float64

    def __init__(self, cls):
        self.cls = cls

    def predict(self, X):
        return np.full(len(X), self.cls)


class Oracle:
    dtype = np.float64

    def predict(self, X):
        return X[:, 0, 0].astype(int)


def test_evaluate_examples():
    y = np.repeat([0, 1, 2], 3)
    X = np.zeros((9, 2, 36))
    X[:, 0, 0] = y
    assert evaluate(Oracle(), X, y).to_list() == np.diag([3, 3, 3]).tolist()
    cm = evaluate(Constant(0), X, y)
    assert cm.counts[:, 1:].sum() == 0 and cm.total == 9
    with pytest.raises(EmptyData):
        evaluate(Oracle(), X[:0], y[:0])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3})
    assert TrainConfig.from_dict({"max_epochs": 3}).max_epochs == 3


@pytest.mark.parametrize("name", ["lstm2", "cnn3", "tn1"])
def test_toy_separable(name):
    X, y = toy_arrays(100)
    Xv, yv = toy_arrays(100, seed=1)
    m = build_model(name, X.shape[1], seed=0, dtype=np.float32)
    hist = train(m, (X, y), (Xv, yv), TrainConfig(batch_size=16, max_epochs=50, patience=50))
    assert len(hist.train_loss) <= 50
    assert accuracy(evaluate(m, X, y)) >= 99.0


def test_training_deterministic():
    X, y = toy_arrays(10)
    runs = []
    for _ in range(2):
        m = build_model("cnn1", X.shape[1], seed=1, dtype=np.float32)
        runs.append(train(m, (X, y), (X, y), TrainConfig(batch_size=8, max_epochs=3)).to_dict())
    assert runs[0] == runs[1]


def test_lr_zero_keeps_parameters():
    X, y = toy_arrays(10)
    m = build_model("tn1", X.shape[1], seed=1, dtype=np.float32)
    before = {k: t.data.copy() for k, t in m.params.items()}
    hist = train(m, (X, y), (X, y), TrainConfig(batch_size=8, max_epochs=3, lr=0.0))
    assert all(np.array_equal(before[k], t.data) for k, t in m.params.items())
    assert len(set(hist.val_loss)) == 1


def test_early_stop_restores_best():
    X, y = toy_arrays(10)
    rng = np.random.default_rng(0)
    yv = rng.integers(0, 3, size=len(y))  # unlearnable labels
    m = build_model("lstm3", X.shape[1], seed=1, dtype=np.float32)
    hist = train(m, (X, y), (X, yv), TrainConfig(batch_size=8, max_epochs=200, patience=3, lr=0.05))
    assert hist.stopped_early
    assert len(hist.val_loss) == hist.best_epoch + 4
    from lanecast.train_eval import mean_loss

    assert mean_loss(m, X.astype(np.float32), yv) == pytest.approx(min(hist.val_loss), rel=1e-6)


def test_diverged():
    X, y = toy_arrays(5)
    X[0, 0, 0] = np.nan
    m = build_model("lstm3", X.shape[1], dtype=np.float32)
    with pytest.raises(Diverged):
        train(m, (X, y), (X, y), TrainConfig(max_epochs=1))


def test_empty_training_data():
    X, y = toy_arrays(5)
    with pytest.raises(EmptyData):
        train(build_model("lstm3", 8), (X[:0], y[:0]), (X, y), TrainConfig())


# -- sweep -------------------------------------------------------------------------

def test_parse_grid():
    assert parse_grid("1,2,3x3,4,5,6") == ([1.0, 2.0, 3.0], [3.0, 4.0, 5.0, 6.0])
    with pytest.raises(ValueError):
        parse_grid("1,2,3")


def test_sweep_counts_and_shared_membership(small_corpus_dir):
    tc = TrainConfig(max_epochs=1)
    rows = sweep(["lstm3", "cnn2", "tn1"], ([1.0, 2.0], [3.0, 4.0]), small_corpus_dir, 0, tc, workers=1)
    assert len(rows) == 12
    for cell in range(4):
        group = rows[3 * cell : 3 * cell + 3]
        assert len({json.dumps(r["counts"], sort_keys=True) for r in group}) == 1
        assert len({(r["obs_window_s"], r["max_pred_time_s"]) for r in group}) == 1
