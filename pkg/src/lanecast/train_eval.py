"""Training loop, evaluation and the classification metrics."""
from __future__ import annotations

import copy
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import CLASSES
from .errors import BadBinWidth, Diverged, EmptyData, EmptyMatrix
from .features import assemble_all, fit_normalizer, stack_arrays
from .highd_io import load_recordings
from .models import Model, build_model
from .nn import Adam, Tensor, backward, cross_entropy
from .segmentation import DatasetConfig, build_dataset, keyed_rng

_SHUFFLE_STREAM = 11
_DROPOUT_STREAM = 12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 15
    seed: int = 0
    lr: float | None = None  # None: the configuration's own rate
    weight_decay: float | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train-config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(n: int, size: int, perm: np.ndarray) -> list[np.ndarray]:
    cuts = list(range(0, n, size))
    out = [perm[c : c + size] for c in cuts]
    # a trailing singleton would break train-mode batch norm
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def mean_loss(model: Model, X: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Eval-mode cross-entropy averaged over all samples."""
    total = 0.0
    for i in range(0, len(X), batch_size):
        xb = X[i : i + batch_size]
        loss = cross_entropy(model.logits(xb.astype(model.dtype)), y[i : i + batch_size])
        total += float(loss.data) * len(xb)
    return total / len(X)


def _snapshot(model: Model):
    return {k: t.data.copy() for k, t in model.params.items()}, copy.deepcopy(model.buffers)


def train(model: Model, train_xy, val_xy, tc: TrainConfig) -> History:
    """Fit ``model`` in place with Adam and early stopping on validation loss.

    ``train_xy`` and ``val_xy`` are ``(X, y)`` pairs of normalised arrays.
    On return the model holds the parameters of the best validation epoch.
    """
    X, y = train_xy
    Xv, yv = val_xy
    if len(X) == 0 or len(Xv) == 0:
        raise EmptyData("train and validation sets must be non-empty")
    X = np.asarray(X, dtype=model.dtype)
    Xv = np.asarray(Xv, dtype=model.dtype)
    cfg = model.config
    lr = cfg.lr if tc.lr is None else tc.lr
    wd = cfg.weight_decay if tc.weight_decay is None else tc.weight_decay
    opt = Adam(model.parameters(), lr=lr, weight_decay=wd)

    hist = History()
    best = math.inf
    best_state = _snapshot(model)
    wait = 0
    for epoch in range(tc.max_epochs):
        perm = keyed_rng(tc.seed, _SHUFFLE_STREAM, epoch).permutation(len(X))
        drop_rng = keyed_rng(tc.seed, _DROPOUT_STREAM, epoch)
        total = 0.0
        for idx in _batches(len(X), tc.batch_size, perm):
            loss = cross_entropy(model.logits(Tensor(X[idx]), train=True, rng=drop_rng), y[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise Diverged(f"non-finite loss at epoch {epoch}")
            backward(loss)
            opt.step()
            total += value * len(idx)
        hist.train_loss.append(total / len(X))
        v = mean_loss(model, Xv, yv)
        if not math.isfinite(v):
            raise Diverged(f"non-finite validation loss at epoch {epoch}")
        hist.val_loss.append(v)
        if v < best:
            best, wait = v, 0
            hist.best_epoch = epoch
            best_state = _snapshot(model)
        else:
            wait += 1
            if wait >= tc.patience:
                hist.stopped_early = True
                break
    params, buffers = best_state
    for k, t in model.params.items():
        t.data = params[k]
    model.buffers = buffers
    return hist


# -- metrics -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns predicted, both in LK/LLC/RLC order."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (3, 3) or (c < 0).any():
            raise ValueError("confusion counts must be a non-negative 3x3 array")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> ConfusionMatrix:
        counts = np.zeros((3, 3), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def to_list(self) -> list:
        return self.counts.tolist()


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("accuracy of an empty confusion matrix")
    return 100.0 * np.trace(cm.counts) / cm.total


def delta_acc(train_acc: float, test_acc: float) -> float:
    return train_acc - test_acc


@dataclass(frozen=True)
class ClassMetrics:
    recall: tuple
    precision: tuple
    f1: tuple
    degenerate: tuple  # per class: some ratio was 0/0


def _ratio(num, den):
    return (100.0 * num / den, False) if den else (0.0, True)


def per_class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    c = cm.counts
    rec, prec, f1, flags = [], [], [], []
    for k in range(3):
        r, fr = _ratio(c[k, k], c[k, :].sum())
        p, fp = _ratio(c[k, k], c[:, k].sum())
        f, ff = (2 * p * r / (p + r), False) if p + r > 0 else (0.0, True)
        rec.append(float(r))
        prec.append(float(p))
        f1.append(float(f))
        flags.append(fr or fp or ff)
    return ClassMetrics(tuple(rec), tuple(prec), tuple(f1), tuple(flags))


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    delta_acc: float
    recall: tuple
    precision: tuple
    f1: tuple
    confusion: ConfusionMatrix
    train_acc: float
    degenerate: tuple

    @classmethod
    def build(cls, test_cm: ConfusionMatrix, train_cm: ConfusionMatrix) -> MetricsReport:
        acc, tr = accuracy(test_cm), accuracy(train_cm)
        m = per_class_metrics(test_cm)
        return cls(acc, delta_acc(tr, acc), m.recall, m.precision, m.f1, test_cm, tr, m.degenerate)

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "delta_acc": self.delta_acc,
            "train_acc": self.train_acc,
            "recall": list(self.recall),
            "precision": list(self.precision),
            "f1": list(self.f1),
            "degenerate": list(self.degenerate),
            "confusion": self.confusion.to_list(),
        }


@dataclass(frozen=True)
class PredictionTimeHistogram:
    bin_edges: np.ndarray
    total_counts: np.ndarray
    correct_counts: np.ndarray

    def rows(self):
        for k in range(len(self.total_counts)):
            yield (
                float(self.bin_edges[k]),
                float(self.bin_edges[k + 1]),
                int(self.total_counts[k]),
                int(self.correct_counts[k]),
            )

    def to_dict(self) -> dict:
        return {
            "bin_edges": self.bin_edges.tolist(),
            "total": self.total_counts.tolist(),
            "correct": self.correct_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> PredictionTimeHistogram:
        return cls(np.asarray(d["bin_edges"]), np.asarray(d["total"]), np.asarray(d["correct"]))


def prediction_time_histogram(
    y_true, y_pred, prediction_time_s, max_pred_time_s: float, bin_width_s: float = 0.25
) -> PredictionTimeHistogram:
    """Counts of LC samples per prediction-time bin, all and correctly classified.

    Bins are right-closed: (0, w], (w, 2w], ... up to ``max_pred_time_s``.
    LK samples (label 0) are ignored.
    """
    if not (math.isfinite(bin_width_s) and bin_width_s > 0):
        raise BadBinWidth(f"bin width must be positive, got {bin_width_s}")
    n_bins = max(1, math.ceil(max_pred_time_s / bin_width_s - 1e-9))
    edges = np.array([min(k * bin_width_s, max_pred_time_s) for k in range(n_bins + 1)])
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    pt = np.asarray(prediction_time_s, dtype=np.float64)
    lc = y_true != 0
    k = np.clip(np.ceil(pt[lc] / bin_width_s - 1e-9).astype(np.int64) - 1, 0, n_bins - 1)
    total = np.bincount(k, minlength=n_bins)
    correct = np.bincount(k[(y_pred == y_true)[lc]], minlength=n_bins)
    return PredictionTimeHistogram(edges, total, correct)


def evaluate(model: Model, X, y) -> ConfusionMatrix:
    """Eval-mode confusion matrix over already-normalised arrays."""
    if len(X) == 0:
        raise EmptyData("nothing to evaluate")
    return ConfusionMatrix.from_predictions(y, model.predict(np.asarray(X, dtype=model.dtype)))


# -- sweeps --------------------------------------------------------------------

def parse_grid(text: str) -> tuple[list[float], list[float]]:
    """``"1,2,3x3,4,5,6"`` -> ([1, 2, 3], [3, 4, 5, 6])."""
    try:
        obs, pred = text.split("x")
        return [float(v) for v in obs.split(",")], [float(v) for v in pred.split(",")]
    except ValueError:
        raise ValueError(f"grid must look like '1,2,3x3,4,5,6', got {text!r}")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("LANECAST_WORKERS", "1")))
    except ValueError:
        return 1


def cell_name(arch: str, obs: float, pred: float) -> str:
    return f"{arch}_o{obs:g}_p{pred:g}"


def prepare_cell(recordings, obs: float, pred: float, seed: int):
    """Dataset split, normaliser and normalised arrays for one grid cell."""
    split = build_dataset(recordings, DatasetConfig(obs, pred, seed))
    mats = {name: assemble_all(segs, recordings) for name, segs in split.items()}
    norm = fit_normalizer(mats["train"])
    arrays = {name: stack_arrays(m, norm) for name, m in mats.items()}
    return split, norm, arrays


def run_cell(arch: str, arrays, obs: float, pred: float, seed: int, tc: TrainConfig,
             bin_width_s: float = 0.25) -> dict:
    """Train one architecture on prepared arrays and return its result row."""
    X, y, _ = arrays["train"]
    model = build_model(arch, X.shape[1], seed=seed, dtype=np.float32)
    hist = train(model, (X, y), arrays["val"][:2], tc)
    Xt, yt, ptt = arrays["test"]
    pred_t = model.predict(Xt.astype(np.float32))
    test_cm = ConfusionMatrix.from_predictions(yt, pred_t)
    train_cm = evaluate(model, X, y)
    report = MetricsReport.build(test_cm, train_cm)
    histo = prediction_time_histogram(yt, pred_t, ptt, pred, bin_width_s)
    counts = {
        name: {c: int((a[1] == i).sum()) for i, c in enumerate(CLASSES)}
        for name, a in arrays.items()
    }
    return {
        "arch": arch,
        "obs_window_s": obs,
        "max_pred_time_s": pred,
        "seed": seed,
        "train_config": tc.to_dict(),
        "counts": counts,
        "metrics": report.to_dict(),
        "histogram": histo.to_dict(),
        "history": hist.to_dict(),
    }


_RECORDINGS_CACHE: dict = {}


def _cell_job(args) -> list[dict]:
    data_dir, archs, obs, pred, seed, tc, bin_width = args
    key = str(data_dir)
    if key not in _RECORDINGS_CACHE:
        _RECORDINGS_CACHE[key] = load_recordings(data_dir)
    _, _, arrays = prepare_cell(_RECORDINGS_CACHE[key], obs, pred, seed)
    return [run_cell(a, arrays, obs, pred, seed, tc, bin_width) for a in archs]


def sweep(archs, grid, data_dir, seed: int, tc: TrainConfig, bin_width_s: float = 0.25,
          workers: int | None = None) -> list[dict]:
    """One result row per (architecture, grid cell), in grid-then-arch order.

    Every architecture in a cell sees the same segments: the split depends
    only on the corpus, the cell and ``seed``.
    """
    obs_values, pred_values = grid
    jobs = [
        (Path(data_dir), tuple(archs), o, p, seed, tc, bin_width_s)
        for o in obs_values
        for p in pred_values
    ]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        results = [_cell_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_cell_job, jobs))
    return [row for rows in results for row in rows]


RESULT_COLUMNS = (
    "arch", "obs_window_s", "max_pred_time_s", "acc", "delta_acc",
    "f1_LK", "f1_LLC", "f1_RLC", "n_train", "n_val", "n_test",
)


def result_row(res: dict) -> list:
    m = res["metrics"]
    return [
        res["arch"],
        res["obs_window_s"],
        res["max_pred_time_s"],
        round(m["acc"], 2),
        round(m["delta_acc"], 2),
        *[round(v, 2) for v in m["f1"]],
        *[sum(res["counts"][s].values()) for s in ("train", "val", "test")],
    ]
