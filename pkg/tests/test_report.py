import numpy as np

from landseg.metrics import ConfusionMatrix
from landseg.report import (plot_class_histogram, plot_confusion_matrix,
                            plot_iou, plot_loss_curve)
from landseg.tiler import ClassHistogram
from landseg.train import StepRecord


def test_loss_curve_written(tmp_path):
    history = [StepRecord(step=i, lr=0.01, loss=1.0 / (i + 1)) for i in range(20)]
    out = tmp_path / "loss.png"
    plot_loss_curve(history, out)
    assert out.stat().st_size > 1000


def test_confusion_figure_written(tmp_path):
    cm = ConfusionMatrix()
    rng = np.random.default_rng(0)
    cm.add(rng.integers(0, 6, 500), rng.integers(0, 6, 500))
    out = tmp_path / "cm.png"
    plot_confusion_matrix(cm, out)
    assert out.stat().st_size > 1000


def test_histogram_figure_written(tmp_path):
    hist = ClassHistogram(np.array([100, 50, 25, 25, 10, 40]))
    out = tmp_path / "hist.png"
    plot_class_histogram(hist, np.ones(6), out)
    assert out.stat().st_size > 1000


def test_iou_figure_written_with_nan(tmp_path):
    iou = np.array([1.0, 0.5, np.nan, 0.25, np.nan, 0.75])
    out = tmp_path / "iou.png"
    plot_iou(iou, 0.625, out)
    assert out.stat().st_size > 1000
