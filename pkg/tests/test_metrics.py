import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtmask.metrics import (
    Confusion,
    confusion,
    dumps,
    mask_report,
    mean_defined,
    pixel_metrics,
    regression_metrics,
    report_csv,
)

from .oracles import loop_confusion, loop_regression


def test_confusion_examples():
    ones = np.ones((2, 2))
    assert confusion(ones, ones) == Confusion(4, 0, 0, 0)
    rng = np.random.default_rng(0)
    lab = rng.random((4, 4)) > 0.5
    valid = rng.random((4, 4)) > 0.3
    c = confusion(~lab, lab, valid)
    assert c.tp == 0 and c.tn == 0 and c.fp + c.fn == valid.sum()


def test_confusion_shape_errors():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((3, 3), bool))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_confusion_matches_loop(seed):
    rng = np.random.default_rng(seed)
    pred, lab = rng.random((16, 16)) > 0.5, rng.random((16, 16)) > 0.4
    valid = rng.random((16, 16)) > 0.1
    c = confusion(pred, lab, valid)
    assert (c.tp, c.fp, c.fn, c.tn) == loop_confusion(pred, lab, valid)


def test_pixel_metrics_examples():
    m = pixel_metrics(Confusion(3, 2, 1, 0))
    assert m.precision == pytest.approx(0.6)
    assert m.recall == pytest.approx(0.75)
    assert m.f1 == pytest.approx(2 / 3)
    assert m.iou == pytest.approx(0.5)
    empty = pixel_metrics(Confusion(0, 0, 0, 10))
    assert (empty.precision, empty.recall, empty.f1, empty.iou) == (None, None, None, None)
    miss = pixel_metrics(Confusion(0, 5, 5, 0))
    assert miss.precision == 0 and miss.recall == 0 and miss.iou == 0
    assert miss.f1 is None


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_identity(tp, fp, fn):
    m = pixel_metrics(Confusion(tp, fp, fn, 0))
    if tp > 0:
        assert m.f1 == pytest.approx(2 * tp / (2 * tp + fp + fn), rel=1e-12)
        assert m.iou == pytest.approx(m.f1 / (2 - m.f1), rel=1e-12)
        assert 0 < m.f1 <= 1


def test_regression_examples():
    r = regression_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert r.rmse == 0 and r.max_abs_error == 0 and r.n == 3
    r = regression_metrics([0.0, 0.0], [1.0, -3.0])
    assert r.bias == 1.0
    assert r.mae == 2.0
    assert r.rmse == pytest.approx(math.sqrt(5))
    with pytest.raises(ValueError):
        regression_metrics([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        regression_metrics([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 800), st.floats(0, 800)), min_size=1, max_size=40))
def test_regression_matches_loop(pairs):
    y, yhat = zip(*pairs)
    got = regression_metrics(y, yhat)
    want = loop_regression(y, yhat)
    for k, v in want.items():
        assert getattr(got, k) == pytest.approx(v, rel=1e-9, abs=1e-9), k


def test_mean_defined():
    assert mean_defined([0.5, None, 1.0]) == (0.75, 1)
    assert mean_defined([None]) == (None, 1)


def test_report_pools_and_skips():
    per_scene = {
        "a": {"water": Confusion(1, 1, 0, 2), "snow_ice": Confusion(0, 0, 0, 4)},
        "b": {"water": Confusion(3, 0, 1, 0), "snow_ice": Confusion(2, 0, 0, 2)},
    }
    rep = mask_report(per_scene)
    assert rep["pooled"]["water"]["tp"] == 4
    assert rep["pooled"]["water"]["f1"] == pytest.approx(8 / 10)
    assert rep["scene_mean"]["snow_ice"] == {"f1": 1.0, "skipped": 1}
    assert rep["pooled_mean_f1"] == pytest.approx((0.8 + 1.0) / 2)
    assert json.loads(dumps(rep))["scenes"][0]["snow_ice"]["f1"] is None
    lines = report_csv(rep).splitlines()
    assert lines[0].startswith("scene,mask,tp")
    assert sum(l.startswith("*pooled*") for l in lines) == 2
    assert "a,snow_ice,0,0,0,4,,,," in lines
