import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from airrl.evaluation import (BREAKPOINTS, accuracy, concentration_to_iaqi, iaqi_level,
                              metrics_row, read_metrics_report, rmse, write_metrics_report)


def test_rmse_examples():
    assert rmse([(1, 1), (5, 5)]) == 0.0
    assert rmse([(0, 3), (0, 4)]) == pytest.approx(3.5355339, abs=1e-7)
    assert rmse([(0, 4), (0, 3)]) == rmse([(0, 3), (0, 4)])


def test_rmse_empty_raises():
    with pytest.raises(ValueError):
        rmse([])


@pytest.mark.parametrize("value,level", [(45, 1), (50, 1), (51, 2), (100, 2), (150, 3),
                                         (200, 4), (300, 5), (301, 6), (0, 1)])
def test_iaqi_level_table(value, level):
    assert iaqi_level(value) == level


def test_iaqi_level_negative_raises():
    with pytest.raises(ValueError):
        iaqi_level(-1)


def test_accuracy_examples():
    assert accuracy([(30, 30), (120, 120)]) == 1.0
    assert accuracy([(30, 40), (60, 70), (120, 130), (160, 250)]) == 0.75
    assert accuracy([(75, 75.6)]) == 1.0
    with pytest.raises(ValueError):
        accuracy([])


def test_concentration_examples():
    assert concentration_to_iaqi(0) == 0
    assert concentration_to_iaqi(35, "pm25") == 50
    assert concentration_to_iaqi(55, "pm25") == 75
    assert concentration_to_iaqi(10_000, "pm25") == 500
    assert concentration_to_iaqi(150, "pm10") == 100
    with pytest.raises(ValueError):
        concentration_to_iaqi(-0.1)


@pytest.mark.parametrize("pollutant", ["pm25", "pm10"])
def test_breakpoint_joints_exact(pollutant):
    bp = BREAKPOINTS[pollutant]
    for c, i in zip(bp.concentration, bp.iaqi):
        assert concentration_to_iaqi(c, pollutant) == i


@given(st.floats(0, 800), st.floats(0, 800))
def test_iaqi_and_level_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert concentration_to_iaqi(lo) <= concentration_to_iaqi(hi)
    assert iaqi_level(concentration_to_iaqi(lo)) <= iaqi_level(concentration_to_iaqi(hi))


iaqi_values = st.integers(0, 50_000).map(lambda v: v / 100)


@given(st.lists(st.tuples(iaqi_values, iaqi_values), min_size=1, max_size=30))
def test_metric_ranges(pairs):
    assert 0.0 <= accuracy(pairs) <= 1.0
    r = rmse(pairs)
    assert r >= 0.0
    assert (r == 0.0) == all(t == p for t, p in pairs)


def test_report_round_trip(tmp_path):
    rows = [metrics_row("knn", "pm25", [10, 20], [12, 18], "5"),
            metrics_row("airrl", "pm25", [10, 20], [10, 21])]
    csv_path, txt_path = write_metrics_report(rows, tmp_path / "report")
    assert csv_path.name == "report.csv" and txt_path.name == "report.txt"
    back = read_metrics_report(csv_path)
    assert [(r.method, r.k, r.n_samples) for r in back] == [("knn", "5", 2), ("airrl", "", 2)]
    assert back[0].rmse == rows[0].rmse
    assert "knn-5" in txt_path.read_text()
    assert math.isclose(back[1].rmse, math.sqrt(0.5))
