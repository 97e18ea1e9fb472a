import math

import numpy as np
import pytest

from airrl.synthcity import (CityConfig, ConfigError, PollutionSource, WindState, downwind_unit,
                             emit_dataset, generate_city, load_dataset, plume_concentration,
                             wind_direction_category)


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))}


def test_same_seed_gives_identical_directories(tmp_path):
    cfg = CityConfig(seed=7, n_hours=72, n_stations=8)
    a = emit_dataset(generate_city(cfg), tmp_path / "a")
    b = emit_dataset(generate_city(cfg), tmp_path / "b")
    assert _tree_bytes(a) == _tree_bytes(b)


def test_different_seeds_differ():
    a = generate_city(CityConfig(seed=1, n_hours=48))
    b = generate_city(CityConfig(seed=2, n_hours=48))
    assert not np.array_equal(a.stations, b.stations)


def test_station_and_aqi_row_counts(tmp_path):
    cfg = CityConfig(n_stations=30, n_hours=50, seed=0)
    out = emit_dataset(generate_city(cfg), tmp_path / "d")
    assert len((out / "stations.csv").read_text().splitlines()) == 1 + 30
    for pol in ("pm25", "pm10"):
        assert len((out / f"aqi_{pol}.csv").read_text().splitlines()) == 1 + 30 * 50


def test_zero_sources_is_background_everywhere():
    cfg = CityConfig(n_sources=0, n_hours=48, seed=4, noise=0.05)
    city = generate_city(cfg)
    pts = np.array([[1.0, 1.0], [15.0, 15.0], [29.0, 3.0]])
    for t in (0, 20, 47):
        np.testing.assert_array_equal(city.concentration("pm25", pts, t), cfg.background)
    for pol in ("pm25", "pm10"):
        aqi = city.aqi[pol]
        assert np.all(aqi == aqi.flat[0])


def test_emit_load_round_trip(tmp_path):
    city = generate_city(CityConfig(n_hours=48, n_stations=6, seed=11, missing_rate=0.05))
    out = emit_dataset(city, tmp_path / "city")
    back = load_dataset(out)
    assert back == city
    assert np.isnan(back.aqi["pm25"]).any()


def test_emit_error_names_the_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    target = blocker / "sub"
    with pytest.raises(OSError, match=str(target)):
        emit_dataset(generate_city(CityConfig(n_hours=48, n_stations=3)), target)


def test_load_missing_directory_names_path(tmp_path):
    with pytest.raises(OSError, match="nowhere"):
        load_dataset(tmp_path / "nowhere")


def test_iaqi_in_range():
    city = generate_city(CityConfig(n_hours=200, seed=5))
    for pol in ("pm25", "pm10"):
        assert np.nanmin(city.aqi[pol]) >= 0 and np.nanmax(city.aqi[pol]) <= 500
        assert np.min(city.truth[pol]) >= 0 and np.max(city.truth[pol]) <= 500


@pytest.mark.parametrize("field,kwargs", [("n_stations", dict(n_stations=1)),
                                          ("n_hours", dict(n_hours=47)),
                                          ("width_km", dict(width_km=0.0)),
                                          ("wind_regime", dict(wind_regime="stormy")),
                                          ("pollutant", dict(pollutant="o3"))])
def test_invalid_config_names_field(field, kwargs):
    with pytest.raises(ConfigError) as info:
        CityConfig(**kwargs)
    assert info.value.field == field


def test_plume_examples():
    wind = WindState(0.0, 0.0)
    assert plume_concentration([], wind, (3, 4), 10.0) == 10.0
    src = PollutionSource(5.0, 5.0, 30.0)
    assert plume_concentration([src], wind, (5, 5), 10.0) == pytest.approx(40.0, abs=1e-12)
    windy = WindState(4.0, math.radians(270.0))        # from the west, blows east
    center = np.array([5.0, 5.0]) + 0.5 * 4.0 * windy.downwind
    a = plume_concentration([src], windy, center + (0.0, 3.0), 10.0)
    b = plume_concentration([src], windy, center - (0.0, 3.0), 10.0)
    assert a == pytest.approx(b, abs=1e-12)
    assert plume_concentration([src], windy, (9, -20), 10.0) > 10.0


def test_downwind_unit_convention():
    np.testing.assert_allclose(downwind_unit(0.0), [0.0, -1.0], atol=1e-15)   # from north
    np.testing.assert_allclose(downwind_unit(math.pi / 2), [-1.0, 0.0], atol=1e-15)


def test_wind_direction_categories():
    cats = wind_direction_category([5, 5, 5, 0.2, 0.7], [0, 90, 350, 90, 90])
    assert cats.tolist() == [0, 2, 0, 8, 9]


@pytest.mark.parametrize("regime", ["calm", "windy", "mixed"])
def test_wind_regimes(regime):
    city = generate_city(CityConfig(wind_regime=regime, n_hours=96, seed=2))
    speed = city.weather["wind_speed"].mean(axis=0)
    blocks = speed.reshape(-1, 6)
    assert np.all(blocks.max(axis=1) - blocks.min(axis=1) < 1.0)   # piecewise constant, small district jitter
    if regime == "calm":
        assert speed.max() < 1.5
    elif regime == "windy":
        assert speed.min() > 3.0
    else:
        means = blocks.mean(axis=1)
        assert np.all(means[0::2] < 1.5) and np.all(means[1::2] > 3.0)


def test_weather_categories_in_range():
    w = generate_city(CityConfig(n_hours=48)).weather
    assert w["weather_cat"].min() >= 0 and w["weather_cat"].max() < 17
    assert w["wind_dir_cat"].min() >= 0 and w["wind_dir_cat"].max() < 10
    assert w["temp"].shape == (9, 48)


def test_planted_downwind_exceeds_upwind():
    cfg = CityConfig(n_hours=240, seed=9, n_sources=1, prevailing_wind_deg=270.0,
                     width_km=40, height_km=40)
    city = generate_city(cfg)
    src = city.drivers["pm25"].sources[0]
    p = np.array([src.x_km, src.y_km])
    east = np.array([1.0, 0.0])                     # prevailing wind blows towards the east
    pts = np.array([p + 5 * east, p - 5 * east])
    total = np.zeros(2)
    for t in range(0, cfg.n_hours, 3):
        total += city.concentration("pm25", pts, t)
    assert total[0] > total[1]
