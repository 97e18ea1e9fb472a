import numpy as np
import pytest

from airrl.features import SplitSpec, build_samples, compute_norm_stats, FeatureContext
from airrl.regressor import AqrConfig
from airrl.synthcity import CityConfig, generate_city


SMALL_AQR = dict(T=4, lstm_hidden=4, target_spatial=4, station_spatial=4, z_dim=4,
                 att_hidden=4, out_hidden=4, dropout=0.0)


@pytest.fixture(scope="session")
def small_city():
    return generate_city(CityConfig(n_stations=9, n_hours=96, seed=3, n_poi_per_category=10))


@pytest.fixture(scope="session")
def small_split():
    return SplitSpec((0, 1, 2, 3, 4, 5), (6, 7, 8))


@pytest.fixture(scope="session")
def small_ctx(small_city, small_split):
    stats = compute_norm_stats(small_city, small_split.train, "pm25")
    return FeatureContext(small_city, stats, "pm25", 4)


@pytest.fixture(scope="session")
def small_samples(small_city, small_split, small_ctx):
    return build_samples(small_city, small_split, 4, targets="train",
                         hours=range(3, 96, 3), ctx=small_ctx)


@pytest.fixture
def small_aqr_config():
    return AqrConfig(**SMALL_AQR)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_TRAIN = dict(T=4, lstm_hidden=4, target_spatial=4, station_spatial=4, z_dim=4, att_hidden=4,
                  out_hidden=4, policy_hidden=4, hour_stride=8, pretrain_epochs=2,
                  policy_pretrain_epochs=1, episodes=2, patience=2)


@pytest.fixture(scope="session")
def tiny_city():
    return generate_city(CityConfig(n_stations=12, n_hours=96, seed=21, n_poi_per_category=10))


@pytest.fixture
def tiny_train_config():
    from airrl.training import benchmark_config
    return benchmark_config(**TINY_TRAIN)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import verdict_lines
    except ImportError:
        return
    lines = verdict_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
