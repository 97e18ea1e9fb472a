"""
Interpolating from nearby stations
==================================

Before any learning, a target location can be estimated from the
stations around it. Three classic estimators are included.
"""

# %%
import numpy as np

from airrl.baselines import interp_gaussian, interp_linear, knn_average

# Each row is (distance in km, IAQI reading).
stations = [(1.0, 40.0), (3.0, 80.0)]
print("inverse distance:", interp_linear(stations))           # 1/d weights: (40 + 80/3) / (4/3)
print("gaussian, unnormalized:", interp_gaussian(stations, sigma=2.0))
print("gaussian, normalized:", interp_gaussian(stations, sigma=2.0, normalize=True))
print("nearest-k mean (k=1):", knn_average(stations, k=1))

# %%
# The unnormalized Gaussian sum is a density, not a weighted mean, so its
# scale depends on the bandwidth and on how many stations there are. The
# normalized variant is what one would use in practice.
for sigma in (1.0, 5.0, 20.0):
    print(sigma, round(interp_gaussian(stations, sigma), 3),
          round(interp_gaussian(stations, sigma, normalize=True), 3))

# %%
# Score all baselines on held-out stations of a synthetic city. Two
# thirds of the stations form the candidate pool and the rest pose as
# targets.
from airrl.experiments import baseline_rows
from airrl.synthcity import CityConfig, generate_city
from airrl.training import benchmark_config, prepare_data

city = generate_city(CityConfig(n_stations=30, n_hours=480, seed=1))
data = prepare_data(city, benchmark_config(seed=1))
rows, _ = baseline_rows(data, "pm25")
for r in rows:
    print(f"{r.method:14s} k={r.k or '-':3s} rmse {r.rmse:6.2f}  accuracy {r.accuracy:.3f}")
