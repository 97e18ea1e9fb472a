"""Fine-grained air quality inference with a learned station selector.

The library is split into a synthetic city generator, feature extraction,
a numpy neural toolkit, the attention regressor (AQR), the REINFORCE
station selector, training, baselines and metrics.
"""
from .synthcity import SCHEMA_VERSION, CityConfig, CityDataset, generate_city, emit_dataset, load_dataset
from .regressor import AqrConfig, AqrParams, load_checkpoint, save_checkpoint
from .training import TrainConfig, benchmark_config, prepare_data, run_training

__version__ = "0.1.0"

__all__ = ["SCHEMA_VERSION", "CityConfig", "CityDataset", "generate_city", "emit_dataset",
           "load_dataset", "AqrConfig", "AqrParams", "load_checkpoint", "save_checkpoint",
           "TrainConfig", "benchmark_config", "prepare_data", "run_training", "__version__"]
