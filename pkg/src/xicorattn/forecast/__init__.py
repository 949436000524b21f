"""Forecasting harness: datasets, patching, the host model, training and benchmarks."""

from .data import CsvSchema, SeriesDataset, load_csv, synth_dataset, write_csv
from .model import Adam, ForecastModel, ModelConfig
from .patching import PatchConfig, patchify
from .training import EvalReport, TrainConfig, TrainResult, evaluate, train
