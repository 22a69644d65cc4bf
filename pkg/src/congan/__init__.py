"""Contaminated-GAN estimation of counterfactual distributions in triangular models."""
from .data import Dataset, read_csv, write_csv
from .dgp import DGPSpec, preset, simulate
from .harness import EstimateTable, RunConfig, aggregate, emit, run_replicate, run_table
from .training import FittedModel, fit

__all__ = ["Dataset", "read_csv", "write_csv", "DGPSpec", "preset", "simulate", "EstimateTable",
           "RunConfig", "aggregate", "emit", "run_replicate", "run_table", "FittedModel", "fit"]
