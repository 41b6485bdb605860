"""Experiment harness, file formats and command line."""
from .formats import (CSV_HEADER, FormatError, ResultRow, export_pgm, read_csv, read_ksp, read_spark_model,
                      write_csv, write_ksp, write_spark_model)
from .harness import ConfigError, ExperimentConfig, config_from_dict, load_config, run_experiment

__all__ = [
    "CSV_HEADER", "ConfigError", "ExperimentConfig", "FormatError", "ResultRow", "config_from_dict",
    "export_pgm", "load_config", "read_csv", "read_ksp", "read_spark_model", "run_experiment", "write_csv",
    "write_ksp", "write_spark_model",
]
