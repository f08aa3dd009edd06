"""Telemetry exporter: small-model training on synthetic two-modality data."""

from .data import make_dataset
from .export import ExportJob, export, load_job
from .model import SmallConvNet

__version__ = "0.1.0"
