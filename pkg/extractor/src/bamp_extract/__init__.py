"""Frozen-backbone feature extraction into the binary embedding format."""

__version__ = "0.1.0"

from .extract import ExtractionJob, extract

__all__ = ["ExtractionJob", "extract"]
