"""Word-box graph pipeline for line-item table detection and field extraction."""

__version__ = "0.1.0"
