"""Multi-stream question answering over dialog summaries."""

__version__ = "0.1.0"
