"""Few-shot referring video single- and multi-object segmentation at desk scale."""

__version__ = "0.1.0"
