"""Segmentation of star-convex objects in noisy images with incomplete
boundaries: polar band serialization, bidirectional LSTM shape inference,
multi-viewpoint fusion, a multiscale auto-context cascade and a final
active-shape-model fit."""

__version__ = "0.1.0"
