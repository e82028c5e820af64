"""Incremental graph convolution with colliding effect distillation for recommender retraining."""

__version__ = "0.1.0"
