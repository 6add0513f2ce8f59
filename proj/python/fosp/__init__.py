"""Python access to the fosp smoke-segmentation library.

Arrays are float64 NCHW (a 3-D CHW array is treated as a batch of one).
Configurations travel as plain dicts in the same nested layout as the JSON
config files.
"""

import json

from . import _fosp
from ._fosp import (
    Model,
    compose,
    decompose_background,
    generate,
    smoke_mask,
    split_bucket,
)

__all__ = [
    "Model",
    "compose",
    "config_hash",
    "decompose_background",
    "default_config",
    "evaluate",
    "generate",
    "metrics",
    "smoke_mask",
    "split_bucket",
    "train",
]


def default_config():
    return json.loads(_fosp.default_config())


def config_hash(config):
    return _fosp.config_hash(json.dumps(config))


def metrics(prob, gt, beta_sq=0.3, error="mse", threshold=0.5):
    """Per-sample F_beta, mIoU, M, recall and precision of one prediction."""
    return json.loads(_fosp.metrics(prob, gt, beta_sq, error, threshold))


def train(config, data, out=""):
    """Trains on <data>/train; returns the per-iteration loss records."""
    return json.loads(_fosp.train(json.dumps(config), str(data), str(out)))


def evaluate(checkpoint, data, split="test"):
    """Metrics report and focus-map recall of a checkpoint on one split."""
    return json.loads(_fosp.evaluate(str(checkpoint), str(data), split))
