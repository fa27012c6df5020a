"""Dense volumes from sparse slices with a pose-conditioned flow and an
exchangeable latent process."""

import json

from ._slicemap import (
    ConfigError,
    DivergenceError,
    FormatError,
    Model,
    NumericError,
    ShapeError,
    SlicemapError,
    cross_correlation,
    generate_phantom,
    load_volume,
    save_volume,
    select_context_schedule,
    ssim,
)
from ._slicemap import default_config as _default_config
from ._slicemap import train as _train

__all__ = [
    "ConfigError",
    "DivergenceError",
    "FormatError",
    "Model",
    "NumericError",
    "ShapeError",
    "SlicemapError",
    "cross_correlation",
    "default_config",
    "generate_phantom",
    "load_volume",
    "save_volume",
    "select_context_schedule",
    "ssim",
    "train",
]


def default_config():
    """Default run configuration as a dict; the "model" entry feeds train()."""
    return json.loads(_default_config())


def train(model_config, training, validation=(), checkpoint=""):
    """Train from scratch on lists of (Z, Y, X) float arrays.

    model_config is a dict shaped like default_config()["model"]; missing keys
    keep their defaults. Returns [(epoch, train_nll, val_nll)].
    """
    return _train(json.dumps(model_config), list(training), list(validation), str(checkpoint))
