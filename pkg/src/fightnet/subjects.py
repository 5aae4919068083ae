"""Named gradient-check subjects: tiny double-precision instances of every
layer, both recurrent cells and the end-to-end models."""
from __future__ import annotations

import numpy as np

from .layers import BatchNorm, Conv2D, FullyConnected, MaxPool2D, ReLU
from .model import ModelConfig, build_model
from .recurrent import LSTM, ConvLSTM
from .tensor import make_rng

F64 = np.float64
# Composite models contain ReLU and max-pool kinks; a 1e-3 step routinely
# straddles one, so they are differenced with a smaller step.
MODEL_EPS = 1e-5


def tiny_model_config(aggregator="convlstm"):
    return ModelConfig(
        backbone="tiny-cnn",
        aggregator=aggregator,
        aggregator_width=4,
        tiny_channels=(4, 6),
        lstm_fc=(12,),
        head=(8, 1),
        frame_size=16,
    )


def make_subject(name: str, seed: int = 0):
    """Return ``(subject, input, grad_check_kwargs)`` for a named subject."""
    rng = make_rng(seed)
    normal = rng.standard_normal
    if name == "conv2d":
        return Conv2D(2, 3, 3, 1, 1, rng, F64), normal((2, 2, 5, 5)), {}
    if name == "conv2d-strided":
        return Conv2D(2, 3, 3, 2, 0, rng, F64), normal((2, 2, 7, 7)), {}
    if name == "maxpool":
        return MaxPool2D(3, 2), normal((2, 2, 7, 7)), {}
    if name == "relu":
        return ReLU(), normal((2, 3, 4, 4)), {}
    if name == "fc":
        return FullyConnected(5, 4, rng, F64), normal((3, 5)), {}
    if name == "batchnorm":
        return BatchNorm(3, dtype=F64), normal((4, 3)), {}
    if name == "batchnorm-spatial":
        return BatchNorm(3, dtype=F64), normal((3, 3, 2, 2)), {}
    if name.startswith("convlstm-"):
        steps = int(name.split("-")[1])
        return ConvLSTM(2, 3, 3, rng, F64), normal((2, steps, 2, 4, 4)), {}
    if name.startswith("lstm-"):
        steps = int(name.split("-")[1])
        return LSTM(4, 3, rng, F64), normal((2, steps, 4)), {}
    if name in ("model-convlstm", "model-lstm"):
        model = build_model(tiny_model_config(name.split("-")[1]), rng, F64)
        x = normal((2, 3, 3, 16, 16))
        return model, x, {"labels": np.array([0, 1]), "eps": MODEL_EPS}
    raise KeyError(f"unknown gradcheck subject {name!r}")
