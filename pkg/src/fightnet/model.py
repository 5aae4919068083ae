"""Model configuration, assembly and parameter accounting.

The network processes a clip batch ``[B, T, C, H, W]``: every frame goes
through the convolutional backbone, the per-frame features are aggregated by
a recurrent cell, and the final hidden state is batch-normalized, flattened
and classified by a small fully-connected head ending in a sigmoid unit.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .archive import load_weights
from .layers import (
    BatchNorm,
    Conv2D,
    Flatten,
    FullyConnected,
    MaxPool2D,
    ReLU,
    Sequential,
)
from .recurrent import LSTM, ConvLSTM

BACKBONES = ("alexnet-conv", "tiny-cnn")
AGGREGATORS = ("convlstm", "lstm")
INPUT_MODES = ("frames", "diff")

# (name, cout, k, stride, pad, pool-after) ; pools are 3/2 overlapping
ALEXNET_CONV = (
    ("conv1", 96, 11, 4, 2, True),
    ("conv2", 256, 5, 1, 2, True),
    ("conv3", 384, 3, 1, 1, False),
    ("conv4", 384, 3, 1, 1, False),
    ("conv5", 256, 3, 1, 1, True),
)


@dataclass
class ModelConfig:
    backbone: str = "alexnet-conv"
    aggregator: str = "convlstm"
    aggregator_width: int | None = None  # 256 filters for convlstm, 1000 units for lstm
    head: tuple[int, ...] = (125, 1)
    input_mode: str = "diff"
    backbone_init: str = "xavier"
    conv_norm: tuple[str, ...] = ()  # one of batchnorm|none per conv layer; empty = none
    kernel_size: int = 3
    tiny_channels: tuple[int, ...] = (8, 16)
    lstm_fc: tuple[int, ...] = (4096, 4096)
    in_channels: int = 3
    frame_size: int = 224

    def __post_init__(self):
        self.head = tuple(int(v) for v in self.head)
        self.conv_norm = tuple(self.conv_norm)
        self.tiny_channels = tuple(int(v) for v in self.tiny_channels)
        self.lstm_fc = tuple(int(v) for v in self.lstm_fc)
        if self.aggregator_width is None:
            self.aggregator_width = 256 if self.aggregator == "convlstm" else 1000
        self.validate()

    def validate(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if not self.head or self.head[-1] != 1 or min(self.head) < 1:
            raise ValueError(f"head widths must be positive and end with 1, got {self.head}")
        if self.aggregator_width <= 0:
            raise ValueError("aggregator_width must be positive")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if not (self.backbone_init == "xavier" or self.backbone_init.startswith("archive:")):
            raise ValueError("backbone_init must be 'xavier' or 'archive:<path>'")
        n_conv = len(self.conv_specs())
        if self.conv_norm and len(self.conv_norm) != n_conv:
            raise ValueError(f"conv_norm needs {n_conv} entries, got {len(self.conv_norm)}")
        bad = [v for v in self.conv_norm if v not in ("batchnorm", "none")]
        if bad:
            raise ValueError(f"conv_norm entries must be batchnorm|none, got {bad}")

    def conv_specs(self):
        if self.backbone == "alexnet-conv":
            return ALEXNET_CONV
        return tuple(
            (f"conv{n + 1}", c, 3, 1, 1, True) for n, c in enumerate(self.tiny_channels)
        )

    def pool_geometry(self):
        return (3, 2) if self.backbone == "alexnet-conv" else (2, 2)

    def feature_dims(self, frame_size: int | None = None):
        """Backbone output dims ``[C, H, W]`` for a square frame."""
        size = self.frame_size if frame_size is None else frame_size
        c = self.in_channels
        pk, ps = self.pool_geometry()
        for _, cout, k, s, p, pool in self.conv_specs():
            size = T.conv_output_size(size, k, s, p)
            c = cout
            if pool:
                size = (size - pk) // ps + 1
            if size < 1:
                raise ValueError(f"frame size {frame_size} too small for backbone {self.backbone}")
        return [c, size, size]

    def to_dict(self):
        return asdict(self)


class Model:
    """Backbone + recurrent aggregator + batchnorm + classifier head."""

    def __init__(self, config: ModelConfig, rng=None, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        cfg = config
        norms = cfg.conv_norm or ("none",) * len(cfg.conv_specs())
        pk, ps = cfg.pool_geometry()

        layers = []
        cin = cfg.in_channels
        for (name, cout, k, s, p, pool), norm in zip(cfg.conv_specs(), norms):
            layers.append((name, Conv2D(cin, cout, k, s, p, rng=rng, dtype=dtype)))
            layers.append((f"relu_{name}", ReLU()))
            if norm == "batchnorm":
                layers.append((f"norm_{name}", BatchNorm(cout, dtype=dtype)))
            if pool:
                layers.append((f"pool_{name}", MaxPool2D(pk, ps)))
            cin = cout
        self.backbone = Sequential(layers)
        feat = cfg.feature_dims()
        self.feature_dims = feat

        width = cfg.aggregator_width
        self.frame_fc = None
        if cfg.aggregator == "convlstm":
            self.aggregator = ConvLSTM(feat[0], width, cfg.kernel_size, rng=rng, dtype=dtype)
            agg_out = width * feat[1] * feat[2]
        else:
            fc = [("flatten", Flatten())]
            n_in = int(np.prod(feat))
            for idx, n_out in enumerate(cfg.lstm_fc):
                fc.append((f"fc{idx + 6}", FullyConnected(n_in, n_out, rng=rng, dtype=dtype)))
                fc.append((f"relu_fc{idx + 6}", ReLU()))
                n_in = n_out
            self.frame_fc = Sequential(fc)
            self.aggregator = LSTM(n_in, width, rng=rng, dtype=dtype)
            agg_out = width
        self.bn = BatchNorm(width, dtype=dtype)

        head = [("flatten", Flatten())]
        n_in = agg_out
        for idx, n_out in enumerate(cfg.head):
            head.append((f"fc{idx + 1}", FullyConnected(n_in, n_out, rng=rng, dtype=dtype)))
            if idx < len(cfg.head) - 1:
                head.append((f"relu{idx + 1}", ReLU()))
            n_in = n_out
        self.head = Sequential(head)

        self.components = [("backbone", self.backbone)]
        if self.frame_fc is not None:
            self.components.append(("frame_fc", self.frame_fc))
        self.components += [("aggregator", self.aggregator), ("bn", self.bn), ("head", self.head)]

        self.params, self.grads, self.buffers = {}, {}, {}
        for prefix, comp in self.components:
            for k in comp.params:
                self.params[f"{prefix}.{k}"] = comp.params[k]
                self.grads[f"{prefix}.{k}"] = comp.grads[k]
            for k in comp.buffers:
                self.buffers[f"{prefix}.{k}"] = comp.buffers[k]
        self.training = True
        self._cache = None

        if cfg.backbone_init.startswith("archive:"):
            load_weights(self, cfg.backbone_init[len("archive:"):], require_prefix="backbone.")

    def state_dict(self):
        out = dict(self.params)
        out.update(self.buffers)
        return out

    def train(self, mode: bool = True):
        self.training = mode
        for _, comp in self.components:
            comp.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0

    def forward(self, x):
        """``x``: ``[B, T, C, H, W]`` clip batch. Returns probabilities ``[B]``."""
        if x.ndim != 5:
            raise T.ShapeError(f"expected clip batch [B,T,C,H,W], got {list(x.shape)}")
        fs = self.config.frame_size
        if x.shape[2] != self.config.in_channels or x.shape[-2:] != (fs, fs):
            raise T.ShapeError(
                f"frames must be [{self.config.in_channels},{fs},{fs}], got {list(x.shape[2:])}"
            )
        b, t = x.shape[:2]
        feats = self.backbone.forward(x.reshape((b * t,) + x.shape[2:]))
        if self.frame_fc is not None:
            feats = self.frame_fc.forward(feats)
        feats = feats.reshape((b, t) + feats.shape[1:])
        h = self.aggregator.forward(feats)
        z = self.head.forward(self.bn.forward(h))[:, 0]
        p = T.sigmoid(z)
        self._cache = (x.shape, p)
        return p

    def backward(self, grad_p):
        if self._cache is None:
            raise RuntimeError("Model.backward called before forward")
        shape, p = self._cache
        self._cache = None
        gz = T.sigmoid_grad(p, grad_p)[:, None]
        gh = self.bn.backward(self.head.backward(gz))
        gf = self.aggregator.backward(gh)
        b, t = shape[:2]
        gf = gf.reshape((b * t,) + gf.shape[2:])
        if self.frame_fc is not None:
            gf = self.frame_fc.backward(gf)
        gx = self.backbone.backward(gf)
        return gx.reshape(shape)

    __call__ = forward


def build_model(cfg: ModelConfig, rng=None, dtype=np.float32) -> Model:
    """Instantiate ``cfg``. With ``rng=None`` weights are zero-filled (cheap, for audits)."""
    return Model(cfg, rng=rng, dtype=dtype)


def forward(model: Model, clip) -> float:
    """Probability of 'violent' for one clip given as a list/array of ``[C,H,W]`` frames."""
    frames = np.asarray(clip, dtype=model.dtype)
    if frames.ndim != 4 or len(frames) == 0:
        raise T.ShapeError(f"clip must be a non-empty [T,C,H,W] stack, got {list(frames.shape)}")
    if frames.shape[1] != model.config.in_channels:
        raise T.ShapeError(f"frames have {frames.shape[1]} channels, model expects {model.config.in_channels}")
    was_training = model.training
    model.eval()
    try:
        return float(model.forward(frames[None])[0])
    finally:
        model.train(was_training)


def count_params(model: Model):
    """Exact trainable scalar count and a per-component breakdown."""
    breakdown = {
        prefix: int(sum(v.size for v in comp.params.values()))
        for prefix, comp in model.components
    }
    return sum(breakdown.values()), breakdown


def expected_param_count(cfg: ModelConfig):
    """Closed-form parameter count from the config alone (no model built)."""
    def conv(cin, cout, k):
        return cout * cin * k * k + cout

    def fc(n_in, n_out):
        return n_in * n_out + n_out

    out = {}
    norms = cfg.conv_norm or ("none",) * len(cfg.conv_specs())
    cin, total = cfg.in_channels, 0
    for (_, cout, k, _, _, _), norm in zip(cfg.conv_specs(), norms):
        total += conv(cin, cout, k) + (2 * cout if norm == "batchnorm" else 0)
        cin = cout
    out["backbone"] = total
    c, h, w = cfg.feature_dims()
    width = cfg.aggregator_width
    k = cfg.kernel_size
    if cfg.aggregator == "convlstm":
        out["aggregator"] = 4 * (k * k * c * width + k * k * width * width + width)
        n_in = width * h * w
    else:
        n_in, total = c * h * w, 0
        for n_out in cfg.lstm_fc:
            total += fc(n_in, n_out)
            n_in = n_out
        out["frame_fc"] = total
        out["aggregator"] = 4 * ((n_in + width) * width + width)
        n_in = width
    out["bn"] = 2 * width
    total = 0
    for n_out in cfg.head:
        total += fc(n_in, n_out)
        n_in = n_out
    out["head"] = total
    return sum(out.values()), out
