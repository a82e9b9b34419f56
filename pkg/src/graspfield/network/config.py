"""Network architecture description and the shape rule."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel_size: int
    pool: bool = True


@dataclass(frozen=True)
class NetworkConfig:
    """``fc_layers[0]`` is the flattened encoder width; the rest are hidden widths.

    Conv blocks are conv (valid, stride 1) -> batchnorm -> ReLU -> optional
    maxpool(2). The first ``fc_batchnorm`` dense layers get batchnorm.
    """

    input_resolution: int
    conv_layers: tuple
    fc_layers: tuple
    output_dim: int
    in_channels: int = 1
    conv_batchnorm: bool = True
    fc_batchnorm: int = 2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        convs = tuple(c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conv_layers)
        object.__setattr__(self, "conv_layers", convs)
        object.__setattr__(self, "fc_layers", tuple(int(w) for w in self.fc_layers))
        if self.output_dim < 1:
            raise ValueError("output_dim must be positive")
        if not self.fc_layers:
            raise ValueError("fc_layers needs at least the flattened width")
        spatial = conv_output_shape(self.input_resolution, convs)
        flat = flatten_length(self.input_resolution, convs, self.in_channels)
        if self.fc_layers[0] != flat:
            raise ValueError(
                f"fc_layers[0] = {self.fc_layers[0]} but the conv encoder flattens to {flat} "
                f"({spatial}^3 x channels)"
            )
        if not 0 <= self.fc_batchnorm <= len(self.fc_layers) - 1:
            raise ValueError("fc_batchnorm exceeds the number of hidden dense layers")

    @property
    def feature_length(self):
        return self.fc_layers[0]

    def to_dict(self):
        d = asdict(self)
        d["conv_layers"] = [asdict(c) for c in self.conv_layers]
        d["fc_layers"] = list(self.fc_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def conv_output_shape(resolution, conv_layers):
    """Spatial edge length after the conv encoder: ``n -> n-k+1``, then ``floor(n/2)`` when pooled."""
    n = int(resolution)
    for c in conv_layers:
        spec = c if isinstance(c, ConvSpec) else ConvSpec(**c)
        n = n - spec.kernel_size + 1
        if n < 1:
            raise ValueError(f"input resolution {resolution} too small for the conv stack")
        if spec.pool:
            n //= 2
            if n < 1:
                raise ValueError(f"input resolution {resolution} too small for the conv stack")
    return n


def flatten_length(resolution, conv_layers, in_channels=1):
    convs = [c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in conv_layers]
    ch = convs[-1].out_channels if convs else in_channels
    return conv_output_shape(resolution, convs) ** 3 * ch


def auto_config(input_resolution, conv_layers, hidden, output_dim, **kw):
    """Config whose first fc width is filled in from the shape rule."""
    convs = tuple(c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in conv_layers)
    flat = flatten_length(input_resolution, convs, kw.get("in_channels", 1))
    kw.setdefault("fc_batchnorm", min(2, len(hidden)))
    return NetworkConfig(input_resolution, convs, (flat,) + tuple(hidden), output_dim, **kw)


def desk_config(output_dim, input_resolution=16):
    """Small encoder sized for single-core training on 16^3 grids."""
    convs = (ConvSpec(8, 3, True), ConvSpec(16, 3, True), ConvSpec(32, 2, False))
    return auto_config(input_resolution, convs, (128, 64), output_dim)


def full_scale_config(output_dim, input_resolution=80):
    """Three 64-channel kernel-4 pooled blocks, hidden widths 4096 and 1024.

    With valid padding a 7^3 x 64 = 21952 feature map needs an input edge in
    77..84 (80 by default); a 128^3 input would flatten to 13^3 x 64. Used for
    shape bookkeeping only, it is far too large to train here.
    """
    convs = (ConvSpec(64, 4, True),) * 3
    return auto_config(input_resolution, convs, (4096, 1024), output_dim)
