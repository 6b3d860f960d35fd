"""Residual encoder-decoder reconstruction network.

The layout follows the usual ResNet image-translation generator:
7x7 entry conv, strided downsampling, a stack of residual blocks,
transposed-conv upsampling and a 7x7 exit conv.  Reflection padding and
non-affine instance normalization throughout.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    base_channels: int = 64
    n_res_blocks: int = 9
    n_downsample: int = 2
    output_activation: str = "tanh"
    in_channels: int = 1

    def __post_init__(self):
        for name in ("base_channels", "n_res_blocks", "n_downsample", "in_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"backbone.{name} must be a positive integer")
        if self.output_activation not in ("tanh", "identity"):
            raise ConfigError("backbone.output_activation must be 'tanh' or 'identity'")

    @property
    def divisor(self) -> int:
        return 2 ** self.n_downsample

    def to_dict(self) -> dict:
        return asdict(self)


# Reduced network used for CPU-scale experiments.
DESK_PRESET = BackboneConfig(base_channels=16, n_res_blocks=3)


class ResnetBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.block(x)


class Backbone(nn.Module):
    """Maps a normalized corrupted batch ``(B, C, H, W)`` to a denoised one."""

    def __init__(self, config: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.config = config
        ch = config.base_channels
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(config.in_channels, ch, kernel_size=7),
            nn.InstanceNorm2d(ch),
            nn.ReLU(inplace=True),
        ]
        for _ in range(config.n_downsample):
            layers += [
                nn.Conv2d(ch, ch * 2, kernel_size=3, stride=2, padding=1),
                nn.InstanceNorm2d(ch * 2),
                nn.ReLU(inplace=True),
            ]
            ch *= 2
        layers += [ResnetBlock(ch) for _ in range(config.n_res_blocks)]
        for _ in range(config.n_downsample):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, kernel_size=3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(ch, config.in_channels, kernel_size=7)]
        if config.output_activation == "tanh":
            layers.append(nn.Tanh())
        self.model = nn.Sequential(*layers)

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError(f"expected a (B, C, H, W) batch, got shape {tuple(x.shape)}")
        d = self.config.divisor
        h, w = x.shape[-2:]
        if h % d or w % d:
            raise ShapeError(
                f"spatial dims must be divisible by 2**n_downsample = {d}, got {h}x{w}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.model(x)


def count_parameters(module) -> int:
    """Total number of scalar parameters in a module or a name->tensor mapping."""
    if isinstance(module, nn.Module):
        tensors = list(module.parameters())
    elif isinstance(module, dict):
        tensors = list(module.values())
    else:
        tensors = list(module)
    return sum(int(t.numel()) for t in tensors)
