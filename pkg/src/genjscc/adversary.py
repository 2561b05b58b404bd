"""Conditional patch discriminator: judges (image, codeword) pairs per patch.

The codeword's latent grid is nearest-neighbor upsampled to the image
resolution and concatenated along channels. A cascade of stride-2
convolutions (spectrally normalized, leaky ReLU) downsamples, and a final
sigmoid convolution emits one real/fake probability per patch region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils import spectral_norm as apply_spectral_norm

from .channel import Codeword


@dataclass(frozen=True)
class DiscriminatorConfig:
    channel_widths: tuple[int, ...] = (64, 128, 256, 512)
    spectral_norm: bool = True
    patch_pixels: int = 16
    condition_upsample: int = 16
    lrelu_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "channel_widths", tuple(self.channel_widths))
        if len(self.channel_widths) < 1:
            raise ValueError("need at least one discriminator stage")
        if self.patch_pixels != 2 ** len(self.channel_widths):
            raise ValueError(
                f"patch_pixels {self.patch_pixels} inconsistent with "
                f"{len(self.channel_widths)} stride-2 stages"
            )
        if self.condition_upsample < 1:
            raise ValueError("condition_upsample must be >= 1")


@dataclass(frozen=True)
class PatchLogits:
    """Per-patch real/fake probabilities, strictly inside (0, 1)."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"expected a 2-D patch map, got shape {p.shape}")
        object.__setattr__(self, "probabilities", p)


class PatchDiscriminator(nn.Module):
    """forward(img NCHW, cond latent NCHW) -> probabilities (N, 1, H/p, W/p)."""

    def __init__(self, cfg: DiscriminatorConfig, cond_channels: int):
        super().__init__()
        self.cfg = cfg
        self.cond_channels = cond_channels
        wrap = apply_spectral_norm if cfg.spectral_norm else (lambda m: m)
        layers: list[nn.Module] = []
        prev = 3 + cond_channels
        for w in cfg.channel_widths:
            layers += [
                wrap(nn.Conv2d(prev, w, 4, stride=2, padding=1)),
                nn.LeakyReLU(cfg.lrelu_slope, inplace=True),
            ]
            prev = w
        layers += [wrap(nn.Conv2d(prev, 1, 3, stride=1, padding=1)), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)
        self.upsample = nn.Upsample(scale_factor=cfg.condition_upsample, mode="nearest")

    def forward(self, img: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        cond_up = self.upsample(cond)
        if cond_up.shape[-2:] != img.shape[-2:]:
            raise ValueError(
                f"condition grid {tuple(cond.shape[-2:])} x{self.cfg.condition_upsample} "
                f"does not match image dims {tuple(img.shape[-2:])}"
            )
        return self.net(torch.cat([img, cond_up], dim=1))

    def receptive_field(self) -> tuple[int, int]:
        """(input pixels influencing one output, output stride), from the conv ladder."""
        rf, stride = 1, 1
        for _ in self.cfg.channel_widths:
            rf += (4 - 1) * stride
            stride *= 2
        rf += (3 - 1) * stride  # final stride-1 conv
        return rf, stride


def discriminate(img: np.ndarray, s: Codeword, cfg: DiscriminatorConfig, disc: PatchDiscriminator) -> PatchLogits:
    """Per-patch probabilities that ``img`` is a real sample given codeword ``s``."""
    h, w, c = s.grid_shape
    if c != disc.cond_channels:
        raise ValueError(f"codeword has {c} latent channels, discriminator expects {disc.cond_channels}")
    up = cfg.condition_upsample
    if (h * up, w * up) != img.shape[:2]:
        raise ValueError(
            f"latent grid {h}x{w} x{up} does not cover image {img.shape[0]}x{img.shape[1]}"
        )
    dtype = next(disc.parameters()).dtype
    cond = torch.from_numpy(s.values.reshape(h, w, c)).to(dtype).permute(2, 0, 1).unsqueeze(0)
    img_t = torch.from_numpy(np.ascontiguousarray(img)).to(dtype).permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        probs = disc(img_t, cond)
    return PatchLogits(probabilities=probs.squeeze(0).squeeze(0).cpu().numpy())
