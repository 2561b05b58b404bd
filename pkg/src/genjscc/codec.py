"""Learned encoder and generator: image -> latent grid -> codeword, and back.

The encoder downsamples with stride-2 convolutions (ChannelNorm + leaky ReLU),
refines with residual blocks at the bottleneck, and projects to the latent
channel count that realizes the requested bandwidth ratio. The generator
mirrors it with nearest-neighbor upsampling stages and squashes its output
smoothly into [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch
import torch.nn as nn

from .channel import Codeword, power_normalize


@dataclass(frozen=True)
class CodecConfig:
    downsample_factor: int = 16
    base_channels: int = 64
    max_channels: int = 256
    latent_channels: int = 16
    residual_blocks: int = 4
    norm_kind: str = "channelnorm"
    lrelu_slope: float = 0.2

    def __post_init__(self):
        d = self.downsample_factor
        if d < 2 or (d & (d - 1)) != 0:
            raise ValueError(f"downsample_factor must be a power of 2 >= 2, got {d}")
        if self.latent_channels < 1:
            raise ValueError("latent_channels must be >= 1")
        if self.residual_blocks < 0:
            raise ValueError("residual_blocks must be >= 0")
        if self.norm_kind != "channelnorm":
            raise ValueError(f"unsupported norm {self.norm_kind!r}")

    @property
    def n_stages(self) -> int:
        return int(math.log2(self.downsample_factor))

    @property
    def cbr(self) -> Fraction:
        """Bandwidth ratio implied by the architecture: C_out / (3 d^2)."""
        return Fraction(self.latent_channels, 3 * self.downsample_factor**2)

    def stage_widths(self) -> list[int]:
        return [min(self.base_channels * 2**i, self.max_channels) for i in range(self.n_stages)]


def latent_channels_for_cbr(downsample_factor: int, cbr: float | Fraction) -> int:
    """Latent channel count whose realized CBR is closest to the request."""
    c = round(3 * downsample_factor**2 * Fraction(cbr))
    if c < 1:
        raise ValueError(f"requested cbr {cbr} needs < 1 latent channel at d={downsample_factor}")
    return int(c)


class ChannelNorm(nn.Module):
    """Normalizes across channels at each spatial position, with learned affine."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) * torch.rsqrt(var + self.eps) * self.gamma + self.beta


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, slope: float):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            ChannelNorm(channels),
            nn.LeakyReLU(slope, inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            ChannelNorm(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Encoder(nn.Module):
    """(N, 3, H, W) in [0, 1] -> latent grid (N, C_out, H/d, W/d). H, W must divide d."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths()
        layers: list[nn.Module] = [
            nn.Conv2d(3, cfg.base_channels, 7, padding=3),
            ChannelNorm(cfg.base_channels),
            nn.LeakyReLU(cfg.lrelu_slope, inplace=True),
        ]
        prev = cfg.base_channels
        for w in widths:
            layers += [
                nn.Conv2d(prev, w, 3, stride=2, padding=1),
                ChannelNorm(w),
                nn.LeakyReLU(cfg.lrelu_slope, inplace=True),
            ]
            prev = w
        layers += [ResidualBlock(prev, cfg.lrelu_slope) for _ in range(cfg.residual_blocks)]
        layers.append(nn.Conv2d(prev, cfg.latent_channels, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d = self.cfg.downsample_factor
        if x.shape[-2] % d or x.shape[-1] % d:
            raise ValueError(f"input dims {tuple(x.shape[-2:])} not divisible by d={d}")
        return self.net(x)


class Generator(nn.Module):
    """Latent grid (N, C_out, h, w) -> image (N, 3, h*d, w*d), entries in (0, 1)."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths()
        top = widths[-1]
        layers: list[nn.Module] = [nn.Conv2d(cfg.latent_channels, top, 3, padding=1)]
        layers += [ResidualBlock(top, cfg.lrelu_slope) for _ in range(cfg.residual_blocks)]
        prev = top
        for w in reversed([cfg.base_channels] + widths[:-1]):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(prev, w, 3, padding=1),
                ChannelNorm(w),
                nn.LeakyReLU(cfg.lrelu_slope, inplace=True),
            ]
            prev = w
        # sigmoid keeps outputs in (0, 1) with gradients everywhere; evaluation
        # paths additionally clamp after any float round-trips
        layers += [nn.Conv2d(prev, 3, 7, padding=3), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


def build_codec(cfg: CodecConfig) -> tuple[Encoder, Generator]:
    return Encoder(cfg), Generator(cfg)


def normalize_power_batch(z: torch.Tensor) -> torch.Tensor:
    """Per-sample power normalization of a latent batch: sqrt(k) * z / ||z||."""
    flat = z.reshape(z.shape[0], -1)
    norms = flat.norm(dim=1).clamp_min(1e-12)
    scale = math.sqrt(flat.shape[1]) / norms
    return z * scale.reshape(-1, *([1] * (z.ndim - 1)))


def to_nchw(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img)).to(dtype).permute(2, 0, 1).unsqueeze(0)


def from_nchw(t: torch.Tensor) -> np.ndarray:
    return t.detach().squeeze(0).permute(1, 2, 0).cpu().numpy()


def pad_to_multiple(img: np.ndarray, d: int) -> np.ndarray:
    """Reflect-pad H and W up to the next multiple of d (recorded by the caller)."""
    h, w = img.shape[:2]
    ph, pw = (-h) % d, (-w) % d
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")


def encode(x: np.ndarray, encoder: Encoder) -> Codeword:
    """Run the encoder and power-normalize the flattened latent grid.

    Non-divisible image dims are reflect-padded; the original size is recorded
    on the codeword so generation can strip the padding again.
    """
    h, w = x.shape[:2]
    padded = pad_to_multiple(x, encoder.cfg.downsample_factor)
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        z = encoder(to_nchw(padded, dtype))
    grid = z.squeeze(0).permute(1, 2, 0)  # h x w x c
    cw = power_normalize(grid.cpu().numpy().reshape(-1), grid_shape=tuple(grid.shape))
    return Codeword(values=cw.values, grid_shape=cw.grid_shape, source_size=(h, w))


def generate(
    s_hat: np.ndarray,
    grid_shape: tuple[int, int, int],
    generator: Generator,
    source_size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Synthesize an image from received symbols; output in [0, 1].

    ``source_size`` strips any padding recorded at encode time.
    """
    s_hat = np.asarray(s_hat, dtype=np.float64).reshape(-1)
    h, w, c = grid_shape
    if s_hat.shape[0] != h * w * c:
        raise ValueError(f"received {s_hat.shape[0]} symbols for grid {grid_shape}")
    dtype = next(generator.parameters()).dtype
    grid = torch.from_numpy(s_hat.reshape(h, w, c)).to(dtype).permute(2, 0, 1).unsqueeze(0)
    with torch.no_grad():
        out = generator(grid)
    img = from_nchw(out)
    if source_size is not None:
        img = img[: source_size[0], : source_size[1]]
    return np.clip(img, 0.0, 1.0)


def transmit_image(x, encoder, generator, channel_cfg, rng=None) -> np.ndarray:
    """Full single-image pipeline: encode -> AWGN channel -> generate."""
    from .channel import awgn_transmit

    cw = encode(x, encoder)
    s_hat = awgn_transmit(cw, channel_cfg, rng=rng)
    return generate(s_hat, cw.grid_shape, generator, source_size=cw.source_size)


class TransmitPipeline(nn.Module):
    """Differentiable training path: encoder -> normalize -> + noise -> generator.

    Noise can be drawn from an explicit torch.Generator (reproducible training)
    or passed in directly (gradient checks against a fixed realization).
    """

    def __init__(self, encoder: Encoder, generator: Generator):
        super().__init__()
        self.encoder = encoder
        self.generator = generator

    def forward(
        self,
        x: torch.Tensor,
        sigma: float | torch.Tensor,
        noise: torch.Tensor | None = None,
        rng: torch.Generator | None = None,
    ):
        z = self.encoder(x)
        s = normalize_power_batch(z)
        if noise is None:
            noise = torch.randn(s.shape, generator=rng, dtype=s.dtype, device=s.device)
        if isinstance(sigma, torch.Tensor):
            sigma = sigma.reshape(-1, *([1] * (s.ndim - 1)))
        s_hat = s + sigma * noise
        x_hat = self.generator(s_hat)
        return x_hat, s, s_hat
