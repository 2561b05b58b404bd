"""AWGN channel simulation: power normalization, noise injection, rate accounting.

Channel symbols are real-valued; one entry of a codeword is one channel use.
All functions are pure apart from the seeded noise draw in :func:`awgn_transmit`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

POWER_TOL = 1e-6


class DegenerateInputError(ValueError):
    """All-zero vector: power normalization is undefined."""


class InvalidRateError(ValueError):
    """Requested channel uses exceed the source dimension (expansion unsupported)."""


@dataclass(frozen=True)
class Codeword:
    """Power-normalized channel-input symbols plus their latent spatial layout.

    ``values`` has unit mean-square power; ``grid_shape = (h, w, c)`` records the
    latent grid the vector was flattened from (h*w*c == len(values)).
    ``source_size`` optionally carries the pre-padding image height/width so the
    receiver can strip padding after synthesis.
    """

    values: np.ndarray
    grid_shape: tuple[int, int, int]
    source_size: tuple[int, int] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"codeword values must be 1-D, got shape {values.shape}")
        h, w, c = self.grid_shape
        if h * w * c != values.shape[0]:
            raise ValueError(
                f"grid shape {self.grid_shape} incompatible with k={values.shape[0]}"
            )
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    def mean_square_power(self) -> float:
        return float(np.mean(self.values**2))


@dataclass(frozen=True)
class ChannelConfig:
    """Channel family and operating point. Only AWGN is supported."""

    kind: str = "awgn"
    snr_db: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.kind.lower() != "awgn":
            raise ValueError(f"unsupported channel kind {self.kind!r}")
        # +inf is accepted as the noiseless limit; NaN never is.
        if math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")


@dataclass(frozen=True)
class RateSpec:
    """Bandwidth accounting for one image: k channel uses over m = 3*H*W source dims."""

    image_dims: tuple[int, int, int]
    k: int
    cbr: Fraction = field(init=False)

    def __post_init__(self):
        h, w, c = self.image_dims
        if c != 3:
            raise ValueError("image_dims must be (H, W, 3)")
        if h <= 0 or w <= 0 or self.k <= 0:
            raise ValueError("image dims and k must be positive")
        m = 3 * h * w
        if self.k > m:
            raise InvalidRateError(f"k={self.k} exceeds source dimension m={m}")
        object.__setattr__(self, "cbr", Fraction(self.k, m))

    @property
    def m(self) -> int:
        h, w, _ = self.image_dims
        return 3 * h * w


def power_normalize(raw: np.ndarray, grid_shape: tuple[int, int, int] | None = None) -> Codeword:
    """Scale a raw symbol vector to unit average power: s = sqrt(k) * raw / ||raw||.

    Raises :class:`DegenerateInputError` on an all-zero input.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    k = raw.shape[0]
    norm = np.linalg.norm(raw)
    if k == 0 or norm == 0.0:
        raise DegenerateInputError("cannot power-normalize an all-zero vector")
    if grid_shape is None:
        grid_shape = (1, 1, k)
    return Codeword(values=raw * (math.sqrt(k) / norm), grid_shape=grid_shape)


def snr_to_sigma2(snr_db: float) -> float:
    """Noise variance for a given SNR in dB, under unit signal power."""
    return 10.0 ** (-snr_db / 10.0)


def awgn_transmit(s: Codeword, cfg: ChannelConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Pass a codeword through the AWGN channel: s_hat = s + n, n ~ N(0, sigma^2 I).

    ``rng`` overrides the config seed when supplied so callers can manage
    their own streams; otherwise each call owns a fresh stream seeded from
    ``cfg.seed`` (deterministic per call).
    """
    if abs(s.mean_square_power() - 1.0) > 1e-3:
        raise ValueError("codeword is not power-normalized")
    sigma2 = snr_to_sigma2(cfg.snr_db)
    if sigma2 == 0.0:
        return s.values.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    noise = rng.normal(0.0, math.sqrt(sigma2), size=s.k)
    return s.values + noise


def compute_cbr(image_dims: tuple[int, int, int], k: int) -> RateSpec:
    """Rate bookkeeping for k channel uses on an (H, W, 3) image; exact rational CBR."""
    return RateSpec(image_dims=tuple(image_dims), k=int(k))


def realized_snr_db(signal: np.ndarray, received: np.ndarray) -> float:
    """Empirical SNR 10*log10(||s||^2 / ||n||^2) of one transmission."""
    signal = np.asarray(signal, dtype=np.float64)
    noise = np.asarray(received, dtype=np.float64) - signal
    noise_power = float(np.sum(noise**2))
    if noise_power == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(signal**2)) / noise_power)
