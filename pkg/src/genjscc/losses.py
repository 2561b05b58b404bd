"""Composite training objective: adversarial, perceptual, and MSE terms.

Loss values are 0-dim torch tensors so they can drive backprop; call
``.item()`` for plain floats. Natural logarithms throughout, guarded with
``LOG_EPS`` so probabilities of exactly 0 or 1 stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

LOG_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Trade-off scalars: perceptual (beta_p), MSE (beta_m), adversarial (beta_g)."""

    beta_p: float = 1.0
    beta_m: float = 1e-5
    beta_g: float = 1e-3

    def __post_init__(self):
        if self.beta_p < 0 or self.beta_m < 0 or self.beta_g < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossReport:
    """Decomposed generator-side objective; total = beta_g*adv + beta_p*perc + beta_m*mse."""

    total: torch.Tensor
    adversarial: torch.Tensor
    perceptual: torch.Tensor
    mse: torch.Tensor

    def detached(self) -> dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "adversarial": float(self.adversarial.detach()),
            "perceptual": float(self.perceptual.detach()),
            "mse": float(self.mse.detach()),
        }


def _as_nchw(x) -> torch.Tensor:
    """Accept H x W x 3 arrays/tensors or N x 3 x H x W tensors."""
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if x.ndim == 3:
        x = x.permute(2, 0, 1).unsqueeze(0)
    elif x.ndim != 4:
        raise ValueError(f"expected image of rank 3 or 4, got shape {tuple(x.shape)}")
    return x


def _probs(d_out) -> torch.Tensor:
    """Unwrap PatchLogits-style objects to a probability tensor."""
    probs = getattr(d_out, "probabilities", d_out)
    if isinstance(probs, np.ndarray):
        probs = torch.from_numpy(probs)
    return probs


def mse_distortion(x, x_hat) -> torch.Tensor:
    """Mean squared difference over all pixels and channels, on the [0, 1] scale."""
    x, x_hat = _as_nchw(x), _as_nchw(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return torch.mean((x.to(x_hat.dtype) - x_hat) ** 2)


def lpips_distance(x, x_hat, extractor) -> torch.Tensor:
    """Perceptual distance: weighted squared difference of unit-normalized deep features.

    Features from each stage are normalized to unit length along channels at
    every spatial position, differenced, scaled by the stage's per-channel
    calibration weights, then averaged over space and summed over stages.
    """
    x, x_hat = _as_nchw(x), _as_nchw(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    feats_a = extractor(x.to(next(extractor.parameters()).dtype))
    feats_b = extractor(x_hat.to(next(extractor.parameters()).dtype))
    total = None
    for fa, fb, w in zip(feats_a, feats_b, extractor.layer_weights):
        na = fa / (fa.norm(dim=1, keepdim=True) + 1e-10)
        nb = fb / (fb.norm(dim=1, keepdim=True) + 1e-10)
        diff2 = (na - nb) ** 2
        weighted = (w.to(diff2.dtype).reshape(1, -1, 1, 1) * diff2).sum(dim=1)
        term = weighted.mean(dim=(1, 2)).mean()
        total = term if total is None else total + term
    return total


def _neglog(p: torch.Tensor) -> torch.Tensor:
    """mean(-log p), clamping into [eps, 1] so boundary probabilities stay finite."""
    return torch.mean(-torch.log(torch.clamp(p, min=LOG_EPS, max=1.0)))


def generator_loss(d_out, x, x_hat, w: LossWeights, extractor) -> LossReport:
    """Encoder/generator objective: non-saturating adversarial + perceptual + MSE.

    ``d_out`` are the discriminator probabilities on (x_hat, s); it may be None
    only while beta_g is 0 (the pretraining phase has no discriminator).
    """
    mse = mse_distortion(x, x_hat)
    if d_out is None:
        if w.beta_g != 0:
            raise ValueError("discriminator output required when beta_g > 0")
        adversarial = torch.zeros_like(mse)
    else:
        adversarial = _neglog(_probs(d_out))
    if w.beta_p != 0:
        perceptual = lpips_distance(x, x_hat, extractor)
    else:
        perceptual = torch.zeros_like(mse)
    total = w.beta_g * adversarial + w.beta_p * perceptual + w.beta_m * mse
    return LossReport(total=total, adversarial=adversarial, perceptual=perceptual, mse=mse)


def discriminator_loss(d_real, d_fake) -> torch.Tensor:
    """Conditional-GAN discriminator objective in minimized form:

    mean(-log d_real) + mean(-log(1 - d_fake)).
    """
    return _neglog(_probs(d_real)) + _neglog(1.0 - _probs(d_fake))
