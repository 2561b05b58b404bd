"""Objective evaluation: PSNR, MS-SSIM, LPIPS, DISTS, FID, and sweep harnesses.

Scalar metrics take H x W x 3 arrays in [0, 1]. The sweep functions drive the
full transmit pipeline over a dataset and emit curve points plus a CSV/JSON
artifact pair.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from scipy import linalg, signal

from . import losses
from .channel import ChannelConfig
from .checkpoints import CheckpointState, load_checkpoint
from .codec import build_codec, transmit_image
from .data import DatasetSpec, list_images, load_image, tile_patches

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1, _SSIM_K2 = 0.01, 0.03


class NumericalError(RuntimeError):
    """A matrix computation failed to converge; message carries a condition report."""


@dataclass(frozen=True)
class MetricReport:
    """Aggregate metric values over an image set (means; FID over patch sets)."""

    psnr_db: float
    ms_ssim: float
    lpips: float
    dists: float
    fid: float
    n_images: int


@dataclass(frozen=True)
class CurvePoint:
    scheme: str
    x_kind: str  # "snr_db" | "cbr"
    x: float
    report: MetricReport


def psnr(x: np.ndarray, x_hat: np.ndarray, cap_db: float = PSNR_CAP_DB) -> float:
    """10*log10(1/MSE) on the [0, 1] scale; identical pairs report the cap."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return cap_db
    return min(-10.0 * math.log10(mse), cap_db)


def _gaussian_window(size: int = _SSIM_WIN, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(coords**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_and_contrast(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Single-scale SSIM and contrast-sensitivity means over the valid region."""
    win = _gaussian_window()
    c1, c2 = _SSIM_K1**2, _SSIM_K2**2  # data_range = 1
    ssim_vals, cs_vals = [], []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = signal.fftconvolve(x, win, mode="valid")
        mu_y = signal.fftconvolve(y, win, mode="valid")
        xx = signal.fftconvolve(x * x, win, mode="valid") - mu_x**2
        yy = signal.fftconvolve(y * y, win, mode="valid") - mu_y**2
        xy = signal.fftconvolve(x * y, win, mode="valid") - mu_x * mu_y
        cs_map = (2 * xy + c2) / (xx + yy + c2)
        ssim_map = ((2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)) * cs_map
        ssim_vals.append(np.mean(ssim_map))
        cs_vals.append(np.mean(cs_map))
    return float(np.mean(ssim_vals)), float(np.mean(cs_vals))


def ms_ssim(x: np.ndarray, x_hat: np.ndarray, scales: int = 5) -> float:
    """Multi-scale SSIM with the conventional 5-scale exponents.

    Inputs smaller than the 161-px requirement are evaluated at fewer scales
    (weights renormalized) with a warning. Negative scale terms are clamped at
    zero before the exponentiation, so anti-correlated inputs score 0.
    """
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    min_side = min(x.shape[0], x.shape[1])
    usable = scales
    while usable > 1 and min_side < (_SSIM_WIN - 1) * 2 ** (usable - 1) + 1:
        usable -= 1
    if usable < scales:
        logger.warning("ms_ssim: input %dx%d supports only %d scales", x.shape[0], x.shape[1], usable)
    weights = np.asarray(MS_SSIM_WEIGHTS[:usable])
    weights = weights / weights.sum()

    value = 1.0
    a, b = x, x_hat
    for level in range(usable):
        ssim_val, cs_val = _ssim_and_contrast(a, b)
        term = ssim_val if level == usable - 1 else cs_val
        value *= max(term, 0.0) ** weights[level]
        if level < usable - 1:
            ha, wa = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
            a = a[:ha, :wa].reshape(ha // 2, 2, wa // 2, 2, -1).mean(axis=(1, 3))
            b = b[:ha, :wa].reshape(ha // 2, 2, wa // 2, 2, -1).mean(axis=(1, 3))
    return float(value)


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with growing
    diagonal jitter retried when the matrix square root misbehaves.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("feature sets must be 2-D (n_samples, dim)")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    diff2 = float(np.sum((mu_a - mu_b) ** 2))

    for jitter in (0.0, 1e-10, 1e-8, 1e-6):
        ca = cov_a + jitter * np.eye(cov_a.shape[0])
        cb = cov_b + jitter * np.eye(cov_b.shape[0])
        sqrt_prod, _ = linalg.sqrtm(ca @ cb, disp=False)
        if np.isfinite(sqrt_prod).all():
            if np.iscomplexobj(sqrt_prod):
                sqrt_prod = sqrt_prod.real
            value = diff2 + float(np.trace(ca + cb - 2.0 * sqrt_prod))
            return max(value, 0.0)
    raise NumericalError(
        "matrix square root did not converge; "
        f"cond(cov_a)={np.linalg.cond(cov_a):.3e} cond(cov_b)={np.linalg.cond(cov_b):.3e}"
    )


def lpips_metric(x: np.ndarray, x_hat: np.ndarray, extractor) -> float:
    """Full-reference perceptual distance (shares the training-loss implementation)."""
    return float(losses.lpips_distance(x, x_hat, extractor))


def dists_metric(x: np.ndarray, x_hat: np.ndarray, extractor) -> float:
    """Structure+texture dissimilarity over the feature stack; 0 for identical inputs.

    Per feature map (the raw image counts as stage zero): texture term from
    global channel means, structure term from global channel covariances,
    averaged with uniform weights and returned as 1 - similarity.
    """
    xt = losses._as_nchw(x).to(next(extractor.parameters()).dtype)
    yt = losses._as_nchw(x_hat).to(next(extractor.parameters()).dtype)
    if xt.shape != yt.shape:
        raise ValueError(f"shape mismatch {tuple(xt.shape)} vs {tuple(yt.shape)}")
    c1 = c2 = 1e-6
    with torch.no_grad():
        stacks = zip([xt] + extractor(xt), [yt] + extractor(yt))
        texture_terms, structure_terms = [], []
        for fa, fb in stacks:
            mu_a = fa.mean(dim=(2, 3))
            mu_b = fb.mean(dim=(2, 3))
            var_a = fa.var(dim=(2, 3), unbiased=False)
            var_b = fb.var(dim=(2, 3), unbiased=False)
            cov = ((fa - mu_a[..., None, None]) * (fb - mu_b[..., None, None])).mean(dim=(2, 3))
            texture = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
            structure = (2 * cov + c2) / (var_a + var_b + c2)
            texture_terms.append(texture.mean())
            structure_terms.append(structure.mean())
        similarity = 0.5 * (torch.stack(texture_terms).mean() + torch.stack(structure_terms).mean())
    return float(1.0 - similarity)


def derive_seed(base: int, *keys) -> int:
    """Stable per-(image, operating point) seed derivation."""
    h = hashlib.sha256(repr((base, *keys)).encode()).digest()
    return int.from_bytes(h[:8], "little")


@dataclass(frozen=True)
class EvalSettings:
    seed: int = 0
    fid_patch: int = 256
    fid_dim: int = 64
    lpips_weights_file: str | None = None
    fid_weights_file: str | None = None
    extractor_seed: int = 0


def _evaluate_pairs(pairs, extractor, fid_features, fid_patch: int) -> MetricReport:
    per_psnr, per_msssim, per_lpips, per_dists = [], [], [], []
    ref_patches, out_patches = [], []
    for x, x_hat in pairs:
        per_psnr.append(psnr(x, x_hat))
        per_msssim.append(ms_ssim(x, x_hat))
        per_lpips.append(lpips_metric(x, x_hat, extractor))
        per_dists.append(dists_metric(x, x_hat, extractor))
        ref_patches.extend(tile_patches(x, fid_patch))
        out_patches.extend(tile_patches(x_hat, fid_patch))
    if len(ref_patches) >= 2:
        fid_value = fid(
            fid_features(np.stack(ref_patches)), fid_features(np.stack(out_patches))
        )
    else:
        logger.warning("fewer than 2 evaluation patches; FID not computed")
        fid_value = float("nan")
    return MetricReport(
        psnr_db=float(np.mean(per_psnr)),
        ms_ssim=float(np.mean(per_msssim)),
        lpips=float(np.mean(per_lpips)),
        dists=float(np.mean(per_dists)),
        fid=fid_value,
        n_images=len(per_psnr),
    )


def _codec_from_checkpoint(ckpt: CheckpointState):
    encoder, generator = build_codec(ckpt.codec_cfg)
    encoder.load_state_dict(ckpt.encoder_state)
    generator.load_state_dict(ckpt.generator_state)
    encoder.eval()
    generator.eval()
    return encoder, generator


def _build_eval_extractors(settings: EvalSettings):
    from .features import default_fid_features, default_lpips_extractor

    extractor = default_lpips_extractor(settings.lpips_weights_file, seed=settings.extractor_seed)
    fid_features = default_fid_features(
        settings.fid_weights_file, dim=settings.fid_dim, seed=settings.extractor_seed
    )
    return extractor, fid_features


def sweep_snr(
    checkpoint: CheckpointState | Path | str,
    dataset: DatasetSpec,
    snr_list: list[float],
    cbr: Fraction | float | None = None,
    settings: EvalSettings = EvalSettings(),
    scheme: str = "genjscc",
) -> list[CurvePoint]:
    """One curve point per SNR: every eval image through the full pipeline."""
    ckpt = checkpoint if isinstance(checkpoint, CheckpointState) else load_checkpoint(checkpoint)
    if cbr is not None and ckpt.realized_cbr != Fraction(cbr):
        raise ValueError(f"checkpoint CBR {ckpt.realized_cbr} does not match requested {cbr}")
    encoder, generator = _codec_from_checkpoint(ckpt)
    paths = list_images(dataset)
    if not paths:
        raise FileNotFoundError(f"no images found under {dataset.root}")
    extractor, fid_features = _build_eval_extractors(settings)
    images = [load_image(p) for p in paths]
    points = []
    for snr_db in sorted(snr_list):
        pairs = []
        for i, x in enumerate(images):
            rng = np.random.default_rng(derive_seed(settings.seed, "snr", float(snr_db), i))
            x_hat = transmit_image(x, encoder, generator, ChannelConfig(snr_db=snr_db), rng=rng)
            pairs.append((x, x_hat))
        report = _evaluate_pairs(pairs, extractor, fid_features, settings.fid_patch)
        points.append(CurvePoint(scheme=scheme, x_kind="snr_db", x=float(snr_db), report=report))
    return points


def sweep_cbr(
    checkpoints: list[CheckpointState | Path | str],
    dataset: DatasetSpec,
    snr_db: float = 10.0,
    settings: EvalSettings = EvalSettings(),
    scheme: str = "genjscc",
) -> list[CurvePoint]:
    """One curve point per checkpoint at a fixed SNR; x is the realized CBR."""
    if len(checkpoints) < 1:
        raise ValueError("need at least one checkpoint")
    ckpts = [c if isinstance(c, CheckpointState) else load_checkpoint(c) for c in checkpoints]
    cbrs = [c.realized_cbr for c in ckpts]
    if len(set(cbrs)) != len(cbrs):
        raise ValueError(f"duplicate CBR operating points: {sorted(map(str, cbrs))}")
    paths = list_images(dataset)
    if not paths:
        raise FileNotFoundError(f"no images found under {dataset.root}")
    extractor, fid_features = _build_eval_extractors(settings)
    images = [load_image(p) for p in paths]
    points = []
    for ckpt in sorted(ckpts, key=lambda c: c.realized_cbr):
        encoder, generator = _codec_from_checkpoint(ckpt)
        pairs = []
        for i, x in enumerate(images):
            rng = np.random.default_rng(derive_seed(settings.seed, "cbr", str(ckpt.realized_cbr), i))
            x_hat = transmit_image(x, encoder, generator, ChannelConfig(snr_db=snr_db), rng=rng)
            pairs.append((x, x_hat))
        report = _evaluate_pairs(pairs, extractor, fid_features, settings.fid_patch)
        points.append(
            CurvePoint(scheme=scheme, x_kind="cbr", x=float(ckpt.realized_cbr), report=report)
        )
    return points


CSV_HEADER = ["scheme", "x_kind", "x", "psnr_db", "ms_ssim", "lpips", "dists", "fid", "n_images", "seed"]


def write_curve_csv(points: list[CurvePoint], path: Path | str, seed: int, sidecar: dict | None = None) -> Path:
    """Curve artifact: CSV rows (sorted by x) plus a JSON sidecar of the full config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for p in sorted(points, key=lambda q: q.x):
            r = p.report
            writer.writerow([
                p.scheme, p.x_kind, repr(p.x), repr(r.psnr_db), repr(r.ms_ssim),
                repr(r.lpips), repr(r.dists), repr(r.fid), r.n_images, seed,
            ])
    if sidecar is not None:
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str))
    return path


def read_curve_csv(path: Path | str) -> list[CurvePoint]:
    """Ingest a curve CSV (also the format for externally produced baselines)."""
    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            report = MetricReport(
                psnr_db=float(row["psnr_db"]), ms_ssim=float(row["ms_ssim"]),
                lpips=float(row["lpips"]), dists=float(row["dists"]),
                fid=float(row["fid"]), n_images=int(row["n_images"]),
            )
            points.append(CurvePoint(scheme=row["scheme"], x_kind=row["x_kind"],
                                     x=float(row["x"]), report=report))
    return points
