"""Comparison schemes: capacity-bounded BPG transmission and the MSE-only codec recipe.

The BPG path shells out to external encoder/decoder binaries (``bpgenc`` /
``bpgdec`` by default, overridable via GENJSCC_BPGENC / GENJSCC_BPGDEC or
explicit command lists) and never exceeds the channel's capacity budget: the
quality search only ever accepts measured bitstream sizes within budget, and
container header bytes count toward it.
"""

from __future__ import annotations

import dataclasses
import math
import os
import subprocess
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import load_image, save_image
from .losses import LossWeights
from .trainer import TrainConfig

BPG_QUALITY_RANGE = (0, 51)  # lower quality value -> better fidelity, larger file


class BudgetInfeasibleError(RuntimeError):
    """Even the coarsest quality setting exceeds the capacity budget."""


class CodecInvocationError(RuntimeError):
    """The external encoder/decoder binary failed."""


@dataclass(frozen=True)
class DigitalBudget:
    """Bit budget of an ideal capacity-achieving code over k real channel uses."""

    k: int
    snr_db: float
    complex_channel: bool = False

    @property
    def bits(self) -> float:
        return capacity_bits(self.k, self.snr_db, complex_channel=self.complex_channel)


def capacity_bits(k: int, snr_db: float, complex_channel: bool = False) -> float:
    """k * (1/2) log2(1 + SNR) bits for real channel uses.

    ``complex_channel`` switches to log2(1 + SNR) per use, for sensitivity
    analysis against the complex-baseband bandwidth convention.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    snr_linear = 10.0 ** (snr_db / 10.0)
    per_use = math.log2(1.0 + snr_linear)
    return k * (per_use if complex_channel else 0.5 * per_use)


@dataclass(frozen=True)
class BpgResult:
    reconstruction: np.ndarray
    achieved_bits: int
    achieved_cbr: Fraction
    budget_bits: float
    quality: int


def _default_cmd(env_var: str, default: str) -> list[str]:
    value = os.environ.get(env_var)
    return value.split() if value else [default]


def _run(cmd: list[str], what: str) -> None:
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise CodecInvocationError(f"{what} failed ({' '.join(cmd)}): {proc.stderr.strip()}")


def _encode_size_bits(encoder_cmd: Sequence[str], src_png: Path, out_bpg: Path, quality: int) -> int:
    _run([*encoder_cmd, "-q", str(quality), "-o", str(out_bpg), str(src_png)], "encoder")
    return out_bpg.stat().st_size * 8


def bpg_capacity_transmit(
    img: np.ndarray,
    cbr: Fraction | float,
    snr_db: float,
    encoder_cmd: Sequence[str] | None = None,
    decoder_cmd: Sequence[str] | None = None,
) -> BpgResult:
    """Transmit via BPG under an ideal capacity-achieving channel code.

    Picks the best quality whose compressed size (headers included) fits the
    capacity budget for k = cbr * 3HW real channel uses, then decodes the
    bitstream losslessly (the ideal code is error free). Raises
    :class:`BudgetInfeasibleError` when even the coarsest quality exceeds the
    budget, which reads as a missing curve point.
    """
    encoder_cmd = list(encoder_cmd) if encoder_cmd else _default_cmd("GENJSCC_BPGENC", "bpgenc")
    decoder_cmd = list(decoder_cmd) if decoder_cmd else _default_cmd("GENJSCC_BPGDEC", "bpgdec")
    h, w = img.shape[:2]
    m = 3 * h * w
    k = int(round(Fraction(cbr) * m))
    if k < 1 or k > m:
        raise ValueError(f"cbr {cbr} gives invalid k={k} for a {h}x{w} image")
    budget = capacity_bits(k, snr_db)

    q_min, q_max = BPG_QUALITY_RANGE
    with tempfile.TemporaryDirectory(prefix="genjscc_bpg_") as tmp:
        tmp = Path(tmp)
        src = tmp / "src.png"
        save_image(img, src)

        sizes: dict[int, int] = {}

        def size_at(q: int) -> int:
            if q not in sizes:
                sizes[q] = _encode_size_bits(encoder_cmd, src, tmp / f"q{q}.bpg", q)
            return sizes[q]

        if size_at(q_max) > budget:
            raise BudgetInfeasibleError(
                f"coarsest quality needs {size_at(q_max)} bits > budget {budget:.0f}"
            )
        # size is (near-)monotone nonincreasing in q: bisect for the best
        # quality that fits, then walk coarser if non-monotonicity fooled us
        lo, hi = q_min, q_max
        while lo < hi:
            mid = (lo + hi) // 2
            if size_at(mid) <= budget:
                hi = mid
            else:
                lo = mid + 1
        quality = lo
        while size_at(quality) > budget:
            quality += 1

        decoded = tmp / "out.png"
        _run([*decoder_cmd, "-o", str(decoded), str(tmp / f"q{quality}.bpg")], "decoder")
        reconstruction = load_image(decoded)

    return BpgResult(
        reconstruction=reconstruction,
        achieved_bits=sizes[quality],
        achieved_cbr=Fraction(k, m),
        budget_bits=budget,
        quality=quality,
    )


def ldpc_scheme_metadata() -> dict:
    """Configuration of the practical coded-modulation comparison, as metadata only.

    The decode chain itself is out of scope; externally produced curves in this
    configuration are ingested through the standard curve CSV format.
    """
    return {
        "scheme": "bpg+ldpc",
        "ldpc_code": {"rate": "2/3", "n": 6144, "k": 4096},
        "modulation": "16qam",
    }


def mse_jscc_config(base: TrainConfig | None = None) -> TrainConfig:
    """The MSE-optimized comparator: identical pipeline, distortion weights only."""
    base = base if base is not None else TrainConfig()
    return dataclasses.replace(base, weights=LossWeights(beta_p=0.0, beta_m=1.0, beta_g=0.0))
