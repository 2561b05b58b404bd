"""Self-describing checkpoint archives: configs, parameters, phase, RNG streams.

Serialized with torch.save under a versioned top-level dict so minor versions
stay loadable. Writes are atomic (write to a temp file, then rename).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import torch

from .adversary import DiscriminatorConfig
from .codec import CodecConfig

FORMAT_VERSION = 1

PHASE_UNTRAINED = "untrained"
PHASE_PRETRAINED = "pretrained"
PHASE_DISC_WARMED = "disc-warmed"
PHASE_ADVERSARIAL = "adversarial"
PHASE_ORDER = [PHASE_UNTRAINED, PHASE_PRETRAINED, PHASE_DISC_WARMED, PHASE_ADVERSARIAL]


@dataclass
class CheckpointState:
    """Everything needed to resume or evaluate a run."""

    codec_cfg: CodecConfig
    disc_cfg: DiscriminatorConfig
    phase: str
    iteration: int
    encoder_state: dict
    generator_state: dict
    disc_state: dict | None = None
    opt_g_state: dict | None = None
    opt_d_state: dict | None = None
    rng_states: dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""
    metric_snapshot: dict[str, float] = field(default_factory=dict)

    @property
    def realized_cbr(self) -> Fraction:
        return self.codec_cfg.cbr

    def meta(self) -> dict:
        return {
            "phase": self.phase,
            "iteration": self.iteration,
            "realized_cbr": str(self.realized_cbr),
            "config_hash": self.config_hash,
            "metric_snapshot": dict(self.metric_snapshot),
        }


def config_hash(*cfgs) -> str:
    blob = json.dumps([dataclasses.asdict(c) for c in cfgs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_checkpoint(state: CheckpointState, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "codec_cfg": dataclasses.asdict(state.codec_cfg),
        "disc_cfg": dataclasses.asdict(state.disc_cfg),
        "phase": state.phase,
        "iteration": state.iteration,
        "encoder_state": state.encoder_state,
        "generator_state": state.generator_state,
        "disc_state": state.disc_state,
        "opt_g_state": state.opt_g_state,
        "opt_d_state": state.opt_d_state,
        "rng_states": state.rng_states,
        "config_hash": state.config_hash,
        "metric_snapshot": state.metric_snapshot,
        "realized_cbr": str(state.codec_cfg.cbr),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: Path | str) -> CheckpointState:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    disc_cfg = payload["disc_cfg"].copy()
    disc_cfg["channel_widths"] = tuple(disc_cfg["channel_widths"])
    return CheckpointState(
        codec_cfg=CodecConfig(**payload["codec_cfg"]),
        disc_cfg=DiscriminatorConfig(**disc_cfg),
        phase=payload["phase"],
        iteration=payload["iteration"],
        encoder_state=payload["encoder_state"],
        generator_state=payload["generator_state"],
        disc_state=payload["disc_state"],
        opt_g_state=payload["opt_g_state"],
        opt_d_state=payload["opt_d_state"],
        rng_states=payload["rng_states"],
        config_hash=payload["config_hash"],
        metric_snapshot=payload["metric_snapshot"],
    )


def export_deployment(state: CheckpointState, path: Path | str) -> Path:
    """Deployment-only export: the discriminator namespace is dropped."""
    slim = dataclasses.replace(state, disc_state=None, opt_g_state=None, opt_d_state=None)
    return save_checkpoint(slim, path)
