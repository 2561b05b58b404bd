"""Three-phase training: codec pretraining, discriminator warmup, alternation.

All stochastic draws (batch selection, crops, SNR, channel noise) flow from
explicit generator objects owned by the training state, and every stream's
state rides along in checkpoints, so runs are reproducible and resumable
bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
import yaml

from .adversary import DiscriminatorConfig, PatchDiscriminator
from .channel import snr_to_sigma2
from .checkpoints import (
    PHASE_ADVERSARIAL,
    PHASE_DISC_WARMED,
    PHASE_PRETRAINED,
    PHASE_UNTRAINED,
    CheckpointState,
    config_hash,
    save_checkpoint,
)
from .codec import CodecConfig, TransmitPipeline, build_codec
from .data import TrainPatchSampler
from .features import default_lpips_extractor
from .losses import LossWeights, discriminator_loss, generator_loss

class NonFiniteLossError(RuntimeError):
    """Training aborted on a non-finite loss; a diagnostics checkpoint was written."""


@dataclass(frozen=True)
class TrainConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    phase1_iters: int = 100_000
    phase2_iters: int = 10_000
    phase3_iters: int = 100_000  # unspecified upstream; mirrors the phase-1 budget
    batch_size: int = 12
    crop_pixels: int = 256
    learn_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    snr_train_set: tuple[float, ...] = (1.0, 4.0, 7.0, 10.0, 13.0)
    snr_per_image: bool = False
    weights: LossWeights = field(default_factory=lambda: LossWeights(1.0, 1e-5, 1e-3))
    lpips_weights_file: str | None = None
    lpips_seed: int = 0
    checkpoint_every: int = 1000
    seed: int = 0
    data_root: str | None = None

    def __post_init__(self):
        if self.phase1_iters < 0 or self.phase2_iters < 0 or self.phase3_iters < 0:
            raise ValueError("phase iteration counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.disc.condition_upsample != self.codec.downsample_factor:
            raise ValueError(
                "discriminator condition_upsample must equal the codec downsample factor"
            )
        object.__setattr__(self, "snr_train_set", tuple(self.snr_train_set))
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))


@dataclass
class TrainState:
    cfg_hash: str
    encoder: torch.nn.Module
    generator: torch.nn.Module
    disc: PatchDiscriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    extractor: torch.nn.Module
    noise_gen: torch.Generator
    data_rng: np.random.Generator
    snr_rng: np.random.Generator
    phase: str = PHASE_UNTRAINED
    iteration: int = 0

    def pipeline(self) -> TransmitPipeline:
        return TransmitPipeline(self.encoder, self.generator)


def init_state(cfg: TrainConfig) -> TrainState:
    torch.manual_seed(cfg.seed)
    encoder, generator = build_codec(cfg.codec)
    disc = PatchDiscriminator(cfg.disc, cond_channels=cfg.codec.latent_channels)
    opt_g = torch.optim.Adam(
        list(encoder.parameters()) + list(generator.parameters()),
        lr=cfg.learn_rate, betas=cfg.adam_betas,
    )
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learn_rate, betas=cfg.adam_betas)
    extractor = default_lpips_extractor(cfg.lpips_weights_file, seed=cfg.lpips_seed)
    return TrainState(
        cfg_hash=config_hash(cfg.codec, cfg.disc),
        encoder=encoder, generator=generator, disc=disc,
        opt_g=opt_g, opt_d=opt_d, extractor=extractor,
        noise_gen=torch.Generator().manual_seed(cfg.seed + 1),
        data_rng=np.random.default_rng(cfg.seed + 2),
        snr_rng=np.random.default_rng(cfg.seed + 3),
    )


def _clone_state_dict(sd: dict) -> dict:
    # state_dict() hands back live tensor references; snapshot them so the
    # checkpoint stays valid while training continues in place
    return {k: v.detach().clone() if isinstance(v, torch.Tensor) else v for k, v in sd.items()}


def state_to_checkpoint(state: TrainState) -> CheckpointState:
    import copy

    return CheckpointState(
        codec_cfg=state.encoder.cfg,
        disc_cfg=state.disc.cfg,
        phase=state.phase,
        iteration=state.iteration,
        encoder_state=_clone_state_dict(state.encoder.state_dict()),
        generator_state=_clone_state_dict(state.generator.state_dict()),
        disc_state=_clone_state_dict(state.disc.state_dict()),
        opt_g_state=copy.deepcopy(state.opt_g.state_dict()),
        opt_d_state=copy.deepcopy(state.opt_d.state_dict()),
        rng_states={
            "noise": state.noise_gen.get_state(),
            "data": state.data_rng.bit_generator.state,
            "snr": state.snr_rng.bit_generator.state,
        },
        config_hash=state.cfg_hash,
    )


def state_from_checkpoint(ckpt: CheckpointState, cfg: TrainConfig) -> TrainState:
    state = init_state(cfg)
    state.encoder.load_state_dict(ckpt.encoder_state)
    state.generator.load_state_dict(ckpt.generator_state)
    if ckpt.disc_state is not None:
        state.disc.load_state_dict(ckpt.disc_state)
    if ckpt.opt_g_state is not None:
        state.opt_g.load_state_dict(ckpt.opt_g_state)
    if ckpt.opt_d_state is not None:
        state.opt_d.load_state_dict(ckpt.opt_d_state)
    state.noise_gen.set_state(ckpt.rng_states["noise"])
    state.data_rng.bit_generator.state = ckpt.rng_states["data"]
    state.snr_rng.bit_generator.state = ckpt.rng_states["snr"]
    state.phase = ckpt.phase
    state.iteration = ckpt.iteration
    return state


def sample_train_snr(cfg: TrainConfig, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Uniform draw(s) from the configured training SNR set, in dB."""
    if not cfg.snr_train_set:
        raise ValueError("snr_train_set is empty")
    values = np.asarray(sorted(cfg.snr_train_set), dtype=np.float64)
    return values[rng.integers(0, len(values), size=n)]


class TrainLog:
    """Append-only line-delimited training records."""

    def __init__(self, path: Path | None):
        self.path = path
        self.records: list[dict] = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _batch_to_tensor(batch: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(batch)).float().permute(0, 3, 1, 2)


def _draw_sigma(cfg: TrainConfig, state: TrainState, batch_size: int):
    n = batch_size if cfg.snr_per_image else 1
    snrs = sample_train_snr(cfg, state.snr_rng, n=n)
    sigmas = np.sqrt([snr_to_sigma2(s) for s in snrs])
    if cfg.snr_per_image:
        return torch.from_numpy(sigmas).float(), float(np.mean(snrs))
    return float(sigmas[0]), float(snrs[0])


def _abort_if_not_finite(value: float, state: TrainState, out_dir: Path | None):
    if math.isfinite(value):
        return
    if out_dir is not None:
        save_checkpoint(state_to_checkpoint(state), Path(out_dir) / "diagnostic.pt")
    raise NonFiniteLossError(
        f"non-finite loss {value} at iteration {state.iteration} (phase {state.phase})"
    )


def _maybe_checkpoint(state: TrainState, cfg: TrainConfig, out_dir: Path | None, done: bool = False):
    if out_dir is None:
        return
    if done or (cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0):
        save_checkpoint(state_to_checkpoint(state), Path(out_dir) / f"ckpt_{state.phase}.pt")


def _generator_step(state: TrainState, cfg: TrainConfig, sampler, weights: LossWeights, use_disc: bool, log: TrainLog, out_dir):
    batch = sampler.draw_batch(cfg.batch_size, state.data_rng)
    x = _batch_to_tensor(batch)
    sigma, snr_db = _draw_sigma(cfg, state, x.shape[0])
    x_hat, s, _ = state.pipeline()(x, sigma, rng=state.noise_gen)
    d_out = state.disc(x_hat, s) if use_disc else None
    rep = generator_loss(d_out, x, x_hat, weights, state.extractor)
    _abort_if_not_finite(float(rep.total.detach()), state, out_dir)
    state.opt_g.zero_grad(set_to_none=True)
    rep.total.backward()
    state.opt_g.step()
    record = {"iteration": state.iteration, "phase": state.phase, "step": "gen", "snr_db": snr_db}
    record.update(rep.detached())
    log.append(record)
    return rep


def _disc_step(state: TrainState, cfg: TrainConfig, sampler, log: TrainLog, out_dir):
    batch = sampler.draw_batch(cfg.batch_size, state.data_rng)
    x = _batch_to_tensor(batch)
    sigma, snr_db = _draw_sigma(cfg, state, x.shape[0])
    with torch.no_grad():
        x_hat, s, _ = state.pipeline()(x, sigma, rng=state.noise_gen)
    d_real = state.disc(x, s)
    d_fake = state.disc(x_hat, s)
    loss = discriminator_loss(d_real, d_fake)
    _abort_if_not_finite(float(loss.detach()), state, out_dir)
    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_d.step()
    log.append({
        "iteration": state.iteration, "phase": state.phase, "step": "disc",
        "disc_loss": float(loss.detach()), "snr_db": snr_db,
    })
    return float(loss.detach())


def pretrain(state: TrainState, sampler: TrainPatchSampler, cfg: TrainConfig,
             out_dir: Path | None = None, iters: int | None = None) -> CheckpointState:
    """Phase 1: optimize encoder+generator on perceptual + MSE terms only."""
    if state.phase != PHASE_UNTRAINED:
        raise ValueError(f"pretrain requires an untrained state, got phase {state.phase!r}")
    log = TrainLog(Path(out_dir) / "train_log.jsonl" if out_dir else None)
    weights = dataclasses.replace(cfg.weights, beta_g=0.0)
    n = cfg.phase1_iters if iters is None else iters
    for _ in range(n):
        state.iteration += 1
        _generator_step(state, cfg, sampler, weights, use_disc=False, log=log, out_dir=out_dir)
        _maybe_checkpoint(state, cfg, out_dir)
    state.phase = PHASE_PRETRAINED
    ckpt = state_to_checkpoint(state)
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "ckpt_pretrained.pt")
    return ckpt


def train_discriminator_only(state: TrainState, sampler: TrainPatchSampler, cfg: TrainConfig,
                             out_dir: Path | None = None, iters: int | None = None) -> CheckpointState:
    """Phase 2: codec frozen bit-exactly, discriminator warms up on its outputs."""
    if state.phase != PHASE_PRETRAINED:
        raise ValueError(f"discriminator warmup requires a pretrained state, got {state.phase!r}")
    log = TrainLog(Path(out_dir) / "train_log.jsonl" if out_dir else None)
    n = cfg.phase2_iters if iters is None else iters
    frozen = list(state.encoder.parameters()) + list(state.generator.parameters())
    for p in frozen:
        p.requires_grad_(False)
    try:
        for _ in range(n):
            state.iteration += 1
            _disc_step(state, cfg, sampler, log, out_dir)
            _maybe_checkpoint(state, cfg, out_dir)
    finally:
        for p in frozen:
            p.requires_grad_(True)
    state.phase = PHASE_DISC_WARMED
    ckpt = state_to_checkpoint(state)
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "ckpt_disc_warmed.pt")
    return ckpt


def alternate_train(state: TrainState, sampler: TrainPatchSampler, cfg: TrainConfig,
                    out_dir: Path | None = None, iters: int | None = None) -> CheckpointState:
    """Phase 3: strictly alternating discriminator and encoder+generator steps."""
    if state.phase not in (PHASE_DISC_WARMED, PHASE_ADVERSARIAL):
        raise ValueError(f"adversarial training requires a warmed discriminator, got {state.phase!r}")
    log = TrainLog(Path(out_dir) / "train_log.jsonl" if out_dir else None)
    n = cfg.phase3_iters if iters is None else iters
    state.phase = PHASE_ADVERSARIAL
    for _ in range(n):
        state.iteration += 1
        _disc_step(state, cfg, sampler, log, out_dir)
        _generator_step(state, cfg, sampler, cfg.weights, use_disc=True, log=log, out_dir=out_dir)
        _maybe_checkpoint(state, cfg, out_dir)
    ckpt = state_to_checkpoint(state)
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "ckpt_adversarial.pt")
    return ckpt


def run_phases(cfg: TrainConfig, sampler: TrainPatchSampler, out_dir: Path | None = None,
               phases: Iterable[str] = ("pretrain", "disc", "adversarial"),
               resume: CheckpointState | None = None,
               iter_overrides: dict[str, int] | None = None) -> tuple[TrainState, CheckpointState]:
    """Drive the requested phases in order, starting fresh or from a checkpoint."""
    state = init_state(cfg) if resume is None else state_from_checkpoint(resume, cfg)
    overrides = iter_overrides or {}
    ckpt = resume if resume is not None else state_to_checkpoint(state)
    for phase in phases:
        if phase == "pretrain":
            ckpt = pretrain(state, sampler, cfg, out_dir, iters=overrides.get(phase))
        elif phase == "disc":
            ckpt = train_discriminator_only(state, sampler, cfg, out_dir, iters=overrides.get(phase))
        elif phase == "adversarial":
            ckpt = alternate_train(state, sampler, cfg, out_dir, iters=overrides.get(phase))
        else:
            raise ValueError(f"unknown phase {phase!r}")
    return state, ckpt


def ablation_grid(base: TrainConfig,
                  beta_ms: tuple[float, ...] = (1e-3, 1e-4, 1e-5),
                  beta_gs: tuple[float, ...] = (0.0, 1e-5, 1e-3, 1e-1)) -> list[TrainConfig]:
    """The beta_m x beta_g sweep, beta_p pinned at the base value."""
    grid = []
    for bm in beta_ms:
        for bg in beta_gs:
            weights = LossWeights(beta_p=base.weights.beta_p, beta_m=bm, beta_g=bg)
            grid.append(dataclasses.replace(base, weights=weights))
    return grid


def codec_param_digest(state: TrainState) -> str:
    """Stable hash over encoder+generator parameter bytes (freeze-contract checks)."""
    import hashlib

    h = hashlib.sha256()
    for module in (state.encoder, state.generator):
        for name, p in sorted(module.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


# --- structured config files -------------------------------------------------

def train_config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["codec"] = dataclasses.asdict(cfg.codec)
    d["disc"] = dataclasses.asdict(cfg.disc)
    d["disc"]["channel_widths"] = list(cfg.disc.channel_widths)
    d["weights"] = dataclasses.asdict(cfg.weights)
    d["snr_train_set"] = list(cfg.snr_train_set)
    d["adam_betas"] = list(cfg.adam_betas)
    return d


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    codec = CodecConfig(**d.pop("codec", {}))
    disc_d = dict(d.pop("disc", {}))
    if "channel_widths" in disc_d:
        disc_d["channel_widths"] = tuple(disc_d["channel_widths"])
    disc = DiscriminatorConfig(**disc_d)
    weights = LossWeights(**d.pop("weights", {}))
    if "snr_train_set" in d:
        d["snr_train_set"] = tuple(d["snr_train_set"])
    if "adam_betas" in d:
        d["adam_betas"] = tuple(d["adam_betas"])
    return TrainConfig(codec=codec, disc=disc, weights=weights, **d)


def save_train_config(cfg: TrainConfig, path: Path | str) -> None:
    Path(path).write_text(yaml.safe_dump(train_config_to_dict(cfg), sort_keys=True))


def load_train_config(path: Path | str) -> TrainConfig:
    return train_config_from_dict(yaml.safe_load(Path(path).read_text()))
