"""Single entry point: training, evaluation sweeps, baselines, and the study service.

Every command writes a run manifest (command line, resolved config, seed,
content hash, output directory) into its output directory before doing any
work, and never mutates its inputs. Exit codes: 0 success, 1 runtime error,
2 usage error.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import click

logger = logging.getLogger(__name__)


def _git_hash() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5)
        return out.stdout.strip() if out.returncode == 0 else None
    except OSError:
        return None


def write_run_manifest(out_dir: Path, command: str, config: dict, seed: int | None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "argv": sys.argv,
        "resolved_config": config,
        "seed": seed,
        "content_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "git_hash": _git_hash(),
        "output_dir": str(out_dir),
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


def _parse_fraction(text: str) -> Fraction:
    return Fraction(text)


@click.group()
def main():
    """Generative JSCC experiment harness."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command("train")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--phase", type=click.Choice(["all", "pretrain", "disc", "adversarial"]), default="all")
@click.option("--iters", type=int, default=None, help="Override the phase iteration budget.")
@click.option("--resume", "resume_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def cmd_train(config_path, phase, iters, resume_path, data_dir, out_dir, seed):
    """Drive training phases from a config file; flags win over the file."""
    from .checkpoints import load_checkpoint
    from .data import DatasetSpec, TrainPatchSampler, list_images
    from .trainer import load_train_config, run_phases, train_config_to_dict

    cfg = load_train_config(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if data_dir is not None:
        cfg = dataclasses.replace(cfg, data_root=str(data_dir))
    if cfg.data_root is None:
        raise click.UsageError("no training data: set data_root in the config or pass --data")

    write_run_manifest(out_dir, "train", train_config_to_dict(cfg), cfg.seed)
    paths = list_images(DatasetSpec(root=Path(cfg.data_root), split="train"))
    if not paths:
        raise click.ClickException(f"no images under {cfg.data_root}")
    sampler = TrainPatchSampler(paths, crop=cfg.crop_pixels)

    resume = load_checkpoint(resume_path) if resume_path else None
    phase_lists = {
        "all": ("pretrain", "disc", "adversarial"),
        "pretrain": ("pretrain",),
        "disc": ("disc",),
        "adversarial": ("adversarial",),
    }
    phases = phase_lists[phase]
    overrides = {p: iters for p in phases} if iters is not None else None
    try:
        _, ckpt = run_phases(cfg, sampler, out_dir=out_dir, phases=phases,
                             resume=resume, iter_overrides=overrides)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"finished at phase={ckpt.phase} iteration={ckpt.iteration}")


@main.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True, path_type=Path))
@click.option("--dataset", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--snr-list", default=None, help="Comma-separated SNRs in dB for an SNR sweep.")
@click.option("--cbr-sweep", default=None, help="Comma-separated additional checkpoints for a CBR sweep.")
@click.option("--snr", type=float, default=10.0, help="Fixed SNR for the CBR sweep.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--fid-dim", type=int, default=64)
def cmd_eval(checkpoint, dataset, snr_list, cbr_sweep, snr, out_dir, seed, fid_dim):
    """Metric sweep over a dataset; writes curve CSV plus JSON sidecar."""
    from .data import DatasetSpec
    from .metrics import EvalSettings, sweep_cbr, sweep_snr, write_curve_csv

    if (snr_list is None) == (cbr_sweep is None):
        raise click.UsageError("pass exactly one of --snr-list or --cbr-sweep")
    settings = EvalSettings(seed=seed, fid_dim=fid_dim)
    spec = DatasetSpec(root=dataset)
    config = {
        "checkpoint": str(checkpoint), "dataset": str(dataset), "snr_list": snr_list,
        "cbr_sweep": cbr_sweep, "snr": snr, "settings": dataclasses.asdict(settings),
    }
    write_run_manifest(out_dir, "eval", config, seed)
    try:
        if snr_list is not None:
            snrs = [float(s) for s in snr_list.split(",") if s.strip()]
            points = sweep_snr(checkpoint, spec, snrs, settings=settings)
            csv_path = out_dir / "curve_snr.csv"
        else:
            ckpts = [checkpoint] + [Path(p) for p in cbr_sweep.split(",") if p.strip()]
            points = sweep_cbr(ckpts, spec, snr_db=snr, settings=settings)
            csv_path = out_dir / "curve_cbr.csv"
        write_curve_csv(points, csv_path, seed=seed, sidecar=config)
    except Exception as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {csv_path} ({len(points)} points)")


@main.command("baseline")
@click.option("--bpg-capacity", is_flag=True, required=True)
@click.option("--dataset", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--cbr", default="1/48", help="Channel bandwidth ratio as a fraction, e.g. 1/48.")
@click.option("--snr", type=float, default=10.0)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--fid-dim", type=int, default=64)
def cmd_baseline(bpg_capacity, dataset, cbr, snr, out_dir, seed, fid_dim):
    """Capacity-bounded BPG transmission over a dataset; reconstructions + metrics CSV."""
    from .baselines import BudgetInfeasibleError, bpg_capacity_transmit
    from .data import DatasetSpec, list_images, load_image, save_image
    from .features import default_fid_features, default_lpips_extractor
    from .metrics import CurvePoint, EvalSettings, _evaluate_pairs, write_curve_csv

    cbr_frac = _parse_fraction(cbr)
    config = {"dataset": str(dataset), "cbr": str(cbr_frac), "snr": snr, "seed": seed}
    write_run_manifest(out_dir, "baseline", config, seed)
    recon_dir = out_dir / "recon"
    recon_dir.mkdir(parents=True, exist_ok=True)

    pairs = []
    skipped = []
    for path in list_images(DatasetSpec(root=dataset)):
        img = load_image(path)
        try:
            result = bpg_capacity_transmit(img, cbr_frac, snr)
        except BudgetInfeasibleError as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            skipped.append(path.name)
            continue
        except Exception as exc:
            raise click.ClickException(str(exc))
        if result.reconstruction.shape != img.shape:
            logger.warning("skipping %s: decoded dims %s != %s", path.name,
                           result.reconstruction.shape, img.shape)
            skipped.append(path.name)
            continue
        save_image(result.reconstruction, recon_dir / f"{path.stem}.png")
        pairs.append((img, result.reconstruction))

    sidecar = dict(config, skipped=skipped, n_transmitted=len(pairs))
    csv_path = out_dir / "curve_bpg.csv"
    if pairs:
        settings = EvalSettings(seed=seed, fid_dim=fid_dim)
        extractor = default_lpips_extractor(seed=settings.extractor_seed)
        fid_features = default_fid_features(dim=settings.fid_dim, seed=settings.extractor_seed)
        report = _evaluate_pairs(pairs, extractor, fid_features, settings.fid_patch)
        points = [CurvePoint(scheme="bpg+capacity", x_kind="snr_db", x=snr, report=report)]
        write_curve_csv(points, csv_path, seed=seed, sidecar=sidecar)
        click.echo(f"wrote {csv_path} with {len(pairs)} images ({len(skipped)} skipped)")
    else:
        sidecar["status"] = "budget-infeasible"
        write_curve_csv([], csv_path, seed=seed, sidecar=sidecar)
        click.echo("budget infeasible for every image; curve point marked missing")


@main.command("ablate")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--iters-per-phase", type=int, default=None, help="Smoke-scale override for every phase.")
@click.option("--eval-image", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
def cmd_ablate(config_path, data_dir, out_dir, iters_per_phase, eval_image):
    """Run the beta_m x beta_g ablation grid; one checkpoint + reconstruction per cell."""
    from .channel import ChannelConfig
    from .codec import transmit_image
    from .data import DatasetSpec, TrainPatchSampler, list_images, load_image, save_image
    from .trainer import (ablation_grid, load_train_config, run_phases, train_config_to_dict)

    cfg = load_train_config(config_path)
    if data_dir is not None:
        cfg = dataclasses.replace(cfg, data_root=str(data_dir))
    if cfg.data_root is None:
        raise click.UsageError("no training data: set data_root in the config or pass --data")
    write_run_manifest(out_dir, "ablate", train_config_to_dict(cfg), cfg.seed)

    paths = list_images(DatasetSpec(root=Path(cfg.data_root), split="train"))
    eval_img = load_image(eval_image) if eval_image else load_image(paths[0])

    for cell in ablation_grid(cfg):
        label = f"bm{cell.weights.beta_m:g}_bg{cell.weights.beta_g:g}"
        cell_dir = out_dir / label
        sampler = TrainPatchSampler(paths, crop=cfg.crop_pixels)
        phases = ("pretrain",) if cell.weights.beta_g == 0 else ("pretrain", "disc", "adversarial")
        overrides = {p: iters_per_phase for p in phases} if iters_per_phase else None
        try:
            state, _ = run_phases(cell, sampler, out_dir=cell_dir, phases=phases,
                                  iter_overrides=overrides)
        except Exception as exc:
            raise click.ClickException(f"cell {label}: {exc}")
        recon = transmit_image(eval_img, state.encoder, state.generator,
                               ChannelConfig(snr_db=10.0, seed=0))
        save_image(recon, cell_dir / "reconstruction.png")
        click.echo(f"cell {label}: done")


@main.group("study")
def cmd_study():
    """2AFC user-study commands."""


@cmd_study.command("generate-pairs")
@click.option("--dir-a", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--dir-b", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--dir-reference", type=click.Path(exists=True, file_okay=False, path_type=Path), default=None,
              help="Matched source images, for sessions configured to show the original.")
@click.option("-n", "n_pairs", type=int, default=46)
@click.option("--crop", type=int, default=256)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
def cmd_generate_pairs(dir_a, dir_b, dir_reference, n_pairs, crop, seed, out_dir):
    """Sample trial pairs from two matched reconstruction folders."""
    from .study import generate_pairs, save_pairs_manifest

    config = {"dir_a": str(dir_a), "dir_b": str(dir_b), "n": n_pairs, "crop": crop, "seed": seed,
              "dir_reference": str(dir_reference) if dir_reference else None}
    write_run_manifest(out_dir, "study generate-pairs", config, seed)
    try:
        pairs = generate_pairs(dir_a, dir_b, n=n_pairs, crop=crop, seed=seed,
                               out_images=out_dir / "images", dir_reference=dir_reference)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    save_pairs_manifest(pairs, out_dir / "pairs.json", meta=config)
    click.echo(f"wrote {len(pairs)} pairs to {out_dir / 'pairs.json'}")


@cmd_study.command("serve")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--images", "images_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--store", "store_dir", type=click.Path(path_type=Path), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8750)
@click.option("--admin-token", default="admin")
@click.option("--show-reference", is_flag=True, default=False,
              help="Also show the original patch next to each pair (default: pure 2AFC).")
def cmd_serve(manifest, images_dir, store_dir, host, port, admin_token, show_reference):
    """Serve the study API and static patch images."""
    from .study import StudyStore, load_pairs_manifest
    from .study_service import serve

    pairs = load_pairs_manifest(manifest)
    store = StudyStore(store_dir, pairs)
    click.echo(f"serving {len(pairs)} pairs on {host}:{port}")
    serve(store, images_dir, host=host, port=port, admin_token=admin_token,
          show_reference=show_reference)


@cmd_study.command("report")
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--store", "store_dir", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
def cmd_report(manifest, store_dir):
    """Aggregate preferences from a study store."""
    from .study import EmptyReportError, StudyStore, load_pairs_manifest

    pairs = load_pairs_manifest(manifest)
    store = StudyStore(store_dir, pairs)
    try:
        report = store.aggregate()
    except EmptyReportError as exc:
        raise click.ClickException(str(exc))
    click.echo(report.to_json())


if __name__ == "__main__":
    main()
