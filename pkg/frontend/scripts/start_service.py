"""Spin up a disposable study service for frontend tests.

Generates matched synthetic reconstruction folders, samples 46 trial pairs,
and serves the study API on the requested port. State lives under --workdir.
"""

import argparse
from pathlib import Path

import numpy as np

from genjscc.data import save_image
from genjscc.study import StudyStore, generate_pairs
from genjscc.study_service import serve


def synth(seed: int, h: int, w: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = 0.5 + 0.2 * np.sin(2 * np.pi * xx / 97)[..., None] + 0.2 * np.cos(2 * np.pi * yy / 71)[..., None]
    img = np.repeat(img, 3, axis=2) + 0.1 * rng.normal(size=(h, w, 3))
    img -= img.min()
    return (img / img.max()).astype(np.float32)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--workdir", type=Path, required=True)
    parser.add_argument("--admin-token", default="admin")
    args = parser.parse_args()

    work = args.workdir
    dir_a, dir_b = work / "recon_ours", work / "recon_baseline"
    dir_a.mkdir(parents=True, exist_ok=True)
    dir_b.mkdir(parents=True, exist_ok=True)
    for i in range(12):
        img = synth(i, 512, 512)
        save_image(img, dir_a / f"img{i:02d}.png")
        save_image(np.clip(img + 0.02, 0, 1), dir_b / f"img{i:02d}.png")

    images = work / "images"
    pairs = generate_pairs(dir_a, dir_b, n=46, crop=256, seed=0,
                           method_a="ours", method_b="baseline", out_images=images)
    store = StudyStore(work / "store", pairs)
    print(f"READY port={args.port}", flush=True)
    serve(store, images, host="127.0.0.1", port=args.port, admin_token=args.admin_token)


if __name__ == "__main__":
    main()
