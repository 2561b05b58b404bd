"""CLI-compatible stand-in for the external BPG binaries, used when they are absent.

Implements the same command-line contract (``enc -q Q -o out.bpg in.png``,
``dec -o out.png in.bpg``) over a tiny container: one scale byte followed by a
JPEG payload. The quality knob follows BPG's QP semantics (higher q -> smaller
file); the coarsest settings also downscale so the rate floor reaches the
capacity budgets the tests probe. This exercises the budget search and
subprocess plumbing end to end; when real bpgenc/bpgdec are on PATH the tests
drive those instead.

Usage: python fake_bpg.py enc|dec [args...]
"""

import io
import sys
from pathlib import Path

from PIL import Image


def _scale_and_quality(q: int) -> tuple[int, int]:
    if q <= 30:
        return 1, 95 - 2 * q        # 95 .. 35 at full resolution
    if q <= 41:
        return 2, 70 - 2 * (q - 31)  # 70 .. 50 at half resolution
    return 4, 60 - 5 * (q - 42)     # 60 .. 15 at quarter resolution


def encode(argv):
    quality, out, src = 29, None, None
    i = 0
    while i < len(argv):
        if argv[i] == "-q":
            quality = int(argv[i + 1])
            i += 2
        elif argv[i] == "-o":
            out = Path(argv[i + 1])
            i += 2
        else:
            src = Path(argv[i])
            i += 1
    if out is None or src is None:
        raise SystemExit("usage: enc [-q Q] -o out.bpg in.png")
    scale, jpeg_quality = _scale_and_quality(quality)
    img = Image.open(src).convert("RGB")
    if scale > 1:
        img = img.resize((max(1, img.width // scale), max(1, img.height // scale)), Image.BILINEAR)
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=max(2, jpeg_quality))
    out.write_bytes(bytes([scale]) + buf.getvalue())


def decode(argv):
    out, src = None, None
    i = 0
    while i < len(argv):
        if argv[i] == "-o":
            out = Path(argv[i + 1])
            i += 2
        else:
            src = Path(argv[i])
            i += 1
    if out is None or src is None:
        raise SystemExit("usage: dec -o out.png in.bpg")
    blob = src.read_bytes()
    scale = blob[0]
    img = Image.open(io.BytesIO(blob[1:])).convert("RGB")
    if scale > 1:
        img = img.resize((img.width * scale, img.height * scale), Image.BILINEAR)
    img.save(out, format="PNG")


if __name__ == "__main__":
    mode, rest = sys.argv[1], sys.argv[2:]
    if mode == "enc":
        encode(rest)
    elif mode == "dec":
        decode(rest)
    else:
        raise SystemExit(f"unknown mode {mode}")
