"""Pluggable deep-feature extractors backing the perceptual metrics.

The reference configuration loads published calibration weights from an
``.npz`` archive (named arrays plus a shape manifest). When no weights file is
available, a deterministic seeded-random extractor of the same topology serves
as an offline fallback: its distances are not the published metric values but
behave like perceptual distances, which is all the tests and smoke training
need.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

MANIFEST_KEY = "__manifest__"

# Stage widths of the classic five-stage AlexNet convolutional trunk.
_ALEXNET_WIDTHS = (64, 192, 384, 256, 256)


class AlexNetFeatures(nn.Module):
    """Five-stage AlexNet-topology trunk returning the per-stage ReLU maps.

    ``layer_weights`` holds the per-channel linear calibration weights (one
    nonnegative vector per stage) used by the LPIPS distance.
    """

    def __init__(self, widths: tuple[int, ...] = _ALEXNET_WIDTHS):
        super().__init__()
        w1, w2, w3, w4, w5 = widths
        self.stage1 = nn.Sequential(nn.Conv2d(3, w1, 11, stride=4, padding=2), nn.ReLU(inplace=True))
        self.pool1 = nn.MaxPool2d(3, stride=2)
        self.stage2 = nn.Sequential(nn.Conv2d(w1, w2, 5, padding=2), nn.ReLU(inplace=True))
        self.pool2 = nn.MaxPool2d(3, stride=2)
        self.stage3 = nn.Sequential(nn.Conv2d(w2, w3, 3, padding=1), nn.ReLU(inplace=True))
        self.stage4 = nn.Sequential(nn.Conv2d(w3, w4, 3, padding=1), nn.ReLU(inplace=True))
        self.stage5 = nn.Sequential(nn.Conv2d(w4, w5, 3, padding=1), nn.ReLU(inplace=True))
        self.layer_weights = nn.ParameterList(
            nn.Parameter(torch.ones(w), requires_grad=False) for w in widths
        )
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(int(w.numel()) for w in self.layer_weights)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """x: N x 3 x H x W in [0, 1]. Returns the five stage activations."""
        x = x * 2.0 - 1.0  # feature trunks conventionally run on [-1, 1]
        f1 = self.stage1(x)
        f2 = self.stage2(self.pool1(f1))
        f3 = self.stage3(self.pool2(f2))
        f4 = self.stage4(f3)
        f5 = self.stage5(f4)
        return [f1, f2, f3, f4, f5]

    @classmethod
    def seeded_fallback(cls, seed: int = 0) -> "AlexNetFeatures":
        """Deterministic random-weight extractor for offline use."""
        net = cls()
        gen = torch.Generator().manual_seed(seed)
        for name, p in sorted(net.named_parameters()):
            if name.startswith("layer_weights"):
                # nonnegative calibration weights, as the published metric uses
                p.data = torch.rand(p.shape, generator=gen) + 0.05
            elif p.ndim > 1:
                fan_in = p.shape[1] * p.shape[2] * p.shape[3]
                p.data = torch.randn(p.shape, generator=gen) / fan_in**0.5
            else:
                p.data = torch.zeros(p.shape)
        return net

    @classmethod
    def from_weights_file(cls, path: Path | str) -> "AlexNetFeatures":
        arrays = load_feature_weights(path)
        widths = tuple(arrays[f"lin{i}.weight"].shape[0] for i in range(5))
        net = cls(widths)
        mapping = {
            "stage1.0": "conv1", "stage2.0": "conv2", "stage3.0": "conv3",
            "stage4.0": "conv4", "stage5.0": "conv5",
        }
        state = {}
        for module_name, file_name in mapping.items():
            state[f"{module_name}.weight"] = torch.from_numpy(arrays[f"{file_name}.weight"])
            state[f"{module_name}.bias"] = torch.from_numpy(arrays[f"{file_name}.bias"])
        for i in range(5):
            state[f"layer_weights.{i}"] = torch.from_numpy(arrays[f"lin{i}.weight"]).reshape(-1)
        net.load_state_dict(state)
        for p in net.parameters():
            p.requires_grad_(False)
        return net


def save_feature_weights(path: Path | str, arrays: dict[str, np.ndarray]) -> None:
    """Write a named-array archive with a manifest of layer shapes."""
    manifest = json.dumps({k: list(v.shape) for k, v in sorted(arrays.items())})
    np.savez(path, **arrays, **{MANIFEST_KEY: np.array(manifest)})


def load_feature_weights(path: Path | str) -> dict[str, np.ndarray]:
    """Load a named-array archive, validating every shape against its manifest."""
    with np.load(path) as npz:
        if MANIFEST_KEY not in npz:
            raise ValueError(f"{path}: missing shape manifest")
        manifest = json.loads(str(npz[MANIFEST_KEY]))
        arrays = {k: npz[k] for k in npz.files if k != MANIFEST_KEY}
    for name, shape in manifest.items():
        if name not in arrays:
            raise ValueError(f"{path}: manifest entry {name!r} missing from archive")
        if list(arrays[name].shape) != shape:
            raise ValueError(
                f"{path}: {name} has shape {list(arrays[name].shape)}, manifest says {shape}"
            )
    return arrays


class PooledFeatures:
    """Image-set feature embedding used by the distribution metric.

    Wraps a stage-wise extractor and emits one vector per image by global
    average pooling of the deepest stage. The reference configuration instead
    loads an Inception-topology network from a weights file; both satisfy the
    same (n_images, dim) contract.
    """

    def __init__(self, extractor: AlexNetFeatures, dim: int = 64, seed: int = 0):
        self.extractor = extractor
        last_width = extractor.widths[-1]
        gen = torch.Generator().manual_seed(seed)
        # fixed random projection: keeps the covariance estimate well-posed
        # for the small patch sets used at desk scale
        self.projection = torch.randn(last_width, dim, generator=gen) / last_width**0.5
        self.dim = dim

    @torch.no_grad()
    def __call__(self, images: np.ndarray | torch.Tensor) -> np.ndarray:
        """images: (n, H, W, 3) array in [0, 1] -> (n, dim) float64 features."""
        if isinstance(images, np.ndarray):
            batch = torch.from_numpy(np.ascontiguousarray(images)).float().permute(0, 3, 1, 2)
        else:
            batch = images.float()
        feats = self.extractor(batch)[-1]
        pooled = feats.mean(dim=(2, 3))
        return (pooled @ self.projection).double().numpy()


def default_lpips_extractor(weights_path: Path | str | None = None, seed: int = 0) -> AlexNetFeatures:
    if weights_path is not None:
        return AlexNetFeatures.from_weights_file(weights_path)
    return AlexNetFeatures.seeded_fallback(seed)


def default_fid_features(weights_path: Path | str | None = None, dim: int = 64, seed: int = 0) -> PooledFeatures:
    if weights_path is not None:
        try:
            from torchvision.models import inception_v3
        except ImportError as exc:  # pragma: no cover
            raise RuntimeError("torchvision required for inception features") from exc
        net = inception_v3(weights=None, aux_logits=True, init_weights=False)
        net.load_state_dict(torch.load(weights_path, map_location="cpu"))
        net.fc = nn.Identity()
        net.eval()

        class _Inception:
            dim = 2048

            @torch.no_grad()
            def __call__(self, images):
                if isinstance(images, np.ndarray):
                    batch = torch.from_numpy(np.ascontiguousarray(images)).float().permute(0, 3, 1, 2)
                else:
                    batch = images.float()
                batch = nn.functional.interpolate(batch, size=(299, 299), mode="bilinear", align_corners=False)
                return net(batch * 2.0 - 1.0).double().numpy()

        return _Inception()
    return PooledFeatures(AlexNetFeatures.seeded_fallback(seed), dim=dim, seed=seed)
