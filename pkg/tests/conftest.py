import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _single_thread_torch():
    # keeps CPU runs deterministic and avoids oversubscription in CI
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield


def synth_image(seed: int, h: int = 64, w: int = 64) -> np.ndarray:
    """Deterministic natural-ish test image: smooth gradients + correlated texture.

    Texture components are gaussian-smoothed so the spatial statistics resemble
    photographs (white noise does not).
    """
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for ch in range(3):
        base = 0.5 + 0.25 * np.sin(2 * np.pi * (xx / w * rng.uniform(0.5, 2) + rng.uniform()))
        base += 0.25 * np.cos(2 * np.pi * (yy / h * rng.uniform(0.5, 2) + rng.uniform()))
        tex = rng.normal(0, 1, (h // 4 + 1, w // 4 + 1))
        tex = gaussian_filter(np.kron(tex, np.ones((4, 4)))[:h, :w], 1.0)
        fine = gaussian_filter(rng.normal(0, 1, (h, w)), 1.0)
        img[..., ch] = base + 0.08 * tex + 0.04 * fine
    img -= img.min()
    img /= img.max()
    return img.astype(np.float32)


@pytest.fixture
def image_pair():
    return synth_image(0), synth_image(1)
