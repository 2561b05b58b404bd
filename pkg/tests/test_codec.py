from fractions import Fraction

import numpy as np
import pytest
import torch

from genjscc.channel import ChannelConfig, compute_cbr
from genjscc.codec import (
    CodecConfig,
    TransmitPipeline,
    build_codec,
    encode,
    generate,
    latent_channels_for_cbr,
    normalize_power_batch,
    to_nchw,
    transmit_image,
)

import fdtools
from conftest import synth_image

TINY = CodecConfig(downsample_factor=4, base_channels=8, max_channels=16, latent_channels=2, residual_blocks=1)


def tiny_codec(seed=0, cfg=TINY):
    torch.manual_seed(seed)
    return build_codec(cfg)


class TestConfig:
    def test_paper_rate_points(self):
        cfg48 = CodecConfig(downsample_factor=16, latent_channels=16)
        cfg24 = CodecConfig(downsample_factor=16, latent_channels=32)
        assert cfg48.cbr == Fraction(1, 48)
        assert cfg24.cbr == Fraction(1, 24)

    def test_latent_channels_from_cbr(self):
        assert latent_channels_for_cbr(16, Fraction(1, 48)) == 16
        assert latent_channels_for_cbr(16, Fraction(1, 24)) == 32

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            CodecConfig(downsample_factor=3)
        with pytest.raises(ValueError):
            CodecConfig(latent_channels=0)

    def test_cbr_matches_channel_accounting(self):
        # architecture-implied CBR equals compute_cbr on the realized sizes
        for d, c, h, w in [(4, 2, 64, 64), (8, 6, 128, 64), (16, 16, 512, 768)]:
            cfg = CodecConfig(downsample_factor=d, base_channels=4, max_channels=8, latent_channels=c, residual_blocks=0)
            k = (h // d) * (w // d) * c
            assert cfg.cbr == compute_cbr((h, w, 3), k).cbr


class TestShapes:
    def test_latent_grid_and_k_at_paper_geometry(self):
        cfg = CodecConfig(downsample_factor=16, base_channels=4, max_channels=8, latent_channels=16, residual_blocks=0)
        torch.manual_seed(0)
        encoder, _ = build_codec(cfg)
        x = synth_image(0, 512, 768)
        cw = encode(x, encoder)
        assert cw.grid_shape == (32, 48, 16)
        assert cw.k == 24576
        assert compute_cbr((512, 768, 3), cw.k).cbr == Fraction(1, 48)

    def test_round_trip_shape(self):
        encoder, generator = tiny_codec()
        x = synth_image(1, 64, 64)
        cw = encode(x, encoder)
        out = generate(np.asarray(cw.values), cw.grid_shape, generator, cw.source_size)
        assert out.shape == x.shape

    def test_non_divisible_dims_padded_and_stripped(self):
        encoder, generator = tiny_codec()
        x = synth_image(2, 61, 66)
        cw = encode(x, encoder)
        assert cw.grid_shape[:2] == (16, 17)  # padded up to 64 x 68
        out = generate(cw.values, cw.grid_shape, generator, cw.source_size)
        assert out.shape == (61, 66, 3)

    def test_length_mismatch_rejected(self):
        _, generator = tiny_codec()
        with pytest.raises(ValueError):
            generate(np.zeros(17), (4, 4, 2), generator)


class TestEncode:
    def test_unit_power(self):
        encoder, _ = tiny_codec()
        cw = encode(synth_image(3), encoder)
        assert abs(cw.mean_square_power() - 1.0) <= 1e-6

    def test_deterministic(self):
        encoder, _ = tiny_codec()
        x = synth_image(4)
        np.testing.assert_array_equal(encode(x, encoder).values, encode(x, encoder).values)

    def test_torch_normalization_matches_channel_contract(self):
        encoder, _ = tiny_codec()
        x = synth_image(5)
        with torch.no_grad():
            z = encoder(to_nchw(x))
            s = normalize_power_batch(z)
        flat = s.squeeze(0).permute(1, 2, 0).numpy().reshape(-1)
        np.testing.assert_allclose(flat, encode(x, encoder).values, atol=1e-5)


class TestGenerate:
    def test_all_zero_symbols_yield_valid_image(self):
        _, generator = tiny_codec()
        out = generate(np.zeros(8 * 8 * 2), (8, 8, 2), generator)
        assert np.all(np.isfinite(out))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_range_invariant_random_inputs(self):
        _, generator = tiny_codec()
        rng = np.random.default_rng(0)
        for _ in range(3):
            out = generate(rng.normal(size=4 * 4 * 2) * 10, (4, 4, 2), generator)
            assert out.min() >= 0.0 and out.max() <= 1.0


class TestPipelineGradients:
    def test_full_pipeline_matches_finite_differences(self):
        """Parameter gradients through encode -> normalize -> +noise -> generate vs central FD."""
        cfg = CodecConfig(downsample_factor=2, base_channels=4, max_channels=4, latent_channels=2, residual_blocks=0)
        torch.manual_seed(0)
        encoder, generator = build_codec(cfg)
        pipe = TransmitPipeline(encoder, generator).double()
        x = torch.rand(1, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        noise = torch.randn(1, 2, 4, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
        target = torch.rand(1, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(3))

        def f():
            x_hat, _, _ = pipe(x, sigma=0.3, noise=noise)
            return torch.mean((x_hat - target) ** 2)

        err = fdtools.check_grad_wrt_params(f, pipe, max_coords_per_tensor=15, h=1e-6)
        assert err <= 1e-3

    def test_encoder_gradient_matches_finite_differences(self):
        """Codeword-dependent scalar loss vs central FD over encoder parameters."""
        cfg = CodecConfig(downsample_factor=2, base_channels=4, max_channels=4, latent_channels=2, residual_blocks=0)
        torch.manual_seed(0)
        encoder, _ = build_codec(cfg)
        encoder = encoder.double()
        x = torch.rand(1, 3, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
        probe = torch.randn(2 * 4 * 4, dtype=torch.float64, generator=torch.Generator().manual_seed(5))

        def f():
            s = normalize_power_batch(encoder(x))
            return (s.reshape(-1) * probe).sum()

        err = fdtools.check_grad_wrt_params(f, encoder, max_coords_per_tensor=15, h=1e-6)
        assert err <= 1e-3


class TestTransmit:
    def test_noiseless_transmit_consistent_with_ops(self):
        encoder, generator = tiny_codec()
        x = synth_image(6)
        direct = generate(encode(x, encoder).values, encode(x, encoder).grid_shape, generator, (64, 64))
        piped = transmit_image(x, encoder, generator, ChannelConfig(snr_db=float("inf")))
        np.testing.assert_allclose(piped, direct, atol=1e-6)
