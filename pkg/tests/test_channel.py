import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genjscc.channel import (
    ChannelConfig,
    Codeword,
    DegenerateInputError,
    InvalidRateError,
    awgn_transmit,
    compute_cbr,
    power_normalize,
    realized_snr_db,
    snr_to_sigma2,
)


class TestPowerNormalize:
    def test_constant_vector_becomes_all_ones(self):
        out = power_normalize(np.full(17, 3.2))
        np.testing.assert_allclose(out.values, np.ones(17), atol=1e-12)

    def test_idempotent_on_unit_power_input(self):
        rng = np.random.default_rng(0)
        raw = rng.normal(size=100)
        once = power_normalize(raw)
        twice = power_normalize(once.values)
        np.testing.assert_allclose(once.values, twice.values, atol=1e-6)

    def test_gaussian_input_has_unit_mean_square(self):
        rng = np.random.default_rng(1)
        out = power_normalize(rng.normal(size=4096))
        # independent recomputation of ||s||^2 / k
        assert abs(float(np.sum(out.values**2)) / 4096 - 1.0) <= 1e-6

    def test_all_zero_raises(self):
        with pytest.raises(DegenerateInputError):
            power_normalize(np.zeros(8))

    def test_grid_shape_recorded(self):
        out = power_normalize(np.ones(24), grid_shape=(2, 3, 4))
        assert out.grid_shape == (2, 3, 4)
        assert out.k == 24

    def test_grid_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Codeword(values=np.ones(10), grid_shape=(2, 3, 4))

    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=64).filter(
            lambda v: any(abs(x) > 1e-6 for x in v)
        ),
        st.floats(1e-3, 1e3),
    )
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance_and_idempotence(self, raw, c):
        raw = np.asarray(raw)
        a = power_normalize(raw)
        b = power_normalize(c * raw)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-9, atol=1e-9)
        assert abs(a.mean_square_power() - 1.0) <= 1e-9


class TestSnrToSigma2:
    def test_reference_points(self):
        assert snr_to_sigma2(10.0) == pytest.approx(0.1)
        assert snr_to_sigma2(0.0) == pytest.approx(1.0)
        # evaluate 10^(-1.3)
        assert snr_to_sigma2(13.0) == pytest.approx(0.05012, abs=1e-5)

    def test_noiseless_limit(self):
        assert snr_to_sigma2(math.inf) == 0.0


class TestAwgnTransmit:
    def test_noiseless_is_exact(self):
        s = power_normalize(np.random.default_rng(2).normal(size=64))
        out = awgn_transmit(s, ChannelConfig(snr_db=math.inf))
        np.testing.assert_array_equal(out, s.values)

    def test_fixed_seed_is_deterministic(self):
        s = power_normalize(np.random.default_rng(3).normal(size=64))
        cfg = ChannelConfig(snr_db=7.0, seed=123)
        np.testing.assert_array_equal(awgn_transmit(s, cfg), awgn_transmit(s, cfg))

    def test_realized_snr_at_large_k(self):
        s = power_normalize(np.random.default_rng(4).normal(size=10**6))
        out = awgn_transmit(s, ChannelConfig(snr_db=10.0, seed=0))
        assert realized_snr_db(s.values, out) == pytest.approx(10.0, abs=0.1)

    def test_unnormalized_codeword_rejected(self):
        cw = Codeword(values=np.full(16, 5.0), grid_shape=(1, 1, 16))
        with pytest.raises(ValueError):
            awgn_transmit(cw, ChannelConfig(snr_db=10.0))

    def test_nan_snr_rejected(self):
        with pytest.raises(ValueError):
            ChannelConfig(snr_db=float("nan"))


class TestComputeCbr:
    def test_paper_operating_points_exact(self):
        assert compute_cbr((512, 768, 3), 24576).cbr == Fraction(1, 48)
        assert compute_cbr((512, 768, 3), 49152).cbr == Fraction(1, 24)

    def test_identity_rate_boundary(self):
        spec = compute_cbr((256, 256, 3), 3 * 256 * 256)
        assert spec.cbr == 1

    def test_expansion_rejected(self):
        with pytest.raises(InvalidRateError):
            compute_cbr((8, 8, 3), 3 * 8 * 8 + 1)

    @given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 512))
    @settings(max_examples=100, deadline=None)
    def test_exact_rational(self, h, w, k):
        m = 3 * h * w
        if k > m:
            with pytest.raises(InvalidRateError):
                compute_cbr((h, w, 3), k)
        else:
            spec = compute_cbr((h, w, 3), k)
            assert spec.cbr == Fraction(k, m)
            assert 0 < spec.cbr <= 1
