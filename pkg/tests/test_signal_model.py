import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frikit.kernels import EMOMS, ESpline
from frikit.signal_model import (DiracStream, NoiseSpec, ReconstructionResult, SampleSet, SamplingConfig,
                                 add_noise, align_estimates, breakdown_psnr, circular_distance,
                                 first_ratio_zero, sample_matrix, sd_metric, synthesize, wrap_period)

CFG = SamplingConfig(21)
LAM = 2 * math.pi / 21


def direct_sum_samples(t, a, kernel, N, T, periods=3):
    """y[n] as a plain double loop over Diracs and neighbouring periods."""
    y = np.zeros(N, dtype=complex)
    for n in range(N):
        for tk, ak in zip(t, a):
            for l in range(-periods, periods + 1):
                y[n] += ak * kernel(np.array([tk / T - n + l * N]))[0]
    return y


def breakdown_by_cosines(P, lam, x):
    """Same curve with the sine ratio expanded as a sum of cosines (h = P/2 + 1 integer)."""
    h = P // 2 + 1
    theta = lam * x / 2
    ratio = sum(math.cos((2 * k - h + 1) * theta) for k in range(h))
    return 10 * math.log10(8 * h * math.log(h) / (h - ratio) ** 2)


class TestDiracStream:
    def test_sorted_on_construction(self):
        s = DiracStream(1.0, [0.3, -0.2], [1.0, 2.0])
        assert np.array_equal(s.locations, [-0.2, 0.3]) and np.array_equal(s.amplitudes, [2.0, 1.0])

    @pytest.mark.parametrize("t,a", [([0.5], [1.0]), ([-0.6], [1.0]), ([0.1], [0.0]), ([], []),
                                     ([0.1], [np.inf])])
    def test_invalid(self, t, a):
        with pytest.raises(ValueError):
            DiracStream(1.0, t, a)

    def test_csv_roundtrip(self, tmp_path):
        s = DiracStream(1.0, [0.1, 0.2], [3.0, 5.0])
        s.to_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().startswith("t,a\n")
        back = DiracStream.from_csv(tmp_path / "s.csv")
        assert np.array_equal(back.locations, s.locations) and np.array_equal(back.amplitudes, s.amplitudes)


class TestSynthesize:
    def test_unit_dirac_at_origin(self):
        k = EMOMS(20)
        y = synthesize(DiracStream(1.0, [0.0], [1.0]), k, CFG).values
        n = np.arange(21)
        # periodic: phi(-n) is taken from the next period
        assert np.allclose(y, k(np.mod(-n, 21)))

    def test_direct_sum_oracle(self):
        k = EMOMS(20)
        y = synthesize(DiracStream(1.0, [0.1, 0.2], [3.0, 5.0]), k, CFG).values
        ref = direct_sum_samples([0.1, 0.2], [3.0, 5.0], k, 21, CFG.T)
        assert np.max(np.abs(y - ref)) < 1e-12

    def test_complex_kernel_direct_sum(self):
        k = ESpline((0.4j, 1.1j, -0.2j))
        cfg = SamplingConfig(7)
        y = synthesize(DiracStream(1.0, [-0.3, 0.25], [1.0, -2.0]), k, cfg).values
        assert np.max(np.abs(y - direct_sum_samples([-0.3, 0.25], [1.0, -2.0], k, 7, cfg.T))) < 1e-12

    def test_batched_sample_matrix(self):
        k = EMOMS(20)
        t = np.random.default_rng(0).uniform(-0.5, 0.5, size=(4, 3, 2))
        G = sample_matrix(t, k, CFG)
        assert G.shape == (4, 3, 21, 2)
        assert np.allclose(G[2, 1], sample_matrix(t[2, 1], k, CFG))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-0.49, 0.49), min_size=1, max_size=4), st.floats(-5, 5).filter(lambda c: c != 0),
           st.integers(-30, 30))
    def test_property_linear_and_shift_equivariant(self, t, c, shift):
        k = EMOMS(20)
        a = np.linspace(1.0, 2.0, len(t))
        base = synthesize(DiracStream(1.0, t, a), k, CFG).values
        assert np.allclose(synthesize(DiracStream(1.0, t, c * a), k, CFG).values, c * base, atol=1e-12)
        moved = wrap_period(np.asarray(t) + shift * CFG.T)
        shifted = synthesize(DiracStream(1.0, moved, a), k, CFG).values
        assert np.allclose(shifted, np.roll(base, shift), atol=1e-10)


class TestNoise:
    def test_infinite_psnr_is_noiseless(self):
        y = SampleSet(np.arange(21.0), CFG)
        out = add_noise(y, NoiseSpec(math.inf, 3.0), np.random.default_rng(0))
        assert np.array_equal(out.values, y.values)

    def test_zero_db_peak_one(self):
        assert NoiseSpec(0.0, 1.0).sigma == 1.0
        assert NoiseSpec(20.0, 5.0).sigma == pytest.approx(0.5)

    def test_empirical_std(self):
        cfg = SamplingConfig(100_000)
        out = add_noise(SampleSet(np.zeros(100_000), cfg), NoiseSpec(10.0, 2.0), np.random.default_rng(1))
        sigma = 2.0 * 10 ** (-0.5)
        assert abs(out.values.std() / sigma - 1) < 0.02

    def test_seeded_noise_is_bitwise_reproducible(self):
        y = SampleSet(np.ones(21), CFG)
        a = add_noise(y, NoiseSpec(5.0, 1.0), np.random.default_rng(7)).values
        b = add_noise(y, NoiseSpec(5.0, 1.0), np.random.default_rng(7)).values
        assert a.tobytes() == b.tobytes()

    def test_for_stream_uses_peak(self):
        s = DiracStream(1.0, [0.0, 0.1], [1.0, -4.0])
        assert NoiseSpec.for_stream(s, 0.0).sigma == 4.0


class TestAlignmentAndSD:
    truth = DiracStream(1.0, [-0.3, 0.1, 0.4], [1.0, 1.0, 1.0])

    def test_shuffled_exact(self):
        res = ReconstructionResult([0.4, -0.3, 0.1], [1, 2, 3])
        al = align_estimates(res, self.truth)
        assert np.array_equal(al.locations, self.truth.locations) and al.cost == 0.0
        assert al.missing == al.spurious == 0

    def test_missing_dirac(self):
        truth = DiracStream(1.0, [-0.2, 0.2], [1.0, 1.0])
        al = align_estimates(ReconstructionResult([0.21], [1.0]), truth)
        assert al.missing == 1 and np.isnan(al.locations[0]) and al.locations[1] == pytest.approx(0.21)

    def test_wraparound_distance(self):
        assert circular_distance(-0.49, 0.49) == pytest.approx(0.02)
        truth = DiracStream(1.0, [-0.49], [1.0])
        al = align_estimates(ReconstructionResult([0.49], [1.0]), truth)
        assert al.cost == pytest.approx(0.02 ** 2)
        assert al.locations[0] == pytest.approx(-0.51)

    def test_spurious_counted(self):
        truth = DiracStream(1.0, [0.0], [1.0])
        al = align_estimates(ReconstructionResult([0.01, 0.3], [1.0, 1.0]), truth)
        assert al.spurious == 1 and al.locations[0] == pytest.approx(0.01)

    def test_sd_exact_zero(self):
        est = np.tile(self.truth.locations, (5, 1))
        assert np.all(sd_metric(est, self.truth).per_k == 0)

    def test_sd_single_offset(self):
        est = self.truth.locations + np.array([0.0, 0.03, 0.0])
        assert sd_metric(est, self.truth).per_k[1] == pytest.approx(0.03)

    def test_sd_symmetric_offsets(self):
        est = np.stack([self.truth.locations + 0.02, self.truth.locations - 0.02])
        assert np.allclose(sd_metric(est, self.truth).per_k, 0.02)

    def test_sd_skips_missing(self):
        est = np.stack([self.truth.locations + 0.01, self.truth.locations])
        est[1, 0] = np.nan
        sd = sd_metric(est, self.truth)
        assert sd.per_k[0] == pytest.approx(0.01) and list(sd.matched) == [1, 2, 2]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-0.2, 0.2), min_size=3, max_size=3))
    def test_property_sd_nonnegative_zero_iff_exact(self, offsets):
        est = self.truth.locations + np.asarray(offsets)
        sd = sd_metric(est, self.truth)
        assert np.all(sd.per_k >= 0)
        assert np.allclose(sd.per_k, np.abs(offsets))

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(0.1, 10))
    def test_property_wrap_range(self, t, period):
        w = float(wrap_period(t, period))
        assert -period / 2 <= w < period / 2
        assert math.isclose(math.remainder(w - t, period), 0.0, abs_tol=1e-9 * max(1, abs(t)))


class TestBreakdown:
    def test_spot_value(self):
        assert breakdown_psnr(20, LAM, 0.21) == pytest.approx(36.5596, abs=1e-4)

    @pytest.mark.parametrize("x", [0.021, 0.1, 0.21, 0.5, 1.0, 1.5, 2.1, 4.0, 6.64])
    def test_matches_cosine_expansion(self, x):
        assert abs(breakdown_psnr(20, LAM, x) - breakdown_by_cosines(20, LAM, x)) < 1e-9

    def test_monotone_before_first_zero(self):
        x = np.linspace(1e-3, first_ratio_zero(20, LAM), 2000)
        v = breakdown_psnr(20, LAM, x)
        assert np.all(np.isfinite(v)) and np.all(np.diff(v) <= 1e-12)

    def test_first_zero(self):
        assert first_ratio_zero(20, LAM) == pytest.approx(21 / 11)

    def test_diverges_at_zero_separation(self):
        v = breakdown_psnr(20, LAM, np.array([1e-2, 1e-4, 1e-6]))
        assert v[0] < v[1] < v[2] and v[2] > 150

    def test_nonpositive_separation_rejected(self):
        with pytest.raises(ValueError):
            breakdown_psnr(20, LAM, 0.0)
