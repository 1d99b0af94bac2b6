import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from mimo_lab.channel import ChannelModel
from mimo_lab.fec import (
    BerConfig,
    CodeSpec,
    FrameConfig,
    ber_run,
    conv_encode,
    deinterleave,
    depuncture,
    interleave,
    interleaver,
    run_frame,
    viterbi_soft_decode,
)
from mimo_lab.schemes import NoiseModel

HALF = CodeSpec()
THREE_QUARTER = CodeSpec(rate="3/4")


def saturated(coded):
    return np.where(np.asarray(coded) == 1, 60.0, -60.0)


class TestCodeSpec:
    def test_defaults(self):
        assert HALF.memory == 6 and HALF.n_states == 64
        np.testing.assert_array_equal(HALF.taps()[0], [1, 0, 1, 1, 0, 1, 1])
        np.testing.assert_array_equal(HALF.taps()[1], [1, 1, 1, 1, 0, 0, 1])

    def test_catastrophic_rejected(self):
        # (1 + D)(1 + D + D^2) and (1 + D)^3 share the factor 1 + D
        with pytest.raises(ValueError, match="coprime"):
            CodeSpec(constraint_length=4, generators=(0b1001, 0b1111))

    def test_degree_checked(self):
        with pytest.raises(ValueError, match="degree"):
            CodeSpec(generators=(0o33, 0o171))

    def test_rate_checked(self):
        with pytest.raises(ValueError):
            CodeSpec(rate="2/3")

    def test_lengths(self):
        assert HALF.mother_length(100) == 212
        assert THREE_QUARTER.coded_length(96) == 136
        with pytest.raises(ValueError, match="period"):
            THREE_QUARTER.coded_length(100)

    def test_desk_frame(self):
        assert FrameConfig.desk_default(4).info_bits_per_frame == 4992


class TestEncoder:
    def test_zero_in_zero_out(self):
        out = conv_encode(np.zeros(50, dtype=int))
        assert out.size == 2 * (50 + 6) and not out.any()

    def test_impulse_response(self):
        out = conv_encode([1, 0, 0, 0]).reshape(-1, 2)
        np.testing.assert_array_equal(out[:7].T, HALF.taps())
        assert not out[7:].any()

    def test_free_distance(self):
        # minimum weight over short error events starting with a 1
        best = min(int(conv_encode((1,) + tail).sum()) for tail in itertools.product((0, 1), repeat=9))
        assert best == 10

    def test_linear(self, rng):
        a, b = rng.integers(0, 2, 64), rng.integers(0, 2, 64)
        np.testing.assert_array_equal(conv_encode(a ^ b), conv_encode(a) ^ conv_encode(b))

    def test_puncture_length(self, rng):
        assert conv_encode(rng.integers(0, 2, 96), THREE_QUARTER).size == 136


class TestViterbi:
    def test_round_trip_512(self, rng):
        m = rng.integers(0, 2, 512)
        np.testing.assert_array_equal(viterbi_soft_decode(saturated(conv_encode(m))), m)

    def test_single_flip(self, rng):
        m = rng.integers(0, 2, 512)
        base = saturated(conv_encode(m))
        for pos in rng.choice(base.size, 20, replace=False):
            llr = base.copy()
            llr[pos] = -llr[pos]
            np.testing.assert_array_equal(viterbi_soft_decode(llr), m)

    def test_zero_llrs_decode_to_zero(self):
        assert not viterbi_soft_decode(np.zeros(2 * 70), n_info=64).any()

    def test_three_quarter_round_trip(self, rng):
        m = rng.integers(0, 2, 96)
        np.testing.assert_array_equal(viterbi_soft_decode(saturated(conv_encode(m, THREE_QUARTER)), THREE_QUARTER, 96), m)

    def test_depuncture_zeros(self):
        full = depuncture(np.ones(136), THREE_QUARTER, 96)
        assert full.size == 204 and np.count_nonzero(full == 0) == 68

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=80))
    def test_round_trip_property(self, bits):
        np.testing.assert_array_equal(viterbi_soft_decode(saturated(conv_encode(bits))), bits)


class TestInterleaver:
    def test_round_trip(self, rng):
        x = rng.standard_normal(300)
        np.testing.assert_array_equal(deinterleave(interleave(x, 5), 5), x)

    def test_same_seed(self):
        np.testing.assert_array_equal(interleaver(100, 7), interleaver(100, 7))
        assert not np.array_equal(interleaver(100, 7), interleaver(100, 8))

    def test_is_permutation(self):
        np.testing.assert_array_equal(np.sort(interleaver(257, 1)), np.arange(257))

    def test_first_position_uniform(self):
        n = 16
        counts = np.bincount([interleaver(n, s)[0] for s in range(10_000)], minlength=n)
        assert chisquare(counts).pvalue > 0.001


def small_cfg(**kw):
    base = dict(channel=ChannelModel.rayleigh(4, 4), schemes=("gpcbd",), m=4, snr_grid_db=(50.0,),
                info_bits_per_frame=250, max_frames=100, min_errors=100, seed=2)
    base.update(kw)
    return BerConfig(**base)


class TestBerChain:
    def test_error_free_at_50db(self):
        (rep,) = ber_run(small_cfg())
        assert rep.frames == 100 and rep.bit_errors == 0 and rep.ber == 0.0

    def test_deterministic(self):
        cfg = small_cfg(snr_grid_db=(4.0,), max_frames=6, schemes=("svd", "gpcbd"))
        assert ber_run(cfg) == ber_run(cfg)

    def test_workers_invariant(self):
        cfg = small_cfg(snr_grid_db=(2.0,), max_frames=12, min_errors=30)
        assert ber_run(cfg, workers=1) == ber_run(cfg, workers=3)

    def test_early_stop(self):
        (rep,) = ber_run(small_cfg(snr_grid_db=(-10.0,), min_errors=100))
        assert rep.bit_errors >= 100 and rep.frames < 100

    @pytest.mark.parametrize("scheme", ["svd", "cbd", "gpcbd"])
    @pytest.mark.parametrize("m", [4, 16, 64])
    @pytest.mark.parametrize("shape", [(4, 4), (4, 6), (6, 4)])
    def test_noiseless_chain(self, scheme, m, shape):
        cfg = small_cfg(channel=ChannelModel.kronecker(*shape, 0.95), schemes=(scheme,), m=m, noiseless=True)
        for frame in range(2):
            assert run_frame(scheme, cfg, NoiseModel.from_snr_db(80), frame) == (0, False)

    def test_three_quarter_chain(self):
        (rep,) = ber_run(small_cfg(code=THREE_QUARTER, info_bits_per_frame=252, max_frames=5))
        assert rep.bit_errors == 0

    def test_config_validation(self):
        with pytest.raises(ValueError, match="receiver chain"):
            small_cfg(schemes=("gmd",))
        with pytest.raises(ValueError, match="duplicate"):
            small_cfg(schemes=("svd", "svd"))
