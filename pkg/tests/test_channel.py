import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import frame_error_rate, measured_snr_db
from v2xdetect.channel import (MESSAGE_BITS, ChannelParams, Geometry, StateBounds, channel_gain,
                               decode_frame, decode_state_message, encode_state_message,
                               large_scale_gain_db, link_distance_m, make_frame, path_loss_db,
                               qpsk_demodulate, qpsk_modulate, transmit)
from v2xdetect.core import ContractError, Hypothesis

BOUNDS = StateBounds()
VEHICLE = np.array([150.0, 100.0])
JAMMER = np.array([40.0, 30.0])
bits64 = st.lists(st.integers(0, 1), min_size=MESSAGE_BITS, max_size=MESSAGE_BITS).map(
    lambda b: np.array(b, dtype=np.uint8))


def random_frame(rng, t=0):
    pos = rng.uniform(-400, 400, 2)
    vel = rng.uniform(-7, 7, 2)
    return make_frame(0, t, pos, vel, BOUNDS), pos, vel


class TestParams:
    def test_defaults(self):
        p = ChannelParams()
        assert (p.carrier_freq_ghz, p.bandwidth_mhz, p.cell_radius_m) == (2.0, 1.4, 500.0)
        assert (p.rsu_antenna_height_m, p.rsu_gain_dbi) == (25.0, 8.0)
        assert (p.vehicle_antenna_height_m, p.vehicle_gain_dbi) == (1.5, 3.0)
        assert (p.noise_figure_db, p.tx_power_dbm, p.shadow_std_db, p.snr_db) == (5.0, 23.0, 8.0, 20.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ContractError):
            ChannelParams(bandwidth_mhz=0.0)


class TestStateMessage:
    def test_box_minimum_is_all_zero(self):
        bits = encode_state_message([-500, -500], [-8, -8], BOUNDS)
        assert bits.shape == (64,) and not bits.any()

    def test_box_centre_is_0x8000(self):
        bits = encode_state_message([0, 0], [0, 0], BOUNDS)
        expected = np.array([1] + [0] * 15, dtype=np.uint8)
        assert np.array_equal(bits, np.tile(expected, 4))

    def test_box_maximum_saturates(self):
        assert encode_state_message([500, 500], [8, 8], BOUNDS).all()

    @given(st.floats(-500, 500), st.floats(-500, 500), st.floats(-8, 8), st.floats(-8, 8))
    def test_round_trip_within_quantization(self, x, y, vx, vy):
        pos, vel = decode_state_message(encode_state_message([x, y], [vx, vy], BOUNDS), BOUNDS)
        assert np.all(np.abs(pos - [x, y]) <= 1000.0 / 2 ** 16)
        assert np.all(np.abs(vel - [vx, vy]) <= 16.0 / 2 ** 16)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            encode_state_message([600, 0], [0, 0], BOUNDS)


class TestQpsk:
    def test_zero_pair(self):
        assert qpsk_modulate([0, 0])[0] == pytest.approx(complex(0.70710678, 0.70710678))

    @given(bits64)
    def test_round_trip(self, bits):
        assert np.array_equal(qpsk_demodulate(qpsk_modulate(bits)), bits)

    @given(bits64)
    def test_unit_energy(self, bits):
        assert abs(np.mean(np.abs(qpsk_modulate(bits)) ** 2) - 1.0) <= 1e-12

    def test_gray_neighbours_differ_in_one_bit(self):
        pts = {tuple(b): qpsk_modulate(b)[0] for b in ([0, 0], [0, 1], [1, 0], [1, 1])}
        for a, za in pts.items():
            for b, zb in pts.items():
                if abs(abs(za - zb) - np.sqrt(2)) < 1e-9:  # adjacent points
                    assert sum(x != y for x, y in zip(a, b)) == 1

    def test_odd_length(self):
        with pytest.raises(ContractError):
            qpsk_modulate([1, 0, 1])


class TestGain:
    def test_path_loss_half_km(self):
        assert path_loss_db(0.5) == pytest.approx(128.1 + 37.6 * np.log10(0.5), abs=1e-12)
        assert path_loss_db(0.5) == pytest.approx(116.78, abs=5e-3)

    def test_path_loss_needs_positive_distance(self):
        with pytest.raises(ContractError):
            path_loss_db(0.0)

    def test_deterministic_alpha(self):
        p = ChannelParams(shadow_std_db=0.0)
        g = channel_gain(VEHICLE, np.zeros(2), p, np.random.default_rng(0), fading=False)
        d = link_distance_m(VEHICLE, np.zeros(2), p)
        alpha = 10 ** (large_scale_gain_db(d, p.vehicle_gain_dbi, p, 0.0) / 10)
        assert abs(abs(g) ** 2 - alpha) <= 1e-12 * alpha

    def test_rayleigh_second_moment(self):
        p = ChannelParams(shadow_std_db=0.0)
        rng = np.random.default_rng(1)
        d = link_distance_m(VEHICLE, np.zeros(2), p)
        alpha = 10 ** (large_scale_gain_db(d, p.vehicle_gain_dbi, p, 0.0) / 10)
        h2 = np.array([abs(channel_gain(VEHICLE, np.zeros(2), p, rng)) ** 2 for _ in range(100_000)])
        assert abs(h2.mean() / alpha - 1.0) <= 0.02


class TestTransmit:
    params = ChannelParams()

    def test_identity_channel(self):
        frame, _, _ = random_frame(np.random.default_rng(0))
        rx = transmit(frame, "H0", 0.0, Geometry(VEHICLE), self.params, np.random.default_rng(0),
                      gain=1.0, noise_var=0.0)
        assert np.array_equal(rx.samples, frame.symbols)

    def test_jammer_dominated_ber(self):
        rng = np.random.default_rng(2)
        errors = total = 0
        for t in range(300):
            frame, _, _ = random_frame(rng, t)
            rx = transmit(frame, "H1", 0.0, Geometry(VEHICLE, jammer=JAMMER), self.params, rng,
                          gain=1.0, noise_var=0.0, jammer_gain=1e6)
            errors += int(np.sum(qpsk_demodulate(rx.samples) != frame.payload_bits))
            total += frame.payload_bits.size
        assert abs(errors / total - 0.5) <= 0.02

    def test_spoofed_payload_shares_h0_noise(self):
        frame0 = make_frame(0, 0, [10.0, 20.0], [1.0, 0.0], BOUNDS)
        frame2 = make_frame(0, 0, [20.0, 20.0], [1.0, 0.0], BOUNDS)
        rx0 = transmit(frame0, "H0", 0.0, Geometry(VEHICLE), self.params, np.random.default_rng(5))
        rx2 = transmit(frame2, "H2", 0.0, Geometry(VEHICLE), self.params, np.random.default_rng(5))
        assert rx0.channel_gain == rx2.channel_gain
        n0 = rx0.samples - rx0.channel_gain * frame0.symbols
        n2 = rx2.samples - rx2.channel_gain * frame2.symbols
        assert np.allclose(n0, n2, rtol=0, atol=1e-12 * np.abs(rx0.samples).max())
        pos, _, _ = decode_frame(rx2, rx2.channel_gain, BOUNDS)
        assert pos == pytest.approx([20.0, 20.0], abs=1000 / 2 ** 16)

    def test_h2_sample_distribution_matches_h0(self):
        # same payload bits and seeds: sample streams are bit-identical
        frame = make_frame(0, 0, [10.0, 20.0], [1.0, 0.0], BOUNDS)
        for seed in range(20):
            rx0 = transmit(frame, "H0", 0.0, Geometry(VEHICLE), self.params, np.random.default_rng(seed))
            rx2 = transmit(frame, "H2", 0.0, Geometry(VEHICLE), self.params, np.random.default_rng(seed))
            assert np.array_equal(rx0.samples, rx2.samples)

    def test_deterministic(self):
        frame, _, _ = random_frame(np.random.default_rng(0))
        geo = Geometry(VEHICLE, jammer=JAMMER)
        a = transmit(frame, "H1", 30.0, geo, self.params, np.random.default_rng(9))
        b = transmit(frame, "H1", 30.0, geo, self.params, np.random.default_rng(9))
        assert np.array_equal(a.samples, b.samples) and a.jammer_gain == b.jammer_gain

    def test_h1_requires_jammer(self):
        frame, _, _ = random_frame(np.random.default_rng(0))
        with pytest.raises(ContractError):
            transmit(frame, "H1", 30.0, Geometry(VEHICLE), self.params, np.random.default_rng(0))

    def test_indeterminate_not_transmittable(self):
        frame, _, _ = random_frame(np.random.default_rng(0))
        with pytest.raises(ContractError):
            transmit(frame, Hypothesis.INDETERMINATE, 0.0, Geometry(VEHICLE), self.params,
                     np.random.default_rng(0))


class TestDecode:
    params = ChannelParams()

    def test_noiseless_round_trip_and_iq_feature(self):
        rng = np.random.default_rng(4)
        frame, pos, vel = random_frame(rng)
        g = 0.3 - 0.2j
        rx = transmit(frame, "H0", 0.0, Geometry(VEHICLE), self.params, rng, gain=g, noise_var=0.0)
        dpos, dvel, iq = decode_frame(rx, g, BOUNDS)
        assert np.all(np.abs(dpos - pos) <= 1000 / 2 ** 16)
        assert np.all(np.abs(dvel - vel) <= 16 / 2 ** 16)
        m = frame.symbols.mean()
        assert iq == pytest.approx([m.real, m.imag], abs=1e-12)

    def test_strong_jammer_displaces_iq_feature(self):
        rng = np.random.default_rng(6)
        geo = Geometry(VEHICLE, jammer=JAMMER)
        iq0, shift = [], []
        for t in range(1000):
            frame, _, _ = random_frame(rng, t)
            seed = int(rng.integers(2 ** 31))
            rx0 = transmit(frame, "H0", 40.0, geo, self.params, np.random.default_rng(seed))
            rx1 = transmit(frame, "H1", 40.0, geo, self.params, np.random.default_rng(seed))
            a = decode_frame(rx0, rx0.channel_gain, BOUNDS)[2]
            b = decode_frame(rx1, rx1.channel_gain, BOUNDS)[2]
            iq0.append(a)
            shift.append(np.linalg.norm(b - a))
        h0_std = np.linalg.norm(np.std(iq0, axis=0))
        assert np.median(shift) > 3 * h0_std

    def test_zero_gain_rejected(self):
        frame, _, _ = random_frame(np.random.default_rng(0))
        rx = transmit(frame, "H0", 0.0, Geometry(VEHICLE), self.params, np.random.default_rng(0))
        with pytest.raises(ContractError):
            decode_frame(rx, 0.0, BOUNDS)


def test_frame_error_rate_at_20db():
    assert frame_error_rate(10_000) <= 1e-2


def test_received_snr_matches_configuration():
    assert abs(measured_snr_db(100_000) - ChannelParams().snr_db) <= 0.2
