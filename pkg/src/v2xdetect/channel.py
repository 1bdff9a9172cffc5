"""V2I uplink simulation: state-message framing, QPSK, large/small-scale
fading, reactive jamming and spoofed payloads, and RSU-side decoding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, Hypothesis

FIELD_BITS = 16
MESSAGE_BITS = 4 * FIELD_BITS
_LEVELS = 1 << FIELD_BITS
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class ChannelParams:
    carrier_freq_ghz: float = 2.0
    bandwidth_mhz: float = 1.4
    cell_radius_m: float = 500.0
    rsu_antenna_height_m: float = 25.0
    rsu_gain_dbi: float = 8.0
    vehicle_antenna_height_m: float = 1.5
    vehicle_gain_dbi: float = 3.0
    noise_figure_db: float = 5.0
    tx_power_dbm: float = 23.0
    shadow_std_db: float = 8.0
    snr_db: float = 20.0

    def __post_init__(self):
        for name in ("carrier_freq_ghz", "bandwidth_mhz", "cell_radius_m",
                     "rsu_antenna_height_m", "vehicle_antenna_height_m"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.shadow_std_db < 0:
            raise ContractError("shadow_std_db must be nonnegative")


@dataclass(frozen=True)
class StateBounds:
    """Quantizer ranges for the 64-bit state message."""

    pos_min: float = -500.0
    pos_max: float = 500.0
    vel_min: float = -8.0
    vel_max: float = 8.0

    def ranges(self):
        return [(self.pos_min, self.pos_max)] * 2 + [(self.vel_min, self.vel_max)] * 2


@dataclass(frozen=True)
class Geometry:
    """2-D positions in meters (local ENU, RSU at the origin by default)."""

    vehicle: np.ndarray
    rsu: np.ndarray = field(default_factory=lambda: np.zeros(2))
    jammer: np.ndarray | None = None


@dataclass(frozen=True)
class Frame:
    vehicle_id: int
    t: int
    symbols: np.ndarray
    payload_bits: np.ndarray

    def __post_init__(self):
        if len(self.symbols) * 2 != len(self.payload_bits):
            raise ContractError("symbols length must be half the payload length")


@dataclass(frozen=True)
class ReceivedFrame:
    vehicle_id: int
    t: int
    samples: np.ndarray
    hypothesis: Hypothesis
    channel_gain: complex
    jammer_gain: complex | None = None


def _quantize(x: float, lo: float, hi: float) -> int:
    if not lo <= x <= hi:
        raise ContractError(f"value {x} outside quantizer range [{lo}, {hi}]")
    return min(int(np.floor((x - lo) / (hi - lo) * _LEVELS)), _LEVELS - 1)


def _dequantize(q: int, lo: float, hi: float) -> float:
    return lo + (q + 0.5) * (hi - lo) / _LEVELS


def encode_state_message(position, velocity, bounds: StateBounds = StateBounds()) -> np.ndarray:
    """64 bits: x, y, vx, vy as 16-bit unsigned fixed point, MSB first.

    Code ``floor((v - lo) / (hi - lo) * 2**16)`` (clipped to 65535), so the
    box minimum maps to 0x0000 and the midpoint to 0x8000.
    """
    values = [*np.asarray(position, dtype=float), *np.asarray(velocity, dtype=float)]
    if len(values) != 4:
        raise ContractError("position and velocity must be 2-vectors")
    bits = np.zeros(MESSAGE_BITS, dtype=np.uint8)
    for k, (v, (lo, hi)) in enumerate(zip(values, bounds.ranges())):
        q = _quantize(v, lo, hi)
        for b in range(FIELD_BITS):
            bits[k * FIELD_BITS + b] = (q >> (FIELD_BITS - 1 - b)) & 1
    return bits


def decode_state_message(bits, bounds: StateBounds = StateBounds()) -> tuple[np.ndarray, np.ndarray]:
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape != (MESSAGE_BITS,):
        raise ContractError(f"message must have {MESSAGE_BITS} bits")
    weights = 1 << np.arange(FIELD_BITS - 1, -1, -1)
    codes = bits.reshape(4, FIELD_BITS) @ weights
    vals = np.array([_dequantize(int(q), lo, hi) for q, (lo, hi) in zip(codes, bounds.ranges())])
    return vals[:2], vals[2:]


def qpsk_modulate(bits) -> np.ndarray:
    """Gray map (b0 b1): 00->+1+j, 01->-1+j, 11->-1-j, 10->+1-j, scaled by 1/sqrt(2)."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size % 2:
        raise ContractError("qpsk needs an even number of bits")
    b0, b1 = bits[0::2], bits[1::2]
    return ((1 - 2 * b1) + 1j * (1 - 2 * b0)) * _INV_SQRT2


def qpsk_demodulate(symbols) -> np.ndarray:
    symbols = np.asarray(symbols)
    bits = np.empty(2 * symbols.size, dtype=np.uint8)
    bits[0::2] = symbols.imag < 0
    bits[1::2] = symbols.real < 0
    return bits


def path_loss_db(d_km: float) -> float:
    if d_km <= 0:
        raise ContractError("path loss needs positive distance")
    return 128.1 + 37.6 * np.log10(d_km)


def large_scale_gain_db(distance_m: float, tx_gain_dbi: float, params: ChannelParams,
                        shadow_db: float = 0.0) -> float:
    return tx_gain_dbi + params.rsu_gain_dbi - path_loss_db(distance_m / 1000.0) + shadow_db


def link_distance_m(tx_pos, rx_pos, params: ChannelParams) -> float:
    """3-D distance using the vehicle and RSU antenna heights."""
    horizontal = float(np.linalg.norm(np.asarray(tx_pos, float) - np.asarray(rx_pos, float)))
    if horizontal == 0.0:
        raise ContractError("transmitter and receiver coincide")
    dh = params.rsu_antenna_height_m - params.vehicle_antenna_height_m
    return float(np.hypot(horizontal, dh))


def channel_gain(tx_pos, rx_pos, params: ChannelParams, rng: np.random.Generator,
                 tx_gain_dbi: float | None = None, fading: bool = True) -> complex:
    """Complex amplitude gain sqrt(alpha) * h.

    alpha folds path loss, a log-normal shadowing draw and both antenna gains;
    h ~ CN(0, 1) unless ``fading`` is off (then h = 1). Shadowing is drawn
    first, then h, so streams stay aligned across hypotheses.
    """
    d = link_distance_m(tx_pos, rx_pos, params)
    gain_dbi = params.vehicle_gain_dbi if tx_gain_dbi is None else tx_gain_dbi
    shadow = rng.normal(0.0, params.shadow_std_db) if params.shadow_std_db > 0 else 0.0
    alpha = 10.0 ** (large_scale_gain_db(d, gain_dbi, params, shadow) / 10.0)
    if fading:
        h = (rng.normal() + 1j * rng.normal()) * _INV_SQRT2
    else:
        h = 1.0 + 0j
    return complex(np.sqrt(alpha) * h)


def dbm_to_mw(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0)


def make_frame(vehicle_id: int, t: int, position, velocity,
               bounds: StateBounds = StateBounds()) -> Frame:
    bits = encode_state_message(position, velocity, bounds)
    return Frame(vehicle_id, t, qpsk_modulate(bits), bits)


def transmit(frame: Frame, hypothesis, jammer_power_dbm: float, geometry: Geometry,
             params: ChannelParams, rng: np.random.Generator, *,
             gain: complex | None = None, noise_var: float | None = None,
             jammer_gain: complex | None = None) -> ReceivedFrame:
    """Apply the uplink under one of the three hypotheses.

    Draw order per frame: vehicle channel, noise, then (H1 only) jammer
    channel and jammer symbols. H0 and H2 therefore consume identical
    streams. ``gain``/``noise_var``/``jammer_gain`` override the random
    draws for degenerate checks.
    """
    hyp = Hypothesis(hypothesis)
    if hyp not in (Hypothesis.H0, Hypothesis.H1, Hypothesis.H2):
        raise ContractError(f"invalid hypothesis {hypothesis!r}")
    x = frame.symbols
    if gain is None:
        gain = channel_gain(geometry.vehicle, geometry.rsu, params, rng) * np.sqrt(dbm_to_mw(params.tx_power_dbm))
    signal = gain * x
    if noise_var is None:
        noise_var = float(np.mean(np.abs(signal) ** 2)) / 10.0 ** (params.snr_db / 10.0)
    noise = np.sqrt(noise_var / 2.0) * (rng.normal(size=x.size) + 1j * rng.normal(size=x.size))
    z = signal + noise
    g_j = None
    if hyp is Hypothesis.H1:
        if jammer_gain is None:
            if geometry.jammer is None:
                raise ContractError("H1 needs a jammer position")
            jammer_gain = channel_gain(geometry.jammer, geometry.rsu, params, rng) * np.sqrt(dbm_to_mw(jammer_power_dbm))
        g_j = complex(jammer_gain)
        xj = qpsk_modulate(rng.integers(0, 2, 2 * x.size))
        z = z + g_j * xj
    return ReceivedFrame(frame.vehicle_id, frame.t, z, hyp, complex(gain), g_j)


def decode_frame(rx: ReceivedFrame, known_gain: complex, bounds: StateBounds = StateBounds()):
    """Equalize with the known CSI, hard-demap and dequantize.

    Returns (position, velocity, iq_feature); the I/Q feature is the mean
    equalized sample, the continuous RF observation.
    """
    if known_gain == 0:
        raise ContractError("known gain must be nonzero")
    eq = rx.samples / known_gain
    bits = qpsk_demodulate(eq)
    pos, vel = decode_state_message(bits, bounds)
    m = eq.mean()
    return pos, vel, np.array([m.real, m.imag])
