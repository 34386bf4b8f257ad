"""THz link budget: steering vectors, path gain, beamformed gain, SINR and rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from glove.config import SPEED_OF_LIGHT, ArraySpec, BandPlan


@dataclass(frozen=True)
class ChannelRealization:
    """Per-band quantities of one routed link ``src -> dst`` in one slot."""

    src: int
    dst: int
    path_gain: np.ndarray
    misalignment_gain: float
    gain: np.ndarray
    interference: np.ndarray
    sinr: np.ndarray
    rate: float
    doppler_phase: complex = 1.0 + 0.0j


def steering_vector(spec: ArraySpec, wavelength: float, phi: float, theta: float) -> np.ndarray:
    """Planar-array response, flattened with ``m_x`` as the slow index.

    The phase uses ``m_x sin(theta) cos(phi) + m_y cos(theta)``; the usual
    ``sin(theta) sin(phi)`` term on the second axis is deliberately absent.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be > 0")
    if not (math.isfinite(phi) and math.isfinite(theta)):
        raise ValueError("angles must be finite")
    mx = np.arange(spec.M_x)[:, None]
    my = np.arange(spec.M_y)[None, :]
    phase = (2 * np.pi * spec.d0 / wavelength) * (
        mx * math.sin(theta) * math.cos(phi) + my * math.cos(theta)
    )
    return (np.exp(1j * phase) / math.sqrt(spec.M_x * spec.M_y)).ravel()


def path_gain(band: BandPlan, k: int, d: float | np.ndarray) -> float | np.ndarray:
    """Free-space spreading times absorption loss for sub-band ``k`` at distance ``d``."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("distance must be > 0")
    spreading = (SPEED_OF_LIGHT / (4 * np.pi * band.f[k] * d_arr)) ** 2
    out = spreading * np.exp(-band.g_abs[k] * d_arr)
    return float(out) if np.ndim(out) == 0 else out


def path_gains(band: BandPlan, d: float) -> np.ndarray:
    """``path_gain`` for every sub-band at once."""
    if d <= 0:
        raise ValueError("distance must be > 0")
    f = np.asarray(band.f)
    g = np.asarray(band.g_abs)
    return (SPEED_OF_LIGHT / (4 * np.pi * f * d)) ** 2 * np.exp(-g * d)


def misalignment_gain(
    rng: np.random.Generator | None, sigma_p: float, w_eq: float, a0: float, size=None
):
    """Pointing-error gain ``a0 * exp(-2 r^2 / w_eq^2)`` with Rayleigh radial error ``r``."""
    if sigma_p < 0 or w_eq <= 0 or not 0 < a0 <= 1:
        raise ValueError("need sigma_p >= 0, w_eq > 0, 0 < a0 <= 1")
    if sigma_p == 0:
        return a0 if size is None else np.full(size, a0)
    r = rng.rayleigh(sigma_p, size=size)
    return a0 * np.exp(-2.0 * r**2 / w_eq**2)


def beamformed_gain(
    tx_subarrays: int, rx_subarrays: int, spec: ArraySpec, alpha_sq, g_m: float
):
    """Effective ``|h|^2`` of a LoS-matched link.

    Both analog stages point along the line of sight and the digital stages
    have unit norm, so the full array gain of every allocated element adds
    coherently. The Doppler phase has unit modulus and drops out.
    """
    if tx_subarrays < 1 or rx_subarrays < 1:
        raise ValueError("a link needs at least one Tx and one Rx sub-array")
    array_gain = (tx_subarrays * spec.elements) * (rx_subarrays * spec.elements)
    return array_gain * spec.G_tx**2 * spec.G_rx**2 * np.asarray(alpha_sq) * g_m**2


def sinr(p, h_sq, interference, noise: float):
    if noise <= 0:
        raise ValueError("noise power must be > 0")
    return np.asarray(p) * np.asarray(h_sq) / (np.asarray(interference) + noise)


def link_rate(gammas, B: float) -> float:
    g = np.asarray(gammas, dtype=float)
    if np.any(g < 0):
        raise ValueError("SINR must be >= 0")
    return float(np.sum(B * np.log2(1.0 + g)))


def sample_interference(rng: np.random.Generator, mean: float, std: float, size) -> np.ndarray:
    """Clipped Gaussian interference power; ``std == 0`` gives the deterministic mean."""
    if std == 0:
        return np.full(size, max(0.0, mean))
    return np.maximum(0.0, rng.normal(mean, std, size=size))


def realize_link(
    src: int,
    dst: int,
    distance: float,
    tx_subarrays: int,
    rx_subarrays: int,
    power: np.ndarray,
    band: BandPlan,
    spec: ArraySpec,
    noise: float,
    interference: np.ndarray,
    g_m: float,
    doppler_phase: complex = 1.0 + 0.0j,
) -> ChannelRealization:
    alpha_sq = path_gains(band, distance)
    h_sq = beamformed_gain(tx_subarrays, rx_subarrays, spec, alpha_sq, g_m)
    gamma = sinr(power, h_sq, interference, noise)
    return ChannelRealization(
        src=src,
        dst=dst,
        path_gain=alpha_sq,
        misalignment_gain=float(g_m),
        gain=h_sq,
        interference=np.asarray(interference, dtype=float),
        sinr=gamma,
        rate=link_rate(gamma, band.B),
        doppler_phase=doppler_phase,
    )
