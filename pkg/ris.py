"""Dual-band RIS: phase decoding, per-element cascade gains and composite channels."""

import logging
import math
from typing import Union

import numpy as np

from channels import (
    friis_amplitude,
    optical_atmospheric_loss,
    propagation_phase,
    rf_path_loss,
)
from exceptions import StructuralError
from models import Band, ChannelState, ComplexGain, LinkGeometry, OpticalParams, PhaseConfig, RfParams, RisConfig, TWO_PI
from seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


def phase_step(bits: int) -> float:
    return TWO_PI / (1 << bits)


def _level_weights(bits: int) -> np.ndarray:
    return 1 << np.arange(bits)


def decode_levels(bits: np.ndarray, n_elements: int, bits_quantum: int, bits_classical: int):
    """Integer phase levels (m_Q, m_C) per element from the bit vector"""
    bits = np.asarray(bits)
    expected = n_elements * (bits_quantum + bits_classical)
    if bits.shape[-1] != expected:
        raise StructuralError(f"bit vector has length {bits.shape[-1]}, expected {expected}")
    split = n_elements * bits_quantum
    q = bits[..., :split].reshape(bits.shape[:-1] + (n_elements, bits_quantum))
    c = bits[..., split:].reshape(bits.shape[:-1] + (n_elements, bits_classical))
    return q @ _level_weights(bits_quantum), c @ _level_weights(bits_classical)


def encode_levels(levels_quantum, levels_classical, cfg: RisConfig) -> np.ndarray:
    """Inverse of decode_levels: bit vector with the quantum block first"""
    lq = np.asarray(levels_quantum, dtype=np.int64)
    lc = np.asarray(levels_classical, dtype=np.int64)
    if lq.shape != (cfg.n_elements,) or lc.shape != (cfg.n_elements,):
        raise StructuralError("one phase level per element and band is required")
    q = (lq[:, None] >> np.arange(cfg.bits_quantum)) & 1
    c = (lc[:, None] >> np.arange(cfg.bits_classical)) & 1
    return np.concatenate([q.ravel(), c.ravel()]).astype(np.uint8)


def decode_phases(bits: np.ndarray, cfg: RisConfig) -> PhaseConfig:
    bits = np.asarray(bits, dtype=np.uint8)
    mq, mc = decode_levels(bits, cfg.n_elements, cfg.bits_quantum, cfg.bits_classical)
    return PhaseConfig(
        bits=bits,
        phases_quantum=mq * phase_step(cfg.bits_quantum),
        phases_classical=mc * phase_step(cfg.bits_classical),
    )


def zero_phases(cfg: RisConfig) -> PhaseConfig:
    return decode_phases(np.zeros(cfg.dim, dtype=np.uint8), cfg)


def offset_phases(cfg: RisConfig, band: Band) -> np.ndarray:
    """Seeded uniform incident-phase offsets psi_n, one independent stream per band"""
    rng = make_rng(derive_seed(cfg.ris_offset_phase_seed, "offsets", band))
    return rng.uniform(0.0, TWO_PI, size=cfg.n_elements)


def cascade_gains(
    band: Band,
    cfg: RisConfig,
    geom: LinkGeometry,
    band_params: Union[OpticalParams, RfParams],
    amp_scale: float = 1.0,
) -> np.ndarray:
    """Complex satellite -> element -> ground gains for every element of one band.

    Both hops are Friis amplitudes; the satellite -> RIS hop shares the slant range
    and the band's atmospheric factor with the direct path, the short RIS -> ground
    hop is lossless. The phase carries the same propagation phase as the direct
    path plus the RIS -> ground hop and the per-element offset.
    """
    n = cfg.n_elements
    if n == 0:
        return np.zeros(0, dtype=complex)
    d1 = geom.slant_range_km
    d2 = cfg.ris_to_ground_km
    lam = band_params.wavelength_m
    if band == Band.QUANTUM:
        loss = optical_atmospheric_loss(band_params, geom)
    else:
        loss = rf_path_loss(band_params, geom)
    amplitude = (
        amp_scale * cfg.element_gain * friis_amplitude(lam, d1) * friis_amplitude(lam, d2) * math.sqrt(loss)
    )
    phase = propagation_phase(lam, d1) + propagation_phase(lam, d2) + offset_phases(cfg, band)
    return amplitude * np.exp(1j * np.mod(phase, TWO_PI))


def composite_complex(direct: complex, cascades: np.ndarray, phases: np.ndarray) -> complex:
    cascades = np.asarray(cascades, dtype=complex)
    phases = np.asarray(phases, dtype=float)
    if cascades.shape != phases.shape:
        raise StructuralError("one phase per cascade is required")
    if cascades.size == 0:
        return complex(direct)
    return complex(direct + np.sum(cascades * np.exp(1j * phases)))


def composite_gain(direct: ComplexGain, cascades: np.ndarray, phases: np.ndarray) -> ComplexGain:
    """H_tot = H_direct + sum_n g_n exp(j theta_n)"""
    if len(cascades) == 0:
        return direct
    return ComplexGain.from_complex(composite_complex(direct.to_complex(), cascades, phases))


def _alignment_levels(direct: ComplexGain, cascades: np.ndarray, bits_per_element: int) -> np.ndarray:
    cascades = np.asarray(cascades, dtype=complex)
    if not cascades.size:
        return np.zeros(0, dtype=np.int64)
    candidates = np.arange(1 << bits_per_element) * phase_step(bits_per_element)
    rotated = cascades * np.exp(-1j * direct.phase_rad)
    projection = np.real(rotated[:, None] * np.exp(1j * candidates[None, :]))
    tolerance = 1e-12 * np.maximum(np.abs(cascades), 1e-300)
    best = projection.max(axis=1)
    return np.argmax(projection >= (best - tolerance)[:, None], axis=1).astype(np.int64)


def best_quantized_alignment(
    direct: ComplexGain,
    cascades: np.ndarray,
    bits_per_element: int,
    band: Union[Band, str] = Band.QUANTUM,
) -> PhaseConfig:
    """Per element, the quantized phase that best projects g_n onto the direct phase.

    The aligned band is `band`; the other band stays at level 0 and both use
    bits_per_element bits. Near-ties (within 1e-12 of the element's amplitude)
    go to the lowest phase index.
    """
    levels = _alignment_levels(direct, cascades, bits_per_element)
    idle = np.zeros_like(levels)
    cfg = RisConfig(n_elements=levels.size, bits_quantum=bits_per_element, bits_classical=bits_per_element)
    if Band(band) == Band.QUANTUM:
        return decode_phases(encode_levels(levels, idle, cfg), cfg)
    return decode_phases(encode_levels(idle, levels, cfg), cfg)


def aligned_phase_config(state: ChannelState) -> PhaseConfig:
    """Greedy alignment of both bands, used as a sanity baseline"""
    cfg = state.ris
    mq = _alignment_levels(state.direct_quantum, state.cascade_quantum, cfg.bits_quantum)
    mc = _alignment_levels(state.direct_classical, state.cascade_classical, cfg.bits_classical)
    return decode_phases(encode_levels(mq, mc, cfg), cfg)


def composite_state_gains(state: ChannelState, phases: PhaseConfig):
    """Total complex gains (H_Q, H_C) of a state under a phase configuration"""
    h_q = composite_complex(state.direct_quantum.to_complex(), state.cascade_quantum, phases.phases_quantum)
    h_c = composite_complex(state.direct_classical.to_complex(), state.cascade_classical, phases.phases_classical)
    return h_q, h_c
