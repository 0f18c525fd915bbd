"""Receiver metrics (SNR, QPSK BER, visibility, QBER, SKR) and the joint cost."""

import logging
import math
from typing import Tuple

import numpy as np
from scipy import constants
from scipy.special import entr, erfc

from exceptions import DomainError
from models import Calibration, ComplexGain, CostWeights, Metrics, OpticalParams, RfParams, VisibilityMode, WeightMode

logger = logging.getLogger(__name__)

SECURITY_THRESHOLD = 0.11  # BB84


# ---------------------------------------------------------------- classical

def noise_power(rf: RfParams) -> float:
    """Thermal noise floor k_B T B in watts"""
    return constants.k * rf.sys_temp_k * rf.bandwidth_hz


def snr_from_power(power_gain, rf: RfParams, gain_offset_db: float = 0.0):
    """SNR for a received power gain |H|^2; antenna gains already live inside H"""
    return rf.tx_power_w * np.asarray(power_gain) * 10.0 ** (gain_offset_db / 10.0) / noise_power(rf)


def snr(rf: RfParams, h_tot: ComplexGain, gain_offset_db: float = 0.0) -> float:
    return float(snr_from_power(h_tot.amplitude ** 2, rf, gain_offset_db))


def ber_qpsk(snr_linear):
    """Q(sqrt(2 snr)) written through erfc"""
    value = 0.5 * erfc(np.sqrt(np.asarray(snr_linear, dtype=float)))
    return float(value) if np.ndim(value) == 0 else value


# ---------------------------------------------------------------- quantum

def visibility(v0: float, phase_var: float) -> float:
    if not 0 < v0 <= 1:
        raise DomainError("baseline visibility must lie in (0, 1]")
    return v0 * math.exp(-phase_var / 2.0)


def normalized_transmittance(amplitude, ref_amplitude: float):
    """h_norm = |H|^2 / (|H|^2 + |H_ref|^2), always in [0, 1)"""
    power = np.asarray(amplitude, dtype=float) ** 2
    return power / (power + ref_amplitude ** 2)


def qber(v: float, h_norm, p_dark: float):
    value = 0.5 * (1.0 - v * np.asarray(h_norm, dtype=float)) + p_dark
    value = np.clip(value, 0.0, 0.5 + p_dark)
    return float(value) if np.ndim(value) == 0 else value


def binary_entropy(p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DomainError("probability outside [0, 1]")
    value = (entr(p) + entr(1.0 - p)) / math.log(2.0)
    return float(value) if np.ndim(value) == 0 else value


def skr_raw(raw_rate, qber_value, f_ec: float):
    """Key rate before clamping; negative means no key can be distilled"""
    h = binary_entropy(qber_value)
    raw_rate = np.asarray(raw_rate, dtype=float)
    return raw_rate * (1.0 - 2.0 * h) - f_ec * raw_rate * h


def skr(raw_rate, qber_value, f_ec: float):
    if np.any(np.asarray(raw_rate) < 0):
        raise DomainError("raw key rate must be non-negative")
    value = np.maximum(0.0, skr_raw(raw_rate, qber_value, f_ec))
    return float(value) if np.ndim(value) == 0 else value


def link_visibility(optical: OpticalParams, cal: Calibration) -> float:
    if cal.visibility_mode == VisibilityMode.TURBULENT:
        return visibility(optical.baseline_visibility, optical.phase_variance)
    return cal.effective_visibility


def quantum_qber(amplitude, optical: OpticalParams, cal: Calibration):
    h_norm = normalized_transmittance(amplitude, cal.ref_amplitude)
    return qber(link_visibility(optical, cal), h_norm, optical.dark_count_prob)


def qber_power_slope(power: float, optical: OpticalParams, cal: Calibration) -> float:
    """d qber / d |H|^2, ignoring the clamp"""
    ref_power = cal.ref_amplitude ** 2
    return -link_visibility(optical, cal) * ref_power / (2.0 * (power + ref_power) ** 2)


def raw_key_rate(amplitude, cal: Calibration):
    """Sifted detection rate, proportional to the received power |H|^2 / |H_ref|^2"""
    return cal.raw_rate_scale * (np.asarray(amplitude, dtype=float) / cal.ref_amplitude) ** 2


def classical_snr(amplitude, rf: RfParams, cal: Calibration):
    return snr_from_power(np.asarray(amplitude, dtype=float) ** 2, rf, cal.rf_gain_offset_db)


# ---------------------------------------------------------------- cost

def static_weights(cw: CostWeights) -> Tuple[float, float]:
    if cw.snr_target <= 0:
        raise DomainError("snr target must be positive")
    return 1.0, cw.qber_threshold / math.log2(1.0 + cw.snr_target)


def swing_weights(cw: CostWeights, current_snr: float) -> Tuple[float, float]:
    if current_snr <= 0:
        raise DomainError("swing weights need a positive current SNR")
    if cw.qber_threshold <= 0:
        raise DomainError("swing weights need a positive QBER threshold")
    alpha = 1.0 / cw.qber_threshold
    beta = cw.beta_o * math.log2(1.0 + cw.snr_target) / math.log2(1.0 + current_snr)
    return alpha, beta


def resolve_weights(cw: CostWeights, baseline_snr: float) -> Tuple[float, float]:
    """(alpha, beta) for one solve; swing weights are frozen at the baseline SNR"""
    if cw.mode == WeightMode.SWING:
        return swing_weights(cw, baseline_snr)
    if cw.mode == WeightMode.MANUAL:
        return cw.alpha, cw.beta
    return static_weights(cw)


def cost(qber_value, snr_value, weights: Tuple[float, float]):
    alpha, beta = weights
    if np.any(np.asarray(snr_value) < 0):
        raise DomainError("snr must be non-negative")
    value = alpha * np.asarray(qber_value, dtype=float) - beta * np.log2(1.0 + np.asarray(snr_value, dtype=float))
    return float(value) if np.ndim(value) == 0 else value


def link_metrics(
    h_quantum: complex,
    h_classical: complex,
    optical: OpticalParams,
    rf: RfParams,
    cal: Calibration,
    weights: Tuple[float, float],
) -> Metrics:
    """All receiver metrics for one pair of total channel gains"""
    amp_q = abs(h_quantum)
    gamma = float(classical_snr(abs(h_classical), rf, cal))
    eps = float(quantum_qber(amp_q, optical, cal))
    raw = float(raw_key_rate(amp_q, cal))
    key = skr_raw(raw, eps, optical.ec_inefficiency)
    if key < 0:
        logger.debug(f"negative key rate {float(key):.6g} bits/s clamped to 0 (qber {eps:.4%})")
    return Metrics(
        snr_linear=gamma,
        ber=ber_qpsk(gamma),
        qber=eps,
        skr_bits_s=max(0.0, float(key)),
        cost=cost(eps, gamma, weights),
    )
