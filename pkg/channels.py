"""Direct (no-RIS) channel gains for the 850 nm quantum link and the S-band RF link."""

import logging
import math
from typing import Tuple

import numpy as np

from exceptions import DomainError
from models import Band, ComplexGain, FadingSample, LinkGeometry, OpticalParams, RfParams, TWO_PI
from seeding import make_rng

logger = logging.getLogger(__name__)

KM = 1e3


def friis_amplitude(wavelength_m: float, distance_km: float) -> float:
    """Free-space amplitude factor lambda / (4 pi d)"""
    return wavelength_m / (4.0 * math.pi * distance_km * KM)


def propagation_phase(wavelength_m: float, distance_km: float) -> float:
    # fractional cycles first, 2*pi*d/lambda overflows the useful float precision
    cycles = math.fmod(distance_km * KM / wavelength_m, 1.0)
    return (TWO_PI * cycles) % TWO_PI


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


def db_per_km_to_linear(value_db_km: float) -> float:
    """Convert a dB/km attenuation to the linear coefficient kappa (0.2 dB/km -> 0.046/km)"""
    return value_db_km / (10.0 / math.log(10.0))


# ---------------------------------------------------------------- optical

def optical_tx_gain(params: OpticalParams) -> float:
    if params.beam_divergence_rad <= 0:
        raise DomainError("beam divergence must be positive")
    return 4.0 * math.pi / params.beam_divergence_rad ** 2


def optical_rx_gain(params: OpticalParams) -> float:
    return math.pi * params.rx_aperture_m ** 2 / params.wavelength_m ** 2


def optical_atmospheric_loss(params: OpticalParams, geom: LinkGeometry) -> float:
    """Power factor exp(-kappa_Q d_atm)"""
    return math.exp(-params.atten_per_km * geom.atm_path_km)


def optical_direct_gain(params: OpticalParams, geom: LinkGeometry, fading: FadingSample) -> ComplexGain:
    d = geom.slant_range_km
    amplitude = (
        friis_amplitude(params.wavelength_m, d)
        * math.sqrt(optical_tx_gain(params) * optical_rx_gain(params))
        * math.exp(-params.atten_per_km * geom.atm_path_km / 2.0)
        * math.sqrt(fading.turbulence_gain * fading.pointing_gain)
    )
    return ComplexGain(amplitude=amplitude, phase_rad=propagation_phase(params.wavelength_m, d))


def gamma_gamma_shape(rytov_variance: float) -> Tuple[float, float]:
    """Large- and small-scale Gamma shapes from the Rytov variance.

    A zero variance means no turbulence; (inf, inf) is returned and samplers
    treat it as the constant gain 1.
    """
    if rytov_variance < 0:
        raise DomainError("rytov variance must be non-negative")
    if rytov_variance == 0:
        return math.inf, math.inf
    s2 = rytov_variance
    s125 = s2 ** 1.2  # sigma^(12/5)
    alpha = 1.0 / math.expm1(0.49 * s2 / (1.0 + 1.11 * s125) ** (7.0 / 6.0))
    beta = 1.0 / math.expm1(0.51 * s2 / (1.0 + 0.69 * s125) ** (5.0 / 6.0))
    return alpha, beta


def sample_turbulence(shape: Tuple[float, float], rng_seed: int, count: int) -> np.ndarray:
    alpha, beta = shape
    if math.isinf(alpha) or math.isinf(beta):
        return np.ones(count)
    if alpha <= 0 or beta <= 0:
        raise DomainError("gamma-gamma shapes must be positive")
    rng = make_rng(rng_seed)
    large = rng.gamma(shape=alpha, scale=1.0 / alpha, size=count)
    small = rng.gamma(shape=beta, scale=1.0 / beta, size=count)
    return large * small


def mean_pointing_gain(params: OpticalParams) -> float:
    if params.beam_divergence_rad <= 0:
        raise DomainError("beam divergence must be positive")
    return 1.0 / (1.0 + 2.0 * params.jitter_rad ** 2 / params.beam_divergence_rad ** 2)


def mean_fading(params: OpticalParams) -> FadingSample:
    return FadingSample(turbulence_gain=1.0, pointing_gain=mean_pointing_gain(params))


# ---------------------------------------------------------------- rf

def ionospheric_loss(params: RfParams) -> float:
    f = params.carrier_ghz
    if f <= 0:
        raise DomainError("carrier frequency must be positive")
    i_ion = 0.0265 * params.tec_units / f ** 2 + 0.018 * params.scint_index * params.ref_freq_ghz ** 1.5 / f ** 1.5
    return 10.0 ** (-i_ion / 10.0)


def rain_loss(params: RfParams, geom: LinkGeometry) -> float:
    gamma_r = params.rain_k * params.rain_rate_mm_h ** params.rain_alpha
    return math.exp(-gamma_r * geom.rain_path_km)


def rf_atmospheric_loss(params: RfParams, geom: LinkGeometry) -> float:
    return math.exp(-params.atten_per_km * geom.atm_path_km)


def rf_path_loss(params: RfParams, geom: LinkGeometry) -> float:
    """Product L_atm,C * L_ion * L_rain of the deterministic RF impairments"""
    return rf_atmospheric_loss(params, geom) * ionospheric_loss(params) * rain_loss(params, geom)


def rf_direct_gain(params: RfParams, geom: LinkGeometry) -> ComplexGain:
    d = geom.slant_range_km
    amplitude = (
        friis_amplitude(params.wavelength_m, d)
        * math.sqrt(params.tx_gain * params.rx_gain)
        * math.sqrt(rf_path_loss(params, geom))
    )
    return ComplexGain(amplitude=amplitude, phase_rad=propagation_phase(params.wavelength_m, d))


def deterministic_attenuation(band: Band, params, geom: LinkGeometry) -> float:
    """Aggregate deterministic power loss Att of one band (path loss times atmospheric factors)"""
    fspl = friis_amplitude(params.wavelength_m, geom.slant_range_km) ** 2
    if band == Band.QUANTUM:
        return fspl * optical_atmospheric_loss(params, geom)
    return fspl * rf_path_loss(params, geom)
