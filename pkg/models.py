import math
from enum import Enum
from typing import List, Optional, Tuple

import dimod
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import sparse

TWO_PI = 2.0 * math.pi


class Band(str, Enum):
    QUANTUM = "quantum"
    CLASSICAL = "classical"


class SolverKind(str, Enum):
    BRUTE = "brute"
    ANNEAL = "anneal"
    TABU = "tabu"
    BCD = "bcd"


class ObjectiveKind(str, Enum):
    QUADRATIC = "quadratic"
    EXACT = "exact"


class WeightMode(str, Enum):
    STATIC = "static"
    SWING = "swing"
    MANUAL = "manual"


class VisibilityMode(str, Enum):
    CALIBRATED = "calibrated"  # fitted effective visibility
    TURBULENT = "turbulent"  # V0 * exp(-phase_variance / 2)


# ---------------------------------------------------------------- geometry

class GeometryParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    earth_radius_km: float = Field(6371.0, gt=0)
    sat_altitude_km: float = Field(500.0, gt=0)
    atm_height_km: float = Field(10.0, ge=0)  # 0 disables the atmosphere
    rain_height_km: float = Field(3.0, ge=0)

    @model_validator(mode="after")
    def _atmosphere_below_satellite(self):
        if self.atm_height_km >= self.sat_altitude_km:
            raise ValueError("atm_height_km must be below sat_altitude_km")
        return self


class LinkGeometry(BaseModel):
    elevation_rad: float
    slant_range_km: float
    atm_path_km: float
    rain_path_km: float

    @property
    def elevation_deg(self) -> float:
        return math.degrees(self.elevation_rad)


# ---------------------------------------------------------------- channels

class OpticalParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    wavelength_m: float = Field(850e-9, gt=0)
    atten_per_km: float = Field(0.046, ge=0)
    beam_divergence_rad: float = Field(10e-6, ge=0)
    rx_aperture_m: float = Field(0.3, gt=0)
    cn2: float = Field(5e-14, ge=0)  # metadata; rytov_variance drives the fading
    rytov_variance: float = Field(0.5, ge=0)
    jitter_rad: float = Field(2e-6, ge=0)
    baseline_visibility: float = Field(0.94, gt=0, le=1)
    phase_variance: float = Field(1.03, ge=0)
    dark_count_prob: float = Field(1e-6, ge=0, le=1e-3)
    ec_inefficiency: float = Field(1.1, ge=1)


class RfParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    wavelength_m: float = Field(0.15, gt=0)
    atten_per_km: float = Field(0.0046, ge=0)
    carrier_ghz: float = Field(2.3, ge=2, le=4)
    tec_units: float = Field(10.0, ge=0)
    scint_index: float = Field(0.3, ge=0)
    ref_freq_ghz: float = Field(1.0, gt=0)
    rain_rate_mm_h: float = Field(10.0, ge=0)
    rain_k: float = Field(3e-4, ge=0)
    rain_alpha: float = Field(1.1, gt=0)
    tx_gain: float = Field(1.0, gt=0)
    rx_gain: float = Field(1.0, gt=0)
    tx_power_w: float = Field(10.0, gt=0)
    sys_temp_k: float = Field(290.0, gt=0)
    bandwidth_hz: float = Field(1e8, gt=0)


class FadingSample(BaseModel):
    turbulence_gain: float = Field(1.0, ge=0)
    pointing_gain: float = Field(1.0, ge=0, le=1)


class ComplexGain(BaseModel):
    amplitude: float = Field(ge=0)
    phase_rad: float = 0.0

    @field_validator("phase_rad")
    @classmethod
    def _wrap_phase(cls, value: float) -> float:
        return wrap_phase(value)

    @classmethod
    def from_complex(cls, z: complex) -> "ComplexGain":
        return cls(amplitude=float(abs(z)), phase_rad=float(np.angle(z)))

    def to_complex(self) -> complex:
        return complex(self.amplitude * math.cos(self.phase_rad), self.amplitude * math.sin(self.phase_rad))


def wrap_phase(value: float) -> float:
    """Map an angle onto [0, 2pi); values within 1e-12 of 2pi collapse to 0"""
    wrapped = math.fmod(float(value), TWO_PI)
    if wrapped < 0:
        wrapped += TWO_PI
    if wrapped >= TWO_PI - 1e-12:
        wrapped = 0.0
    return wrapped


# ---------------------------------------------------------------- ris

class RisConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_elements: int = Field(512, ge=0)
    bits_quantum: int = Field(2, ge=1)
    bits_classical: int = Field(2, ge=1)
    element_gain: float = Field(1.0, ge=0)  # 0 makes the surface transparent
    ris_to_ground_km: float = Field(0.5, gt=0)
    ris_offset_phase_seed: int = 0

    @property
    def dim(self) -> int:
        return self.n_elements * (self.bits_quantum + self.bits_classical)

    def bits_for(self, band: Band) -> int:
        return self.bits_quantum if band == Band.QUANTUM else self.bits_classical


class PhaseConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    bits: np.ndarray
    phases_quantum: np.ndarray
    phases_classical: np.ndarray


class ChannelState(BaseModel):
    """Direct and per-element cascade gains for both bands at one operating point.

    Cascades are complex numpy arrays (amplitude = abs, phase = angle); the
    band parameters ride along so the exact objective can be evaluated from
    the state alone.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    direct_quantum: ComplexGain
    direct_classical: ComplexGain
    cascade_quantum: np.ndarray
    cascade_classical: np.ndarray
    bits_quantum: int = 2
    bits_classical: int = 2
    optical: OpticalParams = OpticalParams()
    rf: RfParams = RfParams()
    elevation_deg: Optional[float] = None

    @model_validator(mode="after")
    def _cascade_lengths(self):
        self.cascade_quantum = np.asarray(self.cascade_quantum, dtype=complex)
        self.cascade_classical = np.asarray(self.cascade_classical, dtype=complex)
        if self.cascade_quantum.shape != self.cascade_classical.shape or self.cascade_quantum.ndim != 1:
            raise ValueError("cascade arrays must be 1-D and of equal length")
        return self

    @property
    def n_elements(self) -> int:
        return int(self.cascade_quantum.shape[0])

    @property
    def ris(self) -> RisConfig:
        return RisConfig(
            n_elements=self.n_elements,
            bits_quantum=self.bits_quantum,
            bits_classical=self.bits_classical,
        )

    @property
    def dim(self) -> int:
        return self.n_elements * (self.bits_quantum + self.bits_classical)


# ---------------------------------------------------------------- metrics

class Metrics(BaseModel):
    snr_linear: float = Field(ge=0)
    ber: float = Field(ge=0, le=0.5)
    qber: float = Field(ge=0)
    skr_bits_s: float = Field(ge=0)
    cost: float

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr_linear) if self.snr_linear > 0 else float("-inf")


class CostWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(1.0, ge=0)  # used as given in manual mode
    beta: float = Field(0.0, ge=0)
    qber_threshold: float = Field(0.011, ge=0, le=0.11)
    snr_target: float = Field(100.0, gt=0)
    beta_o: float = Field(0.01, ge=0)
    mode: WeightMode = WeightMode.STATIC


class Calibration(BaseModel):
    model_config = ConfigDict(extra="forbid")

    raw_rate_scale: float = Field(1.0, gt=0)  # bits/s per unit normalized amplitude
    effective_visibility: float = Field(0.98, gt=0, le=1)
    ref_amplitude: float = Field(1.0, gt=0)  # |H_ref|
    rf_gain_offset_db: float = 0.0
    element_amp_scale: float = Field(1.0, gt=0)
    rf_element_amp_scale: float = Field(1.0, gt=0)
    visibility_mode: VisibilityMode = VisibilityMode.CALIBRATED


class CalibrationAnchors(BaseModel):
    model_config = ConfigDict(extra="forbid")

    snr_elevation_deg: float = 10.0
    snr_db: float = 11.0
    qber_low_elevation_deg: float = 20.0
    qber_low: float = Field(0.012, gt=0, lt=0.5)
    qber_high_elevation_deg: float = 80.0
    qber_high: float = Field(0.009, gt=0, lt=0.5)
    skr_elevation_deg: float = 80.0
    skr_bits_s: float = Field(3500.0, gt=0)
    ris_anchor_elements: int = Field(512, ge=0)  # 0 skips the RIS amplitude fit
    ris_skr_gain: float = Field(1.02, gt=0)  # +102 %
    rf_anchor_elevation_deg: float = 90.0
    rf_delta_snr_db: float = Field(1.1, ge=0)  # 0 skips the RF amplitude fit
    rtol: float = Field(1e-9, gt=0)
    visibility_mode: VisibilityMode = VisibilityMode.CALIBRATED


# ---------------------------------------------------------------- qubo

class QuboModel(BaseModel):
    """Binary quadratic model x'Qx + c'x + offset over the variables 0..dim-1.

    The BQM holds the pair coefficient 2 Q_ij of x_i x_j; `quad` is the
    symmetric, zero-diagonal Q.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    bqm: dimod.BinaryQuadraticModel
    index_map: List[Tuple[int, str, int]] = []

    @property
    def dim(self) -> int:
        return self.bqm.num_variables

    @property
    def offset(self) -> float:
        return float(self.bqm.offset)

    def _vectors(self):
        return self.bqm.to_numpy_vectors(variable_order=list(range(self.dim)))

    @property
    def linear(self) -> np.ndarray:
        linear, _, _ = self._vectors()
        return np.asarray(linear, dtype=float)

    @property
    def quad(self) -> sparse.csr_matrix:
        _, (rows, cols, pairs), _ = self._vectors()
        half = 0.5 * np.asarray(pairs, dtype=float)
        return sparse.csr_matrix(
            (np.concatenate([half, half]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
            shape=(self.dim, self.dim),
        )


class ExpansionReport(BaseModel):
    max_abs_deviation: float = Field(ge=0)
    mean_abs_deviation: float = Field(0.0, ge=0)
    samples: int = Field(ge=1)
    regime: str = "operating"


# ---------------------------------------------------------------- solvers

class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: SolverKind = SolverKind.BCD
    seed: int = 0
    max_iters: int = Field(300, ge=1)
    initial_temp: Optional[float] = Field(None, ge=0)  # None: 10x std of F over 100 random vectors
    cooling_rate: float = Field(0.97, gt=0, lt=1)
    tabu_tenure: int = Field(4, ge=1)
    restarts: int = Field(3, ge=1)
    objective: ObjectiveKind = ObjectiveKind.EXACT
    qber_limit: float = Field(0.11, gt=0, le=0.5)


class SolverResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    best_bits: np.ndarray
    best_value: float
    evaluations: int = 0
    feasible: bool = True
    trace: List[Tuple[int, float]] = []
    kind: SolverKind = SolverKind.BRUTE
    algorithm: str = "PCG64"
    qber: Optional[float] = None
    fallback_bits: Optional[np.ndarray] = None
    fallback_value: Optional[float] = None


# ---------------------------------------------------------------- experiments

def _default_elevations() -> List[float]:
    return [float(e) for e in range(10, 95, 5)]


class SweepSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    elevations_deg: List[float] = Field(default_factory=_default_elevations)
    ris_sizes: List[int] = Field(default_factory=lambda: [0, 128, 265, 512])
    attenuation_levels: List[float] = Field(default_factory=lambda: [1.0, 0.6, 0.3, 0.1])
    trials: int = Field(1, ge=1)
    histogram_elevation_deg: float = Field(80.0, gt=0, le=90)

    @field_validator("elevations_deg")
    @classmethod
    def _elevations_in_range(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("elevations_deg must not be empty")
        if any(not 0.0 < e <= 90.0 for e in value):
            raise ValueError("elevations must lie in (0, 90] degrees")
        return value

    @field_validator("ris_sizes")
    @classmethod
    def _sizes_non_negative(cls, value: List[int]) -> List[int]:
        if not value or any(n < 0 for n in value):
            raise ValueError("ris_sizes must be a non-empty list of counts")
        return value

    @field_validator("attenuation_levels")
    @classmethod
    def _att_in_range(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 < a <= 1.0 for a in value):
            raise ValueError("attenuation levels must lie in (0, 1]")
        return value


class SweepRow(BaseModel):
    elevation_deg: float
    n_elements: int
    trial: int = 0
    snr_db: float
    ber: float
    qber: float
    skr_bits_s: float
    cost: float
    feasible: bool
    solver_evals: int = 0
    delta_snr_db: Optional[float] = None
    delta_qber_pp: Optional[float] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    geometry: GeometryParams = GeometryParams()
    optical: OpticalParams = OpticalParams()
    rf: RfParams = RfParams()
    ris: RisConfig = RisConfig()
    weights: CostWeights = CostWeights()
    solver: SolverConfig = SolverConfig()
    sweep: SweepSpec = SweepSpec()
    calibration: CalibrationAnchors = CalibrationAnchors()
    seed: int = 0
    output_dir: str = "results"
    timestamp: bool = True

    @model_validator(mode="after")
    def _consistent_sizes(self):
        anchor = self.calibration.ris_anchor_elements
        if anchor and anchor not in self.sweep.ris_sizes and anchor != self.ris.n_elements:
            raise ValueError(
                f"calibration anchor size {anchor} is neither a sweep size nor ris.n_elements"
            )
        return self
