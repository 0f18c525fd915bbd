"""Calibration, elevation sweeps, phase histograms and their CSV outputs."""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from channels import (
    deterministic_attenuation,
    gamma_gamma_shape,
    linear_to_db,
    mean_fading,
    mean_pointing_gain,
    optical_direct_gain,
    rf_direct_gain,
    sample_turbulence,
)
from config import APP_VERSION
from exceptions import CalibrationError, StructuralError
from geometry import link_geometry_deg
from metrics import classical_snr, quantum_qber, raw_key_rate, skr
from models import (
    Band,
    Calibration,
    ChannelState,
    ComplexGain,
    CostWeights,
    ExpansionReport,
    FadingSample,
    Metrics,
    RunConfig,
    SolverKind,
    SweepRow,
    VisibilityMode,
    WeightMode,
)
from qubo import expansion_error, exact_metrics
from reporting import write_csv
from ris import cascade_gains, decode_levels
from seeding import RNG_ALGORITHM, derive_seed, make_rng
from solvers import is_secure, optimize

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "trial",
    "elevation_deg",
    "n_elements",
    "snr_db",
    "ber",
    "qber",
    "skr_bits_s",
    "cost",
    "feasible",
    "solver_evals",
    "delta_snr_db",
    "delta_qber_pp",
]
HISTOGRAM_COLUMNS = ["att", "q_bin", "c_bin", "count"]
CALIBRATION_COLUMNS = ["constant", "value"]

SMALL_ANGLE_LIMIT_RAD = math.radians(20.0)
SMALL_ANGLE_AMPLITUDE = 1e-3


# ---------------------------------------------------------------- channel states

def surface_for(cfg: RunConfig, n_elements: int):
    """RIS configuration of one sweep size; offsets depend on (seed, size) only"""
    return cfg.ris.model_copy(update={
        "n_elements": n_elements,
        "ris_offset_phase_seed": derive_seed(cfg.seed, "ris", n_elements),
    })


def fading_for(cfg: RunConfig, elevation_deg: float, trial: int) -> FadingSample:
    """Trial 0 is the mean channel; later trials draw one Gamma-Gamma gain"""
    if trial == 0:
        return mean_fading(cfg.optical)
    shape = gamma_gamma_shape(cfg.optical.rytov_variance)
    chi = sample_turbulence(shape, derive_seed(cfg.seed, elevation_deg, "fading", trial), 1)[0]
    return FadingSample(turbulence_gain=float(chi), pointing_gain=mean_pointing_gain(cfg.optical))


def build_channel_state(
    cfg: RunConfig,
    cal: Calibration,
    elevation_deg: float,
    n_elements: int,
    trial: int = 0,
    att: float = 1.0,
) -> ChannelState:
    """Direct and cascade gains of both bands at one sweep point.

    att scales the deterministic power loss of every path, so amplitudes are
    multiplied by sqrt(att); the fading draw is left alone.
    """
    geom = link_geometry_deg(elevation_deg, cfg.geometry)
    surface = surface_for(cfg, n_elements)
    scale = math.sqrt(att)
    direct_q = optical_direct_gain(cfg.optical, geom, fading_for(cfg, elevation_deg, trial))
    direct_c = rf_direct_gain(cfg.rf, geom)
    cascade_q = cascade_gains(Band.QUANTUM, surface, geom, cfg.optical, cal.element_amp_scale)
    cascade_c = cascade_gains(Band.CLASSICAL, surface, geom, cfg.rf, cal.rf_element_amp_scale)
    return ChannelState(
        direct_quantum=ComplexGain(amplitude=direct_q.amplitude * scale, phase_rad=direct_q.phase_rad),
        direct_classical=ComplexGain(amplitude=direct_c.amplitude * scale, phase_rad=direct_c.phase_rad),
        cascade_quantum=cascade_q * scale,
        cascade_classical=cascade_c * scale,
        bits_quantum=surface.bits_quantum,
        bits_classical=surface.bits_classical,
        optical=cfg.optical,
        rf=cfg.rf,
        elevation_deg=elevation_deg,
    )


def attenuation_report(cfg: RunConfig, elevation_deg: float) -> Dict[str, float]:
    """Deterministic loss aggregate Att of each band at one elevation"""
    geom = link_geometry_deg(elevation_deg, cfg.geometry)
    return {
        Band.QUANTUM.value: deterministic_attenuation(Band.QUANTUM, cfg.optical, geom),
        Band.CLASSICAL.value: deterministic_attenuation(Band.CLASSICAL, cfg.rf, geom),
    }


def solver_config_for(cfg: RunConfig, elevation_deg: float, n_elements: int, trial: int = 0):
    return cfg.solver.model_copy(update={
        "seed": derive_seed(cfg.seed, elevation_deg, n_elements, "solver", trial),
    })


def evaluate_point(
    cfg: RunConfig,
    cal: Calibration,
    elevation_deg: float,
    n_elements: int,
    trial: int = 0,
    att: float = 1.0,
    kind: Optional[SolverKind] = None,
) -> Tuple[Metrics, bool, int, np.ndarray]:
    """Optimize one point and return (metrics, feasible, solver evaluations, bits)"""
    state = build_channel_state(cfg, cal, elevation_deg, n_elements, trial, att)
    if n_elements == 0:
        bits = np.zeros(0, dtype=np.uint8)
        metrics = exact_metrics(state, cfg.weights, cal, bits)
        return metrics, is_secure(metrics.qber, cfg.solver.qber_limit), 0, bits
    solver_cfg = solver_config_for(cfg, elevation_deg, n_elements, trial)
    if kind is not None:
        solver_cfg = solver_cfg.model_copy(update={"kind": kind})
    result = optimize(state, cfg.weights, cal, solver_cfg)
    metrics = exact_metrics(state, cfg.weights, cal, result.best_bits)
    return metrics, result.feasible, result.evaluations, result.best_bits


# ---------------------------------------------------------------- calibration

def _baseline_amplitude(cfg: RunConfig, elevation_deg: float) -> float:
    geom = link_geometry_deg(elevation_deg, cfg.geometry)
    return optical_direct_gain(cfg.optical, geom, mean_fading(cfg.optical)).amplitude


def _fit(name: str, fn: Callable[[float], float], lo: float, hi: float, rtol: float) -> float:
    f_lo, f_hi = fn(lo), fn(hi)
    logger.debug(f"{name}: bracket [{lo:.6g}, {hi:.6g}] -> [{f_lo:.6g}, {f_hi:.6g}]")
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or np.sign(f_lo) == np.sign(f_hi):
        raise CalibrationError(name, "target is not bracketed", (lo, hi))
    return brentq(fn, lo, hi, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=200)


def _fit_gain_offset(cfg: RunConfig, cal: Calibration) -> float:
    anchors = cfg.calibration
    geom = link_geometry_deg(anchors.snr_elevation_deg, cfg.geometry)
    amplitude = rf_direct_gain(cfg.rf, geom).amplitude

    def residual(offset_db: float) -> float:
        candidate = cal.model_copy(update={"rf_gain_offset_db": offset_db})
        return linear_to_db(float(classical_snr(amplitude, cfg.rf, candidate))) - anchors.snr_db

    return _fit("rf_gain_offset_db", residual, -400.0, 400.0, anchors.rtol)


def _fit_reference(cfg: RunConfig) -> Tuple[float, float]:
    """|H_ref| by bisection on the low-elevation QBER, V_eff in closed form from the high one

    Both anchors enter through the received powers |H|^2.
    """
    anchors = cfg.calibration
    p_dark = cfg.optical.dark_count_prob
    p_low = _baseline_amplitude(cfg, anchors.qber_low_elevation_deg) ** 2
    p_high = _baseline_amplitude(cfg, anchors.qber_high_elevation_deg) ** 2
    excess = 0.5 + p_dark - anchors.qber_high
    if excess <= 0:
        raise CalibrationError("ref_amplitude", "high-elevation QBER anchor leaves no room for visibility")

    def visibility_for(ref: float) -> float:
        return 2.0 * excess * (p_high + ref ** 2) / p_high

    def residual(ref: float) -> float:
        h_low = p_low / (p_low + ref ** 2)
        return 0.5 * (1.0 - visibility_for(ref) * h_low) + p_dark - anchors.qber_low

    headroom = 1.0 / (2.0 * excess) - 1.0
    if headroom <= 0:
        raise CalibrationError("ref_amplitude", "QBER anchor needs a visibility above 1")
    a_high = math.sqrt(p_high)
    ref = _fit("ref_amplitude", residual, a_high * 1e-9, a_high * math.sqrt(headroom), anchors.rtol)
    return ref, min(1.0, visibility_for(ref))


def _fit_raw_rate(cfg: RunConfig, cal: Calibration) -> float:
    anchors = cfg.calibration
    amplitude = _baseline_amplitude(cfg, anchors.skr_elevation_deg)
    eps = float(quantum_qber(amplitude, cfg.optical, cal))
    per_unit = float(skr(float(raw_key_rate(amplitude, cal.model_copy(update={"raw_rate_scale": 1.0}))),
                         eps, cfg.optical.ec_inefficiency))
    if per_unit <= 0:
        raise CalibrationError("raw_rate_scale", f"no key can be distilled at the anchor (qber {eps:.4%})")

    def residual(scale: float) -> float:
        return scale * per_unit - anchors.skr_bits_s

    guess = anchors.skr_bits_s / per_unit
    return _fit("raw_rate_scale", residual, 0.5 * guess, 2.0 * guess, anchors.rtol)


def _log_scale_guess(direct: float, cascade_unit: float, n_elements: int) -> float:
    """log10 of the amplitude scale at which the surface matches the direct path"""
    return math.log10(direct / (n_elements * cascade_unit))


def _fit_element_scale(cfg: RunConfig, cal: Calibration) -> float:
    anchors = cfg.calibration
    n = anchors.ris_anchor_elements
    theta = anchors.skr_elevation_deg
    base = baseline_metrics(cfg, cal, theta).skr_bits_s
    unit = build_channel_state(cfg, cal.model_copy(update={"element_amp_scale": 1.0}), theta, n)
    guess = _log_scale_guess(unit.direct_quantum.amplitude, float(np.abs(unit.cascade_quantum).max()), n)
    target = 1.0 + anchors.ris_skr_gain

    def residual(log_scale: float) -> float:
        candidate = cal.model_copy(update={"element_amp_scale": 10.0 ** log_scale})
        metrics, _, _, _ = evaluate_point(cfg, candidate, theta, n, kind=SolverKind.BCD)
        return metrics.skr_bits_s / base - target

    return 10.0 ** _fit("element_amp_scale", residual, guess - 4.0, guess + 2.0, anchors.rtol)


def _fit_rf_element_scale(cfg: RunConfig, cal: Calibration) -> float:
    anchors = cfg.calibration
    n = anchors.ris_anchor_elements
    theta = anchors.rf_anchor_elevation_deg
    geom = link_geometry_deg(theta, cfg.geometry)
    base_db = linear_to_db(float(classical_snr(rf_direct_gain(cfg.rf, geom).amplitude, cfg.rf, cal)))
    unit = build_channel_state(cfg, cal.model_copy(update={"rf_element_amp_scale": 1.0}), theta, n)
    guess = _log_scale_guess(unit.direct_classical.amplitude, float(np.abs(unit.cascade_classical).max()), n)

    def residual(log_scale: float) -> float:
        candidate = cal.model_copy(update={"rf_element_amp_scale": 10.0 ** log_scale})
        metrics, _, _, _ = evaluate_point(cfg, candidate, theta, n, kind=SolverKind.BCD)
        return (metrics.snr_db - base_db) - anchors.rf_delta_snr_db

    return 10.0 ** _fit("rf_element_amp_scale", residual, guess - 4.0, guess + 2.0, anchors.rtol)


def calibrate(cfg: RunConfig) -> Calibration:
    """Fit the free constants to the measured anchors, one scalar fit at a time.

    Order: RF gain offset, QBER reference and visibility, raw key rate scale,
    then the optical and RF element amplitude scales. The element fits run the
    block coordinate descent optimizer at the anchor size. In turbulent
    visibility mode the fitted constants are kept and only the visibility is
    swapped afterwards.
    """
    anchors = cfg.calibration
    cal = Calibration()
    cal = cal.model_copy(update={"rf_gain_offset_db": _fit_gain_offset(cfg, cal)})
    ref, v_eff = _fit_reference(cfg)
    cal = cal.model_copy(update={"ref_amplitude": ref, "effective_visibility": v_eff})
    cal = cal.model_copy(update={"raw_rate_scale": _fit_raw_rate(cfg, cal)})
    logger.info(
        f"calibrated baseline: gain offset {cal.rf_gain_offset_db:.4f} dB, |H_ref| {ref:.6g}, "
        f"V_eff {v_eff:.6f}, raw rate scale {cal.raw_rate_scale:.6g}"
    )

    if anchors.ris_anchor_elements > 0:
        cal = cal.model_copy(update={"element_amp_scale": _fit_element_scale(cfg, cal)})
        if anchors.rf_delta_snr_db > 0:
            cal = cal.model_copy(update={"rf_element_amp_scale": _fit_rf_element_scale(cfg, cal)})
        logger.info(
            f"calibrated surface: optical element scale {cal.element_amp_scale:.6g}, "
            f"rf element scale {cal.rf_element_amp_scale:.6g}"
        )
    else:
        logger.info("no RIS anchor size configured, element scales left at 1")

    if anchors.visibility_mode == VisibilityMode.TURBULENT:
        cal = cal.model_copy(update={"visibility_mode": VisibilityMode.TURBULENT})
        logger.warning("turbulent visibility selected; QBER anchors will not be reproduced")
    return cal


def baseline_metrics(cfg: RunConfig, cal: Calibration, elevation_deg: float) -> Metrics:
    metrics, _, _, _ = evaluate_point(cfg, cal, elevation_deg, 0)
    return metrics


# ---------------------------------------------------------------- sweeps

def sweep_elevation(cfg: RunConfig, cal: Calibration) -> List[SweepRow]:
    """Metrics for every (trial, elevation, size); infeasible points are kept and flagged"""
    rows = []
    spec = cfg.sweep
    for trial in range(spec.trials):
        for theta in spec.elevations_deg:
            for n in spec.ris_sizes:
                metrics, feasible, evals, _ = evaluate_point(cfg, cal, theta, n, trial)
                if not feasible:
                    logger.warning(f"elevation {theta} deg, N={n}: qber {metrics.qber:.4%} above the limit")
                rows.append(SweepRow(
                    elevation_deg=theta,
                    n_elements=n,
                    trial=trial,
                    snr_db=metrics.snr_db,
                    ber=metrics.ber,
                    qber=metrics.qber,
                    skr_bits_s=metrics.skr_bits_s,
                    cost=metrics.cost,
                    feasible=feasible,
                    solver_evals=evals,
                ))
            logger.info(f"trial {trial}, elevation {theta} deg: {len(spec.ris_sizes)} sizes done")
    return rows


def delta_metrics(rows: Sequence[SweepRow]) -> List[SweepRow]:
    """Add SNR(N) - SNR(0) in dB and QBER(0) - QBER(N) in percentage points"""
    baselines = {(row.trial, row.elevation_deg): row for row in rows if row.n_elements == 0}
    out = []
    for row in rows:
        base = baselines.get((row.trial, row.elevation_deg))
        if base is None:
            raise StructuralError(f"no N=0 baseline row for elevation {row.elevation_deg} (trial {row.trial})")
        out.append(row.model_copy(update={
            "delta_snr_db": row.snr_db - base.snr_db,
            "delta_qber_pp": (base.qber - row.qber) * 100.0,
        }))
    return out


def phase_histogram(cfg: RunConfig, cal: Calibration,
                    att_levels: Optional[Sequence[float]] = None) -> Dict[float, np.ndarray]:
    """Joint (quantum, classical) phase-level counts of the optimized surface per Att level"""
    ris = cfg.ris
    if ris.bits_quantum != 2 or ris.bits_classical != 2:
        raise StructuralError("the phase histogram needs 2 bits per band")
    levels = list(att_levels) if att_levels is not None else list(cfg.sweep.attenuation_levels)
    theta = cfg.sweep.histogram_elevation_deg
    grids = {}
    for att in levels:
        counts = np.zeros((4, 4), dtype=np.int64)
        metrics, feasible, _, bits = evaluate_point(cfg, cal, theta, ris.n_elements, att=att)
        if feasible:
            lq, lc = decode_levels(bits, ris.n_elements, ris.bits_quantum, ris.bits_classical)
            np.add.at(counts, (lq, lc), 1)
        else:
            logger.warning(f"Att={att}: optimized surface rejected (qber {metrics.qber:.4%})")
        grids[att] = counts
        logger.info(f"Att={att}: chi-square to uniform {chi_square_to_uniform(counts):.3f}")
    return grids


def chi_square_to_uniform(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return 0.0
    expected = total / counts.size
    return float(((counts - expected) ** 2).sum() / expected)


# ---------------------------------------------------------------- expansion regimes

def small_angle_state(cfg: RunConfig, n_elements: int, seed: int) -> ChannelState:
    """Unit direct gains with weak cascades whose phases sit within 20 degrees of the direct path"""
    rng = make_rng(seed)
    offsets = rng.uniform(-SMALL_ANGLE_LIMIT_RAD, SMALL_ANGLE_LIMIT_RAD, size=(2, n_elements))
    cascades = SMALL_ANGLE_AMPLITUDE * np.exp(1j * offsets)
    return ChannelState(
        direct_quantum=ComplexGain(amplitude=1.0),
        direct_classical=ComplexGain(amplitude=1.0),
        cascade_quantum=cascades[0],
        cascade_classical=cascades[1],
        bits_quantum=cfg.ris.bits_quantum,
        bits_classical=cfg.ris.bits_classical,
        optical=cfg.optical,
        rf=cfg.rf,
    )


def expansion_regimes(cfg: RunConfig, cal: Calibration, samples: int = 1000,
                      n_elements: int = 2) -> Dict[str, ExpansionReport]:
    """Measured quadratic-model deviation in the small-angle and in the calibrated 90-degree-step regime"""
    small_cal = Calibration(ref_amplitude=0.01, effective_visibility=0.98)
    small_weights = CostWeights(mode=WeightMode.MANUAL, alpha=1.0, beta=0.0)
    small = small_angle_state(cfg, n_elements, derive_seed(cfg.seed, "small-angle"))
    step = build_channel_state(cfg, cal, cfg.sweep.histogram_elevation_deg, n_elements)
    return {
        "small-angle": expansion_error(small, small_weights, small_cal, samples,
                                       derive_seed(cfg.seed, "expansion", "small-angle"), regime="small-angle"),
        "90-degree-step": expansion_error(step, cfg.weights, cal, samples,
                                          derive_seed(cfg.seed, "expansion", "step"), regime="90-degree-step"),
    }


# ---------------------------------------------------------------- outputs

def run_metadata(cfg: RunConfig, cal: Optional[Calibration] = None) -> Dict[str, object]:
    meta: Dict[str, object] = {"version": APP_VERSION, "seed": cfg.seed, "rng": RNG_ALGORITHM,
                               "solver": cfg.solver.kind.value}
    if cal is not None:
        for name, value in cal.model_dump(mode="json").items():
            meta[name] = value
    return meta


def write_sweep_csv(rows: Sequence[SweepRow], path, metadata: Dict[str, object], timestamp: bool = True):
    return write_csv(path, SWEEP_COLUMNS, [row.model_dump() for row in rows], metadata, timestamp)


def write_histogram_csv(grids: Dict[float, np.ndarray], path, metadata: Dict[str, object], timestamp: bool = True):
    rows = [
        {"att": att, "q_bin": q, "c_bin": c, "count": int(grid[q, c])}
        for att, grid in grids.items()
        for q in range(grid.shape[0])
        for c in range(grid.shape[1])
    ]
    return write_csv(path, HISTOGRAM_COLUMNS, rows, metadata, timestamp)


def write_calibration_csv(cal: Calibration, path, metadata: Dict[str, object], timestamp: bool = True):
    rows = [{"constant": name, "value": value} for name, value in cal.model_dump(mode="json").items()]
    return write_csv(path, CALIBRATION_COLUMNS, rows, metadata, timestamp)
