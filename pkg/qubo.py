"""Binary quadratic model of the joint phase-selection problem and the exact objective it approximates.

Bit layout: the quantum block comes first, element-major then bit; the classical
block follows. Element n carries the phase theta_n = (2 pi / 2^b) sum_k 2^k x_{n,k},
which is affine in the bits, so a second-order expansion of |H|^2 in the phases
is quadratic in x.
"""

import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import dimod
import numpy as np
from scipy import sparse

from exceptions import StructuralError
from metrics import (
    classical_snr,
    cost,
    link_metrics,
    qber_power_slope,
    quantum_qber,
    resolve_weights,
)
from models import (
    Band,
    Calibration,
    ChannelState,
    CostWeights,
    ExpansionReport,
    Metrics,
    PhaseConfig,
    QuboModel,
    RisConfig,
)
from reporting import atomic_write_text
from ris import composite_state_gains, decode_levels, decode_phases, phase_step
from seeding import make_rng

logger = logging.getLogger(__name__)

DEVIATION_GUARD = np.finfo(float).eps


# ---------------------------------------------------------------- layout

def index_of(n: int, band: Band, k: int, cfg: RisConfig) -> int:
    """Variable index of bit k of element n (1-based, as on the surface)"""
    band = Band(band)
    bits = cfg.bits_for(band)
    if not 1 <= n <= cfg.n_elements:
        raise StructuralError(f"element {n} outside 1..{cfg.n_elements}")
    if not 0 <= k < bits:
        raise StructuralError(f"bit {k} outside 0..{bits - 1} for the {band.value} band")
    base = 0 if band == Band.QUANTUM else cfg.n_elements * cfg.bits_quantum
    return base + (n - 1) * bits + k


def index_map(cfg: RisConfig) -> List[Tuple[int, str, int]]:
    """(element, band, bit) for every variable index, in index order"""
    entries = []
    for band in (Band.QUANTUM, Band.CLASSICAL):
        for n in range(1, cfg.n_elements + 1):
            for k in range(cfg.bits_for(band)):
                entries.append((n, band.value, k))
    return entries


# ---------------------------------------------------------------- exact objective

def state_weights(state: ChannelState, weights: CostWeights, cal: Calibration) -> Tuple[float, float]:
    """Cost weights for one solve; swing weights use the direct-path SNR"""
    baseline_snr = float(classical_snr(state.direct_classical.amplitude, state.rf, cal))
    return resolve_weights(weights, baseline_snr)


def _total_amplitudes(state: ChannelState, bits: np.ndarray):
    levels_q, levels_c = decode_levels(bits, state.n_elements, state.bits_quantum, state.bits_classical)
    rot_q = np.exp(1j * levels_q * phase_step(state.bits_quantum))
    rot_c = np.exp(1j * levels_c * phase_step(state.bits_classical))
    h_q = state.direct_quantum.to_complex() + rot_q @ state.cascade_quantum
    h_c = state.direct_classical.to_complex() + rot_c @ state.cascade_classical
    return np.abs(h_q), np.abs(h_c)


def exact_values(state: ChannelState, weights: CostWeights, cal: Calibration, bits: np.ndarray) -> np.ndarray:
    """Exact cost of every row of a (rows, dim) bit matrix"""
    bits = np.atleast_2d(np.asarray(bits))
    amp_q, amp_c = _total_amplitudes(state, bits)
    eps = quantum_qber(amp_q, state.optical, cal)
    gamma = classical_snr(amp_c, state.rf, cal)
    return np.atleast_1d(cost(eps, gamma, state_weights(state, weights, cal)))


def eval_exact(state: ChannelState, weights: CostWeights, cal: Calibration, x: np.ndarray) -> float:
    return float(exact_values(state, weights, cal, np.asarray(x)[None, :])[0])


def exact_qber(state: ChannelState, cal: Calibration, bits: np.ndarray):
    bits = np.asarray(bits)
    amp_q, _ = _total_amplitudes(state, np.atleast_2d(bits))
    value = np.atleast_1d(quantum_qber(amp_q, state.optical, cal))
    return float(value[0]) if bits.ndim == 1 else value


def exact_metrics(state: ChannelState, weights: CostWeights, cal: Calibration, x: np.ndarray) -> Metrics:
    h_q, h_c = composite_state_gains(state, decode_phases(x, state.ris))
    return link_metrics(h_q, h_c, state.optical, state.rf, cal, state_weights(state, weights, cal))


def baseline_cost(state: ChannelState, weights: CostWeights, cal: Calibration) -> float:
    """Cost of the direct paths alone"""
    return link_metrics(
        state.direct_quantum.to_complex(),
        state.direct_classical.to_complex(),
        state.optical,
        state.rf,
        cal,
        state_weights(state, weights, cal),
    ).cost


# ---------------------------------------------------------------- quadratic model

def _assemble(linear: np.ndarray, upper, offset: float, layout: List[Tuple[int, str, int]]) -> QuboModel:
    """QuboModel from c and the strict upper triangle of a symmetric Q (a COO matrix)"""
    keep = upper.data != 0
    pairs = (upper.row[keep].astype(np.int64), upper.col[keep].astype(np.int64), 2.0 * upper.data[keep])
    bqm = dimod.BinaryQuadraticModel.from_numpy_vectors(np.asarray(linear, dtype=float), pairs, float(offset),
                                                        dimod.BINARY)
    return QuboModel(bqm=bqm, index_map=layout)


def qubo_from_dense(quad: np.ndarray, linear: np.ndarray, offset: float = 0.0,
                    layout: Optional[List[Tuple[int, str, int]]] = None) -> QuboModel:
    """Symmetrize Q and fold its diagonal into c (x_i^2 = x_i)"""
    quad = np.asarray(quad, dtype=float)
    linear = np.array(linear, dtype=float, copy=True)
    if quad.ndim != 2 or quad.shape[0] != quad.shape[1] or quad.shape[0] != linear.shape[0]:
        raise StructuralError("Q must be square and match the length of c")
    sym = 0.5 * (quad + quad.T)
    linear += np.diag(sym)
    return _assemble(linear, sparse.triu(sparse.coo_matrix(sym), k=1, format="coo"), offset, layout or [])


def _band_power_model(direct: complex, cascades: np.ndarray, theta0: np.ndarray, bits: int):
    """Second-order model of |H|^2 in one band's bits as (constant, linear, quadratic).

    With z_n = g_n exp(j theta0_n) and Z = H_d + sum z, the phase perturbation
    d = theta - theta0 gives
    |H|^2 ~ |Z|^2 + L.d + d'Wd with L = -2 Im(z conj Z) and
    W = Re(z z^H) - diag(Re(z conj Z)).
    """
    z = cascades * np.exp(1j * theta0)
    total = direct + z.sum()
    power0 = abs(total) ** 2
    grad = -2.0 * np.imag(z * np.conj(total))
    hess = np.real(np.outer(z, np.conj(z)))
    hess[np.diag_indices_from(hess)] -= np.real(z * np.conj(total))
    w = phase_step(bits) * (1 << np.arange(bits))
    # theta = kron(I, w) x, so the model is re-expanded around x = 0
    const = power0 - grad @ theta0 + theta0 @ hess @ theta0
    lin = np.kron(grad - 2.0 * hess @ theta0, w)
    quad = np.kron(hess, np.outer(w, w))
    return const, lin, quad, power0


def build_qubo(
    state: ChannelState,
    weights: CostWeights,
    cal: Calibration,
    expansion_point: Optional[PhaseConfig] = None,
) -> QuboModel:
    """x'Qx + c'x + offset approximating the exact cost around an operating point.

    Both received powers are expanded to second order in the phases. The QBER is
    linearized in |H_Q|^2 and the log2(1 + snr) reward in snr, each about the
    expansion point, so the model is exact there.
    """
    cfg = state.ris
    point = expansion_point if expansion_point is not None else decode_phases(np.zeros(cfg.dim, dtype=np.uint8), cfg)
    if point.phases_quantum.shape != (cfg.n_elements,) or point.phases_classical.shape != (cfg.n_elements,):
        raise StructuralError("expansion point does not match the surface size")
    alpha, beta = state_weights(state, weights, cal)

    const_q, lin_q, quad_q, power_q = _band_power_model(
        state.direct_quantum.to_complex(), state.cascade_quantum,
        np.asarray(point.phases_quantum, dtype=float), state.bits_quantum,
    )
    const_c, lin_c, quad_c, power_c = _band_power_model(
        state.direct_classical.to_complex(), state.cascade_classical,
        np.asarray(point.phases_classical, dtype=float), state.bits_classical,
    )

    eps0 = float(quantum_qber(math.sqrt(power_q), state.optical, cal))
    eps_slope = qber_power_slope(power_q, state.optical, cal)
    snr_per_power = float(classical_snr(1.0, state.rf, cal))
    snr0 = snr_per_power * power_c
    log_slope = snr_per_power / ((1.0 + weights.snr_target) * math.log(2.0))

    coef_q = alpha * eps_slope
    coef_c = -beta * log_slope
    offset = (
        alpha * (eps0 - eps_slope * power_q)
        - beta * (math.log2(1.0 + snr0) - log_slope * power_c)
        + coef_q * const_q
        + coef_c * const_c
    )

    linear = np.concatenate([coef_q * (lin_q + np.diag(quad_q)), coef_c * (lin_c + np.diag(quad_c))])
    # the two bands never couple: Q is block diagonal
    if cfg.dim:
        upper = sparse.block_diag([sparse.triu(coef_q * quad_q, k=1), sparse.triu(coef_c * quad_c, k=1)], format="coo")
    else:
        upper = sparse.coo_matrix((0, 0))
    model = _assemble(linear, upper, offset, index_map(cfg))

    logger.debug(
        f"qubo built: dim={model.dim}, couplings={model.bqm.num_interactions}, "
        f"alpha={alpha:.6g}, beta={beta:.6g}, offset={offset:.9g}"
    )
    return model


def quadratic_values(model: QuboModel, bits: np.ndarray) -> np.ndarray:
    """x'Qx + c'x + offset for every row of a (rows, dim) bit matrix"""
    x = np.atleast_2d(np.asarray(bits))
    if x.shape[1] != model.dim:
        raise StructuralError(f"bit vector has length {x.shape[1]}, expected {model.dim}")
    if not model.dim:
        return np.full(x.shape[0], model.offset)
    return np.asarray(model.bqm.energies((x.astype(np.int8), list(range(model.dim)))), dtype=float)


def eval_quadratic(model: QuboModel, x: np.ndarray) -> float:
    x = np.asarray(x)
    if x.ndim != 1:
        raise StructuralError("eval_quadratic takes a single bit vector")
    return float(quadratic_values(model, x[None, :])[0])


def expansion_error(
    state: ChannelState,
    weights: CostWeights,
    cal: Calibration,
    samples: int,
    rng_seed: int,
    expansion_point: Optional[PhaseConfig] = None,
    regime: str = "operating",
) -> ExpansionReport:
    """Relative deviation of the quadratic model from the exact cost over random bit vectors"""
    if samples < 1:
        raise StructuralError("at least one sample is required")
    model = build_qubo(state, weights, cal, expansion_point)
    rng = make_rng(rng_seed)
    bits = rng.integers(0, 2, size=(samples, model.dim), dtype=np.uint8)
    exact = exact_values(state, weights, cal, bits)
    approx = quadratic_values(model, bits)
    deviation = np.abs(approx - exact) / (np.abs(exact) + DEVIATION_GUARD)
    report = ExpansionReport(
        max_abs_deviation=float(deviation.max()),
        mean_abs_deviation=float(deviation.mean()),
        samples=samples,
        regime=regime,
    )
    logger.info(
        f"expansion error ({regime}): max {report.max_abs_deviation:.3%}, "
        f"mean {report.mean_abs_deviation:.3%} over {samples} samples"
    )
    return report


# ---------------------------------------------------------------- file format

def write_qubo(model: QuboModel, path, comments: Iterable[str] = ()) -> Path:
    """Sparse triplet export; quadratic lines carry the pair coefficient 2 Q_ij"""
    linear, (rows, cols, pairs), offset = model.bqm.to_numpy_vectors(variable_order=list(range(model.dim)))
    linear_idx = np.flatnonzero(linear)
    quad_rows = sorted(
        (int(min(i, j)), int(max(i, j)), float(value)) for i, j, value in zip(rows, cols, pairs) if value != 0
    )

    lines = [f"# {text}" for text in comments]
    layout = _layout_comment(model)
    if layout:
        lines.append(layout)
    lines.append(f"qubo {model.dim} {linear_idx.size} {len(quad_rows)} {float(offset):.16e}")
    lines.extend(f"{i} {i} {float(linear[i]):.16e}" for i in linear_idx)
    lines.extend(f"{i} {j} {value:.16e}" for i, j, value in quad_rows)
    written = atomic_write_text(path, "\n".join(lines) + "\n")
    logger.info(f"wrote qubo ({model.dim} variables, {len(quad_rows)} couplings) to {written}")
    return written


def read_qubo(path) -> QuboModel:
    header = None
    linear_terms, quad_terms = [], []
    layout = None
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                layout = _parse_layout(line) or layout
                continue
            fields = line.split()
            if header is None:
                if len(fields) != 5 or fields[0] != "qubo":
                    raise StructuralError(f"{path}:{lineno}: expected 'qubo <dim> <n_linear> <n_quadratic> <offset>'")
                header = (int(fields[1]), int(fields[2]), int(fields[3]), float(fields[4]))
                continue
            if len(fields) != 3:
                raise StructuralError(f"{path}:{lineno}: expected 'i j value'")
            i, j, value = int(fields[0]), int(fields[1]), float(fields[2])
            if i == j:
                linear_terms.append((i, value))
            elif i < j:
                quad_terms.append((i, j, value))
            else:
                raise StructuralError(f"{path}:{lineno}: quadratic terms must have i < j")
    if header is None:
        raise StructuralError(f"{path}: missing qubo header")
    dim, n_linear, n_quad, offset = header
    if dim < 0:
        raise StructuralError(f"{path}: negative variable count {dim}")
    if len(linear_terms) != n_linear or len(quad_terms) != n_quad:
        raise StructuralError(f"{path}: header announces {n_linear}+{n_quad} terms, found {len(linear_terms)}+{len(quad_terms)}")

    linear = np.zeros(dim)
    for i, value in linear_terms:
        _check_index(i, dim, path)
        linear[i] = value
    for i, j, _ in quad_terms:
        _check_index(i, dim, path)
        _check_index(j, dim, path)
    rows = np.array([term[0] for term in quad_terms], dtype=np.int64)
    cols = np.array([term[1] for term in quad_terms], dtype=np.int64)
    pairs = np.array([term[2] for term in quad_terms], dtype=float)
    bqm = dimod.BinaryQuadraticModel.from_numpy_vectors(linear, (rows, cols, pairs), offset, dimod.BINARY)
    entries = index_map(layout) if layout is not None and layout.dim == dim else []
    return QuboModel(bqm=bqm, index_map=entries)


def _check_index(i: int, dim: int, path) -> None:
    if not 0 <= i < dim:
        raise StructuralError(f"{path}: variable index {i} outside 0..{dim - 1}")


def _layout_comment(model: QuboModel) -> Optional[str]:
    if not model.index_map:
        return None
    n = max(entry[0] for entry in model.index_map)
    bq = sum(1 for entry in model.index_map if entry[1] == Band.QUANTUM.value and entry[0] == 1)
    bc = sum(1 for entry in model.index_map if entry[1] == Band.CLASSICAL.value and entry[0] == 1)
    return f"# layout n_elements={n} bits_quantum={bq} bits_classical={bc}"


def _parse_layout(line: str) -> Optional[RisConfig]:
    fields = line.lstrip("#").split()
    if not fields or fields[0] != "layout":
        return None
    values = dict(field.split("=", 1) for field in fields[1:] if "=" in field)
    try:
        return RisConfig(
            n_elements=int(values["n_elements"]),
            bits_quantum=int(values["bits_quantum"]),
            bits_classical=int(values["bits_classical"]),
        )
    except (KeyError, ValueError):
        return None
