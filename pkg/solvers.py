"""Binary minimizers for the phase-selection objective and the QBER security filter.

Every solver is single-threaded, owns one PCG64 generator seeded from its
config, and breaks value ties towards the lexicographically smallest bit vector.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from exceptions import InfeasibleError, StructuralError
from metrics import SECURITY_THRESHOLD, classical_snr, cost, quantum_qber
from models import (
    Band,
    Calibration,
    ChannelState,
    CostWeights,
    ObjectiveKind,
    PhaseConfig,
    QuboModel,
    SolverConfig,
    SolverKind,
    SolverResult,
)
from qubo import build_qubo, exact_qber, exact_values, quadratic_values, state_weights
from reporting import write_csv
from ris import decode_levels, decode_phases, phase_step
from seeding import RNG_ALGORITHM, make_rng

logger = logging.getLogger(__name__)

BRUTE_FORCE_CAP = 24
_BRUTE_CHUNK = 1 << 16
_TEMPERATURE_SAMPLES = 100


def is_secure(qber_value: float, limit: float = SECURITY_THRESHOLD) -> bool:
    return qber_value <= limit


# ---------------------------------------------------------------- objectives

class Objective:
    """A function of a bit vector together with its single-flip deltas"""

    dim: int = 0

    def values(self, bits: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        return float(self.values(np.asarray(x)[None, :])[0])

    def flip_deltas(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def flip_delta(self, x: np.ndarray, i: int) -> float:
        return float(self.flip_deltas(x)[i])

    def cursor(self, x: np.ndarray) -> "FlipCursor":
        """Local-search position at x; x is flipped in place"""
        return FlipCursor(self, x)

    def qbers(self, bits: np.ndarray) -> Optional[np.ndarray]:
        """QBER of every row, or None when the objective carries no quantum link"""
        return None


class FlipCursor:
    """Current vector of a single-flip search"""

    def __init__(self, objective: Objective, x: np.ndarray):
        self.objective = objective
        self.x = x

    def delta(self, i: int) -> float:
        return self.objective.flip_delta(self.x, i)

    def flip(self, i: int) -> None:
        self.x[i] ^= 1


class QuadraticObjective(Objective):
    def __init__(self, model: QuboModel, state: Optional[ChannelState] = None, cal: Optional[Calibration] = None):
        self.model = model
        self.dim = model.dim
        self.state = state
        self.cal = cal
        self._quad = model.quad
        self._linear = model.linear

    def values(self, bits: np.ndarray) -> np.ndarray:
        return quadratic_values(self.model, bits)

    def flip_deltas(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (1.0 - 2.0 * x) * (self._linear + 2.0 * (self._quad @ x))

    def flip_delta(self, x: np.ndarray, i: int) -> float:
        start, stop = self._quad.indptr[i], self._quad.indptr[i + 1]
        row = self._quad.data[start:stop] @ np.asarray(x, dtype=float)[self._quad.indices[start:stop]]
        return float((1.0 - 2.0 * x[i]) * (self._linear[i] + 2.0 * row))

    def cursor(self, x: np.ndarray) -> FlipCursor:
        return _QuadraticCursor(self, x)

    def qbers(self, bits: np.ndarray) -> Optional[np.ndarray]:
        if self.state is None or self.cal is None:
            return None
        return np.atleast_1d(exact_qber(self.state, self.cal, np.atleast_2d(bits)))


class _QuadraticCursor(FlipCursor):
    """Keeps the local field c + 2Qx, so a proposal costs O(1) and a flip O(row)"""

    def __init__(self, objective: QuadraticObjective, x: np.ndarray):
        super().__init__(objective, x)
        self.field = objective._linear + 2.0 * (objective._quad @ np.asarray(x, dtype=float))

    def delta(self, i: int) -> float:
        return float((1.0 - 2.0 * self.x[i]) * self.field[i])

    def flip(self, i: int) -> None:
        quad = self.objective._quad
        start, stop = quad.indptr[i], quad.indptr[i + 1]
        sign = 1.0 - 2.0 * self.x[i]
        self.field[quad.indices[start:stop]] += 2.0 * sign * quad.data[start:stop]
        self.x[i] ^= 1


class ExactObjective(Objective):
    """Ground-truth cost: decode, compose both bands, score without any expansion"""

    def __init__(self, state: ChannelState, weights: CostWeights, cal: Calibration):
        self.state = state
        self.weights = weights
        self.cal = cal
        self.dim = state.dim
        self.alpha_beta = state_weights(state, weights, cal)
        self.rot_quantum = np.exp(1j * phase_step(state.bits_quantum) * np.arange(1 << state.bits_quantum))
        self.rot_classical = np.exp(1j * phase_step(state.bits_classical) * np.arange(1 << state.bits_classical))

    def cost_of(self, amp_quantum, amp_classical):
        eps = quantum_qber(amp_quantum, self.state.optical, self.cal)
        gamma = classical_snr(amp_classical, self.state.rf, self.cal)
        return cost(eps, gamma, self.alpha_beta)

    def values(self, bits: np.ndarray) -> np.ndarray:
        return exact_values(self.state, self.weights, self.cal, bits)

    def totals(self, x: np.ndarray):
        """Levels and total complex gains (H_Q, H_C) of one bit vector"""
        s = self.state
        lq, lc = decode_levels(np.asarray(x), s.n_elements, s.bits_quantum, s.bits_classical)
        h_q = s.direct_quantum.to_complex() + self.rot_quantum[lq] @ s.cascade_quantum
        h_c = s.direct_classical.to_complex() + self.rot_classical[lc] @ s.cascade_classical
        return lq, lc, h_q, h_c

    def flip_deltas(self, x: np.ndarray) -> np.ndarray:
        s = self.state
        lq, lc, h_q, h_c = self.totals(x)
        current = self.cost_of(abs(h_q), abs(h_c))
        flipped_q = lq[:, None] ^ (1 << np.arange(s.bits_quantum))
        flipped_c = lc[:, None] ^ (1 << np.arange(s.bits_classical))
        new_q = h_q + s.cascade_quantum[:, None] * (self.rot_quantum[flipped_q] - self.rot_quantum[lq][:, None])
        new_c = h_c + s.cascade_classical[:, None] * (self.rot_classical[flipped_c] - self.rot_classical[lc][:, None])
        values_q = np.atleast_1d(self.cost_of(np.abs(new_q).ravel(), abs(h_c)))
        values_c = np.atleast_1d(self.cost_of(abs(h_q), np.abs(new_c).ravel()))
        return np.concatenate([values_q, values_c]) - current

    def flip_delta(self, x: np.ndarray, i: int) -> float:
        lq, lc, h_q, h_c = self.totals(x)
        current = self.cost_of(abs(h_q), abs(h_c))
        moved_q, moved_c, _, _, _ = self._moved(lq, lc, h_q, h_c, i)
        return float(self.cost_of(abs(moved_q), abs(moved_c)) - current)

    def _moved(self, lq: np.ndarray, lc: np.ndarray, h_q: complex, h_c: complex, i: int):
        """Totals after flipping bit i, plus the (band, element, level) that changed"""
        s = self.state
        split = s.n_elements * s.bits_quantum
        if i < split:
            n, k = divmod(i, s.bits_quantum)
            level = lq[n] ^ (1 << k)
            h_q = h_q + s.cascade_quantum[n] * (self.rot_quantum[level] - self.rot_quantum[lq[n]])
            return h_q, h_c, Band.QUANTUM, n, level
        n, k = divmod(i - split, s.bits_classical)
        level = lc[n] ^ (1 << k)
        h_c = h_c + s.cascade_classical[n] * (self.rot_classical[level] - self.rot_classical[lc[n]])
        return h_q, h_c, Band.CLASSICAL, n, level

    def cursor(self, x: np.ndarray) -> FlipCursor:
        return _ExactCursor(self, x)

    def qbers(self, bits: np.ndarray) -> Optional[np.ndarray]:
        return np.atleast_1d(exact_qber(self.state, self.cal, np.atleast_2d(bits)))


class _ExactCursor(FlipCursor):
    """Caches the levels and both total gains; a proposal or a flip touches one element"""

    def __init__(self, objective: ExactObjective, x: np.ndarray):
        super().__init__(objective, x)
        lq, lc, self.h_q, self.h_c = objective.totals(x)
        self.levels_q, self.levels_c = np.array(lq), np.array(lc)
        self.current = float(objective.cost_of(abs(self.h_q), abs(self.h_c)))

    def _after(self, i: int):
        moved = self.objective._moved(self.levels_q, self.levels_c, self.h_q, self.h_c, i)
        return moved, float(self.objective.cost_of(abs(moved[0]), abs(moved[1])))

    def delta(self, i: int) -> float:
        _, value = self._after(i)
        return value - self.current

    def flip(self, i: int) -> None:
        (self.h_q, self.h_c, band, n, level), self.current = self._after(i)
        levels = self.levels_q if band == Band.QUANTUM else self.levels_c
        levels[n] = level
        self.x[i] ^= 1


# ---------------------------------------------------------------- bookkeeping

def lex_less(a: np.ndarray, b: np.ndarray) -> bool:
    diff = np.flatnonzero(np.asarray(a) != np.asarray(b))
    return bool(diff.size) and a[diff[0]] < b[diff[0]]


def _better(value: float, x: np.ndarray, best_value: float, best_bits: Optional[np.ndarray]) -> bool:
    if best_bits is None or value < best_value:
        return True
    return value == best_value and lex_less(x, best_bits)


class _Tracker:
    """Best-ever and best-feasible states plus the best-so-far trace"""

    def __init__(self, objective: Objective, qber_limit: float):
        self.objective = objective
        self.qber_limit = qber_limit
        self.best_bits: Optional[np.ndarray] = None
        self.best_value = math.inf
        self.fallback_bits: Optional[np.ndarray] = None
        self.fallback_value = math.inf
        self.evaluations = 0
        self.trace: List[Tuple[int, float]] = []

    def offer(self, x: np.ndarray, value: float) -> None:
        if _better(value, x, self.best_value, self.best_bits):
            self.best_bits = np.array(x, dtype=np.uint8)
            self.best_value = float(value)
        if _better(value, x, self.fallback_value, self.fallback_bits) and self._secure(x):
            self.fallback_bits = np.array(x, dtype=np.uint8)
            self.fallback_value = float(value)

    def offer_feasible(self, x: np.ndarray, value: float) -> None:
        if _better(value, x, self.fallback_value, self.fallback_bits):
            self.fallback_bits = np.array(x, dtype=np.uint8)
            self.fallback_value = float(value)

    def _secure(self, x: np.ndarray) -> bool:
        qbers = self.objective.qbers(np.asarray(x)[None, :])
        return qbers is None or is_secure(float(qbers[0]), self.qber_limit)

    def mark(self, iteration: int) -> None:
        self.trace.append((iteration, self.best_value))

    def result(self, kind: SolverKind) -> SolverResult:
        best_value = self.objective.value(self.best_bits)
        fallback_value = None
        if self.fallback_bits is not None:
            fallback_value = self.objective.value(self.fallback_bits)
        return SolverResult(
            best_bits=self.best_bits,
            best_value=best_value,
            evaluations=self.evaluations,
            trace=self.trace,
            kind=kind,
            algorithm=RNG_ALGORITHM,
            fallback_bits=self.fallback_bits,
            fallback_value=fallback_value,
        )


# ---------------------------------------------------------------- solvers

def brute_force(objective: Objective, dim: int, qber_limit: float = SECURITY_THRESHOLD) -> SolverResult:
    """Exhaustive search in lexicographic order (x_0 most significant)"""
    if dim > BRUTE_FORCE_CAP:
        raise StructuralError(f"brute force refuses {dim} variables (cap is {BRUTE_FORCE_CAP})")
    tracker = _Tracker(objective, qber_limit)
    total = 1 << dim
    shifts = np.arange(dim - 1, -1, -1, dtype=np.int64)
    for chunk, start in enumerate(range(0, total, _BRUTE_CHUNK)):
        index = np.arange(start, min(total, start + _BRUTE_CHUNK), dtype=np.int64)
        bits = ((index[:, None] >> shifts) & 1).astype(np.uint8)
        values = objective.values(bits)
        tracker.evaluations += len(index)
        first = int(np.argmin(values))
        tracker.offer(bits[first], float(values[first]))

        qbers = objective.qbers(bits)
        if qbers is None:
            tracker.offer_feasible(bits[first], float(values[first]))
        else:
            secure = qbers <= qber_limit
            if secure.any():
                masked = np.where(secure, values, np.inf)
                pick = int(np.argmin(masked))
                tracker.offer_feasible(bits[pick], float(values[pick]))
        tracker.mark(chunk)
    return tracker.result(SolverKind.BRUTE)


def _initial_temperature(objective: Objective, dim: int, rng: np.random.Generator) -> float:
    samples = rng.integers(0, 2, size=(_TEMPERATURE_SAMPLES, dim), dtype=np.uint8)
    return 10.0 * float(np.std(objective.values(samples)))


def simulated_annealing(objective: Objective, dim: int, cfg: SolverConfig) -> SolverResult:
    """Single-flip Metropolis annealing with geometric cooling and restarts.

    The first restart starts from the all-zero vector, later ones from random
    vectors. One sweep proposes every bit once in a random order; the
    temperature is multiplied by cooling_rate after each sweep. A zero
    temperature is plain descent.
    """
    rng = make_rng(cfg.seed)
    tracker = _Tracker(objective, cfg.qber_limit)
    if dim == 0:
        x = np.zeros(0, dtype=np.uint8)
        tracker.offer(x, objective.value(x))
        tracker.evaluations = 1
        tracker.mark(0)
        return tracker.result(SolverKind.ANNEAL)

    t0 = cfg.initial_temp if cfg.initial_temp is not None else _initial_temperature(objective, dim, rng)
    logger.debug(f"annealing {dim} variables from T0={t0:.6g}")
    iteration = 0
    for restart in range(cfg.restarts):
        x = np.zeros(dim, dtype=np.uint8) if restart == 0 else rng.integers(0, 2, size=dim, dtype=np.uint8)
        value = objective.value(x)
        tracker.evaluations += 1
        tracker.offer(x, value)
        temperature = t0
        cursor = objective.cursor(x)
        for _ in range(cfg.max_iters):
            for i in rng.permutation(dim):
                delta = cursor.delta(int(i))
                tracker.evaluations += 1
                if delta <= 0 or (temperature > 0 and rng.random() < math.exp(-delta / temperature)):
                    cursor.flip(int(i))
                    value += delta
                    tracker.offer(x, value)
            temperature *= cfg.cooling_rate
            tracker.mark(iteration)
            iteration += 1
    return tracker.result(SolverKind.ANNEAL)


def tabu_search(objective: Objective, dim: int, cfg: SolverConfig) -> SolverResult:
    """Steepest single-flip moves with a recency tabu list and best-ever aspiration"""
    rng = make_rng(cfg.seed)
    tracker = _Tracker(objective, cfg.qber_limit)
    if dim == 0:
        x = np.zeros(0, dtype=np.uint8)
        tracker.offer(x, objective.value(x))
        tracker.evaluations = 1
        tracker.mark(0)
        return tracker.result(SolverKind.TABU)

    iteration = 0
    for restart in range(cfg.restarts):
        x = np.zeros(dim, dtype=np.uint8) if restart == 0 else rng.integers(0, 2, size=dim, dtype=np.uint8)
        value = objective.value(x)
        tracker.evaluations += 1
        tracker.offer(x, value)
        tabu_until = np.zeros(dim, dtype=np.int64)
        for step in range(cfg.max_iters):
            deltas = objective.flip_deltas(x)
            tracker.evaluations += dim
            candidates = value + deltas
            allowed = (tabu_until <= step) | (candidates < tracker.best_value)
            if allowed.any():
                i = int(np.argmin(np.where(allowed, candidates, np.inf)))
                x[i] ^= 1
                value = float(candidates[i])
                tabu_until[i] = step + 1 + cfg.tabu_tenure
                tracker.offer(x, value)
            tracker.mark(iteration)
            iteration += 1
    return tracker.result(SolverKind.TABU)


def _bit_reversed(levels: int, bits: int) -> np.ndarray:
    """Rank of each phase level in the lexicographic order of its bit tuple (bit 0 first)"""
    index = np.arange(levels)
    reversed_index = np.zeros(levels, dtype=np.int64)
    for k in range(bits):
        reversed_index |= ((index >> k) & 1) << (bits - 1 - k)
    return reversed_index


def block_coordinate_descent(objective: ExactObjective, state: ChannelState, cfg: SolverConfig) -> SolverResult:
    """Per element, try every joint (quantum, classical) phase pair and keep the best.

    Elements are visited in index order; an element only moves on a strict
    improvement. Sweeps repeat until one changes nothing or max_iters is hit.
    """
    if not isinstance(objective, ExactObjective):
        raise StructuralError("block coordinate descent needs the exact objective")
    n_levels_q, n_levels_c = 1 << state.bits_quantum, 1 << state.bits_classical
    rank = (_bit_reversed(n_levels_q, state.bits_quantum)[:, None] * n_levels_c
            + _bit_reversed(n_levels_c, state.bits_classical)[None, :]).ravel()
    tracker = _Tracker(objective, cfg.qber_limit)
    cfg_ris = state.ris

    levels_q = np.zeros(state.n_elements, dtype=np.int64)
    levels_c = np.zeros(state.n_elements, dtype=np.int64)
    x = np.zeros(state.dim, dtype=np.uint8)
    tracker.offer(x, objective.value(x))
    tracker.evaluations += 1
    tracker.mark(0)

    for sweep in range(1, cfg.max_iters + 1):
        _, _, h_q, h_c = objective.totals(x)
        changed = False
        for n in range(state.n_elements):
            g_q, g_c = state.cascade_quantum[n], state.cascade_classical[n]
            base_q = h_q - g_q * objective.rot_quantum[levels_q[n]]
            base_c = h_c - g_c * objective.rot_classical[levels_c[n]]
            amp_q = np.abs(base_q + g_q * objective.rot_quantum)
            amp_c = np.abs(base_c + g_c * objective.rot_classical)
            grid = np.asarray(objective.cost_of(amp_q[:, None], amp_c[None, :])).ravel()
            tracker.evaluations += grid.size
            best = grid.min()
            current = levels_q[n] * n_levels_c + levels_c[n]
            if best < grid[current]:
                ties = np.flatnonzero(grid == best)
                pick = int(ties[np.argmin(rank[ties])])
                levels_q[n], levels_c[n] = divmod(pick, n_levels_c)
                h_q = base_q + g_q * objective.rot_quantum[levels_q[n]]
                h_c = base_c + g_c * objective.rot_classical[levels_c[n]]
                changed = True
        if changed:
            x = _levels_to_bits(levels_q, levels_c, cfg_ris)
        tracker.offer(x, objective.value(x))
        tracker.mark(sweep)
        if not changed:
            break
    return tracker.result(SolverKind.BCD)


def _levels_to_bits(levels_q: np.ndarray, levels_c: np.ndarray, cfg) -> np.ndarray:
    q = (levels_q[:, None] >> np.arange(cfg.bits_quantum)) & 1
    c = (levels_c[:, None] >> np.arange(cfg.bits_classical)) & 1
    return np.concatenate([q.ravel(), c.ravel()]).astype(np.uint8)


# ---------------------------------------------------------------- security and harness

def enforce_security(
    result: SolverResult,
    state: ChannelState,
    cal: Calibration,
    qber_limit: float = SECURITY_THRESHOLD,
) -> SolverResult:
    """Mark x* feasible iff its QBER is within the limit, else fall back to the best secure state visited"""
    eps = exact_qber(state, cal, result.best_bits)
    if is_secure(eps, qber_limit):
        return result.model_copy(update={"feasible": True, "qber": eps})
    if result.fallback_bits is not None:
        fallback_eps = exact_qber(state, cal, result.fallback_bits)
        logger.warning(
            f"best configuration violates the QBER limit ({eps:.4%} > {qber_limit:.2%}); "
            f"falling back to the best secure state ({fallback_eps:.4%})"
        )
        return result.model_copy(update={
            "best_bits": result.fallback_bits,
            "best_value": result.fallback_value,
            "feasible": True,
            "qber": fallback_eps,
        })
    logger.warning(f"no visited configuration meets the QBER limit (best {eps:.4%})")
    return result.model_copy(update={"feasible": False, "qber": eps})


def _search_objective(state: ChannelState, weights: CostWeights, cal: Calibration, cfg: SolverConfig,
                      exact: ExactObjective, expansion_point: Optional[PhaseConfig] = None) -> Objective:
    if cfg.objective == ObjectiveKind.QUADRATIC:
        return QuadraticObjective(build_qubo(state, weights, cal, expansion_point), state, cal)
    return exact


def optimize(
    state: ChannelState,
    weights: CostWeights,
    cal: Calibration,
    cfg: SolverConfig,
    require_feasible: bool = False,
    expansion_point: Optional[PhaseConfig] = None,
) -> SolverResult:
    """Run the configured solver, re-score its answer exactly and apply the security filter"""
    exact = ExactObjective(state, weights, cal)
    search = _search_objective(state, weights, cal, cfg, exact, expansion_point)
    dim = state.dim
    if cfg.kind == SolverKind.BRUTE:
        result = brute_force(search, dim, cfg.qber_limit)
    elif cfg.kind == SolverKind.ANNEAL:
        result = simulated_annealing(search, dim, cfg)
    elif cfg.kind == SolverKind.TABU:
        result = tabu_search(search, dim, cfg)
    else:
        result = block_coordinate_descent(exact, state, cfg)

    if search is not exact:
        rescored = {"best_value": exact.value(result.best_bits)}
        if result.fallback_bits is not None:
            rescored["fallback_value"] = exact.value(result.fallback_bits)
        result = result.model_copy(update=rescored)

    result = enforce_security(result, state, cal, cfg.qber_limit)
    logger.info(
        f"{cfg.kind.value} solver: F={result.best_value:.9g} after {result.evaluations} evaluations "
        f"(qber {result.qber:.4%}, feasible={result.feasible})"
    )
    if require_feasible and not result.feasible:
        raise InfeasibleError(
            f"no configuration with QBER <= {cfg.qber_limit:.2%} was found (best {result.qber:.4%})"
        )
    return result


def relinearize(
    state: ChannelState,
    weights: CostWeights,
    cal: Calibration,
    cfg: SolverConfig,
    rounds: int = 3,
) -> SolverResult:
    """Build, solve and rebuild the quadratic model around each accepted answer.

    The exact objective decides whether a round's answer replaces the incumbent;
    the loop stops early once a round brings no exact improvement.
    """
    quad_cfg = cfg.model_copy(update={"objective": ObjectiveKind.QUADRATIC})
    if quad_cfg.kind == SolverKind.BCD:
        quad_cfg = quad_cfg.model_copy(update={"kind": SolverKind.ANNEAL})
    exact = ExactObjective(state, weights, cal)
    incumbent = np.zeros(state.dim, dtype=np.uint8)
    incumbent_value = exact.value(incumbent)
    evaluations = 1
    trace: List[Tuple[int, float]] = [(0, incumbent_value)]
    result = None
    for round_index in range(1, rounds + 1):
        point = decode_phases(incumbent, state.ris)
        result = optimize(state, weights, cal, quad_cfg, expansion_point=point)
        evaluations += result.evaluations
        improved = result.best_value < incumbent_value
        if improved:
            incumbent, incumbent_value = result.best_bits, result.best_value
        trace.append((round_index, incumbent_value))
        logger.debug(f"relinearization round {round_index}: F={incumbent_value:.9g} (improved={improved})")
        if not improved:
            break
    final = SolverResult(
        best_bits=incumbent,
        best_value=incumbent_value,
        evaluations=evaluations,
        trace=trace,
        kind=quad_cfg.kind,
        algorithm=RNG_ALGORITHM,
        fallback_bits=result.fallback_bits if result is not None else None,
        fallback_value=result.fallback_value if result is not None else None,
    )
    return enforce_security(final, state, cal, cfg.qber_limit)


def write_trace_csv(result: SolverResult, path, metadata: Optional[dict] = None, timestamp: bool = True):
    rows = [{"iteration": iteration, "best_value": value} for iteration, value in result.trace]
    return write_csv(path, ["iteration", "best_value"], rows, metadata, timestamp)
