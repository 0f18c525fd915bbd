import dimod
import numpy as np
import pytest

from exceptions import InfeasibleError, StructuralError
from factories import make_random_state, real_state
from models import Calibration, CostWeights, ObjectiveKind, SolverConfig, SolverKind, SolverResult
from qubo import build_qubo, exact_qber, qubo_from_dense
from reporting import read_csv
from seeding import derive_seed, make_rng
from solvers import (
    ExactObjective,
    QuadraticObjective,
    block_coordinate_descent,
    brute_force,
    enforce_security,
    is_secure,
    lex_less,
    optimize,
    relinearize,
    simulated_annealing,
    tabu_search,
    write_trace_csv,
)

WEIGHTS = CostWeights()
# Reference amplitude well below the direct gain: every configuration is secure.
SECURE_CAL = Calibration(ref_amplitude=0.05, effective_visibility=0.98, rf_gain_offset_db=-130.0)


def _separable(linear):
    linear = np.asarray(linear, dtype=float)
    return QuadraticObjective(qubo_from_dense(np.zeros((linear.size, linear.size)), linear))


def _random_quadratic(seed: int, dim: int) -> QuadraticObjective:
    rng = make_rng(seed)
    return QuadraticObjective(qubo_from_dense(rng.normal(size=(dim, dim)), rng.normal(size=dim)))


def _oracle_instance(index: int):
    n = 1 + index % 4
    state = make_random_state(derive_seed(2024, "oracle", index), n, cascade_amplitude=0.1)
    return state, ExactObjective(state, WEIGHTS, SECURE_CAL)


def test_brute_force_prefers_the_lexicographically_smallest_minimizer():
    objective = QuadraticObjective(qubo_from_dense(np.array([[0.0, -2.0], [0.0, 0.0]]), np.array([1.0, 1.0])))
    result = brute_force(objective, 2)
    assert result.best_bits.tolist() == [0, 0]
    assert result.best_value == 0.0
    assert result.evaluations == 4


def test_brute_force_single_variable():
    result = brute_force(_separable([-1.0]), 1)
    assert result.best_bits.tolist() == [1]
    assert result.best_value == -1.0


def test_brute_force_without_variables_is_the_offset():
    objective = QuadraticObjective(qubo_from_dense(np.zeros((0, 0)), np.zeros(0), offset=0.7))
    result = brute_force(objective, 0)
    assert result.best_bits.size == 0
    assert result.best_value == 0.7


def test_brute_force_refuses_large_problems():
    with pytest.raises(StructuralError):
        brute_force(_separable(np.ones(25)), 25)


def test_lex_less():
    assert lex_less(np.array([0, 1, 1]), np.array([1, 0, 0]))
    assert not lex_less(np.array([1, 0]), np.array([1, 0]))


def test_annealing_replays_per_seed():
    objective = _random_quadratic(3, 12)
    cfg = SolverConfig(kind=SolverKind.ANNEAL, seed=41, max_iters=40)
    first = simulated_annealing(objective, 12, cfg)
    second = simulated_annealing(objective, 12, cfg)
    assert np.array_equal(first.best_bits, second.best_bits)
    assert first.best_value == second.best_value
    assert first.trace == second.trace
    assert first.algorithm == "PCG64"


def test_zero_temperature_annealing_is_descent():
    objective = _random_quadratic(9, 10)
    cfg = SolverConfig(kind=SolverKind.ANNEAL, initial_temp=0.0, restarts=1, max_iters=50)
    result = simulated_annealing(objective, 10, cfg)
    assert np.all(objective.flip_deltas(result.best_bits) >= -1e-12)
    values = [value for _, value in result.trace]
    assert values == sorted(values, reverse=True)


def test_tabu_search_finds_the_separable_optimum_in_dim_steps():
    objective = _separable([-1.0, 2.0, -3.0, 0.5])
    result = tabu_search(objective, 4, SolverConfig(kind=SolverKind.TABU, tabu_tenure=4, max_iters=20, restarts=1))
    assert result.trace[3][1] == -4.0
    assert result.best_bits.tolist() == [1, 0, 1, 0]


def test_tabu_search_waits_out_a_full_tabu_list():
    objective = _separable([1.0, 1.0])
    result = tabu_search(objective, 2, SolverConfig(kind=SolverKind.TABU, tabu_tenure=8, max_iters=30, restarts=1))
    assert len(result.trace) == 30
    assert result.best_value == 0.0


@pytest.mark.parametrize("seed", [0, 7, 19])
def test_bcd_with_one_element_matches_brute_force(seed):
    state = make_random_state(seed, 1, cascade_amplitude=0.4)
    objective = ExactObjective(state, WEIGHTS, SECURE_CAL)
    bcd = block_coordinate_descent(objective, state, SolverConfig())
    brute = brute_force(objective, state.dim)
    assert np.array_equal(bcd.best_bits, brute.best_bits)
    assert bcd.best_value == pytest.approx(brute.best_value, abs=1e-12)


def test_bcd_trace_never_increases():
    state = make_random_state(12, 6, cascade_amplitude=0.2)
    result = block_coordinate_descent(ExactObjective(state, WEIGHTS, SECURE_CAL), state, SolverConfig())
    values = [value for _, value in result.trace]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_bcd_needs_the_exact_objective():
    state = make_random_state(1, 1)
    with pytest.raises(StructuralError):
        block_coordinate_descent(QuadraticObjective(build_qubo(state, WEIGHTS, SECURE_CAL)), state, SolverConfig())


def _oracle_campaign(count: int):
    """Fraction of seeded instances on which each heuristic reaches the exhaustive optimum"""
    cfg = SolverConfig(seed=5)
    hits = {SolverKind.ANNEAL: 0, SolverKind.TABU: 0, SolverKind.BCD: 0}
    for index in range(count):
        state, objective = _oracle_instance(index)
        optimum = brute_force(objective, state.dim).best_value
        results = {
            SolverKind.ANNEAL: simulated_annealing(objective, state.dim, cfg),
            SolverKind.TABU: tabu_search(objective, state.dim, cfg),
            SolverKind.BCD: block_coordinate_descent(objective, state, cfg),
        }
        for kind, result in results.items():
            assert result.best_value >= optimum - 1e-12
            if result.best_value <= optimum + 1e-12:
                hits[kind] += 1
    return {kind: value / count for kind, value in hits.items()}


def test_solvers_against_the_exhaustive_oracle():
    rates = _oracle_campaign(20)
    assert rates[SolverKind.ANNEAL] >= 0.95
    assert rates[SolverKind.TABU] >= 0.95
    assert rates[SolverKind.BCD] >= 0.9


@pytest.mark.slow
def test_full_oracle_campaign():
    rates = _oracle_campaign(200)
    assert rates[SolverKind.ANNEAL] >= 0.95
    assert rates[SolverKind.TABU] >= 0.95
    assert rates[SolverKind.BCD] >= 0.9


def test_exhaustive_search_agrees_with_the_reference_sampler():
    for seed in (3, 8):
        model = build_qubo(make_random_state(seed, 2, cascade_amplitude=0.3), WEIGHTS, SECURE_CAL)
        reference = dimod.ExactSolver().sample(model.bqm).first
        result = brute_force(QuadraticObjective(model), model.dim)
        assert result.best_value == pytest.approx(reference.energy, abs=1e-12)
        assert model.bqm.energy(reference.sample) == pytest.approx(result.best_value, abs=1e-12)


@pytest.mark.parametrize("kind", list(SolverKind))
def test_reported_value_is_the_objective_at_the_reported_bits(kind):
    state = make_random_state(31, 3)
    objective = ExactObjective(state, WEIGHTS, SECURE_CAL)
    cfg = SolverConfig(kind=kind, max_iters=30)
    if kind == SolverKind.BRUTE:
        result = brute_force(objective, state.dim)
    elif kind == SolverKind.ANNEAL:
        result = simulated_annealing(objective, state.dim, cfg)
    elif kind == SolverKind.TABU:
        result = tabu_search(objective, state.dim, cfg)
    else:
        result = block_coordinate_descent(objective, state, cfg)
    assert result.best_value == objective.value(result.best_bits)


@pytest.mark.parametrize("exact", [True, False])
def test_flip_deltas_match_value_differences(exact):
    state = make_random_state(17, 3, bits_quantum=2, bits_classical=3, cascade_amplitude=0.3)
    objective = ExactObjective(state, WEIGHTS, SECURE_CAL) if exact else QuadraticObjective(
        build_qubo(state, WEIGHTS, SECURE_CAL))
    x = make_rng(2).integers(0, 2, size=state.dim, dtype=np.uint8)
    deltas = objective.flip_deltas(x)
    for i in range(state.dim):
        flipped = x.copy()
        flipped[i] ^= 1
        expected = objective.value(flipped) - objective.value(x)
        assert deltas[i] == pytest.approx(expected, abs=1e-12)
        assert objective.flip_delta(x, i) == pytest.approx(expected, abs=1e-12)


def test_security_threshold_boundary():
    assert is_secure(0.11)
    assert not is_secure(0.12)
    assert is_secure(0.05, limit=0.05)


def _insecure_pair():
    # x_q = 0 leaves |H_Q| = 0.5 (QBER ~ 26 %), x_q = 1 gives 1.5 (QBER ~ 6 %)
    state = real_state(1.0, [-0.5], [-0.5])
    cal = Calibration(ref_amplitude=0.5, effective_visibility=0.98)
    return state, cal


def test_enforce_security_falls_back_to_the_best_secure_state():
    state, cal = _insecure_pair()
    assert exact_qber(state, cal, np.array([0, 0])) > 0.11
    assert exact_qber(state, cal, np.array([1, 1])) < 0.11
    result = SolverResult(
        best_bits=np.array([0, 0], dtype=np.uint8), best_value=-1.0,
        fallback_bits=np.array([1, 1], dtype=np.uint8), fallback_value=-0.5,
    )
    secured = enforce_security(result, state, cal)
    assert secured.feasible
    assert secured.best_bits.tolist() == [1, 1]
    assert secured.best_value == -0.5
    assert secured.qber == pytest.approx(exact_qber(state, cal, np.array([1, 1])))


def test_enforce_security_without_a_fallback_is_infeasible():
    state, cal = _insecure_pair()
    result = SolverResult(best_bits=np.array([0, 1], dtype=np.uint8), best_value=-1.0)
    secured = enforce_security(result, state, cal)
    assert not secured.feasible
    assert secured.best_bits.tolist() == [0, 1]
    assert secured.qber > 0.11


def test_optimize_can_require_a_secure_answer():
    state = real_state(1.0, [0.1], [0.1])
    cal = Calibration(ref_amplitude=100.0, effective_visibility=0.98)
    cfg = SolverConfig(kind=SolverKind.BRUTE)
    assert not optimize(state, WEIGHTS, cal, cfg).feasible
    with pytest.raises(InfeasibleError):
        optimize(state, WEIGHTS, cal, cfg, require_feasible=True)


def test_quadratic_search_is_rescored_exactly():
    state = make_random_state(23, 3)
    cfg = SolverConfig(kind=SolverKind.TABU, objective=ObjectiveKind.QUADRATIC, max_iters=50)
    result = optimize(state, WEIGHTS, SECURE_CAL, cfg)
    assert result.feasible
    assert result.best_value == ExactObjective(state, WEIGHTS, SECURE_CAL).value(result.best_bits)


def test_relinearization_never_loses_to_the_zero_vector():
    state = make_random_state(29, 4, cascade_amplitude=0.3)
    cfg = SolverConfig(kind=SolverKind.ANNEAL, max_iters=40)
    result = relinearize(state, WEIGHTS, SECURE_CAL, cfg, rounds=3)
    zeros = ExactObjective(state, WEIGHTS, SECURE_CAL).value(np.zeros(state.dim, dtype=np.uint8))
    assert result.best_value <= zeros
    assert result.trace[0] == (0, zeros)
    assert len(result.trace) <= 4


def test_trace_csv(tmp_path):
    result = brute_force(_separable([-1.0, 1.0]), 2)
    path = write_trace_csv(result, tmp_path / "trace.csv", {"solver": "brute"}, timestamp=False)
    assert path.read_text().startswith("# solver=brute\niteration,best_value\n")
    rows = read_csv(path)
    assert [float(row["best_value"]) for row in rows] == [value for _, value in result.trace]


@pytest.mark.parametrize("exact", [True, False])
def test_cursor_deltas_stay_exact_along_a_walk(exact):
    state = make_random_state(37, 4, bits_quantum=2, bits_classical=3, cascade_amplitude=0.3)
    objective = ExactObjective(state, WEIGHTS, SECURE_CAL) if exact else QuadraticObjective(
        build_qubo(state, WEIGHTS, SECURE_CAL))
    rng = make_rng(4)
    x = np.zeros(state.dim, dtype=np.uint8)
    cursor = objective.cursor(x)
    for i in rng.integers(0, state.dim, size=40):
        cursor.flip(int(i))
        assert cursor.x is x
        base = objective.value(x)
        for j in range(state.dim):
            flipped = x.copy()
            flipped[j] ^= 1
            assert cursor.delta(j) == pytest.approx(objective.value(flipped) - base, abs=1e-10)
