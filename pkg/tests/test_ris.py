import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from channels import friis_amplitude, optical_atmospheric_loss
from exceptions import StructuralError
from factories import make_random_state
from geometry import link_geometry_deg
from models import Band, ComplexGain, GeometryParams, OpticalParams, PhaseConfig, RfParams, RisConfig
from ris import (
    aligned_phase_config,
    best_quantized_alignment,
    cascade_gains,
    composite_gain,
    composite_state_gains,
    decode_levels,
    decode_phases,
    encode_levels,
    offset_phases,
    phase_step,
    zero_phases,
)
from seeding import make_rng

GEO = GeometryParams()


def test_phase_step():
    assert phase_step(1) == pytest.approx(math.pi)
    assert phase_step(2) == pytest.approx(math.pi / 2)


def test_decode_uses_bit_zero_as_least_significant():
    # element 1 quantum bits (1, 1) -> level 3, element 2 quantum (0, 1) -> 2; classical (1, 0), (0, 0)
    bits = np.array([1, 1, 0, 1, 1, 0, 0, 0])
    levels_q, levels_c = decode_levels(bits, 2, 2, 2)
    assert levels_q.tolist() == [3, 2]
    assert levels_c.tolist() == [1, 0]


def test_decode_rejects_wrong_length():
    with pytest.raises(StructuralError):
        decode_levels(np.zeros(7, dtype=np.uint8), 2, 2, 2)


@settings(max_examples=50)
@given(st.data())
def test_encode_inverts_decode(data):
    n = data.draw(st.integers(min_value=0, max_value=6))
    bq = data.draw(st.integers(min_value=1, max_value=3))
    bc = data.draw(st.integers(min_value=1, max_value=3))
    cfg = RisConfig(n_elements=n, bits_quantum=bq, bits_classical=bc)
    bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=cfg.dim, max_size=cfg.dim)), dtype=np.uint8)
    levels_q, levels_c = decode_levels(bits, n, bq, bc)
    assert np.array_equal(encode_levels(levels_q, levels_c, cfg), bits)


def test_decode_phases_maps_levels_to_angles():
    cfg = RisConfig(n_elements=1, bits_quantum=2, bits_classical=1)
    phases = decode_phases(np.array([0, 1, 1], dtype=np.uint8), cfg)
    assert phases.phases_quantum[0] == pytest.approx(math.pi)
    assert phases.phases_classical[0] == pytest.approx(math.pi)
    assert np.all(zero_phases(cfg).phases_quantum == 0)


def test_offsets_are_seeded_per_band():
    cfg = RisConfig(n_elements=16, ris_offset_phase_seed=5)
    quantum = offset_phases(cfg, Band.QUANTUM)
    assert np.array_equal(quantum, offset_phases(cfg, Band.QUANTUM))
    assert not np.array_equal(quantum, offset_phases(cfg, Band.CLASSICAL))
    assert np.all((quantum >= 0) & (quantum < 2 * math.pi))


def test_cascade_amplitude_is_the_two_hop_product():
    geom = link_geometry_deg(60, GEO)
    optical = OpticalParams()
    cfg = RisConfig(n_elements=4, element_gain=2.0)
    gains = cascade_gains(Band.QUANTUM, cfg, geom, optical, amp_scale=3.0)
    expected = (3.0 * 2.0 * friis_amplitude(optical.wavelength_m, geom.slant_range_km)
                * friis_amplitude(optical.wavelength_m, cfg.ris_to_ground_km)
                * math.sqrt(optical_atmospheric_loss(optical, geom)))
    assert np.allclose(np.abs(gains), expected, rtol=1e-12)


def test_empty_and_transparent_surfaces():
    geom = link_geometry_deg(45, GEO)
    assert cascade_gains(Band.CLASSICAL, RisConfig(n_elements=0), geom, RfParams()).size == 0
    off = cascade_gains(Band.CLASSICAL, RisConfig(n_elements=3, element_gain=0.0), geom, RfParams())
    assert np.all(off == 0)


def test_composite_gain_without_elements_is_the_direct_gain():
    direct = ComplexGain(amplitude=0.3, phase_rad=1.0)
    assert composite_gain(direct, np.zeros(0, dtype=complex), np.zeros(0)) == direct


def test_composite_gain_adds_a_rotated_cascade():
    direct = ComplexGain(amplitude=1.0, phase_rad=0.0)
    total = composite_gain(direct, np.array([0.5j]), np.array([1.5 * math.pi]))
    assert total.amplitude == pytest.approx(1.5)
    assert total.phase_rad == pytest.approx(0.0, abs=1e-12)


def test_composite_gain_rejects_mismatched_phases():
    with pytest.raises(StructuralError):
        composite_gain(ComplexGain(amplitude=1.0), np.array([0.1, 0.2]), np.array([0.0]))


def test_best_alignment_picks_the_projecting_level():
    direct = ComplexGain(amplitude=1.0, phase_rad=0.0)
    chosen = best_quantized_alignment(direct, np.array([0.5j, -0.5]), 2)
    assert isinstance(chosen, PhaseConfig)
    assert chosen.phases_quantum[0] == pytest.approx(1.5 * math.pi)
    assert chosen.phases_quantum[1] == pytest.approx(math.pi)
    assert chosen.phases_classical.tolist() == [0.0, 0.0]
    assert chosen.bits.tolist() == [1, 1, 0, 1, 0, 0, 0, 0]


def test_best_alignment_of_the_classical_band():
    direct = ComplexGain(amplitude=1.0, phase_rad=0.5 * math.pi)
    chosen = best_quantized_alignment(direct, np.array([1.0 + 0j]), 2, band=Band.CLASSICAL)
    assert chosen.phases_classical[0] == pytest.approx(0.5 * math.pi)
    assert chosen.phases_quantum[0] == 0.0


def test_alignment_ties_go_to_the_lowest_level():
    # exp(j*pi/4) projects equally after 0 and after 3*pi/2 rotations
    direct = ComplexGain(amplitude=1.0, phase_rad=0.0)
    chosen = best_quantized_alignment(direct, np.array([np.exp(1j * math.pi / 4)]), 2)
    assert chosen.phases_quantum[0] == 0.0
    assert best_quantized_alignment(direct, np.zeros(0), 2).bits.size == 0


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.integers(min_value=1, max_value=12))
def test_alignment_never_reduces_the_direct_amplitude(seed, n):
    state = make_random_state(seed, n, cascade_amplitude=0.3)
    h_q, h_c = composite_state_gains(state, aligned_phase_config(state))
    assert abs(h_q) >= state.direct_quantum.amplitude - 1e-12
    assert abs(h_c) >= state.direct_classical.amplitude - 1e-12


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.integers(min_value=1, max_value=12))
def test_each_band_ignores_the_other_bands_phases(seed, n):
    state = make_random_state(seed, n)
    rng = make_rng(seed)
    split = n * state.bits_quantum
    x = rng.integers(0, 2, size=state.dim, dtype=np.uint8)
    other_classical, other_quantum = x.copy(), x.copy()
    other_classical[split:] = rng.integers(0, 2, size=state.dim - split, dtype=np.uint8)
    other_quantum[:split] = rng.integers(0, 2, size=split, dtype=np.uint8)
    h_q, h_c = composite_state_gains(state, decode_phases(x, state.ris))
    assert composite_state_gains(state, decode_phases(other_classical, state.ris))[0] == h_q
    assert composite_state_gains(state, decode_phases(other_quantum, state.ris))[1] == h_c


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.integers(min_value=1, max_value=12))
def test_total_gain_obeys_the_triangle_bound(seed, n):
    state = make_random_state(seed, n, cascade_amplitude=0.4)
    x = make_rng(seed).integers(0, 2, size=state.dim, dtype=np.uint8)
    h_q, h_c = composite_state_gains(state, decode_phases(x, state.ris))
    assert abs(h_q) <= state.direct_quantum.amplitude + np.abs(state.cascade_quantum).sum() + 1e-12
    assert abs(h_c) <= state.direct_classical.amplitude + np.abs(state.cascade_classical).sum() + 1e-12
