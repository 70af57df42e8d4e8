# test_fields.py
import csv
import math

import numpy as np
import pytest

from atoms import AtomDescriptor, CellSpec, DescriptorDomainError
from fields import (
    GAMMA_MAP_HEADER,
    PATCHES_HEADER,
    PATTERN_HEADER,
    EmsLayout,
    GammaMap,
    InvisibleDirectionError,
    cell_current,
    cell_radiation_integral,
    far_field_at,
    far_fields,
    field_magnitude,
    gamma_map,
    load_layout_json,
    pattern_cut,
    pattern_grid,
    peak_metrics,
    unit_current,
    write_gamma_map_csv,
    write_layout_json,
    write_patches_csv,
    write_pattern_csv,
)
from surrogate import GammaLUT
from wavegeom import UV, Direction, PlaneWaveSpec, Polarization, specular_direction

CELL = CellSpec.default()
BOUNDS = CELL.default_bounds()


def _wave(pol="TE", theta=0.0, phi=0.0, amplitude=1.0):
    return PlaneWaveSpec(pol, Direction(theta, phi), amplitude, CELL.frequency)


def _uniform_map(P, Q, gamma=1.0, pol="TE", theta=0.0):
    return GammaMap(np.full((P, Q), gamma, dtype=complex), theta, pol, CELL)


def _random_map(P, Q, seed, pol="TE", theta=0.0):
    rng = np.random.default_rng(seed)
    values = rng.uniform(0.5, 1.0, (P, Q)) * np.exp(1j * rng.uniform(-np.pi, np.pi, (P, Q)))
    return GammaMap(values, theta, pol, CELL)


def _quadrature(uv, wave, center, dims, order=24):
    # Gauss-Legendre over the cell of exp(j k0 (r_hat - k_inc_hat) . r')
    nodes, weights = np.polynomial.legendre.leggauss(order)
    k0 = wave.wavenumber
    inc_u = math.sin(math.radians(wave.incidence.theta)) * math.cos(math.radians(wave.incidence.phi))
    inc_v = math.sin(math.radians(wave.incidence.theta)) * math.sin(math.radians(wave.incidence.phi))
    x = center[0] + nodes * dims[0] / 2
    y = center[1] + nodes * dims[1] / 2
    fx = np.sum(weights * np.exp(1j * k0 * (uv.u + inc_u) * x)) * dims[0] / 2
    fy = np.sum(weights * np.exp(1j * k0 * (uv.v + inc_v) * y)) * dims[1] / 2
    return fx * fy


def test_cell_integral_matches_quadrature():
    rng = np.random.default_rng(21)
    dims = (CELL.pitch_x, CELL.pitch_y)
    for _ in range(20):
        r = math.sqrt(rng.uniform(0, 1))
        a = rng.uniform(0, 2 * math.pi)
        uv = UV(r * math.cos(a), r * math.sin(a))
        wave = _wave("TM", rng.uniform(-60, 60), rng.uniform(0, 360))
        center = (rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05))
        closed = cell_radiation_integral(uv, wave, center, dims)
        reference = _quadrature(uv, wave, center, dims)
        assert abs(closed - reference) <= 1e-6 * abs(reference)


def test_specular_cell_integral_is_real():
    wave = _wave("TE", 35.0, 20.0)
    dims = (CELL.pitch_x, CELL.pitch_y)
    value = cell_radiation_integral(specular_direction(wave.incidence), wave, (0.02, -0.01), dims)
    assert value.imag == pytest.approx(0.0, abs=1e-18)
    assert value.real == pytest.approx(dims[0] * dims[1], rel=1e-12)


def test_cell_current_properties():
    wave = _wave("TE")
    np.testing.assert_allclose(cell_current(1.0, wave).vector, [0, 2, 0], atol=1e-12)
    np.testing.assert_allclose(cell_current(1.0, _wave("TM")).vector, [2, 0, 0], atol=1e-12)
    np.testing.assert_array_equal(cell_current(0.0, wave).vector, 0)

    oblique = _wave("TM", -40.0, 30.0, amplitude=0.7 - 0.2j)
    a, b = 0.3 + 0.4j, -0.5j
    combined = cell_current(a + b, oblique).vector
    np.testing.assert_allclose(
        combined, cell_current(a, oblique).vector + cell_current(b, oblique).vector, atol=1e-12
    )
    assert combined[2] == 0
    np.testing.assert_allclose(cell_current(1.0, oblique).vector, unit_current(oblique), atol=1e-15)


def test_zero_map_radiates_nothing():
    e = far_field_at(_uniform_map(4, 4, 0.0), _wave(), UV(0.1, 0.2))
    np.testing.assert_array_equal(e, 0)


def test_uniform_broadside_magnitude():
    P, Q = 10, 10
    wave = _wave("TE")
    e = far_field_at(_uniform_map(P, Q), wave, UV(0.0, 0.0))
    k0 = wave.wavenumber
    expected = k0 / (4 * math.pi) * 2.0 * P * Q * CELL.pitch_x * CELL.pitch_y
    assert field_magnitude(e) == pytest.approx(expected, rel=1e-12)


def _hand_current(gamma, wave):
    # J = z x (eta z x j_e + j_m), eta j_e = z x (k_refl x E), j_m = -z x E
    theta, phi = math.radians(wave.incidence.theta), math.radians(wave.incidence.phi)
    k_inc = -np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )
    e = (-1.0 if theta < 0 else 1.0) * np.array([-math.sin(phi), math.cos(phi), 0.0])
    if Polarization(wave.polarization) is Polarization.TM:
        e = np.cross(k_inc, e)
    e = gamma * wave.amplitude * e
    k_refl = k_inc * np.array([1.0, 1.0, -1.0])
    z = np.array([0.0, 0.0, 1.0])
    eta_j_e = np.cross(z, np.cross(k_refl, e))
    j_m = -np.cross(z, e)
    return np.cross(z, np.cross(z, eta_j_e) + j_m)


def test_far_field_matches_direct_double_sum():
    dims = (CELL.pitch_x, CELL.pitch_y)
    rng = np.random.default_rng(5)
    for seed in range(20):
        P, Q = rng.integers(1, 7, 2)
        pol = "TE" if seed % 2 == 0 else "TM"
        theta_inc = rng.uniform(-60, 60)
        wave = _wave(pol, theta_inc, rng.uniform(0, 360), complex(*rng.uniform(-1, 1, 2)))
        gmap = _random_map(P, Q, seed, pol, theta_inc)
        r = math.sqrt(rng.uniform(0, 1))
        a = rng.uniform(0, 2 * math.pi)
        uv = UV(r * math.cos(a), r * math.sin(a))

        x = (np.arange(P) - (P - 1) / 2) * CELL.pitch_x
        y = (np.arange(Q) - (Q - 1) / 2) * CELL.pitch_y
        expected = np.zeros(3, dtype=complex)
        scale = 0.0
        for p in range(P):
            for q in range(Q):
                term = _hand_current(gmap.values[p, q], wave) * _quadrature(uv, wave, (x[p], y[q]), dims)
                expected += term
                scale += np.linalg.norm(term)
        expected *= 1j * wave.wavenumber / (4 * math.pi)
        scale *= wave.wavenumber / (4 * math.pi)
        np.testing.assert_allclose(far_field_at(gmap, wave, uv), expected, rtol=0, atol=1e-9 * scale)


@pytest.mark.parametrize("theta", [-60.0, -30.0, 0.0, 30.0, 45.0, 60.0])
def test_uniform_map_peaks_at_specular(theta):
    wave = _wave("TE", theta)
    pattern = pattern_cut(_uniform_map(20, 20, 0.9j, theta=theta), wave)
    metrics = peak_metrics(pattern)
    assert metrics.uv_peak.u == pytest.approx(-math.sin(math.radians(theta)), abs=2.0 / 720)


def test_uniform_aperture_first_sidelobe():
    pattern = pattern_cut(_uniform_map(20, 20), _wave("TE"), 0.0, 721)
    metrics = peak_metrics(pattern)
    assert metrics.uv_peak.u == pytest.approx(0.0, abs=1e-12)
    assert metrics.sidelobe_level_db == pytest.approx(-13.26, abs=0.3)


def test_single_cell_has_no_sidelobe():
    metrics = peak_metrics(pattern_cut(_uniform_map(1, 1), _wave("TE")))
    assert metrics.sidelobe_level_db == -math.inf
    assert metrics.to_dict()["sidelobe_level_db"] == -math.inf


def test_grid_peak_and_sidelobe():
    pattern = pattern_grid(_uniform_map(20, 20), _wave("TE"), 41, 41)
    assert pattern.grid_shape == (41, 41)
    assert np.all(np.sum(pattern.uv**2, axis=1) <= 1.0 + 1e-12)
    metrics = peak_metrics(pattern)
    assert (metrics.uv_peak.u, metrics.uv_peak.v) == (pytest.approx(0.0, abs=1e-12),) * 2
    assert metrics.sidelobe_level_db < -10.0


def test_pattern_cut_sampling():
    pattern = pattern_cut(_uniform_map(2, 2), _wave(), 0.0, 3)
    np.testing.assert_allclose(pattern.uv[:, 0], [-1.0, 0.0, 1.0])
    np.testing.assert_allclose(pattern.uv[:, 1], 0.0, atol=1e-15)
    rotated = pattern_cut(_uniform_map(2, 2), _wave(), 90.0, 3)
    np.testing.assert_allclose(rotated.uv[:, 1], [-1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        pattern_cut(_uniform_map(2, 2), _wave(), 0.0, 1)


def test_invisible_direction_rejected():
    with pytest.raises(InvisibleDirectionError):
        far_field_at(_uniform_map(2, 2), _wave(), UV(0.9, 0.9))
    with pytest.raises(InvisibleDirectionError):
        far_fields(_uniform_map(2, 2), _wave(), np.array([0.0, 1.2]), np.array([0.0, 0.0]))


def test_gamma_map_rejects_active_values():
    with pytest.raises(ValueError):
        GammaMap(np.full((2, 2), 1.1), 0.0, "TE", CELL)


def test_gamma_map_from_lut():
    lut = GammaLUT(
        0.0, BOUNDS.lo, BOUNDS.hi, 16,
        {Polarization.TE: np.full((16, 16), 0.8j), Polarization.TM: np.full((16, 16), -0.6 + 0j)},
    )
    layout = EmsLayout.uniform(3, 4, CELL, BOUNDS)
    gmap = gamma_map(layout, lut, Polarization.TM)
    assert gmap.shape == (3, 4)
    np.testing.assert_allclose(gmap.values, -0.6)


def test_layout_vector_is_cell_interleaved():
    descriptors = np.empty((2, 3, 2))
    for p in range(2):
        for q in range(3):
            descriptors[p, q] = BOUNDS.lo + (p * 3 + q) * 1e-4, BOUNDS.lo + 2e-3 + q * 1e-5
    layout = EmsLayout(descriptors, CELL, BOUNDS)
    vec = layout.to_vector()
    assert vec[0] == descriptors[0, 0, 0]
    assert vec[1] == descriptors[0, 0, 1]
    assert vec[2] == descriptors[0, 1, 0]
    assert vec[6] == descriptors[1, 0, 0]
    back = EmsLayout.from_vector(vec, 2, 3, CELL, BOUNDS)
    np.testing.assert_array_equal(back.descriptors, descriptors)
    assert layout.descriptor(1, 2) == AtomDescriptor(*descriptors[1, 2])


def test_layout_validation():
    with pytest.raises(DescriptorDomainError):
        EmsLayout.uniform(2, 2, CELL, BOUNDS, AtomDescriptor(BOUNDS.hi * 2, BOUNDS.mid))
    with pytest.raises(ValueError):
        EmsLayout.from_vector(np.full(7, BOUNDS.mid), 2, 2, CELL, BOUNDS)


def test_aperture_side():
    layout = EmsLayout.uniform(40, 40, CELL, BOUNDS)
    side_x, side_y = layout.aperture_side
    assert side_x == pytest.approx(0.171, abs=5e-4)
    assert side_x == side_y


def test_layout_json_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    layout = EmsLayout(rng.uniform(BOUNDS.lo, BOUNDS.hi, (3, 2, 2)), CELL, BOUNDS)
    path = tmp_path / "layout.json"
    write_layout_json(layout, path)
    loaded = load_layout_json(path)
    np.testing.assert_array_equal(loaded.descriptors, layout.descriptors)
    assert loaded.cell == layout.cell
    assert loaded.bounds == layout.bounds


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def test_csv_writers(tmp_path):
    layout = EmsLayout.uniform(2, 3, CELL, BOUNDS)
    write_patches_csv(layout, tmp_path / "patches.csv")
    rows = _read_csv(tmp_path / "patches.csv")
    assert rows[0] == PATCHES_HEADER
    assert len(rows) == 1 + 6

    gmap = _random_map(2, 3, 4)
    write_gamma_map_csv(gmap, tmp_path / "gamma.csv")
    rows = _read_csv(tmp_path / "gamma.csv")
    assert rows[0] == GAMMA_MAP_HEADER
    assert float(rows[1][4]) == pytest.approx(abs(gmap.values[0, 0]))

    pattern = pattern_cut(_uniform_map(8, 8), _wave(), 0.0, 101)
    write_pattern_csv(pattern, tmp_path / "cut.csv")
    rows = _read_csv(tmp_path / "cut.csv")
    assert rows[0] == PATTERN_HEADER
    assert len(rows) == 102
    db = [float(r[-1]) for r in rows[1:]]
    assert max(db) == 0.0
    assert min(db) >= -100.0


def test_zero_pattern_is_at_floor():
    pattern = pattern_cut(_uniform_map(3, 3, 0.0), _wave(), 0.0, 11)
    np.testing.assert_array_equal(pattern.db_normalized(), -100.0)
    assert peak_metrics(pattern).sidelobe_level_db == -math.inf
