# test_pipeline.py
import copy
import math

import numpy as np
import pytest
from scipy.constants import c as C0

from atoms import CellSpec, SyntheticAtom, SyntheticAtomParams
from config import ConfigError
from fields import (
    EmsLayout,
    far_field_at,
    field_magnitude,
    gamma_map,
    pattern_cut,
    peak_metrics,
)
from pipeline import (
    DesignConfig,
    compile_luts,
    build_twin,
    default_document,
    evaluate_layout,
    oracle_layouts,
    phase_conjugation_design,
    required_phase_deg,
    synthesize,
    warm_start_vector,
    wrap_phase_deg,
)
from scenarios import PRESETS, preset
from surrogate import GammaLUT
from wavegeom import UV, Direction, PlaneWaveSpec, Polarization, to_direction_cosines

CELL = CellSpec.default()
BOUNDS = CELL.default_bounds()
CUT_STEP = 2.0 / 720


def _merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def _document(**sections):
    doc = default_document()
    _merge(doc, copy.deepcopy(PRESETS["tc1"]))
    _merge(doc, {"twin": {"n_train": 80, "lut_resolution": 64}, "threads": 1})
    return _merge(doc, sections)


def _config(**sections):
    return DesignConfig.from_dict(_document(**sections))


def _synthetic_lut(theta_inc=0.0, resolution=128):
    atom = SyntheticAtom(SyntheticAtomParams.for_cell(CELL, BOUNDS))
    nodes = np.linspace(BOUNDS.lo, BOUNDS.hi, resolution)
    d1, d2 = np.meshgrid(nodes, nodes, indexing="ij")
    values = {pol: atom.evaluate(d1, d2, theta_inc, pol) for pol in Polarization}
    return GammaLUT(theta_inc, BOUNDS.lo, BOUNDS.hi, resolution, values)


def _wave(pol, theta_inc):
    return PlaneWaveSpec(pol, Direction(theta_inc), 1.0, CELL.frequency)


def test_default_config_from_preset():
    config = _config()
    assert (config.P, config.Q) == (20, 20)
    assert config.targets.te.reflection.theta == 30.0
    assert config.targets.tm.reflection.theta == -40.0
    assert config.incidence_angles == [0.0]
    assert config.swarm.swarm_size == 100
    assert config.bounds == BOUNDS


def test_config_echo_roundtrip():
    config = _config(pso={"seed": 7, "iterations": 12})
    doc = config.to_dict()
    assert doc["pso"]["seed"] == 7
    assert DesignConfig.from_dict(doc).to_dict() == doc


@pytest.mark.parametrize(
    "section,match",
    [
        ({"layout": {"P": None}}, "layout.P"),
        ({"layout": {"Q": 0}}, "layout.Q"),
        ({"targets": {"TE": {"alpha": -1}}}, "targets.TE.alpha"),
        ({"targets": {"TM": {"theta_deg": 95.0}}}, "targets.TM.theta_deg"),
        ({"illumination": {"TE": {"theta_deg": 90.0}}}, "illumination.TE.theta_deg"),
        ({"targets": {"TE": {"alpha": 0}, "TM": {"alpha": 0}}}, "alpha"),
        ({"twin": {"source": "table"}}, "table_path"),
        ({"twin": {"source": "hfss"}}, "twin.source"),
        ({"pso": {"swarm_size": "many"}}, "pso.swarm_size"),
        ({"pso": {"iterations": 0}}, "iterations"),
        ({"pso": {"warm_start": "yes"}}, "pso.warm_start"),
        ({"atoms": {"bounds_hi_fraction": 1.2}}, "bounds"),
        ({"threads": 0}, "threads"),
    ],
)
def test_config_validation(section, match):
    with pytest.raises(ConfigError, match=match):
        _config(**section)


def test_unweighted_target_needs_no_direction():
    config = _config(targets={"TM": {"alpha": 0, "theta_deg": None}})
    assert config.targets.active() == [Polarization.TE]


def test_presets():
    assert set(PRESETS) == {"tc1", "tc1-oblique", "tc2-30", "tc2-40", "tc3"}
    tc3 = DesignConfig.from_dict(_merge(default_document(), preset("tc3")))
    assert (tc3.P, tc3.Q) == (40, 40)
    assert tc3.incidence_angles == [-30.0, 40.0]
    with pytest.raises(ConfigError):
        preset("tc9")


def test_compile_luts_shares_angles():
    config = _config()
    twin = build_twin(config)
    luts = compile_luts(twin, config)
    assert luts[Polarization.TE] is luts[Polarization.TM]

    separated = _config(illumination={"TM": {"theta_deg": 10.0}}, twin={"n_train": 40})
    luts = compile_luts(build_twin(separated), separated)
    assert luts[Polarization.TE].theta_inc == 0.0
    assert luts[Polarization.TM].theta_inc == 10.0


def test_wrap_phase():
    np.testing.assert_allclose(
        wrap_phase_deg([180.0, -180.0, 190.0, -190.0, 0.0, 540.0]),
        [180.0, 180.0, -170.0, 170.0, 0.0, 180.0],
    )


def test_required_phase_step_between_cells():
    wave = _wave("TE", -20.0)
    target = Direction(35.0)
    phase = required_phase_deg(target, wave, 10, 4, CELL)
    u_r = to_direction_cosines(target).u
    u_i = to_direction_cosines(wave.incidence).u
    step = -math.degrees(wave.wavenumber * (u_r + u_i) * CELL.pitch_x)
    np.testing.assert_allclose(
        wrap_phase_deg(np.diff(phase, axis=0)), wrap_phase_deg(np.full((9, 4), step)), atol=1e-9
    )
    # no steering along y for a phi = 0 target
    np.testing.assert_allclose(wrap_phase_deg(np.diff(phase, axis=1)), 0.0, atol=1e-9)


def test_specular_oracle_is_uniform():
    wave = _wave("TM", 25.0)
    layout = phase_conjugation_design(Direction(-25.0), wave, 6, 6, CELL, _synthetic_lut(25.0))
    assert np.all(layout.descriptors == layout.descriptors[0, 0])
    assert np.all(layout.descriptors[..., 1] == BOUNDS.mid)


def test_oracle_steers_to_target():
    lut = _synthetic_lut()
    wave = _wave("TE", 0.0)
    layout = phase_conjugation_design(Direction(30.0), wave, 20, 20, CELL, lut)
    assert np.all(layout.descriptors[..., 0] == BOUNDS.mid)
    metrics = peak_metrics(pattern_cut(gamma_map(layout, lut, "TE"), wave))
    assert metrics.uv_peak.u == pytest.approx(0.5, abs=CUT_STEP)


def test_oracle_resolves_half_turn_phases_alike():
    wave = _wave("TE", 0.0)
    required = required_phase_deg(Direction(30.0), wave, 20, 20, CELL)
    half_turn = np.isclose(np.abs(required), 180.0, atol=1e-6)
    assert half_turn.any()
    layout = phase_conjugation_design(Direction(30.0), wave, 20, 20, CELL, _synthetic_lut())
    chosen = layout.descriptors[..., 1][half_turn]
    assert np.all(chosen == chosen[0])


def _hand_unit_current(wave):
    # z x (eta z x j_e + j_m) with eta j_e = z x (k_refl x E), j_m = -z x E, for Gamma = 1
    theta, phi = math.radians(wave.incidence.theta), math.radians(wave.incidence.phi)
    k_inc = -np.array(
        [math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)]
    )
    e = (-1.0 if theta < 0 else 1.0) * np.array([-math.sin(phi), math.cos(phi), 0.0])
    if Polarization(wave.polarization) is Polarization.TM:
        e = np.cross(k_inc, e)
    e = wave.amplitude * e
    k_refl = k_inc * np.array([1.0, 1.0, -1.0])
    z = np.array([0.0, 0.0, 1.0])
    eta_j_e = np.cross(z, np.cross(k_refl, e))
    j_m = -np.cross(z, e)
    return np.cross(z, np.cross(z, eta_j_e) + j_m)


def _hand_cut(row_sums, wave, s):
    """|E| along the phi = 0 cut for an aperture whose rows sum to row_sums (phi_inc = 0)"""
    k0 = 2 * math.pi * wave.frequency / C0
    x = (np.arange(row_sums.size) - (row_sums.size - 1) / 2) * CELL.pitch_x
    a = s + math.sin(math.radians(wave.incidence.theta))
    ix = CELL.pitch_x * np.sinc(k0 * a * CELL.pitch_x / (2 * math.pi))[:, None] * np.exp(
        1j * k0 * a[:, None] * x[None, :]
    )
    total = CELL.pitch_y * (ix @ row_sums)
    return k0 / (4 * math.pi) * np.linalg.norm(_hand_unit_current(wave)) * np.abs(total)


def _coherent_limit(values, wave, u_r):
    k0 = 2 * math.pi * wave.frequency / C0
    a = u_r + math.sin(math.radians(wave.incidence.theta))
    cell = CELL.pitch_x * CELL.pitch_y * abs(np.sinc(k0 * a * CELL.pitch_x / (2 * math.pi)))
    return k0 / (4 * math.pi) * np.linalg.norm(_hand_unit_current(wave)) * cell * np.sum(np.abs(values))


def test_oracle_reaches_coherent_sum():
    rng = np.random.default_rng(17)
    s = np.linspace(-1.0, 1.0, 721)
    N = 30
    for k in range(4):
        theta_inc, theta_refl = (float(t) for t in np.round(rng.uniform(-50, 50, 2), 1))
        pol = Polarization.TE if k % 2 == 0 else Polarization.TM
        wave = _wave(pol, theta_inc)
        lut = _synthetic_lut(theta_inc)
        layout = phase_conjugation_design(Direction(theta_refl), wave, N, N, CELL, lut)
        gmap = gamma_map(layout, lut, pol)
        pattern = pattern_cut(gmap, wave)

        hand = _hand_cut(gmap.values.sum(axis=1), wave, s)
        np.testing.assert_allclose(pattern.magnitude, hand, rtol=0, atol=1e-9 * hand.max())

        # reference: unit-magnitude ramp with the exact steering phase
        u_r = math.sin(math.radians(theta_refl))
        u_i = math.sin(math.radians(theta_inc))
        x = (np.arange(N) - (N - 1) / 2) * CELL.pitch_x
        k0 = 2 * math.pi * wave.frequency / C0
        ideal = _hand_cut(N * np.exp(-1j * k0 * (u_r + u_i) * x), wave, s)
        ideal_peak = s[np.argmax(ideal)]
        assert abs(ideal_peak - u_r) <= 0.01
        assert peak_metrics(pattern).uv_peak.u == pytest.approx(ideal_peak, abs=CUT_STEP)

        achieved = float(field_magnitude(far_field_at(gmap, wave, UV(u_r, 0.0))))
        assert 20 * math.log10(achieved / _coherent_limit(gmap.values, wave, u_r)) > -1.5


def test_warm_start_vector_mixes_oracles():
    config = _config(layout={"P": 4, "Q": 3})
    lut = _synthetic_lut()
    oracles = oracle_layouts(config, {Polarization.TE: lut, Polarization.TM: lut})
    vec = warm_start_vector(oracles)
    mixed = EmsLayout.from_vector(vec, 4, 3, CELL, BOUNDS)
    np.testing.assert_array_equal(mixed.descriptors[..., 0], oracles[Polarization.TM].descriptors[..., 0])
    np.testing.assert_array_equal(mixed.descriptors[..., 1], oracles[Polarization.TE].descriptors[..., 1])


def test_oracle_report_peaks_at_design_target():
    config = _config()
    lut = _synthetic_lut()
    luts = {Polarization.TE: lut, Polarization.TM: lut}
    oracles = oracle_layouts(config, luts)
    for pol, expected_u in [(Polarization.TE, 0.5), (Polarization.TM, -0.6428)]:
        report = evaluate_layout(oracles[pol], config.targets, luts)
        assert report.polarizations[pol].cut_metrics.uv_peak.u == pytest.approx(
            expected_u, abs=CUT_STEP
        )
        assert math.isfinite(report.cost)


def test_zero_amplitude_illumination():
    config = _config(
        layout={"P": 3, "Q": 3},
        illumination={"TE": {"amplitude_re": 0.0}, "TM": {"amplitude_re": 0.0}},
    )
    lut = _synthetic_lut(resolution=32)
    luts = {Polarization.TE: lut, Polarization.TM: lut}
    report = evaluate_layout(EmsLayout.uniform(3, 3, CELL, BOUNDS), config.targets, luts, 21, 8, 8)
    for rep in report.polarizations.values():
        np.testing.assert_array_equal(rep.cut.magnitude, 0.0)
        np.testing.assert_array_equal(rep.grid.magnitude, 0.0)
        assert rep.cut_metrics.sidelobe_level_db == -math.inf
    assert report.cost == math.inf


def test_report_is_reproducible():
    config = _config(layout={"P": 5, "Q": 5})
    lut = _synthetic_lut(resolution=64)
    luts = {Polarization.TE: lut, Polarization.TM: lut}
    layout = EmsLayout(np.random.default_rng(3).uniform(BOUNDS.lo, BOUNDS.hi, (5, 5, 2)), CELL, BOUNDS)
    a = evaluate_layout(layout, config.targets, luts, 101, 12, 12).to_dict()
    b = evaluate_layout(layout, config.targets, luts, 101, 12, 12).to_dict()
    assert a == b


def _small_run(**sections):
    base = {
        "layout": {"P": 4, "Q": 4},
        "twin": {"n_train": 40, "lut_resolution": 32},
        "pso": {"swarm_size": 8, "iterations": 25},
        "patterns": {"cut_samples": 201, "grid_u": 10, "grid_v": 10},
    }
    return synthesize(_config(**_merge(base, sections)))


def test_single_cell_synthesis():
    result = _small_run(layout={"P": 1, "Q": 1})
    assert result.layout.descriptors.shape == (1, 1, 2)
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))
    assert math.isfinite(result.cost)
    assert set(result.stage_runtimes_s) == {"twin", "lut", "optimization", "evaluation"}


def test_synthesis_result_is_recomputable():
    result = _small_run()
    again = evaluate_layout(
        result.layout, result.config.targets, result.luts, 201, 10, 10
    )
    for pol in Polarization:
        stored = result.report.polarizations[pol].cut_metrics
        fresh = again.polarizations[pol].cut_metrics
        assert fresh.uv_peak == stored.uv_peak
        assert fresh.magnitude_peak == pytest.approx(stored.magnitude_peak, abs=1e-9)
    assert result.report.cost == pytest.approx(result.cost, rel=1e-9)
    doc = result.to_dict()
    assert doc["seeds"] == {"twin": 2024, "pso": 2025}
    assert len(doc["cost_history"]) == result.optimization.iterations


def test_synthesis_determinism_across_threads():
    a = _small_run(threads=1)
    b = _small_run(threads=3)
    np.testing.assert_array_equal(a.layout.descriptors, b.layout.descriptors)
    assert a.history == b.history


def test_warm_start_never_loses_to_oracle_compromise():
    result = _small_run(pso={"warm_start": True, "iterations": 5})
    assert result.optimization.initial_cost >= result.cost
    assert result.config.warm_start


def _budget_config(preset_name, **sections):
    doc = _merge(default_document(), preset(preset_name))
    _merge(doc, {"pso": {"swarm_size": 60, "iterations": 2000}, "threads": 1})
    return DesignConfig.from_dict(_merge(doc, sections))


def _assert_peaks(result, expected):
    grid_step = 2.0 / (result.config.grid_u - 1)
    for pol, u in expected.items():
        rep = result.report.polarizations[pol]
        assert abs(rep.cut_metrics.uv_peak.u - u) <= 0.02
        assert abs(rep.grid_metrics.uv_peak.u - u) <= grid_step
        assert abs(rep.grid_metrics.uv_peak.v) <= grid_step


@pytest.mark.slow
def test_colocated_normal_incidence_design():
    config = _budget_config("tc1")
    result = synthesize(config)
    _assert_peaks(result, {Polarization.TE: 0.5, Polarization.TM: -0.6428})
    assert result.runtime_s <= 300.0
    for pol in Polarization:
        oracle = result.oracle_target_fields[pol]
        achieved = result.report.polarizations[pol].target_field
        assert 20 * math.log10(achieved / oracle) >= -6.0

    threaded = synthesize(config, threads=4)
    np.testing.assert_array_equal(threaded.layout.descriptors, result.layout.descriptors)
    assert threaded.history == result.history


@pytest.mark.slow
def test_colocated_oblique_incidence_design():
    result = synthesize(_budget_config("tc1-oblique"))
    _assert_peaks(result, {Polarization.TE: 0.5, Polarization.TM: -0.6428})


@pytest.mark.slow
def test_separated_feeds_design():
    result = synthesize(_budget_config("tc3"))
    _assert_peaks(
        result, {Polarization.TE: math.sin(math.radians(20)), Polarization.TM: -math.sin(math.radians(20))}
    )


@pytest.mark.slow
def test_runtime_grows_linearly_with_aperture():
    budget = {"pso": {"swarm_size": 20, "iterations": 300}}
    small = synthesize(_budget_config("tc1", **budget))
    normal = {"TE": {"theta_deg": 0.0}, "TM": {"theta_deg": 0.0}}
    large = synthesize(_budget_config("tc2-40", illumination=normal, **budget))
    for result in (small, large):
        assert sum(result.stage_runtimes_s.values()) <= result.runtime_s
    assert large.runtime_s <= 6.0 * small.runtime_s
