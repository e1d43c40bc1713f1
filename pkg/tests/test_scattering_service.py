import logging
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import spherical_jn, spherical_yn

from models.physics import FieldScan, RadialGrid, ResonanceRecord, ScatteringResult
from services import units
from services.channel_service import channel_service
from services.errors import ClosedSystemError, InvalidParameterError
from services.scattering_service import build_sectors, scattering_service, sector_points


@pytest.mark.parametrize('ell', [0, 2])
def test_hard_sphere_phase_shift(ell):
    k, radius = 0.2, 5.0
    grid = RadialGrid(r_min=radius, r_max=50.0, step=0.01, r_expand=50.0)
    delta = scattering_service.single_channel_phase(lambda R: 0.0 * R, 1.0, k ** 2 / 2.0, grid,
                                                    ell=ell)
    expected = np.arctan(spherical_jn(ell, k * radius) / spherical_yn(ell, k * radius))
    assert delta == pytest.approx(expected, abs=1e-7)


def test_sectors_cover_the_grid():
    grid = RadialGrid(r_min=4.0, r_max=200.0, step=0.01, r_expand=20.0, growth=1.05, max_step=0.5)
    sectors = build_sectors(grid)
    points = sector_points(sectors)
    assert points[0] == pytest.approx(4.0)
    assert points[-1] >= 200.0 - 1e-12
    assert sectors[0].steps % 2 == 0
    assert max(s.step for s in sectors) <= 0.5
    capped = build_sectors(grid, step_cap=0.1)
    assert max(s.step for s in capped) <= 0.1


def test_stretched_state_matches_the_single_channel_route(toy_system):
    result = scattering_service.solve_fields(toy_system, [100.0])[0]
    assert result.n_open == 1
    delta = scattering_service.single_channel_phase(toy_system.triplet, toy_system.reduced_mass,
                                                    toy_system.collision_energy, toy_system.grid)
    k = np.sqrt(2.0 * toy_system.reduced_mass * toy_system.collision_energy)
    assert result.scattering_length.real == pytest.approx(-np.tan(delta) / k, rel=1e-8)
    assert result.scattering_length.imag == 0.0
    assert result.unitarity_error < 1e-12


def test_coupling_matrix_is_symmetric_with_thresholds_on_the_diagonal(toy_system):
    system = replace(toy_system, mtot=2.0)
    basis = channel_service.enumerate_channels(system.fr, system.ag, 2.0, (0,),
                                               units.gauss_to_au(100.0))
    w = scattering_service.assemble_coupling(basis, system, 500.0)
    np.testing.assert_allclose(w, w.T, atol=1e-18)
    # both curves have died away at 500 a0
    np.testing.assert_allclose(np.diag(w), basis.thresholds, rtol=1e-12)
    with pytest.raises(InvalidParameterError):
        scattering_service.assemble_coupling(basis, system, 0.0)


def test_s_matrix_is_unitary_with_every_channel_open(toy_system):
    system = replace(toy_system, mtot=2.0)
    basis = channel_service.enumerate_channels(system.fr, system.ag, 2.0, (0,),
                                               units.gauss_to_au(100.0))
    assert basis.size == 4
    energy = float(np.max(basis.thresholds)) + units.microkelvin_to_hartree(10.0)
    stack = scattering_service.coupling_stack([basis], system)
    sectors = build_sectors(system.grid)
    y = scattering_service.propagate(stack, [energy], sectors)[0]
    result = scattering_service.scattering_result(basis, y, energy, 100.0, sector_points(sectors)[-1])
    assert result.n_open == 4
    assert result.unitarity_error < 1e-8
    assert result.symmetry_error < 1e-8


def test_no_open_channel(toy_system):
    basis = channel_service.enumerate_channels(toy_system.fr, toy_system.ag, 3.0, (0,), 0.0)
    with pytest.raises(ClosedSystemError):
        scattering_service.k_matrix(np.eye(1), basis.ells, basis.thresholds,
                                    basis.thresholds[0] - 1e-9, basis.reduced_mass, 100.0)


def test_step_cap_follows_the_deepest_closed_channel(toy_system):
    basis = channel_service.enumerate_channels(toy_system.fr, toy_system.ag, 3.0, (0,), 0.0)
    assert scattering_service.step_cap([basis], [basis.thresholds[0] + 1e-12]) == np.inf
    cap = scattering_service.step_cap([basis], [basis.thresholds[0] - 1e-6])
    assert cap == pytest.approx(1.0 / np.sqrt(2.0 * basis.reduced_mass * 1e-6))


def test_field_grid_must_increase(toy_system):
    with pytest.raises(InvalidParameterError):
        scattering_service.scan_field(toy_system, [10.0, 5.0])


def synthetic_scan(b0, width, a_bg, fields):
    lengths = scattering_service.resonance_model(fields, b0, width, a_bg)
    results = tuple(ScatteringResult(field=b, energy=0.0, s_matrix=np.eye(1),
                                     scattering_length=complex(a), n_open=1)
                    for b, a in zip(fields, lengths))
    return FieldScan(fields=fields, results=results, ell_values=(0,))


def test_resonance_parameters_are_recovered_from_a_scan():
    scan = synthetic_scan(50.1, 2.0, -100.0, np.linspace(0.0, 100.0, 401))
    records = scattering_service.find_resonances(scan)
    assert len(records) == 1
    record = records[0]
    assert record.fitted
    assert record.B0 == pytest.approx(50.1, abs=1e-6)
    assert record.width == pytest.approx(2.0, rel=1e-6)
    assert record.a_bg == pytest.approx(-100.0, rel=1e-6)
    assert record.residual < 1e-8


def test_failed_points_are_skipped():
    fields = np.linspace(0.0, 100.0, 401)
    scan = synthetic_scan(50.1, 2.0, -100.0, fields)
    results = list(scan.results)
    results[10] = None
    scan = FieldScan(fields=fields, results=tuple(results), ell_values=(0,),
                     failures=((float(fields[10]), 'boom'),))
    assert np.isnan(scan.scattering_lengths()[10])
    records = scattering_service.find_resonances(scan)
    assert len(records) == 1
    assert records[0].B0 == pytest.approx(50.1, abs=1e-6)


def test_flat_scattering_length_has_no_resonance():
    fields = np.linspace(0.0, 10.0, 41)
    results = tuple(ScatteringResult(field=b, energy=0.0, s_matrix=np.eye(1),
                                     scattering_length=complex(80.0), n_open=1) for b in fields)
    assert scattering_service.find_resonances(FieldScan(fields, results, (0,))) == []


def test_partial_wave_classification():
    records = [ResonanceRecord(B0=100.0, width=1.0, a_bg=50.0),
               ResonanceRecord(B0=300.0, width=0.1, a_bg=50.0)]
    control = [ResonanceRecord(B0=100.2, width=1.0, a_bg=50.0)]
    classified = scattering_service.classify_partial_waves(records, control)
    assert [r.partial_wave for r in classified] == ['s', 'd']
    assert [r.partial_wave for r in scattering_service.classify_partial_waves(records, [])] == ['d', 'd']


def test_resonance_density():
    records = [ResonanceRecord(B0=b, width=1.0, a_bg=1.0, partial_wave='s') for b in (100.0, 400.0)]
    records.append(ResonanceRecord(B0=700.0, width=1.0, a_bg=1.0, partial_wave='d'))
    report = scattering_service.resonance_density(records, 0.0, 1000.0)
    assert report['s']['count'] == 2
    assert report['s']['density_per_G'] == pytest.approx(2e-3)
    assert report['s']['mean_spacing_G'] == pytest.approx(300.0)
    assert report['d']['count'] == 1
    assert np.isnan(report['d']['mean_spacing_G'])


def test_poles_pair_one_to_one_with_crossings():
    records = [ResonanceRecord(B0=b, width=1.0, a_bg=1.0) for b in (100.0, 100.6, 500.0)]
    paired, poles, crossings = scattering_service.pair_poles_with_crossings(
        records, [100.5, 100.1, 900.0], tolerance=0.5)
    assert paired[0].bound_state_index == 1
    assert paired[1].bound_state_index == 0
    assert paired[2].bound_state_index is None
    assert poles == [2]
    assert crossings == [2]


def test_refine_tolerance_sets_the_bisection_depth(monkeypatch):
    fields = np.linspace(0.0, 100.0, 401)
    scan = synthetic_scan(50.1, 2.0, -100.0, fields)
    calls = []

    def lengths_at(system, bs, step_cap=np.inf):
        calls.append(len(bs))
        return scattering_service.resonance_model(np.asarray(bs), 50.1, 2.0, -100.0)

    monkeypatch.setattr(scattering_service, 'scattering_lengths_at', lengths_at)
    fine = scattering_service.find_resonances(scan, system=object(), refine_tolerance=1e-6)
    fine_calls = len(calls)
    del calls[:]
    coarse = scattering_service.find_resonances(scan, system=object(), refine_tolerance=1.0)
    # 0.25 G grid intervals halve to below 1e-6 G in 18 rounds
    assert fine_calls >= len(calls) + 15
    assert fine[0].B0 == pytest.approx(50.1, abs=1e-6)
    assert coarse[0].B0 == pytest.approx(50.1, abs=1e-6)


def test_scan_rows_carry_the_unitarity_error(toy_system, caplog):
    with caplog.at_level(logging.WARNING, logger='services.scattering_service'):
        scan = scattering_service.scan_field(toy_system, [0.0, 50.0, 100.0], n_jobs=1)
    rows = scan.rows()
    assert [row['B_G'] for row in rows] == [0.0, 50.0, 100.0]
    assert max(row['unitarity_error'] for row in rows) < 1e-8
    assert 'off unitarity' not in caplog.text


def test_unitarity_violations_are_logged(toy_system, caplog, monkeypatch):
    monkeypatch.setattr(scattering_service, 'unitarity_tolerance', 0.0)
    with caplog.at_level(logging.WARNING, logger='services.scattering_service'):
        scattering_service.scan_field(toy_system, [0.0, 50.0, 100.0], n_jobs=1)
    assert 'off unitarity at 3 field(s)' in caplog.text


def test_unlabelled_records_are_left_out_of_the_density():
    records = [ResonanceRecord(B0=100.0, width=1.0, a_bg=1.0, partial_wave=None)]
    report = scattering_service.resonance_density(records, 0.0, 1000.0)
    assert set(report) == {'s', 'd'}
    assert report['s']['count'] == 0
