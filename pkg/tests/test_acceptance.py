"""Checks on the full bundled 223Fr107Ag dataset; run with --runslow."""

import numpy as np
import pytest

from services import units
from services.bound_state_service import bound_state_service
from services.config_service import config_service
from services.potential_service import potential_service
from services.scattering_service import scattering_service
from services.validation_service import validation_service

pytestmark = pytest.mark.slow


def test_barycenter_is_tuned_to_the_configured_length(bundled_config, bundled_curves, reduced_mass):
    solver = bundled_config.solver
    length, count = potential_service.zero_energy_properties(
        bundled_curves['a'], reduced_mass, solver.zero_energy_step, solver.zero_energy_match)
    assert length == pytest.approx(80.0, abs=1e-3)
    assert count > 0


def test_last_levels_fall_in_their_gao_bins(bundled_config, bundled_curves):
    rows = validation_service.gao_bins(bundled_config, bundled_curves)
    assert len(rows) == 6
    assert all(row['passed'] for row in rows), [row['check'] for row in rows if not row['passed']]


def test_ground_curves_do_not_cross(bundled_config, bundled_curves):
    singlet = bundled_curves[config_service.label_of(bundled_config, 'singlet')]
    triplet = bundled_curves[config_service.label_of(bundled_config, 'barycenter')]
    r = np.linspace(3.0, bundled_config.r_disp, 4000, endpoint=False)
    r = r[np.argmax(np.asarray(singlet(r)) < 0.0):]
    assert not potential_service.curves_cross(singlet, triplet, r)


def test_triplet_components_keep_their_splitting(bundled_config, bundled_curves):
    r = np.linspace(5.0, 40.0, 701)
    coupling = config_service.spin_coupling(bundled_config)
    split = np.asarray(bundled_curves['1(1)'](r)) - np.asarray(bundled_curves['1(0-)'](r))
    np.testing.assert_allclose(split, 2.0 * np.asarray(coupling(r)), rtol=1e-10, atol=1e-18)


def test_s_matrix_is_unitary_over_the_scan_range(bundled_config, bundled_curves):
    system = config_service.coupled_system(bundled_config, bundled_curves)
    (row,) = validation_service.unitarity(bundled_config, system)
    assert row['passed'], row['value']


def test_harmonic_frequency_of_the_singlet(bundled_config, reduced_mass):
    k = bundled_config.potentials['X'].constants.spring_k
    omega = units.hartree_to_cm1(np.sqrt(k / reduced_mass))
    assert omega == pytest.approx(85.5, abs=0.1)


@pytest.fixture(scope='module')
def resonance_survey(bundled_config, bundled_curves):
    fields = bundled_config.scan.fields
    tolerance = bundled_config.solver.refine_tolerance
    control_system = config_service.coupled_system(bundled_config, bundled_curves, (0,))
    control_scan = scattering_service.scan_field(control_system, fields)
    control = scattering_service.find_resonances(
        control_scan, control_system, scattering_service.scan_cap(control_system, fields), 's',
        refine_tolerance=tolerance)
    system = config_service.coupled_system(bundled_config, bundled_curves, (0, 2))
    full_scan = scattering_service.scan_field(system, fields)
    found = scattering_service.find_resonances(
        full_scan, system, scattering_service.scan_cap(system, fields), refine_tolerance=tolerance)
    return {
        'system': system,
        'fields': fields,
        'scans': (control_scan, full_scan),
        'control': control,
        'records': scattering_service.classify_partial_waves(found, control),
    }


def test_resonance_densities_fall_in_their_expected_ranges(bundled_config, resonance_survey):
    scan = bundled_config.scan
    density = scattering_service.resonance_density(resonance_survey['records'], scan.b_min,
                                                   scan.b_max)
    assert 0.0025 <= density['s']['density_per_G'] <= 0.01, density['s']
    assert 0.01 <= density['d']['density_per_G'] <= 0.04, density['d']


def test_every_s_wave_resonance_survives_the_d_wave_channels(resonance_survey):
    full = np.array([r.B0 for r in resonance_survey['records']])
    for record in resonance_survey['control']:
        assert np.min(np.abs(full - record.B0)) < 0.5, record.B0


def test_scan_rows_stay_unitary(resonance_survey):
    for scan in resonance_survey['scans']:
        errors = [row['unitarity_error'] for row in scan.rows()]
        assert errors and max(errors) < 1e-8


def test_every_pole_has_a_threshold_crossing(resonance_survey):
    crossings = bound_state_service.zero_energy_crossings(resonance_survey['system'],
                                                          resonance_survey['fields'])
    _, poles, unmatched = scattering_service.pair_poles_with_crossings(
        resonance_survey['records'], [c['B_G'] for c in crossings], 0.5)
    assert poles == [] and unmatched == []
