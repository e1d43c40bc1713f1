import logging
from dataclasses import replace

import numpy as np
import pytest

from models.physics import (DispersionTail, SpectroscopicConstants, SpinSplittingFit,
                            SwitchingFunction)
from services import units
from services.errors import InvalidParameterError, StitchingWindowError
from services.potential_service import potential_service


@pytest.fixture
def x_constants():
    return SpectroscopicConstants(Re=6.164, De=units.cm1_to_hartree(12635.0),
                                  spring_k=units.cm1_to_hartree(4391.5),
                                  omega_e=units.cm1_to_hartree(85.54),
                                  Be=units.cm1_to_hartree(0.0219))


@pytest.fixture
def fit():
    return SpinSplittingFit(A1=units.cm1_to_hartree(2.35824), B1=1.01701, R1=8.0,
                            A2=units.cm1_to_hartree(0.022), B2=0.37, R2=14.0)


def second_derivative(curve, r, h=1e-4):
    return (curve(r + h) - 2.0 * curve(r) + curve(r - h)) / h ** 2


@pytest.mark.parametrize('betas', [(), (0.05, -0.02)])
def test_expanded_morse_pins_depth_and_curvature(x_constants, betas):
    curve = potential_service.build_short_range(x_constants, betas=betas)
    assert curve(x_constants.Re) == pytest.approx(-x_constants.De, rel=1e-14)
    assert second_derivative(curve, x_constants.Re) == pytest.approx(x_constants.spring_k, rel=1e-5)
    assert curve(200.0) == pytest.approx(0.0, abs=1e-12)


def test_inner_wall_parameter_leaves_the_minimum_alone(x_constants):
    curve = potential_service.build_short_range(x_constants).with_inner_wall(0.3)
    assert curve(x_constants.Re) == pytest.approx(-x_constants.De, rel=1e-14)
    assert second_derivative(curve, x_constants.Re) == pytest.approx(x_constants.spring_k, rel=1e-5)
    # outside Re the wall term vanishes
    plain = potential_service.build_short_range(x_constants)
    assert curve(9.0) == plain(9.0)
    assert curve(5.0) > plain(5.0)


@pytest.mark.parametrize('name', ['Re', 'De', 'spring_k'])
def test_non_positive_constants_are_rejected(x_constants, name):
    values = {'Re': x_constants.Re, 'De': x_constants.De, 'spring_k': x_constants.spring_k,
              'omega_e': 0.0, 'Be': 0.0}
    values[name] = 0.0
    with pytest.raises(InvalidParameterError, match=name):
        potential_service.build_short_range(SpectroscopicConstants(**values))


def test_switching_function_is_compact():
    switch = SwitchingFunction(center=16.5, width=11.0 / 12.0)
    w = switch.width
    assert switch(switch.center - 2.0 * w) < 0.01
    assert switch(switch.center + 2.0 * w) > 0.99
    assert switch(switch.center) == pytest.approx(0.5)
    r = np.array([switch.lower - 1.0, switch.lower, switch.upper, switch.upper + 1.0])
    np.testing.assert_array_equal(switch(r), [0.0, 0.0, 1.0, 1.0])
    assert np.all(np.diff(switch(np.linspace(switch.lower, switch.upper, 400))) >= 0.0)


def test_default_switch_sits_between_cut_and_dispersion_radius():
    switch = potential_service.default_switch(11.0, 22.0)
    assert switch.lower == pytest.approx(11.0)
    assert switch.upper == pytest.approx(22.0)


def test_stitched_curve_is_pure_dispersion_beyond_window(x_constants):
    tail = DispersionTail(C6=1116.0, C8=746685.0)
    curve = potential_service.stitch_potential(
        potential_service.build_short_range(x_constants), tail, r_cut=11.0, label='X')
    r = np.linspace(22.0, 80.0, 50)
    np.testing.assert_allclose(curve(r), tail(r), rtol=1e-15)
    short = np.linspace(4.0, 11.0, 50)
    np.testing.assert_allclose(curve(short), curve.short_range(short), rtol=1e-15)


def test_stitching_window_inside_the_cut_is_an_error(x_constants):
    short = potential_service.build_short_range(x_constants)
    with pytest.raises(StitchingWindowError):
        potential_service.stitch_potential(short, DispersionTail(C6=1116.0), r_cut=11.0,
                                           switch=SwitchingFunction(center=12.0, width=1.0))


@pytest.mark.parametrize('c6,c8', [(0.0, 0.0), (-1.0, 0.0), (1116.0, -1.0)])
def test_invalid_dispersion_coefficients(x_constants, c6, c8):
    short = potential_service.build_short_range(x_constants)
    with pytest.raises(InvalidParameterError):
        potential_service.stitch_potential(short, DispersionTail(C6=c6, C8=c8), r_cut=11.0)


def test_spin_orbit_fit_at_first_reference_radius(fit):
    expected = fit.A1 + fit.A2 * np.exp(-fit.B2 * (fit.R1 - fit.R2))
    assert potential_service.so_splitting(fit.R1, fit) == pytest.approx(expected, rel=1e-14)


def test_dipolar_coupling_formula():
    r = np.array([5.0, 10.0, 40.0])
    expected = -(units.ELECTRON_G_FACTOR / 2.0) ** 2 * units.FINE_STRUCTURE ** 2 / r ** 3
    np.testing.assert_allclose(potential_service.dipole_dipole_lambda(r), expected, rtol=1e-14)
    assert units.ELECTRON_G_FACTOR == pytest.approx(2.00231930436, rel=1e-10)


def test_lambda_total_is_half_the_fit_plus_dipolar(fit):
    r = np.linspace(5.0, 30.0, 11)
    total = potential_service.lambda_total(fit)
    np.testing.assert_allclose(total(r),
                               0.5 * fit(r) + potential_service.dipole_dipole_lambda(r), rtol=1e-14)
    without = potential_service.lambda_total(fit, include_dipolar=False)
    np.testing.assert_allclose(without(r), 0.5 * fit(r), rtol=1e-14)


def test_triplet_components_share_the_barycenter(x_constants, fit):
    va = potential_service.build_short_range(x_constants)
    coupling = potential_service.lambda_total(fit)
    zero_minus, one = potential_service.triplet_components(va, coupling)
    r = np.linspace(5.0, 25.0, 101)
    np.testing.assert_allclose((zero_minus(r) + 2.0 * one(r)) / 3.0, va(r), rtol=1e-12)
    np.testing.assert_allclose(one(r) - zero_minus(r), 2.0 * coupling(r), rtol=1e-10)


def test_barycenter_is_built_from_the_zero_minus_constants(x_constants, fit):
    tail = DispersionTail(C6=1116.0)
    va = potential_service.build_triplet_barycenter(x_constants, fit, tail, r_cut=11.0)
    component = potential_service.build_short_range(x_constants)
    r = np.linspace(5.0, 10.0, 21)
    np.testing.assert_allclose(va(r), component(r) + (4.0 / 3.0) * 0.5 * fit(r), rtol=1e-12)


def test_curves_cross(x_constants):
    lower = potential_service.build_short_range(x_constants)
    r = np.linspace(5.0, 30.0, 100)
    assert not potential_service.curves_cross(lower, lambda R: lower(R) + 1e-3, r)
    assert potential_service.curves_cross(lower, lambda R: lower(R) - 1e-3, r)


def test_summary_row_compares_harmonic_frequency(x_constants, reduced_mass):
    row = potential_service.summary_row('X', x_constants, reduced_mass)
    expected = units.hartree_to_cm1(np.sqrt(x_constants.spring_k / reduced_mass))
    assert row['omega_from_k_cm1'] == pytest.approx(expected, rel=1e-12)
    assert abs(row['omega_deviation']) < 0.01
    assert row['state'] == 'X'
    assert row['De_cm1'] == pytest.approx(12635.0)


def test_unknown_tuning_objective(x_constants, reduced_mass):
    curve = potential_service.build_short_range(x_constants)
    with pytest.raises(InvalidParameterError):
        potential_service.tune_inner_wall(curve, reduced_mass, 'phase', 0.0)


def test_barycenter_switch_follows_the_dispersion_radius(x_constants, fit):
    tail = DispersionTail(C6=1116.0)
    va = potential_service.build_triplet_barycenter(x_constants, fit, tail, r_cut=11.0, r_disp=26.0)
    assert va.switch.lower == pytest.approx(11.0)
    assert va.switch.upper == pytest.approx(26.0)
    r = np.array([26.0, 30.0])
    np.testing.assert_allclose(va(r), tail(r), rtol=1e-14)


def test_harmonic_frequency_is_checked_against_omega_e(x_constants, reduced_mass, caplog):
    with caplog.at_level(logging.WARNING, logger='services.potential_service'):
        potential_service.build_short_range(x_constants, reduced_mass)
    assert 'omega_e' not in caplog.text
    detuned = replace(x_constants, omega_e=1.2 * x_constants.omega_e)
    with caplog.at_level(logging.WARNING, logger='services.potential_service'):
        curve = potential_service.build_short_range(detuned, reduced_mass)
    assert 'omega_e' in caplog.text
    # the shape is still pinned by k alone
    assert curve.beta0 == pytest.approx(potential_service.build_short_range(x_constants).beta0)
