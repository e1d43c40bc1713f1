import numpy as np
import pytest

from services import units
from services.bound_state_service import bound_state_service
from services.errors import InsufficientSpectrumError, InvalidParameterError
from services.rovib_service import rovib_service


def ghz(values):
    return [units.ghz_to_hartree(v) for v in values]


def test_gao_bins_containment():
    rows = bound_state_service.check_gao_bins({0: ghz([-0.1, -1.0, -3.0]),
                                               2: ghz([-0.3, -1.0, -2.0])})
    inside = {(row['l'], row['v']): row['inside'] for row in rows}
    assert inside == {(0, -1): True, (0, -2): True, (0, -3): True,
                      (2, -1): True, (2, -2): True, (2, -3): False}
    assert rows[0]['E_GHz'] == pytest.approx(-0.1)


def test_level_at_threshold_is_outside_the_top_bin():
    rows = bound_state_service.check_gao_bins({0: ghz([0.0, -1.0, -3.0])})
    assert rows[0]['inside'] is False


def test_gao_bins_need_three_levels():
    with pytest.raises(InsufficientSpectrumError):
        bound_state_service.check_gao_bins({0: ghz([-0.1, -1.0])})


def test_window_must_lie_below_threshold(toy_system):
    with pytest.raises(InvalidParameterError):
        bound_state_service.bound_states(toy_system, (-1e-6, 1e-9), 0.0)
    with pytest.raises(InvalidParameterError):
        bound_state_service.bound_states(toy_system, (-1e-7, -1e-6), 0.0)


def test_stretched_levels_match_the_single_channel_spectrum(toy_system):
    reference = rovib_service.threshold_levels(toy_system.triplet, 0, 2, toy_system.reduced_mass,
                                               step=5e-3)
    e1, e2 = reference[0].energy, reference[1].energy
    levels = bound_state_service.bound_states(toy_system, (1.2 * e2, 0.5 * e1), 0.0)
    assert len(levels) == 2
    energies = sorted((level.energy for level in levels), reverse=True)
    assert energies[0] == pytest.approx(e1, rel=1e-3)
    assert energies[1] == pytest.approx(e2, rel=1e-3)
    for level in levels:
        np.testing.assert_allclose(level.channel_weights, [1.0])
        assert level.electronic_weights['singlet'] == pytest.approx(0.0, abs=1e-8)
        # pure s-wave triplet: the isotropic average of the two components
        assert level.electronic_weights['0-'] == pytest.approx(1.0 / 3.0, rel=1e-5)
        assert level.electronic_weights['1'] == pytest.approx(2.0 / 3.0, rel=1e-5)
        # parallel to the threshold
        assert level.to_dict()['dEdB_MHz_per_G'] == pytest.approx(0.0, abs=1e-4)


def test_levels_without_weights(toy_system):
    reference = rovib_service.threshold_levels(toy_system.triplet, 0, 1, toy_system.reduced_mass,
                                               step=5e-3)
    e1 = reference[0].energy
    levels = bound_state_service.bound_states(toy_system, (2.0 * e1, 0.5 * e1), 50.0,
                                              with_weights=False)
    assert len(levels) == 1
    assert levels[0].field == 50.0
    assert levels[0].channel_weights.size == 0
    assert np.isnan(levels[0].magnetic_moment)


def test_no_threshold_crossing_for_the_stretched_state(toy_system):
    counts = bound_state_service.threshold_counts(toy_system, [0.0, 50.0, 100.0])
    assert len(set(counts.tolist())) == 1
    assert bound_state_service.zero_energy_crossings(toy_system, [0.0, 50.0, 100.0]) == []
