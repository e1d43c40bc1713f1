import numpy as np

from services.validation_service import validation_service


def test_breit_rabi_rows_pass(bundled_config):
    rows = validation_service.breit_rabi(bundled_config)
    assert [row['check'] for row in rows] == ['breit_rabi_223Fr', 'breit_rabi_107Ag']
    assert all(row['passed'] for row in rows)


def test_channel_counts_match_brute_force(bundled_config):
    rows = {row['check']: row for row in validation_service.channel_counts(bundled_config)}
    assert rows['channel_count_l0']['value'] == 8
    assert rows['channel_count_l2']['value'] == 30
    assert all(row['passed'] for row in rows.values())


def test_projector_algebra(bundled_config):
    (row,) = validation_service.projector_algebra(bundled_config)
    assert row['passed']
    assert row['detail'] == '38 channels'


def test_barycenter_roundtrip(bundled_config):
    from services.potential_service import potential_service

    va = lambda R: -1e-3 * np.exp(-(R - 9.0) ** 2 / 4.0)
    coupling = lambda R: 2e-5 * np.exp(-R / 10.0)
    zero_minus, one = potential_service.triplet_components(va, coupling)
    curves = {'a': va, '1(0-)': zero_minus, '1(1)': one}
    (row,) = validation_service.barycenter(bundled_config, curves)
    assert row['passed']
