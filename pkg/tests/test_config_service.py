import json
import os
import shutil
from dataclasses import replace

import numpy as np
import pytest

from conftest import BUNDLED_CONFIG
from services import units
from services.config_service import config_service
from services.errors import ConfigValidationError
from services.potential_service import potential_service

DATASET = os.path.dirname(BUNDLED_CONFIG)


def copy_dataset(tmp_path):
    for name in os.listdir(DATASET):
        if name.endswith(('.toml', '.dat')):
            shutil.copy(os.path.join(DATASET, name), tmp_path / name)
    return tmp_path / 'frag.toml'


def edited(tmp_path, *replacements):
    path = copy_dataset(tmp_path)
    text = path.read_text(encoding='utf-8')
    for old, new in replacements:
        assert old in text
        text = text.replace(old, new)
    path.write_text(text, encoding='utf-8')
    return path


def test_bundled_config_parses(bundled_config):
    config = bundled_config
    assert config.fr.nuclear_spin == 1.5
    assert config.ag.nuclear_spin == 0.5
    assert config.fr.hyperfine_a == pytest.approx(units.mhz_to_hartree(7654.2))
    assert config.tail.C6 == 1116.0
    assert set(config.potentials) == {'X', 'a', '2(0+)', '3(0+)'}
    assert config_service.label_of(config, 'singlet') == 'X'
    assert config_service.label_of(config, 'barycenter') == 'a'
    assert config.potentials['a'].tune.target == 80.0
    assert config.potentials['X'].reference.De == pytest.approx(units.cm1_to_hartree(12700.0))
    assert len(config.dipoles) == 4
    assert config.dipole('3(0+)', 'X') is not None
    assert config.dipole('X', '3(0+)') is None
    assert config.scan.ell_values == (0, 2)
    assert len(config.scan.fields) == 6001
    assert config.grid.r_min == 3.8
    assert len(config.provenance) == 5


def test_every_violation_is_reported(tmp_path):
    path = edited(tmp_path, ('C6_Eh_a06 = 1116.0', 'C6_Eh_a06 = -1.0'),
                  ('Mtot = 0.0', 'Mtot = 0.5'))
    with pytest.raises(ConfigValidationError) as info:
        config_service.load_config(path)
    violations = info.value.violations
    assert any(v.startswith('dispersion.C6_Eh_a06') for v in violations)
    assert any(v.startswith('scan.Mtot') for v in violations)
    assert info.value.exit_code == 2


def test_unknown_keys_are_rejected(tmp_path):
    path = edited(tmp_path, ('[scan]\n', '[scan]\nB_typo_G = 3.0\n'))
    with pytest.raises(ConfigValidationError) as info:
        config_service.load_config(path)
    assert 'scan.B_typo_G: unknown key' in info.value.violations


def test_mixed_parity_partial_waves(tmp_path):
    path = edited(tmp_path, ('ell = [0, 2]', 'ell = [0, 1]'))
    with pytest.raises(ConfigValidationError) as info:
        config_service.load_config(path)
    assert any('mixed parity' in v for v in info.value.violations)


def test_missing_dipole_file(tmp_path):
    path = edited(tmp_path, ('file = "dipole_3_0p_X.dat"', 'file = "nowhere.dat"'))
    with pytest.raises(ConfigValidationError) as info:
        config_service.load_config(path)
    assert any(v.startswith('dipoles[0].file') for v in info.value.violations)


def test_missing_file():
    with pytest.raises(ConfigValidationError):
        config_service.load_config('/nonexistent/frag.toml')


def test_serialized_config_reloads_with_the_same_hash(bundled_config, tmp_path):
    path = config_service.serialize(bundled_config, tmp_path / 'frag.json')
    reloaded = config_service.load_config(path)
    assert config_service.config_hash(reloaded) == config_service.config_hash(bundled_config)
    assert reloaded.fr == bundled_config.fr
    assert reloaded.grid == bundled_config.grid


def test_hash_ignores_key_order(bundled_config, tmp_path):
    document = config_service.canonical(bundled_config)
    reordered = {key: document[key] for key in reversed(list(document))}
    path = tmp_path / 'reordered.json'
    path.write_text(json.dumps(reordered), encoding='utf-8')
    reloaded = config_service.load_config(path)
    assert config_service.config_hash(reloaded) == config_service.config_hash(bundled_config)


def test_hash_follows_the_dipole_contents(tmp_path, bundled_config):
    path = copy_dataset(tmp_path)
    with open(tmp_path / 'dipole_2_0p_X.dat', 'a', encoding='utf-8') as handle:
        handle.write('41.0 0.0\n')
    changed = config_service.load_config(path)
    assert config_service.config_hash(changed) != config_service.config_hash(bundled_config)


def test_coupled_system_carries_grid_and_scan(bundled_config):
    curves = {'X': lambda R: R, 'a': lambda R: R}
    system = config_service.coupled_system(bundled_config, curves, ell_values=(0,))
    assert system.ell_values == (0,)
    assert system.mtot == 0.0
    assert system.match_radius == 15.0
    assert system.bound_r_max == 3000.0
    assert system.energy_floor == pytest.approx(1e3 * units.HARTREE_PER_HZ)
    assert system.collision_energy == pytest.approx(units.microkelvin_to_hartree(1.0))


@pytest.fixture
def untuned(monkeypatch):
    """build_curves without the inner-wall tuning step."""
    monkeypatch.setattr(potential_service, 'tune_inner_wall', lambda curve, *args, **kwargs: curve)


def test_dispersion_radius_moves_both_ground_switches(bundled_config, untuned):
    curves = config_service.build_curves(replace(bundled_config, r_disp=26.0))
    assert curves['X'].switch.upper == pytest.approx(26.0)
    assert curves['a'].switch.upper == pytest.approx(26.0)
    assert curves['a'].switch.lower == pytest.approx(19.0)


def test_triplet_components_follow_the_configured_barycenter(bundled_config, untuned):
    curves = config_service.build_curves(bundled_config)
    r = np.linspace(5.0, 40.0, 701)
    va = curves['a'](r)
    coupling = config_service.spin_coupling(bundled_config)(r)
    np.testing.assert_allclose(curves['1(0-)'](r), va - 4.0 / 3.0 * coupling, rtol=1e-12, atol=1e-18)
    np.testing.assert_allclose(curves['1(1)'](r), va + 2.0 / 3.0 * coupling, rtol=1e-12, atol=1e-18)
