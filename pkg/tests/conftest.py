import os
import sys

import pytest

# Add the backend directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'backend'))

from models.physics import AtomSpec, CoupledSystem, RadialGrid  # noqa: E402
from services import units  # noqa: E402

BUNDLED_CONFIG = os.path.join(os.path.dirname(__file__), '..', 'datasets', 'frag', 'frag.toml')


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run the long acceptance checks on the bundled dataset')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='slow; enable with --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def fr():
    return AtomSpec(label='223Fr', mass=units.amu_to_electron_masses(223.0197360), nuclear_spin=1.5,
                    hyperfine_a=units.mhz_to_hartree(7654.2), g_s=units.ELECTRON_G_FACTOR, g_i=0.78)


@pytest.fixture(scope='session')
def ag():
    return AtomSpec(label='107Ag', mass=units.amu_to_electron_masses(106.9050915), nuclear_spin=0.5,
                    hyperfine_a=units.mhz_to_hartree(-1712.512), g_s=units.ELECTRON_G_FACTOR,
                    g_i=-0.22714)


@pytest.fixture(scope='session')
def reduced_mass(fr, ag):
    return units.reduced_mass(fr.mass, ag.mass)


@pytest.fixture(scope='session')
def bundled_config():
    from services.config_service import config_service
    return config_service.load_config(BUNDLED_CONFIG)


@pytest.fixture(scope='session')
def bundled_curves(bundled_config):
    from services.config_service import config_service
    return config_service.build_curves(bundled_config)


@pytest.fixture
def toy_system(fr, ag):
    """Shallow Morse singlet and triplet, no spin-spin coupling, stretched M_tot = 3."""
    from services.potential_service import potential_service
    from models.physics import SpectroscopicConstants

    mu = units.reduced_mass(fr.mass, ag.mass)
    singlet = potential_service.build_short_range(
        SpectroscopicConstants(Re=8.0, De=units.cm1_to_hartree(300.0),
                               spring_k=units.cm1_to_hartree(120.0), omega_e=0.0, Be=0.0), mu)
    triplet = potential_service.build_short_range(
        SpectroscopicConstants(Re=9.5, De=units.cm1_to_hartree(150.0),
                               spring_k=units.cm1_to_hartree(60.0), omega_e=0.0, Be=0.0), mu)
    grid = RadialGrid(r_min=6.5, r_max=100.0, step=0.005, r_expand=16.0, growth=1.05, max_step=0.5)
    return CoupledSystem(fr=fr, ag=ag, singlet=singlet, triplet=triplet,
                         coupling=lambda R: 0.0 * R, mtot=3.0, ell_values=(0,), grid=grid,
                         collision_energy=units.microkelvin_to_hartree(1.0), match_radius=12.0,
                         bound_r_max=100.0)
