"""
Unit conversions between laboratory units and atomic units (E_h, a0, m_e, hbar = 1).

Every value entering the engine is converted here exactly once; all services
work in atomic units internally.
"""

from scipy.constants import physical_constants, alpha

# Energy
HARTREE_PER_CM1 = 1.0 / (physical_constants['hartree-inverse meter relationship'][0] / 100.0)
HARTREE_PER_HZ = 1.0 / physical_constants['hartree-hertz relationship'][0]
HARTREE_PER_MHZ = HARTREE_PER_HZ * 1.0e6
HARTREE_PER_GHZ = HARTREE_PER_HZ * 1.0e9
HARTREE_PER_KELVIN = physical_constants['kelvin-hartree relationship'][0]
HARTREE_PER_MICROKELVIN = HARTREE_PER_KELVIN * 1.0e-6

# Magnetic field
TESLA_PER_AU = physical_constants['atomic unit of mag. flux density'][0]
AU_PER_GAUSS = 1.0e-4 / TESLA_PER_AU

# Mass
ELECTRON_MASSES_PER_AMU = (physical_constants['atomic mass constant'][0]
                           / physical_constants['electron mass'][0])
PROTON_ELECTRON_MASS_RATIO = physical_constants['proton-electron mass ratio'][0]

# Magnetic moments (E_h per atomic unit of field)
BOHR_MAGNETON = 0.5
NUCLEAR_MAGNETON = BOHR_MAGNETON / PROTON_ELECTRON_MASS_RATIO
ELECTRON_G_FACTOR = -physical_constants['electron g factor'][0]

FINE_STRUCTURE = alpha
SPEED_OF_LIGHT = 1.0 / alpha


def cm1_to_hartree(value):
    return value * HARTREE_PER_CM1


def hartree_to_cm1(value):
    return value / HARTREE_PER_CM1


def ghz_to_hartree(value):
    return value * HARTREE_PER_GHZ


def hartree_to_ghz(value):
    return value / HARTREE_PER_GHZ


def mhz_to_hartree(value):
    return value * HARTREE_PER_MHZ


def hartree_to_mhz(value):
    return value / HARTREE_PER_MHZ


def gauss_to_au(value):
    return value * AU_PER_GAUSS


def amu_to_electron_masses(value):
    return value * ELECTRON_MASSES_PER_AMU


def microkelvin_to_hartree(value):
    return value * HARTREE_PER_MICROKELVIN


def reduced_mass(mass_a, mass_b):
    """Reduced mass of two bodies (same units in, same units out)."""
    return mass_a * mass_b / (mass_a + mass_b)


def moment_to_mhz_per_gauss(moment):
    """Convert a magnetic moment in E_h per au of field to MHz/G (energy/h per field)."""
    return hartree_to_mhz(moment) * AU_PER_GAUSS


def constants_table():
    """The conversion table recorded in manifests next to every run."""
    return {
        'hartree_per_cm1': HARTREE_PER_CM1,
        'hartree_per_GHz': HARTREE_PER_GHZ,
        'hartree_per_uK': HARTREE_PER_MICROKELVIN,
        'au_per_G': AU_PER_GAUSS,
        'electron_masses_per_amu': ELECTRON_MASSES_PER_AMU,
        'bohr_magneton_au': BOHR_MAGNETON,
        'nuclear_magneton_au': NUCLEAR_MAGNETON,
        'fine_structure': FINE_STRUCTURE,
    }
