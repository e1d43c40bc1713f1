"""
Domain value objects for the Fr+Ag assembly engine.

All quantities are stored in atomic units (E_h, a0, m_e, hbar = 1); the
to_dict() helpers convert to the laboratory units used in reports.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from services import units


def _as_array(R):
    return np.asarray(R, dtype=float)


@dataclass(frozen=True)
class SpectroscopicConstants:
    Re: float
    De: float
    spring_k: float
    omega_e: float
    Be: float

    def harmonic_frequency(self, reduced_mass):
        """sqrt(k/mu) in E_h (hbar = 1)."""
        return np.sqrt(self.spring_k / reduced_mass)

    def rigid_rotor_Be(self, reduced_mass):
        return 1.0 / (2.0 * reduced_mass * self.Re ** 2)

    def to_dict(self):
        return {
            'Re_a0': self.Re,
            'De_cm1': units.hartree_to_cm1(self.De),
            'k_cm1_per_a02': units.hartree_to_cm1(self.spring_k),
            'omega_e_cm1': units.hartree_to_cm1(self.omega_e),
            'Be_cm1': units.hartree_to_cm1(self.Be),
        }


@dataclass(frozen=True)
class DispersionTail:
    C6: float
    C8: float = 0.0

    def __call__(self, R):
        R = _as_array(R)
        return -self.C6 / R ** 6 - self.C8 / R ** 8

    def to_dict(self):
        return {'C6_Eh_a06': self.C6, 'C8_Eh_a08': self.C8}


@dataclass(frozen=True)
class SwitchingFunction:
    """Compact tanh step: exactly 0 below center - 3w, exactly 1 above center + 3w."""

    center: float
    width: float
    steepness: float = 2.5

    @property
    def lower(self):
        return self.center - 3.0 * self.width

    @property
    def upper(self):
        return self.center + 3.0 * self.width

    def __call__(self, R):
        R = _as_array(R)
        x = np.atleast_1d((R - self.center) / (3.0 * self.width))
        s = np.where(x >= 1.0, 1.0, 0.0)
        inside = np.abs(x) < 1.0
        xi = x[inside]
        s[inside] = 0.5 * (1.0 + np.tanh(self.steepness * xi / (1.0 - xi ** 2)))
        return s.reshape(np.shape(R)) if np.ndim(R) else float(s[0])

    def to_dict(self):
        return {'center_a0': self.center, 'width_a0': self.width}


@dataclass(frozen=True)
class SpinSplittingFit:
    """Sum of two decaying exponentials for the second-order spin-orbit splitting."""

    A1: float
    B1: float
    R1: float
    A2: float
    B2: float
    R2: float

    def __call__(self, R):
        R = _as_array(R)
        return (self.A1 * np.exp(-self.B1 * (R - self.R1))
                + self.A2 * np.exp(-self.B2 * (R - self.R2)))

    def to_dict(self):
        return {
            'A1_cm1': units.hartree_to_cm1(self.A1), 'B1_per_a0': self.B1, 'R1_a0': self.R1,
            'A2_cm1': units.hartree_to_cm1(self.A2), 'B2_per_a0': self.B2, 'R2_a0': self.R2,
        }


@dataclass(frozen=True)
class SpinCoupling:
    """Total rank-2 spin-spin strength lambda(R) = lambda_SO(R) + lambda_dd(R)."""

    fit: Optional[SpinSplittingFit]
    g_s: float
    include_dipolar: bool = True

    def spin_orbit(self, R):
        if self.fit is None:
            return np.zeros_like(_as_array(R))
        return 0.5 * self.fit(R)

    def dipolar(self, R):
        R = _as_array(R)
        if not self.include_dipolar:
            return np.zeros_like(R)
        return -(self.g_s / 2.0) ** 2 * units.FINE_STRUCTURE ** 2 / R ** 3

    def __call__(self, R):
        return self.spin_orbit(R) + self.dipolar(R)


@dataclass(frozen=True)
class ExpandedMorse:
    """Morse oscillator whose exponent is a polynomial in y = (R^p - Re^p)/(R^p + Re^p)."""

    Re: float
    De: float
    beta0: float
    betas: Tuple[float, ...] = ()
    p: int = 3
    eta: float = 0.0

    def exponent(self, R):
        R = _as_array(R)
        y = (R ** self.p - self.Re ** self.p) / (R ** self.p + self.Re ** self.p)
        beta = self.beta0 + np.zeros_like(y)
        for power, coefficient in enumerate(self.betas, start=1):
            beta = beta + coefficient * y ** power
        return beta + self.eta * np.minimum(y, 0.0) ** 2

    def __call__(self, R):
        R = _as_array(R)
        u = self.exponent(R) * (R - self.Re)
        return self.De * ((1.0 - np.exp(-u)) ** 2 - 1.0)

    def with_inner_wall(self, eta):
        return replace(self, eta=eta)

    def to_dict(self):
        return {'model': 'expanded_morse', 'Re_a0': self.Re,
                'De_cm1': units.hartree_to_cm1(self.De), 'beta0_per_a0': self.beta0,
                'betas_per_a0': list(self.betas), 'p': self.p, 'eta_per_a0': self.eta}


@dataclass(frozen=True)
class ShiftedCurve:
    """base(R) + coefficient * shift(R); used for barycenter and triplet components."""

    base: Callable
    shift: Callable
    coefficient: float

    def __call__(self, R):
        return self.base(R) + self.coefficient * self.shift(R)

    def with_inner_wall(self, eta):
        return replace(self, base=self.base.with_inner_wall(eta))

    @property
    def eta(self):
        return getattr(self.base, 'eta', 0.0)

    def to_dict(self):
        base = self.base.to_dict() if hasattr(self.base, 'to_dict') else {}
        return {'model': 'shifted', 'coefficient': self.coefficient, 'base': base}


@dataclass(frozen=True)
class PotentialCurve:
    label: str
    short_range: Callable
    tail: Optional[DispersionTail] = None
    switch: Optional[SwitchingFunction] = None
    r_cut: Optional[float] = None

    def __call__(self, R):
        v_short = self.short_range(R)
        if self.tail is None or self.switch is None:
            return v_short
        s = self.switch(R)
        return (1.0 - s) * v_short + s * self.tail(R)

    @property
    def eta(self):
        return getattr(self.short_range, 'eta', 0.0)

    def with_inner_wall(self, eta):
        return replace(self, short_range=self.short_range.with_inner_wall(eta))

    def to_dict(self):
        return {
            'label': self.label,
            'short_range': self.short_range.to_dict() if hasattr(self.short_range, 'to_dict') else None,
            'tail': self.tail.to_dict() if self.tail else None,
            'switch': self.switch.to_dict() if self.switch else None,
            'r_cut_a0': self.r_cut,
        }


@dataclass(frozen=True)
class AtomSpec:
    label: str
    mass: float
    nuclear_spin: float
    hyperfine_a: float
    g_s: float
    g_i: float
    electron_spin: float = 0.5

    @property
    def dimension(self):
        return int(round((2 * self.electron_spin + 1) * (2 * self.nuclear_spin + 1)))

    def to_dict(self):
        return {
            'label': self.label,
            'mass_amu': self.mass / units.ELECTRON_MASSES_PER_AMU,
            'nuclear_spin': self.nuclear_spin,
            'A_MHz': units.hartree_to_mhz(self.hyperfine_a),
            'g_s': self.g_s,
            'g_i': self.g_i,
        }


@dataclass(frozen=True, eq=False)
class AtomicLevel:
    energy: float
    m: float
    f: float
    vector: np.ndarray
    states: Tuple[Tuple[float, float], ...]

    def to_dict(self):
        return {'E_GHz': units.hartree_to_ghz(self.energy), 'm': self.m, 'f': self.f}


@dataclass(frozen=True)
class Channel:
    index: int
    fr_level: int
    ag_level: int
    m_fr: float
    m_ag: float
    f_fr: float
    f_ag: float
    ell: int
    m_ell: int
    threshold: float

    def to_dict(self):
        return {
            'index': self.index, 'mFr': self.m_fr, 'mAg': self.m_ag,
            'fFr': self.f_fr, 'fAg': self.f_ag, 'l': self.ell, 'ml': self.m_ell,
            'threshold_GHz': units.hartree_to_ghz(self.threshold),
        }


@dataclass(frozen=True, eq=False)
class ChannelBasis:
    channels: Tuple[Channel, ...]
    mtot: float
    ell_values: Tuple[int, ...]
    field: float
    transform: np.ndarray
    primitive_states: Tuple[Tuple[float, float, float, float, int, int], ...]
    reduced_mass: float

    @property
    def size(self):
        return len(self.channels)

    @property
    def thresholds(self):
        return np.array([c.threshold for c in self.channels])

    @property
    def ells(self):
        return np.array([c.ell for c in self.channels])

    @property
    def entrance_index(self):
        """Lowest threshold among the lowest partial wave present."""
        if not self.channels:
            return None
        lowest_ell = min(c.ell for c in self.channels)
        candidates = [c for c in self.channels if c.ell == lowest_ell]
        return min(candidates, key=lambda c: c.threshold).index

    def to_dict(self):
        return {'Mtot': self.mtot, 'l_values': list(self.ell_values), 'B_G': self.field,
                'channels': [c.to_dict() for c in self.channels]}


@dataclass(frozen=True)
class RadialGrid:
    r_min: float
    r_max: float
    step: float
    r_expand: float
    growth: float = 1.02
    max_step: float = 1.0

    def to_dict(self):
        return {'r_min_a0': self.r_min, 'r_max_a0': self.r_max, 'step_a0': self.step,
                'r_expand_a0': self.r_expand, 'growth': self.growth, 'max_step_a0': self.max_step}


@dataclass(frozen=True, eq=False)
class ScatteringResult:
    field: float
    energy: float
    s_matrix: np.ndarray
    scattering_length: complex
    n_open: int
    unitarity_error: float = 0.0
    symmetry_error: float = 0.0

    def to_dict(self):
        return {
            'B_G': self.field,
            'a_re_a0': float(np.real(self.scattering_length)),
            'a_im_a0': float(np.imag(self.scattering_length)),
            'num_open_channels': self.n_open,
            'unitarity_error': max(self.unitarity_error, self.symmetry_error),
        }


@dataclass(frozen=True, eq=False)
class FieldScan:
    fields: np.ndarray
    results: Tuple[Optional[ScatteringResult], ...]
    ell_values: Tuple[int, ...]
    failures: Tuple[Tuple[float, str], ...] = ()

    def scattering_lengths(self):
        return np.array([np.nan if r is None else np.real(r.scattering_length)
                         for r in self.results])

    def rows(self):
        return [r.to_dict() for r in self.results if r is not None]


@dataclass(frozen=True)
class ResonanceRecord:
    B0: float
    width: float
    a_bg: float
    partial_wave: Optional[str] = 's'
    bound_state_index: Optional[int] = None
    fitted: bool = True
    residual: float = 0.0

    def to_dict(self):
        return {'B0_G': self.B0, 'Delta_G': self.width, 'a_bg_a0': self.a_bg,
                'partial_wave': self.partial_wave, 'fitted': self.fitted,
                'bound_state_index': self.bound_state_index}


@dataclass(frozen=True, eq=False)
class BoundLevel:
    energy: float
    field: float
    channel_weights: np.ndarray
    magnetic_moment: float
    electronic_weights: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'B_G': self.field,
            'E_over_h_GHz': units.hartree_to_ghz(self.energy),
            'weight_singlet': self.electronic_weights.get('singlet', float('nan')),
            'weight_0minus': self.electronic_weights.get('0-', float('nan')),
            'weight_1': self.electronic_weights.get('1', float('nan')),
            'dEdB_MHz_per_G': -units.moment_to_mhz_per_gauss(self.magnetic_moment),
        }


@dataclass(frozen=True)
class GaoBins:
    """Per partial wave, (lower, upper) GHz intervals for v = -3, -2, -1."""

    s_wave: Tuple[Tuple[float, float], ...] = ((-5.1, -1.6), (-1.6, -0.23), (-0.23, 0.0))
    d_wave: Tuple[Tuple[float, float], ...] = ((-7.7, -2.8), (-2.8, -0.60), (-0.60, 0.0))

    def for_ell(self, ell):
        return {0: self.s_wave, 2: self.d_wave}[ell]


@dataclass(frozen=True, eq=False)
class RovibLevel:
    state_label: str
    v: int
    J: int
    energy: float
    r: np.ndarray
    wavefunction: np.ndarray
    weights: np.ndarray
    v_from_threshold: Optional[int] = None

    def to_dict(self):
        return {'state': self.state_label, 'v': self.v, 'v_threshold': self.v_from_threshold,
                'J': self.J, 'E_cm1': units.hartree_to_cm1(self.energy),
                'E_GHz': units.hartree_to_ghz(self.energy)}


@dataclass(frozen=True, eq=False)
class DipoleCurve:
    upper: str
    lower: str
    r: np.ndarray
    d: np.ndarray
    note: str = ''

    def __call__(self, R):
        # np.interp holds the end values beyond the sampled range
        return np.interp(_as_array(R), self.r, self.d)


@dataclass(frozen=True, eq=False)
class RamanPathway:
    initial: RovibLevel
    intermediate: RovibLevel
    final: RovibLevel
    d_up: float
    d_down: float

    @property
    def metric(self):
        return self.d_up * self.d_down

    def to_dict(self, reference_minimum=0.0):
        return {
            'v_init': self.initial.v_from_threshold if self.initial.v_from_threshold is not None
            else self.initial.v,
            'v_mid': self.intermediate.v,
            'E_mid_cm1': units.hartree_to_cm1(self.intermediate.energy),
            'E_mid_above_min_cm1': units.hartree_to_cm1(self.intermediate.energy - reference_minimum),
            'd_up_ea0': self.d_up,
            'd_down_ea0': self.d_down,
            'product_e2a02': self.metric,
        }


@dataclass(frozen=True, eq=False)
class CoupledSystem:
    """Everything a coupled-channels solve needs apart from the field."""

    fr: AtomSpec
    ag: AtomSpec
    singlet: Callable
    triplet: Callable
    coupling: Callable
    mtot: float
    ell_values: Tuple[int, ...]
    grid: RadialGrid
    collision_energy: float
    match_radius: float = 15.0
    bound_r_max: float = 3000.0
    energy_floor: float = 1.0e3 * units.HARTREE_PER_HZ

    @property
    def reduced_mass(self):
        return units.reduced_mass(self.fr.mass, self.ag.mass)

    def with_ells(self, ell_values):
        return replace(self, ell_values=tuple(sorted(int(ell) for ell in ell_values)))
