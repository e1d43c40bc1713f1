"""
Hyperfine-Zeeman atomic levels and the two-atom channel basis at fixed M_tot.

Operators are built in the primitive product basis |mS1 mI1 mS2 mI2 l ml> and
rotated into the channel basis with the (real, orthogonal) atomic eigenvectors.
"""

import logging
from functools import lru_cache
from itertools import product

import numpy as np
from sympy.physics.wigner import wigner_3j

from models.physics import AtomicLevel, Channel, ChannelBasis
from services import units
from services.errors import InvalidParameterError

logger = logging.getLogger(__name__)


def projections(j):
    """m = j, j-1, ..., -j."""
    return tuple(j - k for k in range(int(round(2 * j)) + 1))


def spin_matrices(j):
    """(jz, j+, j-) in the basis of projections(j)."""
    m = np.array(projections(j))
    jz = np.diag(m)
    jplus = np.zeros((m.size, m.size))
    for k in range(1, m.size):
        # <m+1| j+ |m>
        jplus[k - 1, k] = np.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    return jz, jplus, jplus.T.copy()


def _two_electron_operators():
    """Singlet projector and rank-2 tensor T2_q of S = s1 + s2 on |ms1 ms2>."""
    sz, sp, sm = spin_matrices(0.5)
    one = np.eye(2)
    Sz = np.kron(sz, one) + np.kron(one, sz)
    Sp = np.kron(sp, one) + np.kron(one, sp)
    Sm = np.kron(sm, one) + np.kron(one, sm)
    s_squared = Sz @ Sz + 0.5 * (Sp @ Sm + Sm @ Sp)
    singlet = np.array([0.0, 1.0, -1.0, 0.0]) / np.sqrt(2.0)
    p0 = np.outer(singlet, singlet)
    tensor = {
        0: (3.0 * Sz @ Sz - s_squared) / np.sqrt(6.0),
        1: -(Sp @ Sz + Sz @ Sp) / 2.0,
        -1: (Sm @ Sz + Sz @ Sm) / 2.0,
        2: Sp @ Sp / 2.0,
        -2: Sm @ Sm / 2.0,
    }
    return p0, tensor, Sz


@lru_cache(maxsize=None)
def angular_element(ell, m_ell, ell_p, m_ell_p, k):
    """<l ml | C^2_k | l' ml'>."""
    if m_ell != m_ell_p + k or abs(ell - ell_p) > 2 or (ell + ell_p) % 2:
        return 0.0
    value = (wigner_3j(ell, 2, ell_p, 0, 0, 0) * wigner_3j(ell, 2, ell_p, -m_ell, k, m_ell_p))
    return float((-1) ** m_ell * np.sqrt((2 * ell + 1) * (2 * ell_p + 1)) * value)


@lru_cache(maxsize=32)
def primitive_operators(i_fr, i_ag, mtot, ell_values):
    """Primitive states and the field-independent spin/angular operators on them."""
    spin_states = tuple(product(projections(0.5), repeat=2))
    states = []
    for ell in ell_values:
        for m_ell in range(-ell, ell + 1):
            for (ms1, ms2), mi1, mi2 in product(spin_states, projections(i_fr), projections(i_ag)):
                if abs(ms1 + mi1 + ms2 + mi2 + m_ell - mtot) < 1e-9:
                    states.append((ms1, mi1, ms2, mi2, ell, m_ell))
    n = len(states)
    spin_index = {s: k for k, s in enumerate(spin_states)}
    p0_spin, tensor, sz_spin = _two_electron_operators()
    p0 = np.zeros((n, n))
    anisotropic = np.zeros((n, n))
    for a, (ms1, mi1, ms2, mi2, ell, m_ell) in enumerate(states):
        sa = spin_index[(ms1, ms2)]
        for b, (ns1, ni1, ns2, ni2, ell_p, m_ell_p) in enumerate(states):
            if mi1 != ni1 or mi2 != ni2:
                continue
            sb = spin_index[(ns1, ns2)]
            if ell == ell_p and m_ell == m_ell_p:
                p0[a, b] = p0_spin[sa, sb]
            total = 0.0
            for q, t2 in tensor.items():
                if t2[sa, sb] == 0.0:
                    continue
                total += (-1) ** q * angular_element(ell, m_ell, ell_p, m_ell_p, -q) * t2[sa, sb]
            anisotropic[a, b] = (2.0 / 3.0) * np.sqrt(6.0) * total
    return tuple(states), p0, anisotropic


class ChannelService:
    def __init__(self):
        self.sort_decimals = 14

    # ---------------------------------------------------------- atoms

    def atomic_hamiltonian(self, atom, field):
        """A I.S + (gS muB mS - gI muN mI) B on |mS mI>, plus the product-state labels."""
        sz, sp, sm = spin_matrices(atom.electron_spin)
        iz, ip, im = spin_matrices(atom.nuclear_spin)
        hyperfine = atom.hyperfine_a * (np.kron(sz, iz) + 0.5 * (np.kron(sp, im) + np.kron(sm, ip)))
        zeeman = field * (atom.g_s * units.BOHR_MAGNETON * np.kron(sz, np.eye(iz.shape[0]))
                          - atom.g_i * units.NUCLEAR_MAGNETON * np.kron(np.eye(sz.shape[0]), iz))
        states = tuple(product(projections(atom.electron_spin), projections(atom.nuclear_spin)))
        return hyperfine + zeeman, states

    def zeeman_derivative(self, atom):
        """dH/dB for a single atom on |mS mI>."""
        return self.atomic_hamiltonian(atom, 1.0)[0] - self.atomic_hamiltonian(atom, 0.0)[0]

    def atomic_levels(self, atom, field):
        """Eigenstates per m block, labelled by the zero-field f they connect to."""
        if field < 0.0:
            raise InvalidParameterError("magnetic field must be non-negative")
        hamiltonian, states = self.atomic_hamiltonian(atom, field)
        m_values = np.array([ms + mi for ms, mi in states])
        upper_f = atom.nuclear_spin + 0.5 if atom.hyperfine_a > 0 else atom.nuclear_spin - 0.5
        levels = []
        for m in sorted(set(m_values.tolist()), reverse=True):
            block = np.nonzero(np.isclose(m_values, m))[0]
            energies, vectors = np.linalg.eigh(hamiltonian[np.ix_(block, block)])
            for k in range(block.size):
                vector = np.zeros(len(states))
                vector[block] = vectors[:, k]
                # fix the sign so the largest component is positive
                if vector[np.argmax(np.abs(vector))] < 0.0:
                    vector = -vector
                if block.size == 1:
                    f = atom.nuclear_spin + 0.5
                elif k == block.size - 1:
                    f = upper_f
                else:
                    f = 2 * atom.nuclear_spin - upper_f
                levels.append(AtomicLevel(energy=float(energies[k]), m=float(m), f=float(f),
                                          vector=vector, states=states))
        levels.sort(key=lambda level: (round(level.energy, self.sort_decimals), -level.m))
        return levels

    @staticmethod
    def breit_rabi_energies(atom, field):
        """Closed-form levels {m: sorted energies}, independent of the matrix route."""
        i = atom.nuclear_spin
        splitting = atom.hyperfine_a * (i + 0.5)
        mu_e = atom.g_s * units.BOHR_MAGNETON
        mu_n = -atom.g_i * units.NUCLEAR_MAGNETON
        result = {}
        for m in projections(i + 0.5):
            if abs(abs(m) - (i + 0.5)) < 1e-9:
                sign = np.sign(m)
                result[m] = [atom.hyperfine_a * i / 2.0 + sign * (0.5 * mu_e + i * mu_n) * field]
                continue
            x = (mu_e - mu_n) * field / splitting
            root = 0.5 * abs(splitting) * np.sqrt(1.0 + 4.0 * m * x / (2 * i + 1) + x ** 2)
            centre = -splitting / (2 * (2 * i + 1)) + mu_n * m * field
            result[m] = sorted([centre - root, centre + root])
        return result

    # ---------------------------------------------------------- channels

    def enumerate_channels(self, fr, ag, mtot, ell_values, field, reduced_mass=None):
        ell_values = tuple(sorted(set(int(ell) for ell in ell_values)))
        if len({ell % 2 for ell in ell_values}) > 1:
            raise InvalidParameterError(f"partial waves {ell_values} mix parities")
        if reduced_mass is None:
            reduced_mass = units.reduced_mass(fr.mass, ag.mass)
        fr_levels = self.atomic_levels(fr, field)
        ag_levels = self.atomic_levels(ag, field)
        candidates = []
        for ell in ell_values:
            for (i, a), (j, b) in product(enumerate(fr_levels), enumerate(ag_levels)):
                m_ell = mtot - a.m - b.m
                if abs(m_ell - round(m_ell)) > 1e-9 or abs(m_ell) > ell:
                    continue
                candidates.append((ell, int(round(m_ell)), i, j, a, b))
        candidates.sort(key=lambda c: (c[0], round(c[4].energy + c[5].energy, self.sort_decimals),
                                       -c[4].m, -c[5].m))
        channels = tuple(
            Channel(index=k, fr_level=i, ag_level=j, m_fr=a.m, m_ag=b.m, f_fr=a.f, f_ag=b.f,
                    ell=ell, m_ell=m_ell, threshold=a.energy + b.energy)
            for k, (ell, m_ell, i, j, a, b) in enumerate(candidates))
        states, _, _ = primitive_operators(fr.nuclear_spin, ag.nuclear_spin, float(mtot), ell_values)
        transform = self._transform(channels, states, fr_levels, ag_levels)
        logger.debug("M_tot = %s, l = %s, B = %.6g au: %d channels", mtot, ell_values, field,
                     len(channels))
        return ChannelBasis(channels=channels, mtot=float(mtot), ell_values=ell_values,
                            field=field, transform=transform, primitive_states=states,
                            reduced_mass=reduced_mass)

    @staticmethod
    def _transform(channels, states, fr_levels, ag_levels):
        index = {s: k for k, s in enumerate(states)}
        transform = np.zeros((len(states), len(channels)))
        for column, channel in enumerate(channels):
            a, b = fr_levels[channel.fr_level], ag_levels[channel.ag_level]
            for (ms1, mi1), ca in zip(a.states, a.vector):
                if ca == 0.0:
                    continue
                for (ms2, mi2), cb in zip(b.states, b.vector):
                    if cb == 0.0:
                        continue
                    key = (ms1, mi1, ms2, mi2, channel.ell, channel.m_ell)
                    transform[index[key], column] = ca * cb
        return transform

    def _rotate(self, basis, primitive):
        return basis.transform.T @ primitive @ basis.transform

    def _primitive(self, basis, fr, ag):
        return primitive_operators(fr.nuclear_spin, ag.nuclear_spin, basis.mtot, basis.ell_values)

    # ---------------------------------------------------------- operators

    def spin_projectors(self, basis, fr, ag):
        """(P0, P1) onto total electron spin 0 and 1 in the channel basis."""
        _, p0, _ = self._primitive(basis, fr, ag)
        p0 = self._rotate(basis, p0)
        return p0, np.eye(basis.size) - p0

    def anisotropic_coupling(self, basis, fr, ag):
        """Angular-spin matrix M with H_aniso = lambda(R) M."""
        _, _, anisotropic = self._primitive(basis, fr, ag)
        return self._rotate(basis, anisotropic)

    def electronic_projectors(self, basis, fr, ag):
        """Projectors onto the singlet, 1(0-) and 1(1) electronic components."""
        p0, p1 = self.spin_projectors(basis, fr, ag)
        m = self.anisotropic_coupling(basis, fr, ag)
        return {'singlet': p0, '0-': p1 / 3.0 - m / 2.0, '1': 2.0 * p1 / 3.0 + m / 2.0}

    def zeeman_operator(self, basis, fr, ag):
        """dH_atomic/dB in the channel basis (E_h per au of field)."""
        states = basis.primitive_states
        mu_e = units.BOHR_MAGNETON
        diagonal = np.array([mu_e * fr.g_s * ms1 - fr.g_i * units.NUCLEAR_MAGNETON * mi1
                             + mu_e * ag.g_s * ms2 - ag.g_i * units.NUCLEAR_MAGNETON * mi2
                             for ms1, mi1, ms2, mi2, _, _ in states])
        return self._rotate(basis, np.diag(diagonal))

    @staticmethod
    def body_frame_coupling():
        """(2/3) sqrt(6) T2_0 on |ms1 ms2>: the spin-spin operator for R along z."""
        _, tensor, _ = _two_electron_operators()
        return (2.0 / 3.0) * np.sqrt(6.0) * tensor[0]

    @staticmethod
    def two_electron_singlet():
        p0, _, _ = _two_electron_operators()
        return p0

    @staticmethod
    def channel_rows(basis):
        return [channel.to_dict() for channel in basis.channels]


# Global instance
channel_service = ChannelService()
