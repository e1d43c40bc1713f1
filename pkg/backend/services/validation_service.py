"""
Self-checks behind the `validate` command: each returns rows of
{check, value, limit, passed, detail}.
"""

import logging
from itertools import product

import numpy as np

from services import units
from services.bound_state_service import bound_state_service
from services.channel_service import channel_service, projections
from services.config_service import config_service
from services.errors import FragError
from services.rovib_service import rovib_service
from services.scattering_service import scattering_service

logger = logging.getLogger(__name__)


def _row(check, value, limit, passed, detail=''):
    return {'check': check, 'value': float(value), 'limit': float(limit), 'passed': bool(passed),
            'detail': detail}


class ValidationService:
    def __init__(self):
        self.channels = channel_service
        self.scattering = scattering_service
        self.bound = bound_state_service
        self.rovib = rovib_service
        self.configs = config_service
        self.breit_rabi_fields = (0.0, 10.0, 100.0, 500.0, 1000.0, 1500.0)
        self.unitarity_points = 5

    def breit_rabi(self, config):
        rows = []
        for atom in (config.fr, config.ag):
            worst = 0.0
            for field_gauss in self.breit_rabi_fields:
                field = units.gauss_to_au(field_gauss)
                exact = self.channels.breit_rabi_energies(atom, field)
                levels = self.channels.atomic_levels(atom, field)
                for m, energies in exact.items():
                    matrix = sorted(level.energy for level in levels if abs(level.m - m) < 1e-9)
                    scale = abs(atom.hyperfine_a)
                    worst = max(worst, max(abs(a - b) / scale for a, b in zip(matrix, energies)))
            rows.append(_row(f"breit_rabi_{atom.label}", worst, 1e-10, worst < 1e-10,
                             f"{self.breit_rabi_fields[0]:g}-{self.breit_rabi_fields[-1]:g} G"))
        return rows

    @staticmethod
    def brute_force_count(fr, ag, mtot, ell):
        count = 0
        for ms1, mi1, ms2, mi2 in product(projections(0.5), projections(fr.nuclear_spin),
                                          projections(0.5), projections(ag.nuclear_spin)):
            for m_ell in range(-ell, ell + 1):
                if abs(ms1 + mi1 + ms2 + mi2 + m_ell - mtot) < 1e-9:
                    count += 1
        return count

    def channel_counts(self, config):
        rows = []
        field = units.gauss_to_au(config.scan.b_min)
        for ell in sorted(set(config.scan.ell_values) | {0, 2}):
            if ell % 2 != config.scan.ell_values[0] % 2:
                continue
            basis = self.channels.enumerate_channels(config.fr, config.ag, config.scan.mtot, (ell,),
                                                     field)
            expected = self.brute_force_count(config.fr, config.ag, config.scan.mtot, ell)
            rows.append(_row(f"channel_count_l{ell}", basis.size, expected, basis.size == expected,
                             f"Mtot = {config.scan.mtot:g}"))
        return rows

    def gao_bins(self, config, curves):
        mu = units.reduced_mass(config.fr.mass, config.ag.mass)
        label = self.configs.label_of(config, 'barycenter')
        levels = {ell: self.rovib.threshold_levels(curves[label], ell, 3, mu, label=label,
                                                   step=config.solver.rovib_step)
                  for ell in (0, 2)}
        rows = []
        for entry in self.bound.check_gao_bins(levels):
            rows.append(_row(f"gao_bin_l{entry['l']}_v{entry['v']}", entry['E_GHz'],
                             entry['lower_GHz'], entry['inside'],
                             f"[{entry['lower_GHz']:g}, {entry['upper_GHz']:g}) GHz"))
        return rows

    def unitarity(self, config, system):
        fields = np.linspace(config.scan.b_min, config.scan.b_max, self.unitarity_points).tolist()
        cap = self.scattering.scan_cap(system, fields)
        results = self.scattering.solve_fields(system, fields, cap)
        worst = max(max(r.unitarity_error, r.symmetry_error) for r in results)
        return [_row('unitarity', worst, 1e-8, worst < 1e-8, f"{len(fields)} fields")]

    @staticmethod
    def barycenter(config, curves):
        label = config_service.label_of(config, 'barycenter')
        r = np.linspace(5.0, 60.0, 2001)
        va = np.asarray(curves[label](r))
        rebuilt = (np.asarray(curves['1(0-)'](r)) + 2.0 * np.asarray(curves['1(1)'](r))) / 3.0
        worst = float(np.max(np.abs(rebuilt - va)) / np.max(np.abs(va)))
        return [_row('barycenter_roundtrip', worst, 1e-12, worst < 1e-12)]

    def projector_algebra(self, config):
        """Spin projectors in the channel basis; component projectors in the body frame.

        The 1(0-)/1(1) projectors are idempotent only over a complete set of partial
        waves, so in the truncated channel basis just the identities that survive
        truncation are checked.
        """
        basis = self.channels.enumerate_channels(config.fr, config.ag, config.scan.mtot,
                                                 config.scan.ell_values,
                                                 units.gauss_to_au(config.scan.b_min))
        p0, p1 = self.channels.spin_projectors(basis, config.fr, config.ag)
        m = self.channels.anisotropic_coupling(basis, config.fr, config.ag)
        components = self.channels.electronic_projectors(basis, config.fr, config.ag)
        identity = np.eye(basis.size)
        body = self.channels.body_frame_coupling()
        triplet = np.eye(4) - self.channels.two_electron_singlet()
        zero_minus, one = triplet / 3.0 - body / 2.0, 2.0 * triplet / 3.0 + body / 2.0
        residuals = [
            p0 + p1 - identity, p0 @ p0 - p0, p1 @ p1 - p1, p0 @ p1,
            p0 @ m, m - m.T,
            components['0-'] + components['1'] - p1,
            zero_minus @ zero_minus - zero_minus, one @ one - one, zero_minus @ one,
        ]
        worst = max(float(np.max(np.abs(r))) for r in residuals)
        return [_row('projector_algebra', worst, 1e-10, worst < 1e-10, f"{basis.size} channels")]

    def run(self, config, curves=None, include_scattering=True):
        """All checks; a failing check never aborts the remaining ones."""
        curves = curves or self.configs.build_curves(config)
        system = self.configs.coupled_system(config, curves)
        checks = [
            ('breit_rabi', lambda: self.breit_rabi(config)),
            ('channel_count', lambda: self.channel_counts(config)),
            ('projector_algebra', lambda: self.projector_algebra(config)),
            ('barycenter_roundtrip', lambda: self.barycenter(config, curves)),
            ('gao_bins', lambda: self.gao_bins(config, curves)),
        ]
        if include_scattering:
            checks.append(('unitarity', lambda: self.unitarity(config, system)))
        rows = []
        for name, check in checks:
            try:
                rows.extend(check())
            except FragError as error:
                logger.warning("validation check %s failed to run: %s", name, error)
                rows.append(_row(name, float('nan'), float('nan'), False, str(error)))
        passed = sum(row['passed'] for row in rows)
        logger.info("validation: %d/%d checks passed", passed, len(rows))
        return rows


# Global instance
validation_service = ValidationService()
