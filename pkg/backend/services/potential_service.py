"""
Potential-curve construction: expanded-Morse short range, dispersion stitching,
spin-spin couplings, triplet components and inner-wall tuning.
"""

import logging

import numpy as np
from scipy.optimize import brentq

from models.physics import (DispersionTail, ExpandedMorse, PotentialCurve, ShiftedCurve,
                            SpectroscopicConstants, SpinCoupling, SwitchingFunction)
from services import units
from services.errors import InvalidParameterError, StitchingWindowError, TuningError
from services.radial_service import radial_solver

logger = logging.getLogger(__name__)

OBJECTIVES = ('bound_state_count', 'scattering_length')


class PotentialService:
    def __init__(self):
        self.radial = radial_solver
        self.r_disp = 22.0
        self.scan_points = 201
        self.length_tolerance = 1.0
        self.omega_tolerance = 0.05

    # --------------------------------------------------------- construction

    def build_short_range(self, constants: SpectroscopicConstants, reduced_mass=None, betas=(), p=3):
        """Expanded Morse oscillator with V(Re) = -De and V''(Re) = k exactly."""
        problems = [name for name in ('Re', 'De', 'spring_k')
                    if not np.isfinite(getattr(constants, name)) or getattr(constants, name) <= 0.0]
        if problems:
            raise InvalidParameterError(f"non-positive spectroscopic constant(s): {', '.join(problems)}")
        if reduced_mass is not None and constants.omega_e > 0.0:
            omega = constants.harmonic_frequency(reduced_mass)
            if abs(omega / constants.omega_e - 1.0) > self.omega_tolerance:
                logger.warning("sqrt(k/mu) = %.4g cm-1 disagrees with tabulated omega_e = %.4g cm-1",
                               units.hartree_to_cm1(omega), units.hartree_to_cm1(constants.omega_e))
        beta0 = np.sqrt(constants.spring_k / (2.0 * constants.De))
        return ExpandedMorse(Re=constants.Re, De=constants.De, beta0=float(beta0),
                             betas=tuple(float(b) for b in betas), p=p)

    def default_switch(self, r_cut, r_disp=None):
        r_disp = self.r_disp if r_disp is None else r_disp
        return SwitchingFunction(center=0.5 * (r_cut + r_disp), width=(r_disp - r_cut) / 6.0)

    def stitch_potential(self, short_range, tail: DispersionTail, r_cut, switch=None, label='',
                         r_disp=None):
        if tail.C6 <= 0.0 or tail.C8 < 0.0:
            raise InvalidParameterError("dispersion tail needs C6 > 0 and C8 >= 0")
        switch = switch or self.default_switch(r_cut, r_disp)
        if switch.width <= 0.0:
            raise InvalidParameterError("switching width must be positive")
        if switch.lower < r_cut - 1e-9:
            raise StitchingWindowError(
                f"{label or 'curve'}: switching window starts at {switch.lower:.6g} a0, "
                f"inside the short-range cut {r_cut:.6g} a0")
        r_disp = self.r_disp if r_disp is None else r_disp
        if switch.upper > r_disp + 1e-9:
            logger.warning("%s: switching window ends at %.4g a0, beyond R_disp = %.4g a0",
                           label, switch.upper, r_disp)
        return PotentialCurve(label=label, short_range=short_range, tail=tail, switch=switch,
                              r_cut=r_cut)

    # --------------------------------------------------------- spin-spin

    @staticmethod
    def so_splitting(R, fit):
        return fit(R)

    @staticmethod
    def dipole_dipole_lambda(R, g_s=units.ELECTRON_G_FACTOR):
        return SpinCoupling(fit=None, g_s=g_s).dipolar(R)

    @staticmethod
    def lambda_total(fit, g_s=units.ELECTRON_G_FACTOR, include_dipolar=True):
        return SpinCoupling(fit=fit, g_s=g_s, include_dipolar=include_dipolar)

    @staticmethod
    def triplet_components(va, coupling):
        """(V_1(0-), V_1(1)) with barycenter Va and splitting V_1(1) - V_1(0-) = 2 lambda."""
        return ShiftedCurve(va, coupling, -4.0 / 3.0), ShiftedCurve(va, coupling, 2.0 / 3.0)

    def build_triplet_barycenter(self, constants_0minus, fit, tail, r_cut, reduced_mass=None,
                                 betas=(), switch=None, label='a', r_disp=None):
        """Barycenter V_a from the 1(0-) constants: V_1(0-) + (4/3) lambda_SO, then stitched."""
        component = self.build_short_range(constants_0minus, reduced_mass, betas)
        spin_orbit = SpinCoupling(fit=fit, g_s=units.ELECTRON_G_FACTOR, include_dipolar=False)
        return self.stitch_potential(ShiftedCurve(component, spin_orbit, 4.0 / 3.0), tail, r_cut,
                                     switch=switch, label=label, r_disp=r_disp)

    # --------------------------------------------------------- inner wall

    def zero_energy_properties(self, curve, reduced_mass, step=5e-3, r_match=200.0):
        c6 = curve.tail.C6 if getattr(curve, 'tail', None) is not None else 0.0
        return self.radial.zero_energy(curve, reduced_mass, c6=c6, step=step, r_match=r_match)

    def _scan_wall(self, curve, reduced_mass, bounds, step, r_match):
        etas = np.linspace(bounds[0], bounds[1], self.scan_points)
        lengths = np.empty(etas.size)
        counts = np.empty(etas.size, dtype=int)
        for i, eta in enumerate(etas):
            lengths[i], counts[i] = self.zero_energy_properties(curve.with_inner_wall(eta), reduced_mass,
                                                                step, r_match)
        return etas, lengths, counts

    def tune_inner_wall(self, curve, reduced_mass, objective, target, bounds=None, step=5e-3,
                        r_match=200.0):
        """Adjust the inner-wall parameter until the zero-energy property hits `target`."""
        if objective not in OBJECTIVES:
            raise InvalidParameterError(f"unknown tuning objective '{objective}'")
        length, count = self.zero_energy_properties(curve, reduced_mass, step, r_match)
        if objective == 'bound_state_count' and count == int(target):
            return curve
        if objective == 'scattering_length' and abs(length - target) < 1e-6:
            return curve
        if bounds is None:
            beta0 = self._beta0(curve)
            bounds = (-0.25 * beta0, 0.25 * beta0)
        etas, lengths, counts = self._scan_wall(curve, reduced_mass, bounds, step, r_match)
        diagnostics = [(float(e), float(a), int(n)) for e, a, n in zip(etas, lengths, counts)]
        if objective == 'bound_state_count':
            eta = self._tune_count(curve, reduced_mass, int(target), etas, counts, step, r_match,
                                   diagnostics)
        else:
            eta = self._tune_length(curve, reduced_mass, float(target), etas, lengths, counts, step,
                                    r_match, diagnostics)
        tuned = curve.with_inner_wall(eta)
        length, count = self.zero_energy_properties(tuned, reduced_mass, step, r_match)
        logger.info("%s tuned: eta = %.8g /a0, a = %.6g a0, N = %d",
                    getattr(curve, 'label', ''), eta, length, count)
        return tuned

    @staticmethod
    def _beta0(curve):
        base = curve.short_range if isinstance(curve, PotentialCurve) else curve
        while isinstance(base, ShiftedCurve):
            base = base.base
        return base.beta0

    def _tune_length(self, curve, reduced_mass, target, etas, lengths, counts, step, r_match,
                     diagnostics):
        offset = lengths - target
        brackets = [i for i in range(etas.size - 1)
                    if counts[i] == counts[i + 1] and np.sign(offset[i]) != np.sign(offset[i + 1])]
        if not brackets:
            raise TuningError(f"scattering length {target:.6g} a0 not bracketed within "
                              f"eta in [{etas[0]:.4g}, {etas[-1]:.4g}]", diagnostics)
        brackets.sort(key=lambda i: min(abs(etas[i]), abs(etas[i + 1])))

        def mismatch(eta):
            return self.zero_energy_properties(curve.with_inner_wall(eta), reduced_mass, step,
                                               r_match)[0] - target

        for i in brackets:
            eta = brentq(mismatch, etas[i], etas[i + 1], xtol=1e-12)
            # a pole inside the bracket also changes sign; reject it
            if abs(mismatch(eta)) < self.length_tolerance:
                return eta
        raise TuningError(f"scattering length {target:.6g} a0: every bracket converged on a pole",
                          diagnostics)

    def _tune_count(self, curve, reduced_mass, target, etas, counts, step, r_match, diagnostics):
        hits = np.nonzero(counts == target)[0]
        if hits.size == 0:
            raise TuningError(f"bound-state count {target} not reachable within "
                              f"eta in [{etas[0]:.4g}, {etas[-1]:.4g}]", diagnostics)
        # contiguous run closest to the unmodified wall
        runs = np.split(hits, np.nonzero(np.diff(hits) > 1)[0] + 1)
        run = min(runs, key=lambda r: min(abs(etas[r[0]]), abs(etas[r[-1]])))

        def count_at(eta):
            return self.zero_energy_properties(curve.with_inner_wall(eta), reduced_mass, step,
                                               r_match)[1]

        def edge(inside, outside):
            for _ in range(40):
                mid = 0.5 * (inside + outside)
                if count_at(mid) == target:
                    inside = mid
                else:
                    outside = mid
            return inside

        lo = etas[run[0]] if run[0] == 0 else edge(etas[run[0]], etas[run[0] - 1])
        hi = etas[run[-1]] if run[-1] == etas.size - 1 else edge(etas[run[-1]], etas[run[-1] + 1])
        return 0.5 * (lo + hi)

    # --------------------------------------------------------- reporting

    def summary_row(self, label, constants, reduced_mass, reference=None):
        """Spectroscopic summary with harmonic and rotational consistency checks."""
        omega = units.hartree_to_cm1(constants.harmonic_frequency(reduced_mass))
        be_model = units.hartree_to_cm1(constants.rigid_rotor_Be(reduced_mass))
        be_table = units.hartree_to_cm1(constants.Be)
        row = {
            'state': label,
            **constants.to_dict(),
            'omega_from_k_cm1': omega,
            'omega_deviation': omega / units.hartree_to_cm1(constants.omega_e) - 1.0
            if constants.omega_e else float('nan'),
            'Be_rigid_rotor_cm1': be_model,
            'Be_deviation': be_table / be_model - 1.0,
            'Be_flagged': abs(be_table / be_model - 1.0) > 0.05,
        }
        if row['Be_flagged']:
            logger.warning("%s: tabulated Be = %.4g cm-1 vs rigid rotor %.4g cm-1 (kept as given)",
                           label, be_table, be_model)
        if reference:
            row['De_nonrel_cm1'] = units.hartree_to_cm1(reference.De)
            row['De_fractional_difference'] = constants.De / reference.De - 1.0
            row['omega_nonrel_cm1'] = units.hartree_to_cm1(reference.omega_e)
            row['omega_fractional_difference'] = constants.omega_e / reference.omega_e - 1.0
        return row

    @staticmethod
    def curve_table(curve, r_min=3.0, r_max=60.0, points=2000):
        r = np.linspace(r_min, r_max, points)
        return r, units.hartree_to_cm1(np.asarray(curve(r), dtype=float))

    @staticmethod
    def curves_cross(lower, upper, r):
        """True when upper(R) - lower(R) <= 0 anywhere on r."""
        return bool(np.any(np.asarray(upper(r)) - np.asarray(lower(r)) <= 0.0))


# Global instance
potential_service = PotentialService()
