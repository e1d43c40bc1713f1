"""
Multichannel near-threshold bound states by log-derivative matching.

Levels are counted with n_out + n_in + #neg eig(Y_out - Y_in) at the matching
radius, isolated by count bisection and converged with a batched Illinois
iteration on the mismatch eigenvalue.  Weights and magnetic moments are
Hellmann-Feynman derivatives taken from one perturbed batch propagation.
"""

import logging
import os
from dataclasses import replace

import numpy as np
from joblib import Parallel, delayed

from models.physics import BoundLevel, GaoBins
from services import units
from services.channel_service import channel_service
from services.errors import InsufficientSpectrumError, InvalidParameterError
from services.scattering_service import build_sectors, scattering_service, sector_points

logger = logging.getLogger(__name__)


class BoundStateService:
    def __init__(self):
        self.scattering = scattering_service
        self.channels = channel_service
        self.n_jobs = int(os.getenv('FRAG_THREADS', 1))
        self.fd_step = 1e-11
        self.max_bisections = 80
        self.max_iterations = 60
        self.crossing_tolerance = 1e-3

    # ---------------------------------------------------------- geometry

    def _sectors(self, system, bases, energies):
        cap = self.scattering.step_cap(bases, energies)
        grid = system.grid
        outward = build_sectors(grid, r_max=system.match_radius)
        inward = build_sectors(replace(grid, r_min=system.match_radius, r_max=system.bound_r_max),
                               step_cap=cap)
        return outward, inward

    def _mismatch(self, system, bases, energies, perturbations=None):
        """D = Y_out - Y_in at the matching radius plus the node counts of both sweeps."""
        energies = np.asarray(energies, dtype=float)
        stack = self.scattering.coupling_stack(bases, system, perturbations)
        outward, inward = self._sectors(system, bases, energies)
        y_out, n_out = self.scattering.propagate(stack, energies, outward, count_nodes=True)
        r_end = sector_points(inward)[-1]
        y_start = np.zeros_like(y_out)
        index = np.arange(stack.size)
        for b, (basis, energy) in enumerate(zip(bases, energies)):
            kappas = np.sqrt(2.0 * basis.reduced_mass * np.clip(basis.thresholds - energy, 0.0, None))
            # s = -r: a decaying solution has positive s-log-derivative
            y_start[b, index, index] = -self.scattering.decaying_log_derivative(basis.ells, kappas, r_end)
        y_in, n_in = self.scattering.propagate(stack, energies, inward, y_start=y_start,
                                               count_nodes=True, inward=True)
        return y_out - y_in, n_out, n_in

    def _counts(self, system, basis, energies):
        energies = np.atleast_1d(energies)
        d, n_out, n_in = self._mismatch(system, [basis] * energies.size, energies)
        negative = np.sum(np.linalg.eigvalsh(d) < 0.0, axis=1)
        return n_out + n_in + negative, n_out, n_in, negative

    # ---------------------------------------------------------- levels

    def level_energies(self, system, basis, e_lo, e_hi, tolerance=None):
        """Absolute energies of every level in (e_lo, e_hi] at the basis field."""
        tolerance = 1e-18 if tolerance is None else tolerance
        ends = self._counts(system, basis, [e_lo, e_hi])
        counts = ends[0]
        indices = np.arange(counts[0], counts[1])
        if indices.size == 0:
            return indices, np.array([])
        n_levels = indices.size
        lo = np.full(n_levels, float(e_lo))
        hi = np.full(n_levels, float(e_hi))
        state_lo = [tuple(a[0:1] for a in ends)] * n_levels
        state_hi = [tuple(a[1:2] for a in ends)] * n_levels
        isolated = np.zeros(n_levels, dtype=bool)
        for _ in range(self.max_bisections):
            for k in range(n_levels):
                c_lo, no_lo, ni_lo, _ = state_lo[k]
                c_hi, no_hi, ni_hi, _ = state_hi[k]
                isolated[k] = (c_lo[0] == indices[k] and c_hi[0] == indices[k] + 1
                               and no_lo[0] == no_hi[0] and ni_lo[0] == ni_hi[0])
            narrow = (hi - lo) < system.energy_floor
            active = np.nonzero(~isolated & ~narrow)[0]
            if active.size == 0:
                break
            mids = 0.5 * (lo[active] + hi[active])
            c, n_out, n_in, neg = self._counts(system, basis, mids)
            for j, k in enumerate(active):
                entry = (c[j:j + 1], n_out[j:j + 1], n_in[j:j + 1], neg[j:j + 1])
                if c[j] > indices[k]:
                    hi[k], state_hi[k] = mids[j], entry
                else:
                    lo[k], state_lo[k] = mids[j], entry
        for k in np.nonzero(~isolated)[0]:
            logger.warning("level %d near E = %.6g GHz not isolated within %.3g kHz; narrow the "
                           "energy window", indices[k], units.hartree_to_ghz(0.5 * (lo[k] + hi[k])),
                           system.energy_floor / units.HARTREE_PER_HZ / 1e3)
        energies = 0.5 * (lo + hi)
        converge = np.nonzero(isolated)[0]
        if converge.size:
            slots = np.array([state_lo[k][3][0] for k in converge])
            energies[converge] = self._illinois(system, basis, lo[converge], hi[converge], slots,
                                                tolerance)
        return indices, energies

    def _mismatch_values(self, system, basis, energies, slots):
        d, _, _ = self._mismatch(system, [basis] * energies.size, energies)
        eigenvalues = np.linalg.eigvalsh(d)
        return eigenvalues[np.arange(energies.size), slots]

    def _illinois(self, system, basis, lo, hi, slots, tolerance):
        """Regula falsi (Illinois) on the tracked mismatch eigenvalue, all levels per sweep."""
        f_lo = self._mismatch_values(system, basis, lo, slots)
        f_hi = self._mismatch_values(system, basis, hi, slots)
        side = np.zeros(lo.size, dtype=int)
        for _ in range(self.max_iterations):
            active = np.nonzero(hi - lo > tolerance + 1e-13 * np.abs(lo))[0]
            if active.size == 0:
                break
            denominator = f_lo[active] - f_hi[active]
            x = np.where(denominator != 0.0,
                         hi[active] - f_hi[active] * (hi[active] - lo[active]) / denominator,
                         0.5 * (lo[active] + hi[active]))
            x = np.clip(x, lo[active], hi[active])
            fx = self._mismatch_values(system, basis, x, slots[active])
            for j, k in enumerate(active):
                if fx[j] == 0.0:
                    lo[k] = hi[k] = x[j]
                elif fx[j] > 0.0:
                    lo[k], f_lo[k] = x[j], fx[j]
                    if side[k] == -1:
                        f_hi[k] *= 0.5
                    side[k] = -1
                else:
                    hi[k], f_hi[k] = x[j], fx[j]
                    if side[k] == 1:
                        f_lo[k] *= 0.5
                    side[k] = 1
        return 0.5 * (lo + hi)

    # ---------------------------------------------------------- weights

    def _perturbations(self, system, basis):
        operators = {f'channel_{c.index}': np.outer(np.eye(basis.size)[c.index], np.eye(basis.size)[c.index])
                     for c in basis.channels}
        operators.update({f'electronic_{name}': matrix for name, matrix in
                          self.channels.electronic_projectors(basis, system.fr, system.ag).items()})
        operators['zeeman'] = self.channels.zeeman_operator(basis, system.fr, system.ag)
        return operators

    def hellmann_feynman(self, system, basis, energy):
        """dE/d(epsilon) for W + epsilon P, for every perturbation P, from one batch."""
        threshold = basis.thresholds[basis.entrance_index]
        delta = min(self.fd_step, 0.1 * abs(energy - threshold))
        operators = self._perturbations(system, basis)
        zero = np.zeros((basis.size, basis.size))
        energies = [energy + delta, energy - delta]
        perturbations = [zero, zero]
        for matrix in operators.values():
            energies += [energy, energy]
            perturbations += [delta * matrix, -delta * matrix]
        d, _, _ = self._mismatch(system, [basis] * len(energies), energies, perturbations)
        centre, _, _ = self._mismatch(system, [basis], [energy])
        eigenvalues, vectors = np.linalg.eigh(centre[0])
        c = vectors[:, np.argmin(np.abs(eigenvalues))]
        d_energy = c @ ((d[0] - d[1]) / (2.0 * delta)) @ c
        slopes = {}
        for k, name in enumerate(operators):
            d_eps = c @ ((d[2 + 2 * k] - d[3 + 2 * k]) / (2.0 * delta)) @ c
            slopes[name] = -d_eps / d_energy
        return slopes

    def _level(self, system, basis, energy, field_gauss):
        slopes = self.hellmann_feynman(system, basis, energy)
        weights = np.array([slopes[f'channel_{c.index}'] for c in basis.channels])
        total = np.sum(weights)
        if abs(total - 1.0) > 1e-4:
            logger.warning("channel weights at B = %.6g G sum to %.8f before normalisation",
                           field_gauss, total)
        weights = weights / total
        electronic = {name: float(slopes[f'electronic_{name}'] / total)
                      for name in ('singlet', '0-', '1')}
        entrance_slope = self.channels.zeeman_operator(basis, system.fr, system.ag)[
            basis.entrance_index, basis.entrance_index]
        moment = -(slopes['zeeman'] / total - entrance_slope)
        threshold = basis.thresholds[basis.entrance_index]
        return BoundLevel(energy=float(energy - threshold), field=float(field_gauss),
                          channel_weights=weights, magnetic_moment=float(moment),
                          electronic_weights=electronic)

    def bound_states(self, system, window, field_gauss, with_weights=True):
        """All levels with window[0] < E - E_threshold <= window[1] (E_h) at one field."""
        e_lo, e_hi = window
        if not e_lo < e_hi < 0.0:
            raise InvalidParameterError("energy window must lie below the entrance threshold")
        basis = self.channels.enumerate_channels(system.fr, system.ag, system.mtot, system.ell_values,
                                                 units.gauss_to_au(field_gauss))
        threshold = basis.thresholds[basis.entrance_index]
        _, energies = self.level_energies(system, basis, threshold + e_lo, threshold + e_hi)
        if not with_weights:
            return [BoundLevel(energy=float(e - threshold), field=float(field_gauss),
                               channel_weights=np.array([]), magnetic_moment=float('nan'))
                    for e in energies]
        return [self._level(system, basis, e, field_gauss) for e in energies]

    def bound_level_map(self, system, fields_gauss, window, n_jobs=None, with_weights=True):
        n_jobs = self.n_jobs if n_jobs is None else n_jobs
        per_field = Parallel(n_jobs=n_jobs)(
            delayed(self.bound_states)(system, window, b, with_weights) for b in fields_gauss)
        return [level for levels in per_field for level in levels]

    # ---------------------------------------------------------- crossings

    def threshold_counts(self, system, fields_gauss):
        """Number of levels below E_threshold - floor at each field (one batch)."""
        fields_gauss = list(fields_gauss)
        bases = self.scattering.bases_for(system, fields_gauss)
        energies = np.array([b.thresholds[b.entrance_index] - system.energy_floor for b in bases])
        d, n_out, n_in = self._mismatch(system, bases, energies)
        return n_out + n_in + np.sum(np.linalg.eigvalsh(d) < 0.0, axis=1)

    def zero_energy_crossings(self, system, fields_gauss):
        """Fields where a level meets the entrance threshold, with +1 when a level appears."""
        fields_gauss = np.asarray(fields_gauss, dtype=float)
        counts = np.concatenate([self.threshold_counts(system, fields_gauss[i:i + 16])
                                 for i in range(0, fields_gauss.size, 16)])
        tasks = []
        for i in range(fields_gauss.size - 1):
            step = 1 if counts[i + 1] > counts[i] else -1
            for level in range(counts[i], counts[i + 1], step):
                target = level + (1 if step > 0 else 0)
                tasks.append([fields_gauss[i], fields_gauss[i + 1], target, step])
        while True:
            active = [t for t in tasks if t[1] - t[0] > self.crossing_tolerance]
            if not active:
                break
            mids = [0.5 * (t[0] + t[1]) for t in active]
            mid_counts = self.threshold_counts(system, mids)
            for task, mid, count in zip(active, mids, mid_counts):
                reached = count >= task[2] if task[3] > 0 else count < task[2]
                if reached:
                    task[1] = mid
                else:
                    task[0] = mid
        crossings = [{'B_G': 0.5 * (t[0] + t[1]), 'direction': int(t[3])} for t in tasks]
        logger.info("%d threshold crossings between %.6g and %.6g G", len(crossings),
                    fields_gauss[0], fields_gauss[-1])
        return crossings

    # ---------------------------------------------------------- Gao bins

    @staticmethod
    def check_gao_bins(levels_by_ell, bins=GaoBins()):
        """Containment of the last three levels (E_h, least bound first) in their bins."""
        rows = []
        for ell, energies in sorted(levels_by_ell.items()):
            energies = [getattr(e, 'energy', e) for e in energies]
            if len(energies) < 3:
                raise InsufficientSpectrumError(
                    f"l = {ell}: {len(energies)} bound level(s), three are needed")
            intervals = bins.for_ell(ell)
            for v, energy in zip((-1, -2, -3), energies[:3]):
                lower, upper = intervals[3 + v]
                ghz = units.hartree_to_ghz(energy)
                inside = lower <= ghz <= upper and (v != -1 or ghz < upper)
                rows.append({'l': ell, 'v': v, 'E_GHz': ghz, 'lower_GHz': lower,
                             'upper_GHz': upper, 'inside': bool(inside)})
        return rows


# Global instance
bound_state_service = BoundStateService()
