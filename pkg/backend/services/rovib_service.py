"""
Single-channel rovibrational levels, vibrationally averaged transition dipoles
and two-photon pathway ranking.
"""

import logging
import os
from dataclasses import replace

import numpy as np
from joblib import Parallel, delayed
from scipy.interpolate import CubicSpline

from models.physics import DipoleCurve, RamanPathway, RovibLevel
from services.errors import GridError, InsufficientSpectrumError, InvalidParameterError
from services.radial_service import radial_solver

logger = logging.getLogger(__name__)


class RovibService:
    def __init__(self):
        self.radial = radial_solver
        self.n_jobs = int(os.getenv('FRAG_THREADS', 1))
        self.step = 1e-3
        self.grid_tolerance = 1e-6

    def solve_rovib(self, curve, J, reduced_mass, window, label='', step=None, energy_ceiling=None):
        """Every level of V(R) + J(J+1)/(2 mu R^2) with window[0] < E <= window[1].

        `energy_ceiling` widens the radial grid beyond what the window needs, so that
        levels share support with higher-lying states of another curve.
        """
        if J < 0:
            raise InvalidParameterError(f"rotational quantum number must be >= 0, got {J}")
        e_lo, e_hi = window
        e_hi = min(e_hi, 0.0)
        if e_lo >= e_hi:
            return []
        step = self.step if step is None else step
        ceiling = e_hi if energy_ceiling is None else max(e_hi, energy_ceiling)
        grid = self.radial.build_grid(curve, reduced_mass, J=J, energy_ceiling=ceiling, step=step)
        indices, energies = self.radial.eigenvalues(grid, e_lo, e_hi)
        levels = []
        for v, energy in zip(indices, energies):
            psi = self.radial.wavefunction(grid, energy)
            nodes = self.radial.count_nodes(psi)
            if nodes != v:
                logger.warning("%s v=%d J=%d: wavefunction has %d nodes", label, v, J, nodes)
            levels.append(RovibLevel(state_label=label, v=int(v), J=int(J), energy=float(energy),
                                     r=grid.r, wavefunction=psi, weights=grid.weights))
        logger.info("%s J=%d: %d level(s) in window", label, J, len(levels))
        return levels

    def threshold_levels(self, curve, ell, count, reduced_mass, label='', step=None):
        """The `count` least-bound levels, tagged v = -1, -2, ... from threshold down."""
        step = self.step if step is None else step
        grid = self.radial.build_grid(curve, reduced_mass, J=ell, energy_ceiling=0.0, step=step)
        total = self.radial.level_count(grid, 0.0)
        if total < count:
            raise InsufficientSpectrumError(
                f"{label or 'curve'} l={ell}: {total} bound level(s), {count} requested")
        e_lo = -1e-9
        floor = float(np.min(grid.v_eff))
        while self.radial.level_count(grid, e_lo) > total - count and e_lo > floor:
            e_lo *= 4.0
        e_lo = max(e_lo, floor)
        levels = self.solve_rovib(curve, ell, reduced_mass, (e_lo, 0.0), label=label, step=step)
        last = levels[-count:]
        tagged = [replace(lvl, v_from_threshold=lvl.v - total) for lvl in last]
        return sorted(tagged, key=lambda lvl: lvl.v_from_threshold, reverse=True)

    # ---------------------------------------------------------- dipoles

    def _on_grid(self, level, target):
        """`level`'s wavefunction sampled on `target`'s grid; zero outside its own grid."""
        r = target.r
        if level.r.size == r.size and np.allclose(level.r, r, rtol=1e-12, atol=0.0):
            return level.wavefunction
        # target weight where `level` is undefined would be integrated against zero
        outside = (r < level.r[0]) | (r > level.r[-1])
        lost = float(np.sum(target.wavefunction[outside] ** 2 * target.weights[outside]))
        if lost > self.grid_tolerance:
            raise GridError(f"{target.state_label} v={target.v}: norm {lost:.3g} outside the grid "
                            f"of {level.state_label} v={level.v} [{level.r[0]:.4g}, "
                            f"{level.r[-1]:.4g}] a0")
        spline = CubicSpline(level.r, level.wavefunction)
        return np.where(outside, 0.0, spline(np.clip(r, level.r[0], level.r[-1])))

    def vib_avg_dipole(self, upper, lower, d):
        """Integral of phi_upper(R) d(R) phi_lower(R) on the upper level's grid."""
        phi_lower = self._on_grid(lower, upper)
        return float(np.sum(upper.wavefunction * d(upper.r) * phi_lower * upper.weights))

    def gram_matrix(self, levels):
        reference = levels[0]
        stack = np.array([self._on_grid(level, reference) for level in levels])
        return (stack * reference.weights) @ stack.T

    # ---------------------------------------------------------- pathways

    def up_table(self, initials, intermediates, d_up, n_jobs=None):
        n_jobs = self.n_jobs if n_jobs is None else n_jobs
        rows = Parallel(n_jobs=n_jobs)(
            delayed(self._up_row)(initial, intermediates, d_up) for initial in initials)
        return np.array(rows)

    def _up_row(self, initial, intermediates, d_up):
        return [self.vib_avg_dipole(mid, initial, d_up) for mid in intermediates]

    def down_table(self, intermediates, final, d_down):
        return np.array([self.vib_avg_dipole(mid, final, d_down) for mid in intermediates])

    def rank_pathways(self, initials, intermediates, final, d_up, d_down, n_jobs=None):
        """Every (initial, intermediate) pair scored by |d_up d_down|, best first."""
        up = self.up_table(initials, intermediates, d_up, n_jobs)
        down = self.down_table(intermediates, final, d_down)
        return self._ranked(initials, intermediates, final, up, down)

    @staticmethod
    def _ranked(initials, intermediates, final, up, down):
        pathways = [RamanPathway(initial=initial, intermediate=mid, final=final,
                                 d_up=float(up[i, j]), d_down=float(down[j]))
                    for i, initial in enumerate(initials) for j, mid in enumerate(intermediates)]
        # stable sort keeps the input order among ties
        return sorted(pathways, key=lambda p: -abs(p.metric))

    def lowest_level(self, curve, J, reduced_mass, label='', step=None, energy_ceiling=0.0):
        """v = 0 on a grid wide enough for overlaps with states up to `energy_ceiling`."""
        step = self.step if step is None else step
        grid = self.radial.build_grid(curve, reduced_mass, J=J, energy_ceiling=energy_ceiling,
                                      step=step)
        bottom = float(np.min(grid.v_eff))
        width = 1e-6
        while self.radial.level_count(grid, bottom + width) < 1:
            width *= 2.0
            if bottom + width >= energy_ceiling:
                raise InsufficientSpectrumError(f"{label or 'curve'}: no bound level")
        levels = self.solve_rovib(curve, J, reduced_mass, (bottom, bottom + width), label=label,
                                  step=step, energy_ceiling=energy_ceiling)
        return levels[0]

    # ---------------------------------------------------------- two-photon scheme

    def stirap_analysis(self, initial_curve, intermediate_curve, final_curve, reduced_mass, d_up,
                        d_down, intermediate_window, initial_count=3, J_mid=1, step=None,
                        n_jobs=None, labels=('1(1)', '3(0+)', '1(0+)')):
        """Threshold s-wave initials, J' intermediates and the final v = 0, ranked.

        `intermediate_window` bounds the intermediate energies relative to their own
        dissociation limit.
        """
        initial_label, mid_label, final_label = labels
        initials = self.threshold_levels(initial_curve, 0, initial_count, reduced_mass,
                                         label=initial_label, step=step)
        intermediates = self.solve_rovib(intermediate_curve, J_mid, reduced_mass,
                                         intermediate_window, label=mid_label, step=step)
        if not intermediates:
            raise InsufficientSpectrumError(f"{mid_label}: no J'={J_mid} level in the window")
        final = self.lowest_level(final_curve, 0, reduced_mass, label=final_label, step=step)
        up = self.up_table(initials, intermediates, d_up, n_jobs)
        down = self.down_table(intermediates, final, d_down)
        pathways = self._ranked(initials, intermediates, final, up, down)
        _, minimum = self.radial.well_minimum(intermediate_curve)
        return {'initials': initials, 'intermediates': intermediates, 'final': final,
                'up': up, 'down': down, 'pathways': pathways, 'intermediate_minimum': minimum}

    @staticmethod
    def stirap_targets(analysis):
        """Figures of merit for the qualitative two-photon checks."""
        best = {}
        for pathway in analysis['pathways']:
            key = pathway.initial.v_from_threshold
            best[key] = max(best.get(key, 0.0), abs(pathway.metric))
        top = analysis['pathways'][0].intermediate
        strongest_down = analysis['intermediates'][int(np.argmax(np.abs(analysis['down'])))]
        return {
            'best_metric_by_initial': best,
            'best_initial': max(best, key=best.get),
            'top_intermediate_above_minimum': top.energy - analysis['intermediate_minimum'],
            'strongest_down_energy': strongest_down.energy,
        }

    @staticmethod
    def dipole_rows(levels, others, table, label_key):
        rows = []
        for i, level in enumerate(levels):
            for j, other in enumerate(others):
                rows.append({label_key: level.v_from_threshold if level.v_from_threshold is not None
                             else level.v,
                             'v_mid': other.v, 'E_mid_cm1': other.to_dict()['E_cm1'],
                             'd_ea0': float(table[i][j])})
        return rows

    # ---------------------------------------------------------- input

    @staticmethod
    def load_dipole_curve(path, upper, lower):
        """Two-column table (R in a0, d in e a0); '#' lines are comments."""
        note = ''
        with open(path, encoding='utf-8') as handle:
            for line in handle:
                if line.startswith('#') and 'note:' in line:
                    note = line.split('note:', 1)[1].strip()
        data = np.loadtxt(path, comments='#', ndmin=2)
        if data.shape[0] < 2 or data.shape[1] != 2:
            raise InvalidParameterError(f"{path}: a dipole table needs >= 2 rows of (R, d)")
        r, d = data[:, 0], data[:, 1]
        if np.any(np.diff(r) <= 0.0):
            raise InvalidParameterError(f"{path}: R column must be strictly increasing")
        return DipoleCurve(upper=upper, lower=lower, r=r, d=d, note=note)


# Global instance
rovib_service = RovibService()
