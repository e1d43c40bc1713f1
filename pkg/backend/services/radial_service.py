"""
Single-channel radial solver: renormalized Numerov on a logarithmic grid.

R = exp(x) with x uniform; psi(R) = sqrt(R) u(x) turns the radial equation into
u'' = [R^2 Q(R) + 1/4] u, Q = 2 mu (V_eff - E).  Eigenvalues are bracketed by the
Sturm node count of the outward ratio sweep and bisected, vectorised over energies.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gamma, jv

from services.errors import GridError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MappedGrid:
    r: np.ndarray
    h: float
    v_eff: np.ndarray
    reduced_mass: float

    @property
    def size(self):
        return self.r.size

    @property
    def weights(self):
        return self.r * self.h

    def t_matrix(self, energies):
        """Numerov T_i = h^2 q_i / 12 for every grid point (rows) and energy (columns)."""
        energies = np.atleast_1d(energies)
        q = (self.r[:, None] ** 2 * 2.0 * self.reduced_mass * (self.v_eff[:, None] - energies[None, :])
             + 0.25)
        return self.h ** 2 * q / 12.0


class RadialSolver:
    def __init__(self):
        self.batch_size = int(os.getenv('FRAG_NUMEROV_BATCH', 64))
        self.decay_integral = 35.0
        self.r_floor = 1.0
        self.r_cap = float(os.getenv('FRAG_NUMEROV_RCAP', 6000.0))

    # ------------------------------------------------------------------ grids

    def well_minimum(self, curve, r_lo=2.0, r_hi=40.0):
        result = minimize_scalar(lambda R: float(curve(R)), bounds=(r_lo, r_hi), method='bounded',
                                 options={'xatol': 1e-10})
        return float(result.x), float(result.fun)

    def _centrifugal(self, J, reduced_mass, r):
        return J * (J + 1) / (2.0 * reduced_mass * r ** 2)

    def _inner_limit(self, curve, reduced_mass, J, energy, r_ref, h_x):
        r = np.arange(r_ref, self.r_floor, -0.002)
        q = 2.0 * reduced_mass * (curve(r) + self._centrifugal(J, reduced_mass, r) - energy)
        kappa = np.sqrt(np.clip(q, 0.0, None))
        integral = np.cumsum(kappa) * 0.002
        t_value = h_x ** 2 * (r ** 2 * q + 0.25) / 12.0
        stop = np.nonzero((integral >= self.decay_integral) | (t_value >= 0.5))[0]
        return float(r[stop[0]]) if stop.size else float(r[-1])

    def _outer_limit(self, curve, reduced_mass, J, energy, r_ref):
        if energy >= 0.0:
            return self.r_cap
        n = int(np.ceil(np.log(self.r_cap / r_ref) / np.log(1.001)))
        r = r_ref * 1.001 ** np.arange(n + 1)
        q = 2.0 * reduced_mass * (curve(r) + self._centrifugal(J, reduced_mass, r) - energy)
        kappa = np.sqrt(np.clip(q, 0.0, None))
        integral = np.cumsum(kappa * np.gradient(r))
        stop = np.nonzero(integral >= self.decay_integral)[0]
        return float(r[stop[0]]) if stop.size else self.r_cap

    def build_grid(self, curve, reduced_mass, J=0, energy_ceiling=0.0, step=1e-3,
                   r_min=None, r_max=None):
        """Log grid whose spacing near the well minimum is `step` a0."""
        r_ref, _ = self.well_minimum(curve)
        h_x = step / r_ref
        if r_min is None:
            r_min = self._inner_limit(curve, reduced_mass, J, energy_ceiling, r_ref, h_x)
        if r_max is None:
            r_max = self._outer_limit(curve, reduced_mass, J, energy_ceiling, r_ref)
        if not r_min < r_max:
            raise GridError(f"empty radial grid [{r_min}, {r_max}]")
        n = int(np.ceil(np.log(r_max / r_min) / h_x)) + 1
        r = r_min * np.exp(h_x * np.arange(n))
        v_eff = curve(r) + self._centrifugal(J, reduced_mass, r)
        return MappedGrid(r=r, h=h_x, v_eff=np.asarray(v_eff, dtype=float), reduced_mass=reduced_mass)

    # ---------------------------------------------------------------- sweeps

    def _ratio_matrix(self, grid, energies):
        t = grid.t_matrix(energies)
        if np.any(t >= 1.0):
            index = int(np.nonzero((t >= 1.0).any(axis=1))[0][0])
            raise GridError(f"Numerov step too coarse at R = {grid.r[index]:.4g} a0")
        return t, 12.0 / (1.0 - t) - 10.0

    def node_counts(self, grid, energies):
        """Number of eigenvalues below each energy (Dirichlet walls at both grid ends)."""
        energies = np.atleast_1d(np.asarray(energies, dtype=float))
        counts = np.zeros(energies.size, dtype=int)
        for start in range(0, energies.size, self.batch_size):
            chunk = energies[start:start + self.batch_size]
            _, u = self._ratio_matrix(grid, chunk)
            inverse = np.zeros(chunk.size)
            nodes = np.zeros(chunk.size, dtype=int)
            for i in range(grid.size):
                ratio = u[i] - inverse
                nodes += ratio < 0.0
                inverse = 1.0 / ratio
            counts[start:start + chunk.size] = nodes
        return counts

    def wavefunction(self, grid, energy):
        """Unit-normalised psi(R) at an eigenvalue, matched at the outermost turning point."""
        t, u = self._ratio_matrix(grid, np.array([energy]))
        t, u = t[:, 0], u[:, 0]
        allowed = np.nonzero(grid.v_eff < energy)[0]
        m = int(allowed[-1]) if allowed.size else int(np.argmin(grid.v_eff))
        n = grid.size
        outward = np.empty(m)
        inverse = 0.0
        for i in range(m):
            outward[i] = u[i] - inverse
            inverse = 1.0 / outward[i]
        inward = np.empty(n)
        inverse = 0.0
        for i in range(n - 1, m, -1):
            inward[i] = u[i] - inverse
            inverse = 1.0 / inward[i]
        f = np.zeros(n)
        f[m] = 1.0
        for i in range(m - 1, -1, -1):
            f[i] = f[i + 1] / outward[i]
        for i in range(m + 1, n):
            f[i] = f[i - 1] / inward[i]
        psi = f / (1.0 - t) * np.sqrt(grid.r)
        norm = np.sqrt(np.sum(psi ** 2 * grid.weights))
        psi = psi / norm
        # sign convention: positive outermost lobe
        if psi[m] < 0.0:
            psi = -psi
        return psi

    @staticmethod
    def count_nodes(psi, floor=1e-10):
        significant = psi[np.abs(psi) > floor * np.max(np.abs(psi))]
        return int(np.sum(np.signbit(significant[1:]) != np.signbit(significant[:-1])))

    # ----------------------------------------------------------- eigenvalues

    def eigenvalues(self, grid, e_lo, e_hi, tolerance=1e-14):
        """All eigenvalues in (e_lo, e_hi] with their vibrational index."""
        c_lo, c_hi = self.node_counts(grid, [e_lo, e_hi])
        indices = np.arange(c_lo, c_hi)
        if indices.size == 0:
            return indices, np.array([])
        lo = np.full(indices.size, float(e_lo))
        hi = np.full(indices.size, float(e_hi))
        while True:
            width = hi - lo
            active = width > tolerance + 1e-12 * np.abs(hi)
            if not active.any():
                break
            mid = 0.5 * (lo[active] + hi[active])
            below = self.node_counts(grid, mid) > indices[active]
            hi[active] = np.where(below, mid, hi[active])
            lo[active] = np.where(below, lo[active], mid)
        energies = 0.5 * (lo + hi)
        close = np.nonzero(np.diff(energies) <= 2.0 * tolerance)[0]
        for i in close:
            logger.warning("levels v=%d and v=%d unresolved at tolerance %.3g E_h",
                           indices[i], indices[i + 1], tolerance)
        return indices, energies

    def level_count(self, grid, energy):
        return int(self.node_counts(grid, [energy])[0])

    # ------------------------------------------------------------ zero energy

    @staticmethod
    def _tail_solutions(R, c6, reduced_mass):
        if c6 <= 0.0:
            return np.ones_like(R), R
        beta = (2.0 * reduced_mass * c6) ** 0.25
        x = beta ** 2 / (2.0 * R ** 2)
        return np.sqrt(R) * jv(0.25, x), np.sqrt(R) * jv(-0.25, x)

    def zero_energy(self, curve, reduced_mass, c6=0.0, step=5e-3, r_match=200.0, r_min=None):
        """s-wave scattering length and bound-state count at zero collision energy."""
        r_ref, _ = self.well_minimum(curve)
        h_x = step / r_ref
        if r_min is None:
            r_min = self._inner_limit(curve, reduced_mass, 0, 0.0, r_ref, h_x)
        n = int(np.ceil(np.log(r_match / r_min) / h_x)) + 1
        r = r_min * np.exp(h_x * np.arange(n))
        grid = MappedGrid(r=r, h=h_x, v_eff=np.asarray(curve(r), dtype=float),
                          reduced_mass=reduced_mass)
        t, u = self._ratio_matrix(grid, np.array([0.0]))
        t, u = t[:, 0], u[:, 0]
        inverse = 0.0
        nodes = 0
        ratio = 0.0
        for i in range(n - 1):
            ratio = u[i] - inverse
            nodes += ratio < 0.0
            inverse = 1.0 / ratio
        # ratio = F[n-1]/F[n-2]; convert to psi ratio
        rho = ratio * (1.0 - t[n - 2]) / (1.0 - t[n - 1]) * np.sqrt(r[n - 1] / r[n - 2])
        f1, f2 = self._tail_solutions(r[n - 2:n], c6, reduced_mass)
        a_over_b = -(f2[1] - rho * f2[0]) / (f1[1] - rho * f1[0])
        if c6 > 0.0:
            beta = (2.0 * reduced_mass * c6) ** 0.25
            length = -a_over_b * beta * gamma(0.75) / (2.0 * gamma(1.25))
        else:
            length = -a_over_b
        # nodes of the matched tail solution beyond the matching radius
        far = r[n - 1] * np.geomspace(1.0, 1e5, 4000)
        g1, g2 = self._tail_solutions(far, c6, reduced_mass)
        tail = a_over_b * g1 + g2
        nodes += int(np.sum(np.signbit(tail[1:]) != np.signbit(tail[:-1])))
        return float(length), int(nodes)


# Global instance
radial_solver = RadialSolver()
