"""
Coupled-channels engine: interaction matrix, log-derivative propagation,
K/S-matrix matching and magnetic-field scans with resonance extraction.

The radial equation is psi'' = Q psi with Q(R) = 2 mu (W(R) - E).  Everything is
batched over a leading axis so that field points, trial energies or
perturbed Hamiltonians share one sweep through the radial grid.
"""

import logging
import os
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import curve_fit, linear_sum_assignment
from scipy.special import ive, kve, spherical_jn, spherical_yn

from models.physics import FieldScan, RadialGrid, ResonanceRecord, ScatteringResult
from services import units
from services.channel_service import channel_service
from services.errors import ClosedSystemError, InvalidParameterError, PropagationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CouplingStack:
    """W_b(R) = sum_k f_k(R) A_k[b] + C[b] + l(l+1)/(2 mu R^2) for every batch member b."""

    radial: Tuple[Callable, ...]
    operators: np.ndarray
    constant: np.ndarray
    ells: np.ndarray
    reduced_mass: float

    @property
    def batch(self):
        return self.constant.shape[0]

    @property
    def size(self):
        return self.constant.shape[-1]

    def radial_values(self, r):
        return np.array([np.broadcast_to(np.asarray(f(r), dtype=float), r.shape) for f in self.radial])

    def w(self, r, values):
        """W at a single radius given the pre-evaluated radial factors."""
        out = np.tensordot(values, self.operators, axes=1) + self.constant
        centrifugal = self.ells * (self.ells + 1) / (2.0 * self.reduced_mass * r ** 2)
        index = np.arange(self.size)
        out[:, index, index] += centrifugal
        return out

    @classmethod
    def single_channel(cls, potential, reduced_mass, ell=0, batch=1):
        return cls(radial=(potential,), operators=np.ones((1, batch, 1, 1)),
                   constant=np.zeros((batch, 1, 1)), ells=np.array([ell]),
                   reduced_mass=reduced_mass)


@dataclass(frozen=True)
class Sector:
    start: float
    step: float
    steps: int


def build_sectors(grid: RadialGrid, r_min=None, r_max=None, step_cap=np.inf):
    """Fixed even-step sector up to r_expand, then two-step sectors with growing step."""
    r_min = grid.r_min if r_min is None else r_min
    r_max = grid.r_max if r_max is None else r_max
    sectors = []
    r_fixed = min(grid.r_expand, r_max)
    if r_fixed > r_min:
        steps = 2 * int(np.ceil((r_fixed - r_min) / (2.0 * grid.step)))
        sectors.append(Sector(r_min, (r_fixed - r_min) / steps, steps))
    r = max(r_fixed, r_min)
    step = grid.step
    cap = min(grid.max_step, step_cap)
    while r < r_max - 1e-12:
        step = min(step * grid.growth, cap)
        step = max(step, grid.step)
        sectors.append(Sector(r, step, 2))
        r += 2.0 * step
    return sectors


def sector_points(sectors):
    return np.concatenate([s.start + s.step * np.arange(s.steps + 1) for s in sectors])


class ScatteringService:
    def __init__(self):
        self.channels = channel_service
        self.n_jobs = int(os.getenv('FRAG_THREADS', 1))
        self.chunk_size = 16
        self.wall = 1.0e20
        self.overlap_points = 3
        self.refine_tolerance = 1e-4
        self.unitarity_tolerance = 1e-8
        self.kink_factor = 50.0

    # ---------------------------------------------------------- assembly

    def assemble_coupling(self, basis, system, R, perturbation=None):
        """Symmetric W(R) in the channel basis at a single radius."""
        if not R > 0.0:
            raise InvalidParameterError(f"radius {R} outside the radial grid")
        stack = self.coupling_stack([basis], system, perturbations=None if perturbation is None
                                    else [perturbation])
        values = stack.radial_values(np.array([R]))[:, 0]
        return stack.w(R, values)[0]

    def operator_set(self, basis, system):
        p0, p1 = self.channels.spin_projectors(basis, system.fr, system.ag)
        m = self.channels.anisotropic_coupling(basis, system.fr, system.ag)
        return p0, p1, m

    def coupling_stack(self, bases, system, perturbations=None):
        """Stack of interaction matrices; `perturbations[b]` is added as a constant term."""
        operators = [self.operator_set(basis, system) for basis in bases]
        ops = np.stack([np.stack(o) for o in operators], axis=1)
        constant = np.stack([np.diag(basis.thresholds) for basis in bases])
        if perturbations is not None:
            constant = constant + np.stack(perturbations)
        return CouplingStack(radial=(system.singlet, system.triplet, system.coupling), operators=ops,
                             constant=constant, ells=bases[0].ells.astype(float),
                             reduced_mass=bases[0].reduced_mass)

    # ---------------------------------------------------------- propagation

    def propagate(self, stack, energies, sectors, y_start=None, count_nodes=False, inward=False):
        """Johnson log-derivative sweep through `sectors` for every batch member.

        Returns Y at the last point (r-derivative convention) and, if requested,
        the number of negative eigenvalues of (I + hY) accumulated along the way.
        """
        energies = np.asarray(energies, dtype=float)
        nb, n = stack.batch, stack.size
        identity = np.eye(n)
        if inward:
            sectors = [Sector(-s.start - s.step * s.steps, s.step, s.steps) for s in reversed(sectors)]
        points = sector_points(sectors)
        radii = -points if inward else points
        values = stack.radial_values(radii)
        y = np.broadcast_to(self.wall * identity, (nb, n, n)).copy() if y_start is None else y_start.copy()
        nodes = np.zeros(nb, dtype=int)
        shift = energies[:, None, None] * identity
        offset = 0
        for sector in sectors:
            h = sector.step
            for j in range(sector.steps + 1):
                index = offset + j
                q = 2.0 * stack.reduced_mass * (stack.w(radii[index], values[:, index]) - shift)
                if j == 0:
                    y = y + (h / 3.0) * q
                    continue
                denominator = identity + h * y
                if count_nodes:
                    nodes += np.sum(np.linalg.eigvalsh(denominator) < 0.0, axis=1)
                y = np.linalg.solve(denominator, y)
                if j % 2:
                    u = np.linalg.solve(identity - (h * h / 6.0) * q, q)
                    weight = 4.0
                else:
                    u = q
                    weight = 1.0 if j == sector.steps else 2.0
                y = y + (h / 3.0) * weight * u
            offset += sector.steps + 1
            if not np.all(np.isfinite(y)):
                raise PropagationError("non-finite log-derivative", radius=abs(radii[offset - 1]))
        y = 0.5 * (y + np.swapaxes(y, 1, 2))
        if inward:
            y = -y
        return (y, nodes) if count_nodes else y

    def step_cap(self, bases, energies):
        """Largest step keeping I - h^2 Q/6 safely invertible in closed channels."""
        kappa = max(np.sqrt(max(2.0 * b.reduced_mass * (np.max(b.thresholds) - e), 0.0))
                    for b, e in zip(bases, energies))
        return np.inf if kappa == 0.0 else 1.0 / kappa

    # ---------------------------------------------------------- matching

    @staticmethod
    def _riccati_open(ell, x):
        j = x * spherical_jn(ell, x)
        jp = spherical_jn(ell, x) + x * spherical_jn(ell, x, derivative=True)
        y = x * spherical_yn(ell, x)
        yp = spherical_yn(ell, x) + x * spherical_yn(ell, x, derivative=True)
        return j, jp, y, yp

    @staticmethod
    def _riccati_closed(ell, x):
        """Exponentially scaled sqrt(x) I_{l+1/2} and sqrt(x) K_{l+1/2} with x-derivatives."""
        nu = ell + 0.5
        root = np.sqrt(x)
        grow = root * ive(nu, x)
        grow_p = ive(nu, x) / (2.0 * root) + root * 0.5 * (ive(nu - 1, x) + ive(nu + 1, x))
        decay = root * kve(nu, x)
        decay_p = kve(nu, x) / (2.0 * root) - root * 0.5 * (kve(nu - 1, x) + kve(nu + 1, x))
        return grow, grow_p, decay, decay_p

    def decaying_log_derivative(self, ells, kappas, r):
        """d/dr ln of the decaying closed-channel solution at r (diagonal)."""
        out = np.empty(len(ells))
        for i, (ell, kappa) in enumerate(zip(ells, kappas)):
            if kappa == 0.0:
                out[i] = -ell / r
                continue
            _, _, decay, decay_p = self._riccati_closed(int(ell), kappa * r)
            out[i] = kappa * decay_p / decay
        return out

    def k_matrix(self, y, ells, thresholds, energy, reduced_mass, r):
        """Open-open K matrix from Y(r); channel wavenumbers are returned alongside."""
        n = len(ells)
        open_mask = energy > thresholds
        if not open_mask.any():
            raise ClosedSystemError("no open channel at this energy")
        wavenumbers = np.sqrt(2.0 * reduced_mass * np.abs(energy - thresholds))
        j, jp, yy, yp = (np.zeros((n, n)) for _ in range(4))
        for i, (ell, k) in enumerate(zip(ells, wavenumbers)):
            x = k * r
            if open_mask[i]:
                rj, rjp, ry, ryp = self._riccati_open(int(ell), x)
                j[i, i], jp[i, i] = rj / np.sqrt(k), np.sqrt(k) * rjp
                yy[i, i], yp[i, i] = ry / np.sqrt(k), np.sqrt(k) * ryp
            else:
                grow, grow_p, decay, decay_p = self._riccati_closed(int(ell), x)
                j[i, i], jp[i, i] = grow, k * grow_p
                yy[i, i], yp[i, i] = decay, k * decay_p
        k_full = np.linalg.solve(y @ yy - yp, y @ j - jp)
        index = np.nonzero(open_mask)[0]
        return k_full[np.ix_(index, index)], index, wavenumbers

    def scattering_result(self, basis, y, energy, field_gauss, r):
        k_open, index, wavenumbers = self.k_matrix(y, basis.ells, basis.thresholds, energy,
                                                   basis.reduced_mass, r)
        identity = np.eye(index.size)
        s_matrix = (identity + 1j * k_open) @ np.linalg.inv(identity - 1j * k_open)
        entrance = int(np.nonzero(index == basis.entrance_index)[0][0])
        s_ee = s_matrix[entrance, entrance]
        tan_delta = -1j * (s_ee - 1.0) / (s_ee + 1.0)
        length = -tan_delta / wavenumbers[basis.entrance_index]
        if index.size == 1:
            length = complex(length.real, 0.0)
        return ScatteringResult(
            field=field_gauss, energy=energy, s_matrix=s_matrix, scattering_length=complex(length),
            n_open=int(index.size),
            unitarity_error=float(np.max(np.abs(s_matrix.conj().T @ s_matrix - identity))),
            symmetry_error=float(np.max(np.abs(s_matrix - s_matrix.T))))

    def single_channel_phase(self, potential, reduced_mass, energy, grid, ell=0):
        """Phase shift of one channel; the oracle route used by the analytic checks."""
        stack = CouplingStack.single_channel(potential, reduced_mass, ell)
        sectors = build_sectors(grid)
        y = self.propagate(stack, [energy], sectors)[0]
        r = sector_points(sectors)[-1]
        k_open, _, _ = self.k_matrix(y, np.array([ell]), np.array([0.0]), energy, reduced_mass, r)
        return float(np.arctan(k_open[0, 0]))

    # ---------------------------------------------------------- field scans

    def bases_for(self, system, fields_gauss):
        return [self.channels.enumerate_channels(system.fr, system.ag, system.mtot, system.ell_values,
                                                 units.gauss_to_au(b)) for b in fields_gauss]

    def solve_fields(self, system, fields_gauss, step_cap=np.inf):
        """Scattering results for a batch of fields; one radial sweep for the whole batch."""
        bases = self.bases_for(system, fields_gauss)
        energies = np.array([b.thresholds[b.entrance_index] + system.collision_energy for b in bases])
        stack = self.coupling_stack(bases, system)
        sectors = build_sectors(system.grid, step_cap=step_cap)
        y = self.propagate(stack, energies, sectors)
        r = sector_points(sectors)[-1]
        return [self.scattering_result(basis, y[i], energies[i], fields_gauss[i], r)
                for i, basis in enumerate(bases)]

    def _solve_chunk(self, system, fields_gauss, step_cap):
        try:
            return [(r, None) for r in self.solve_fields(system, fields_gauss, step_cap)]
        except (PropagationError, ClosedSystemError, np.linalg.LinAlgError):
            if len(fields_gauss) == 1:
                raise
        results = []
        for b in fields_gauss:
            try:
                results.append((self.solve_fields(system, [b], step_cap)[0], None))
            except (PropagationError, ClosedSystemError, np.linalg.LinAlgError) as error:
                results.append((None, str(error)))
        return results

    def scan_cap(self, system, fields_gauss):
        ends = [fields_gauss[0], fields_gauss[-1]]
        bases = self.bases_for(system, ends)
        energies = [b.thresholds[b.entrance_index] + system.collision_energy for b in bases]
        return self.step_cap(bases, energies)

    def scan_field(self, system, fields_gauss, n_jobs=None):
        """a(B) on a sorted field grid; failures are recorded and the scan continues."""
        fields_gauss = np.asarray(fields_gauss, dtype=float)
        if np.any(np.diff(fields_gauss) <= 0.0):
            raise InvalidParameterError("field grid must be strictly increasing")
        cap = self.scan_cap(system, fields_gauss)
        chunks = [fields_gauss[i:i + self.chunk_size]
                  for i in range(0, fields_gauss.size, self.chunk_size)]
        n_jobs = self.n_jobs if n_jobs is None else n_jobs
        logger.info("scanning %d fields in %d chunks (l = %s, %d workers)", fields_gauss.size,
                    len(chunks), system.ell_values, n_jobs)
        outputs = Parallel(n_jobs=n_jobs)(delayed(self._solve_chunk)(system, chunk, cap)
                                          for chunk in chunks)
        results, failures = [], []
        for chunk, output in zip(chunks, outputs):
            for b, (result, error) in zip(chunk, output):
                results.append(result)
                if error is not None:
                    failures.append((float(b), error))
                    logger.warning("scan point B = %.6g G failed: %s", b, error)
        self._check_unitarity(results)
        return FieldScan(fields=fields_gauss, results=tuple(results),
                         ell_values=tuple(system.ell_values), failures=tuple(failures))

    def _check_unitarity(self, results):
        errors = [(r.field, max(r.unitarity_error, r.symmetry_error)) for r in results if r is not None]
        bad = [(b, e) for b, e in errors if not e < self.unitarity_tolerance]
        if bad:
            b, worst = max(bad, key=lambda item: item[1])
            logger.warning("S matrix off unitarity at %d field(s); worst %.3g at B = %.6g G",
                           len(bad), worst, b)

    def scattering_lengths_at(self, system, fields_gauss, step_cap=np.inf):
        return np.array([np.real(r.scattering_length)
                         for r in self.solve_fields(system, list(fields_gauss), step_cap)])

    # ---------------------------------------------------------- resonances

    @staticmethod
    def resonance_model(B, B0, width, a_bg):
        return a_bg * (1.0 - width / (B - B0))

    def _candidate_intervals(self, fields, lengths, refine):
        """Sign changes of a(B), plus sign changes found by sub-sampling sharp kinks."""
        intervals = [(fields[i], fields[i + 1], lengths[i], lengths[i + 1])
                     for i in range(fields.size - 1) if np.sign(lengths[i]) != np.sign(lengths[i + 1])]
        if refine is None or fields.size < 3:
            return intervals
        second = np.abs(lengths[:-2] - 2.0 * lengths[1:-1] + lengths[2:])
        scale = np.median(second) + 1e-300
        kinks = [i + 1 for i in np.nonzero(second > self.kink_factor * scale)[0]
                 if np.sign(lengths[i]) == np.sign(lengths[i + 1]) == np.sign(lengths[i + 2])]
        for i in kinks:
            sub = np.linspace(fields[i - 1], fields[i + 1], 17)
            values = refine(sub)
            intervals.extend((sub[k], sub[k + 1], values[k], values[k + 1]) for k in range(16)
                             if np.sign(values[k]) != np.sign(values[k + 1]))
        return sorted(set(intervals))

    def _bisect(self, intervals, refine, tolerance):
        """Shrink every sign-change interval below `tolerance` G; all in one batch per round."""
        intervals = [list(item) for item in intervals]
        samples = []
        while True:
            active = [k for k, (lo, hi, _, _) in enumerate(intervals) if hi - lo > tolerance]
            if not active:
                return [tuple(item) for item in intervals], samples
            mids = np.array([0.5 * (intervals[k][0] + intervals[k][1]) for k in active])
            values = refine(mids)
            for k, mid, value in zip(active, mids, values):
                samples.append((mid, value))
                lo, hi, a_lo, a_hi = intervals[k]
                if np.sign(value) == np.sign(a_lo):
                    intervals[k] = [mid, hi, value, a_hi]
                else:
                    intervals[k] = [lo, mid, a_lo, value]

    def find_resonances(self, scan, system=None, step_cap=np.inf, partial_wave='s',
                        refine_tolerance=None):
        """Poles of a(B): bracket, refine, classify pole/zero, fit a_bg (1 - Delta/(B - B0))."""
        tolerance = self.refine_tolerance if refine_tolerance is None else refine_tolerance
        lengths = scan.scattering_lengths()
        valid = np.isfinite(lengths)
        fields, lengths = scan.fields[valid], lengths[valid]
        if fields.size < 2:
            return []
        refine = None
        if system is not None:
            def refine(bs):
                return self.scattering_lengths_at(system, bs, step_cap)
        typical = np.median(np.abs(lengths))
        intervals = self._candidate_intervals(fields, lengths, refine)
        samples = []
        if refine is not None and intervals:
            intervals, samples = self._bisect(intervals, refine, tolerance)
        poles, zeros = [], []
        for lo, hi, a_lo, a_hi in intervals:
            if abs(a_lo) * abs(a_hi) > typical ** 2:
                # 1/a is continuous through a pole
                poles.append(lo + (hi - lo) * (1.0 / a_lo) / (1.0 / a_lo - 1.0 / a_hi))
            else:
                zeros.append(lo + (hi - lo) * a_lo / (a_lo - a_hi))
        all_fields = np.concatenate([fields, [s[0] for s in samples]])
        all_lengths = np.concatenate([lengths, [s[1] for s in samples]])
        order = np.argsort(all_fields)
        all_fields, all_lengths = all_fields[order], all_lengths[order]
        spacing = float(np.median(np.diff(fields)))
        poles = sorted(poles)
        records = []
        for k, b0 in enumerate(poles):
            left = poles[k - 1] if k > 0 else 2.0 * fields[0] - b0 - spacing
            right = poles[k + 1] if k + 1 < len(poles) else 2.0 * fields[-1] - b0 + spacing
            neighbours = [abs(b0 - poles[j]) for j in (k - 1, k + 1) if 0 <= j < len(poles)]
            if neighbours and min(neighbours) < self.overlap_points * spacing:
                logger.warning("overlapping resonances near B = %.6g G; reported unfitted", b0)
                records.append(ResonanceRecord(B0=b0, width=float('nan'), a_bg=float('nan'),
                                               partial_wave=partial_wave, fitted=False))
                continue
            window = ((all_fields > 0.5 * (left + b0)) & (all_fields < 0.5 * (b0 + right))
                      & (np.abs(all_fields - b0) > 1e-12))
            records.append(self._fit_resonance(b0, all_fields[window], all_lengths[window], zeros,
                                               partial_wave))
        logger.info("found %d resonances (%d zero crossings of a)", len(records), len(zeros))
        return records

    def _fit_resonance(self, b0, fields, lengths, zeros, partial_wave):
        a_bg = float(np.median(lengths))
        nearby = [z for z in zeros if fields.size and fields[0] <= z <= fields[-1]]
        if nearby:
            width = min(nearby, key=lambda z: abs(z - b0)) - b0
        else:
            width = float(np.median((1.0 - lengths / a_bg) * (fields - b0)))
        if fields.size < 4:
            return ResonanceRecord(B0=b0, width=width, a_bg=a_bg, partial_wave=partial_wave,
                                   fitted=False)
        try:
            params, _ = curve_fit(self.resonance_model, fields, lengths, p0=[b0, width, a_bg],
                                  xtol=1e-13, ftol=1e-13, maxfev=20000)
        except (RuntimeError, ValueError) as error:
            logger.warning("resonance fit near B = %.6g G failed: %s", b0, error)
            return ResonanceRecord(B0=b0, width=width, a_bg=a_bg, partial_wave=partial_wave,
                                   fitted=False)
        residual = lengths - self.resonance_model(fields, *params)
        scale = np.maximum(np.abs(lengths), abs(params[2]))
        return ResonanceRecord(B0=float(params[0]), width=float(params[1]), a_bg=float(params[2]),
                               partial_wave=partial_wave, fitted=True,
                               residual=float(np.sqrt(np.mean((residual / scale) ** 2))))

    @staticmethod
    def classify_partial_waves(records, control, tolerance=0.5):
        """s-wave if the l = {0} control scan shows a resonance within `tolerance` G, else d-wave."""
        control_fields = np.array([r.B0 for r in control])
        out = []
        for record in records:
            s_like = control_fields.size and np.min(np.abs(control_fields - record.B0)) < tolerance
            out.append(ResonanceRecord(B0=record.B0, width=record.width, a_bg=record.a_bg,
                                       partial_wave='s' if s_like else 'd',
                                       bound_state_index=record.bound_state_index,
                                       fitted=record.fitted, residual=record.residual))
        return out

    @staticmethod
    def resonance_density(records, b_min, b_max):
        span = b_max - b_min
        report = {}
        for wave in sorted({r.partial_wave for r in records if r.partial_wave} | {'s', 'd'}):
            positions = np.sort([r.B0 for r in records if r.partial_wave == wave])
            report[wave] = {
                'count': int(positions.size),
                'density_per_G': positions.size / span if span > 0 else float('nan'),
                'mean_spacing_G': float(np.mean(np.diff(positions))) if positions.size > 1
                else float('nan'),
            }
        return report

    @staticmethod
    def pair_poles_with_crossings(records, crossings, tolerance=0.5):
        """One-to-one assignment of poles to E(B) = 0 crossings within `tolerance` G."""
        crossings = np.asarray(crossings, dtype=float)
        paired = list(records)
        if not records or crossings.size == 0:
            return paired, list(range(len(records))), list(range(crossings.size))
        cost = np.abs(np.array([r.B0 for r in records])[:, None] - crossings[None, :])
        penalty = np.where(cost <= tolerance, cost, 1e6 + cost)
        rows, cols = linear_sum_assignment(penalty)
        matched_rows, matched_cols = set(), set()
        for i, j in zip(rows, cols):
            if cost[i, j] <= tolerance:
                r = records[i]
                paired[i] = ResonanceRecord(B0=r.B0, width=r.width, a_bg=r.a_bg,
                                            partial_wave=r.partial_wave, bound_state_index=int(j),
                                            fitted=r.fitted, residual=r.residual)
                matched_rows.add(i)
                matched_cols.add(j)
        unmatched_poles = [i for i in range(len(records)) if i not in matched_rows]
        unmatched_crossings = [j for j in range(crossings.size) if j not in matched_cols]
        return paired, unmatched_poles, unmatched_crossings


# Global instance
scattering_service = ScatteringService()
