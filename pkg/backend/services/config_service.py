"""
System configuration: TOML (or canonical JSON) in, validated SystemConfig out.

Keys carry their unit as a suffix and are converted to atomic units here, once.
Validation walks the whole document and reports every violation with its
dotted path instead of stopping at the first.
"""

import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from models.config import (POTENTIAL_KINDS, DipoleRef, PotentialBlock, ScanBlock, SolverBlock,
                           SystemConfig, TuneBlock)
from models.physics import (AtomSpec, CoupledSystem, DispersionTail, RadialGrid,
                            SpectroscopicConstants, SpinSplittingFit, SwitchingFunction)
from services import units
from services.errors import ConfigValidationError
from services.potential_service import potential_service

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[2]
DEFAULT_CONFIG = ROOT / 'datasets' / 'frag' / 'frag.toml'

# key -> (type, required, default)
META = {'name': ('str', True, None), 'provenance': ('list[str]', False, [])}
ATOM = {
    'label': ('str', True, None),
    'mass_amu': ('float', True, None),
    'nuclear_spin': ('float', True, None),
    'hyperfine_A_MHz': ('float', True, None),
    'g_i': ('float', True, None),
    'g_s': ('float', False, units.ELECTRON_G_FACTOR),
}
DISPERSION = {
    'C6_Eh_a06': ('float', True, None),
    'C8_Eh_a08': ('float', False, 0.0),
    'R_disp_a0': ('float', False, 22.0),
}
SPIN_ORBIT = {
    'A1_cm1': ('float', True, None), 'B1_per_a0': ('float', True, None), 'R1_a0': ('float', True, None),
    'A2_cm1': ('float', True, None), 'B2_per_a0': ('float', True, None), 'R2_a0': ('float', True, None),
    'include_dipolar': ('bool', False, True),
}
CONSTANTS = {
    'Re_a0': ('float', True, None),
    'De_cm1': ('float', True, None),
    'k_cm1_per_a02': ('float', True, None),
    'omega_e_cm1': ('float', True, None),
    'Be_cm1': ('float', True, None),
}
POTENTIAL = {
    'kind': ('str', True, None),
    **CONSTANTS,
    'R_cut_a0': ('float', False, None),
    'betas_per_a0': ('list[float]', False, []),
    'eta_per_a0': ('float', False, 0.0),
    'switch_center_a0': ('float', False, None),
    'switch_width_a0': ('float', False, None),
    'asymptote_cm1': ('float', False, 0.0),
    'reference': ('table', False, None),
    'tune': ('table', False, None),
}
REFERENCE = {
    'Re_a0': ('float', True, None),
    'De_cm1': ('float', True, None),
    'k_cm1_per_a02': ('float', False, float('nan')),
    'omega_e_cm1': ('float', True, None),
    'Be_cm1': ('float', True, None),
}
TUNE = {
    'objective': ('str', True, None),
    'target_a0': ('float', False, None),
    'target_count': ('int', False, None),
    'bounds_per_a0': ('list[float]', False, None),
}
DIPOLE = {'upper': ('str', True, None), 'lower': ('str', True, None), 'file': ('str', True, None)}
SCAN = {
    'B_min_G': ('float', True, None),
    'B_max_G': ('float', True, None),
    'B_step_G': ('float', True, None),
    'Mtot': ('float', True, None),
    'ell': ('list[int]', True, None),
    'collision_energy_uK': ('float', True, None),
}
GRID = {
    'r_min_a0': ('float', True, None),
    'r_max_a0': ('float', True, None),
    'step_a0': ('float', True, None),
    'r_expand_a0': ('float', True, None),
    'growth': ('float', False, 1.02),
    'max_step_a0': ('float', False, 1.0),
    'match_a0': ('float', False, 15.0),
    'bound_r_max_a0': ('float', False, 3000.0),
}
SOLVER = {
    'rovib_step_a0': ('float', False, 1e-3),
    'zero_energy_step_a0': ('float', False, 5e-3),
    'zero_energy_match_a0': ('float', False, 200.0),
    'energy_floor_kHz': ('float', False, 1.0),
    'refine_tolerance_G': ('float', False, 1e-4),
}
SECTIONS = {'meta': META, 'dispersion': DISPERSION, 'spin_orbit': SPIN_ORBIT, 'scan': SCAN,
            'grid': GRID, 'solver': SOLVER}
TOP_LEVEL = set(SECTIONS) | {'atoms', 'potentials', 'dipoles'}


def _type_ok(kind, value):
    if kind == 'str':
        return isinstance(value, str)
    if kind == 'bool':
        return isinstance(value, bool)
    if kind == 'int':
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == 'float':
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind == 'table':
        return isinstance(value, dict)
    if kind.startswith('list['):
        inner = kind[5:-1]
        return isinstance(value, list) and all(_type_ok(inner, v) for v in value)
    return False


class ConfigService:
    def __init__(self):
        self.potentials = potential_service
        self.default_path = os.getenv('FRAG_CONFIG', str(DEFAULT_CONFIG))

    # ---------------------------------------------------------- reading

    def read_document(self, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigValidationError([f"{path}: file not found"])
        try:
            if path.suffix == '.json':
                return json.loads(path.read_text(encoding='utf-8'))
            with open(path, 'rb') as handle:
                return tomllib.load(handle)
        except (ValueError, tomllib.TOMLDecodeError) as error:
            raise ConfigValidationError([f"{path}: {error}"]) from error

    def load_config(self, path=None):
        """Parse and validate; raises ConfigValidationError listing every violation."""
        path = Path(path or self.default_path)
        document = self.read_document(path)
        violations = []
        config = self._build(document, path.resolve().parent, violations)
        if violations:
            for violation in violations:
                logger.error("config: %s", violation)
            raise ConfigValidationError(violations)
        logger.info("loaded %s (%s), hash %s", path, config.name, self.config_hash(config)[:12])
        return config

    # ---------------------------------------------------------- schema walk

    @staticmethod
    def _section(table, schema, where, violations):
        """Typed values of one table with defaults filled in; records violations."""
        if not isinstance(table, dict):
            violations.append(f"{where}: expected a table")
            return {key: spec[2] for key, spec in schema.items()}
        out = {}
        for key in sorted(set(table) - set(schema)):
            violations.append(f"{where}.{key}: unknown key")
        for key, (kind, required, default) in schema.items():
            if key not in table:
                if required:
                    violations.append(f"{where}.{key}: missing")
                out[key] = default
                continue
            value = table[key]
            if not _type_ok(kind, value):
                violations.append(f"{where}.{key}: expected {kind}, got {type(value).__name__}")
                out[key] = default
                continue
            out[key] = [float(v) for v in value] if kind == 'list[float]' else (
                float(value) if kind == 'float' else value)
        return out

    @staticmethod
    def _positive(values, keys, where, violations, allow_zero=False):
        for key in keys:
            value = values.get(key)
            if value is None:
                continue
            if not np.isfinite(value) or value < 0.0 or (value == 0.0 and not allow_zero):
                bound = '>= 0' if allow_zero else '> 0'
                violations.append(f"{where}.{key}: must be {bound}, got {value}")

    def _atom(self, table, where, violations):
        values = self._section(table, ATOM, where, violations)
        self._positive(values, ['mass_amu'], where, violations)
        spin = values.get('nuclear_spin')
        if spin is not None and (spin < 0.0 or abs(2.0 * spin - round(2.0 * spin)) > 1e-12):
            violations.append(f"{where}.nuclear_spin: must be a non-negative half-integer, got {spin}")
        if any(values[key] is None for key in ('label', 'mass_amu', 'nuclear_spin',
                                               'hyperfine_A_MHz', 'g_i')):
            return None
        return AtomSpec(label=values['label'],
                        mass=units.amu_to_electron_masses(values['mass_amu']),
                        nuclear_spin=values['nuclear_spin'],
                        hyperfine_a=units.mhz_to_hartree(values['hyperfine_A_MHz']),
                        g_s=values['g_s'], g_i=values['g_i'])

    @staticmethod
    def _constants(values):
        return SpectroscopicConstants(Re=values['Re_a0'], De=units.cm1_to_hartree(values['De_cm1']),
                                      spring_k=units.cm1_to_hartree(values['k_cm1_per_a02']),
                                      omega_e=units.cm1_to_hartree(values['omega_e_cm1']),
                                      Be=units.cm1_to_hartree(values['Be_cm1']))

    def _potential(self, label, table, where, violations):
        values = self._section(table, POTENTIAL, where, violations)
        self._positive(values, ['Re_a0', 'De_cm1', 'k_cm1_per_a02', 'omega_e_cm1', 'Be_cm1',
                                'R_cut_a0', 'switch_width_a0'], where, violations)
        kind = values.get('kind')
        if kind is not None and kind not in POTENTIAL_KINDS:
            violations.append(f"{where}.kind: one of {', '.join(POTENTIAL_KINDS)}, got '{kind}'")
        if kind in ('singlet', 'barycenter') and values.get('R_cut_a0') is None:
            violations.append(f"{where}.R_cut_a0: required for a {kind} curve")
        if (values.get('switch_center_a0') is None) != (values.get('switch_width_a0') is None):
            violations.append(f"{where}: switch_center_a0 and switch_width_a0 go together")
        reference = None
        if values.get('reference') is not None:
            ref = self._section(values['reference'], REFERENCE, f"{where}.reference", violations)
            self._positive(ref, ['Re_a0', 'De_cm1', 'omega_e_cm1', 'Be_cm1'], f"{where}.reference",
                           violations)
            if all(ref[key] is not None for key in REFERENCE):
                reference = self._constants(ref)
        tune = None
        if values.get('tune') is not None:
            tune = self._tune(values['tune'], f"{where}.tune", violations)
        if any(values[key] is None for key in ('kind', *CONSTANTS)):
            return None
        switch = None
        if values['switch_center_a0'] is not None and values['switch_width_a0'] is not None:
            switch = SwitchingFunction(center=values['switch_center_a0'],
                                       width=values['switch_width_a0'])
        return PotentialBlock(label=label, kind=kind, constants=self._constants(values),
                              r_cut=values['R_cut_a0'], betas=tuple(values['betas_per_a0'] or ()),
                              eta=values['eta_per_a0'], switch=switch,
                              asymptote=units.cm1_to_hartree(values['asymptote_cm1']),
                              reference=reference, tune=tune)

    def _tune(self, table, where, violations):
        values = self._section(table, TUNE, where, violations)
        objective = values.get('objective')
        if objective == 'scattering_length':
            target = values['target_a0']
            if target is None:
                violations.append(f"{where}.target_a0: required for objective 'scattering_length'")
        elif objective == 'bound_state_count':
            target = values['target_count']
            if target is None or target < 0:
                violations.append(f"{where}.target_count: non-negative integer required")
        else:
            if objective is not None:
                violations.append(f"{where}.objective: 'bound_state_count' or 'scattering_length', "
                                  f"got '{objective}'")
            return None
        bounds = values.get('bounds_per_a0')
        if bounds is not None and (len(bounds) != 2 or not bounds[0] < bounds[1]):
            violations.append(f"{where}.bounds_per_a0: expected [lower, upper] with lower < upper")
            bounds = None
        if target is None:
            return None
        return TuneBlock(objective=objective, target=float(target),
                         bounds=tuple(bounds) if bounds else None)

    def _build(self, document, base_dir, violations):
        if not isinstance(document, dict):
            violations.append("document: expected a table")
            return None
        for key in sorted(set(document) - TOP_LEVEL):
            violations.append(f"{key}: unknown key")
        sections = {}
        for name, schema in SECTIONS.items():
            if name in ('solver',) and name not in document:
                sections[name] = {key: spec[2] for key, spec in schema.items()}
                continue
            if name not in document:
                violations.append(f"{name}: missing")
                sections[name] = {key: spec[2] for key, spec in schema.items()}
                continue
            sections[name] = self._section(document[name], schema, name, violations)

        atoms_table = document.get('atoms', {})
        if not isinstance(atoms_table, dict):
            atoms_table = {}
            violations.append("atoms: expected a table")
        for key in sorted(set(atoms_table) - {'fr', 'ag'}):
            violations.append(f"atoms.{key}: unknown key")
        atoms = {}
        for key in ('fr', 'ag'):
            if key not in atoms_table:
                violations.append(f"atoms.{key}: missing")
                continue
            atoms[key] = self._atom(atoms_table[key], f"atoms.{key}", violations)

        dispersion = sections['dispersion']
        self._positive(dispersion, ['C6_Eh_a06', 'R_disp_a0'], 'dispersion', violations)
        self._positive(dispersion, ['C8_Eh_a08'], 'dispersion', violations, allow_zero=True)
        spin = sections['spin_orbit']
        self._positive(spin, ['A1_cm1', 'B1_per_a0', 'A2_cm1', 'B2_per_a0'], 'spin_orbit', violations)

        potentials = {}
        table = document.get('potentials', {})
        if not isinstance(table, dict) or not table:
            violations.append("potentials: at least one curve is required")
            table = {}
        for label, block in table.items():
            built = self._potential(label, block, f"potentials.{label}", violations)
            if built is not None:
                potentials[label] = built
        for kind in ('singlet', 'barycenter'):
            count = sum(1 for block in potentials.values() if block.kind == kind)
            if count != 1:
                violations.append(f"potentials: exactly one '{kind}' curve required, found {count}")

        dipoles = self._dipoles(document.get('dipoles', []), base_dir, violations)
        scan = self._scan(sections['scan'], atoms, violations)
        grid = self._grid(sections['grid'], violations)
        solver_values = sections['solver']
        self._positive(solver_values, list(SOLVER), 'solver', violations)

        if violations:
            return None
        provenance = tuple(sections['meta']['provenance'] or ())
        solver = SolverBlock(rovib_step=solver_values['rovib_step_a0'],
                             zero_energy_step=solver_values['zero_energy_step_a0'],
                             zero_energy_match=solver_values['zero_energy_match_a0'],
                             energy_floor=solver_values['energy_floor_kHz'] * 1e3 * units.HARTREE_PER_HZ,
                             refine_tolerance=solver_values['refine_tolerance_G'])
        grid_values = sections['grid']
        return SystemConfig(
            name=sections['meta']['name'], fr=atoms['fr'], ag=atoms['ag'],
            tail=DispersionTail(C6=dispersion['C6_Eh_a06'], C8=dispersion['C8_Eh_a08']),
            r_disp=dispersion['R_disp_a0'],
            spin_fit=SpinSplittingFit(A1=units.cm1_to_hartree(spin['A1_cm1']), B1=spin['B1_per_a0'],
                                      R1=spin['R1_a0'], A2=units.cm1_to_hartree(spin['A2_cm1']),
                                      B2=spin['B2_per_a0'], R2=spin['R2_a0']),
            include_dipolar=spin['include_dipolar'], potentials=potentials, dipoles=dipoles,
            scan=scan, grid=grid, match_radius=grid_values['match_a0'],
            bound_r_max=grid_values['bound_r_max_a0'], solver=solver,
            source=base_dir, provenance=provenance, raw=document)

    def _dipoles(self, entries, base_dir, violations):
        if not isinstance(entries, list):
            violations.append("dipoles: expected an array of tables")
            return ()
        refs = []
        for i, entry in enumerate(entries):
            where = f"dipoles[{i}]"
            values = self._section(entry, DIPOLE, where, violations)
            if values['file'] is None:
                continue
            path = Path(values['file'])
            path = path if path.is_absolute() else base_dir / path
            if not path.is_file():
                violations.append(f"{where}.file: '{values['file']}' does not exist")
                continue
            if values['upper'] is not None and values['lower'] is not None:
                refs.append(DipoleRef(upper=values['upper'], lower=values['lower'], path=path))
        return tuple(refs)

    def _scan(self, values, atoms, violations):
        self._positive(values, ['B_step_G', 'collision_energy_uK'], 'scan', violations)
        self._positive(values, ['B_min_G'], 'scan', violations, allow_zero=True)
        if values['B_min_G'] is not None and values['B_max_G'] is not None \
                and not values['B_max_G'] > values['B_min_G']:
            violations.append("scan.B_max_G: must exceed B_min_G")
        ells = values.get('ell') or []
        if values.get('ell') is not None:
            if not ells or any(ell < 0 for ell in ells):
                violations.append("scan.ell: non-empty list of non-negative integers required")
            elif len({ell % 2 for ell in ells}) > 1:
                violations.append(f"scan.ell: mixed parity {ells}")
        mtot = values.get('Mtot')
        if mtot is not None and atoms.get('fr') and atoms.get('ag'):
            twice = 2.0 * (atoms['fr'].nuclear_spin + 0.5 + atoms['ag'].nuclear_spin + 0.5)
            if abs(2.0 * mtot - round(2.0 * mtot)) > 1e-12 or (round(2.0 * mtot) - round(twice)) % 2:
                violations.append(f"scan.Mtot: {mtot} not reachable for these spins")
        if any(values[key] is None for key in SCAN):
            return None
        return ScanBlock(b_min=values['B_min_G'], b_max=values['B_max_G'], b_step=values['B_step_G'],
                         mtot=values['Mtot'], ell_values=tuple(sorted(set(ells))),
                         collision_energy=units.microkelvin_to_hartree(values['collision_energy_uK']))

    def _grid(self, values, violations):
        self._positive(values, list(GRID), 'grid', violations)
        keys = ('r_min_a0', 'match_a0', 'r_expand_a0', 'r_max_a0')
        if all(values[key] is not None for key in keys):
            if not values['r_min_a0'] < values['match_a0'] <= values['r_expand_a0'] < values['r_max_a0']:
                violations.append("grid: need r_min_a0 < match_a0 <= r_expand_a0 < r_max_a0")
            if not values['bound_r_max_a0'] > values['r_expand_a0']:
                violations.append("grid.bound_r_max_a0: must exceed r_expand_a0")
        if values['growth'] is not None and values['growth'] < 1.0:
            violations.append("grid.growth: must be >= 1")
        if any(values[key] is None for key in GRID):
            return None
        return RadialGrid(r_min=values['r_min_a0'], r_max=values['r_max_a0'], step=values['step_a0'],
                          r_expand=values['r_expand_a0'], growth=values['growth'],
                          max_step=values['max_step_a0'])

    # ---------------------------------------------------------- serialization

    def canonical(self, config):
        """The document with dipole paths made absolute; stable under key reordering."""
        document = json.loads(json.dumps(config.raw))
        for entry, ref in zip(document.get('dipoles', []), config.dipoles):
            entry['file'] = str(ref.path)
        return document

    def serialize(self, config, path):
        path = Path(path)
        path.write_text(json.dumps(self.canonical(config), sort_keys=True, indent=2) + '\n',
                        encoding='utf-8')
        return path

    def config_hash(self, config):
        """sha256 of the canonical document, with file references replaced by their digests."""
        document = self.canonical(config)
        for entry, ref in zip(document.get('dipoles', []), config.dipoles):
            entry['file'] = hashlib.sha256(ref.path.read_bytes()).hexdigest()
        payload = json.dumps(document, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()

    # ---------------------------------------------------------- domain objects

    def build_curves(self, config):
        """Every potential curve by label, including the derived triplet components."""
        mu = units.reduced_mass(config.fr.mass, config.ag.mass)
        coupling = self.spin_coupling(config)
        curves = {}
        for label, block in config.potentials.items():
            if block.kind == 'excited':
                curve = self.potentials.build_short_range(block.constants, mu, block.betas)
                if block.eta:
                    curve = curve.with_inner_wall(block.eta)
            elif block.kind == 'singlet':
                short = self.potentials.build_short_range(block.constants, mu, block.betas)
                curve = self.potentials.stitch_potential(short.with_inner_wall(block.eta), config.tail,
                                                         block.r_cut, block.switch, label,
                                                         config.r_disp)
            else:
                curve = self.potentials.build_triplet_barycenter(block.constants, config.spin_fit,
                                                                 config.tail, block.r_cut, mu,
                                                                 block.betas, block.switch, label,
                                                                 config.r_disp)
                if block.eta:
                    curve = curve.with_inner_wall(block.eta)
            if block.tune is not None:
                curve = self.potentials.tune_inner_wall(
                    curve, mu, block.tune.objective, block.tune.target, block.tune.bounds,
                    config.solver.zero_energy_step, config.solver.zero_energy_match)
            curves[label] = curve
        barycenter = curves[self.label_of(config, 'barycenter')]
        curves['1(0-)'], curves['1(1)'] = self.potentials.triplet_components(barycenter, coupling)
        return curves

    def spin_coupling(self, config):
        return self.potentials.lambda_total(config.spin_fit, config.fr.g_s, config.include_dipolar)

    @staticmethod
    def label_of(config, kind):
        return next(label for label, block in config.potentials.items() if block.kind == kind)

    def coupled_system(self, config, curves=None, ell_values=None):
        curves = curves or self.build_curves(config)
        return CoupledSystem(
            fr=config.fr, ag=config.ag, singlet=curves[self.label_of(config, 'singlet')],
            triplet=curves[self.label_of(config, 'barycenter')], coupling=self.spin_coupling(config),
            mtot=config.scan.mtot,
            ell_values=tuple(ell_values) if ell_values is not None else config.scan.ell_values,
            grid=config.grid, collision_energy=config.scan.collision_energy,
            match_radius=config.match_radius, bound_r_max=config.bound_r_max,
            energy_floor=config.solver.energy_floor)


# Global instance
config_service = ConfigService()
