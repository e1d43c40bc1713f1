import argparse
import logging
import os
import re
from dataclasses import replace

import numpy as np
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Add parent directories to Python path
import sys
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '../..'))

# Import models and services
from services import units
from services.bound_state_service import bound_state_service
from services.channel_service import channel_service
from services.config_service import config_service
from services.errors import FragError, InvalidParameterError, NumericalError
from services.output_service import FORMATS, OutputService, WarningCollector
from services.potential_service import potential_service
from services.radial_service import radial_solver
from services.rovib_service import rovib_service
from services.scattering_service import scattering_service
from services.validation_service import validation_service

logger = logging.getLogger('frag')

CURVE_RANGE = (3.0, 60.0)
DEFAULT_STIRAP_SPAN_CM1 = 4000.0
WAVE_LETTERS = 'spdfghik'


def parse_ells(text):
    try:
        ells = sorted({int(part) for part in text.split(',') if part.strip()})
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from error
    if not ells or ells[0] < 0:
        raise argparse.ArgumentTypeError("partial waves must be non-negative integers")
    return tuple(ells)


def wave_label(ells):
    """Spectroscopic letter of a single partial wave; None for a set of several."""
    if len(ells) != 1:
        return None
    ell = ells[0]
    return WAVE_LETTERS[ell] if ell < len(WAVE_LETTERS) else f"l={ell}"


def file_label(label):
    """'2(0+)' -> '2_0+', usable in file names."""
    return re.sub(r'[^A-Za-z0-9+\-]+', '_', label).strip('_')


def print_table(rows, columns):
    print('  '.join(columns))
    for row in rows:
        cells = []
        for key in columns:
            value = row.get(key)
            cells.append(f"{value:.6g}" if isinstance(value, float) else str(value))
        print('  '.join(cells))


# ---------------------------------------------------------------- helpers

def _scan_settings(args, config):
    scan = config.scan
    scan = replace(scan,
                   b_min=scan.b_min if getattr(args, 'b_min', None) is None else args.b_min,
                   b_max=scan.b_max if getattr(args, 'b_max', None) is None else args.b_max,
                   b_step=scan.b_step if getattr(args, 'b_step', None) is None else args.b_step,
                   mtot=scan.mtot if getattr(args, 'mtot', None) is None else args.mtot,
                   ell_values=scan.ell_values if getattr(args, 'ell', None) is None else args.ell)
    if not scan.b_max > scan.b_min or not scan.b_step > 0.0:
        raise InvalidParameterError("need B_min < B_max and B_step > 0")
    if len({ell % 2 for ell in scan.ell_values}) > 1:
        raise InvalidParameterError(f"partial waves {scan.ell_values} mix parities")
    return scan


def _system(config, curves, scan, ell_values=None):
    system = config_service.coupled_system(config, curves, ell_values or scan.ell_values)
    return replace(system, mtot=scan.mtot)


def _curve(curves, label):
    if label not in curves:
        raise InvalidParameterError(f"unknown state '{label}' (known: {', '.join(sorted(curves))})")
    return curves[label]


def _dipole(config, upper, lower):
    ref = config.dipole(upper, lower)
    if ref is None:
        raise InvalidParameterError(f"no dipole curve {upper} <- {lower} in the configuration")
    return rovib_service.load_dipole_curve(ref.path, upper, lower)


def _ell_tag(ells):
    return ''.join(str(ell) for ell in ells)


# ---------------------------------------------------------------- commands

def cmd_potentials(args, config, output):
    curves = config_service.build_curves(config)
    mu = units.reduced_mass(config.fr.mass, config.ag.mass)
    rows = []
    for label, block in config.potentials.items():
        row = potential_service.summary_row(label, block.constants, mu, block.reference)
        row['kind'] = block.kind
        row['eta_per_a0'] = getattr(curves[label], 'eta', 0.0)
        row['asymptote_cm1'] = units.hartree_to_cm1(block.asymptote)
        rows.append(row)
    output.write_table('potentials_summary', rows)
    for label, curve in curves.items():
        block = config.potentials.get(label)
        shift = units.hartree_to_cm1(block.asymptote) if block else 0.0
        r, v = potential_service.curve_table(curve, *CURVE_RANGE)
        output.write_columns(f"curve_{file_label(label)}.dat",
                             f"{label}: R_a0 V_cm1 (own limit) V_cm1 (shared origin)", r, v, v + shift)
    singlet = curves[config_service.label_of(config, 'singlet')]
    triplet = curves[config_service.label_of(config, 'barycenter')]
    # compared where the singlet is bound; both equal the tail beyond the stitching windows
    r = np.linspace(CURVE_RANGE[0], config.r_disp, 4000, endpoint=False)
    r = r[np.argmax(np.asarray(singlet(r)) < 0.0):]
    if potential_service.curves_cross(singlet, triplet, r):
        logger.warning("singlet and triplet barycenter cross between R = %.4g and %.4g a0",
                       r[0], config.r_disp)
    print_table(rows, ['state', 'kind', 'Re_a0', 'De_cm1', 'omega_from_k_cm1', 'Be_deviation',
                       'eta_per_a0'])
    return []


def cmd_channels(args, config, output):
    scan = _scan_settings(args, config)
    field = config.scan.b_min if args.b is None else args.b
    basis = channel_service.enumerate_channels(config.fr, config.ag, scan.mtot, scan.ell_values,
                                               units.gauss_to_au(field))
    rows = channel_service.channel_rows(basis)
    output.write_table('channels', rows)
    print_table(rows, ['index', 'mFr', 'mAg', 'l', 'ml', 'threshold_GHz'])
    return []


def _failures(scan):
    return [{'B_G': b, 'error': message} for b, message in scan.failures]


def cmd_scan(args, config, output):
    curves = config_service.build_curves(config)
    scan = _scan_settings(args, config)
    system = _system(config, curves, scan)
    fields = scan.fields
    result = scattering_service.scan_field(system, fields, n_jobs=args.threads)
    output.write_table(f"scan_l{_ell_tag(scan.ell_values)}", result.rows())
    cap = scattering_service.scan_cap(system, fields)
    label = wave_label(scan.ell_values)
    if label is None:
        logger.info("partial waves %s share one scan; resonances left unlabelled",
                    scan.ell_values)
    records = scattering_service.find_resonances(result, system, step_cap=cap, partial_wave=label,
                                                 refine_tolerance=config.solver.refine_tolerance)
    output.write_table('resonances', [r.to_dict() for r in records],
                       ['B0_G', 'Delta_G', 'a_bg_a0', 'partial_wave', 'fitted', 'bound_state_index'])
    return _failures(result)


def cmd_resonances(args, config, output):
    curves = config_service.build_curves(config)
    scan = _scan_settings(args, config)
    if any(ell % 2 for ell in scan.ell_values):
        raise InvalidParameterError("resonance classification needs an even partial-wave set")
    fields = scan.fields
    control_system = _system(config, curves, scan, (0,))
    control_scan = scattering_service.scan_field(control_system, fields, n_jobs=args.threads)
    output.write_table('scan_l0', control_scan.rows())
    control = scattering_service.find_resonances(
        control_scan, control_system, scattering_service.scan_cap(control_system, fields), 's',
        refine_tolerance=config.solver.refine_tolerance)
    failures = _failures(control_scan)
    system = _system(config, curves, scan)
    if scan.ell_values == (0,):
        records = control
    else:
        full_scan = scattering_service.scan_field(system, fields, n_jobs=args.threads)
        output.write_table(f"scan_l{_ell_tag(scan.ell_values)}", full_scan.rows())
        failures += _failures(full_scan)
        found = scattering_service.find_resonances(
            full_scan, system, scattering_service.scan_cap(system, fields),
            refine_tolerance=config.solver.refine_tolerance)
        records = scattering_service.classify_partial_waves(found, control)
    if args.pair:
        crossings = bound_state_service.zero_energy_crossings(system, fields)
        output.write_table('crossings', crossings, ['B_G', 'direction'])
        records, poles, unmatched = scattering_service.pair_poles_with_crossings(
            records, [c['B_G'] for c in crossings], args.pair_tolerance)
        if poles or unmatched:
            logger.warning("%d pole(s) and %d crossing(s) left unpaired", len(poles), len(unmatched))
    output.write_table('resonances', [r.to_dict() for r in records],
                       ['B0_G', 'Delta_G', 'a_bg_a0', 'partial_wave', 'fitted', 'bound_state_index'])
    density = scattering_service.resonance_density(records, scan.b_min, scan.b_max)
    rows = [{'partial_wave': wave, **values} for wave, values in density.items()]
    output.write_table('resonance_density', rows)
    print_table(rows, ['partial_wave', 'count', 'density_per_G', 'mean_spacing_G'])
    return failures


def cmd_bound(args, config, output):
    curves = config_service.build_curves(config)
    scan = _scan_settings(args, config)
    system = _system(config, curves, scan)
    window = (units.ghz_to_hartree(args.e_min_ghz), units.ghz_to_hartree(args.e_max_ghz))
    if args.b is not None:
        levels = bound_state_service.bound_states(system, window, args.b,
                                                  with_weights=not args.no_weights)
    else:
        levels = bound_state_service.bound_level_map(system, scan.fields, window, n_jobs=args.threads,
                                                     with_weights=not args.no_weights)
    rows = [level.to_dict() for level in levels]
    output.write_table('bound_levels', rows, ['B_G', 'E_over_h_GHz', 'weight_singlet',
                                              'weight_0minus', 'weight_1', 'dEdB_MHz_per_G'])
    if args.b is not None:
        print_table(rows, ['B_G', 'E_over_h_GHz', 'weight_singlet', 'weight_1', 'dEdB_MHz_per_G'])
    return []


def cmd_rovib(args, config, output):
    curves = config_service.build_curves(config)
    label = args.state or config_service.label_of(config, 'singlet')
    curve = _curve(curves, label)
    mu = units.reduced_mass(config.fr.mass, config.ag.mass)
    _, minimum = radial_solver.well_minimum(curve)
    e_lo = minimum if args.e_min_cm1 is None else units.cm1_to_hartree(args.e_min_cm1)
    e_hi = 0.0 if args.e_max_cm1 is None else units.cm1_to_hartree(args.e_max_cm1)
    levels = rovib_service.solve_rovib(curve, args.j, mu, (e_lo, e_hi), label=label,
                                       step=config.solver.rovib_step)
    rows = [level.to_dict() for level in levels]
    output.write_table(f"levels_{file_label(label)}", rows, ['state', 'v', 'J', 'E_cm1', 'E_GHz'])
    logger.info("%s J=%d: %d level(s) written", label, args.j, len(rows))
    return []


def cmd_stirap(args, config, output):
    curves = config_service.build_curves(config)
    mu = units.reduced_mass(config.fr.mass, config.ag.mass)
    final_label = config_service.label_of(config, 'singlet')
    initial_label = '1(1)'
    mid_label = args.intermediate
    mid_curve = _curve(curves, mid_label)
    d_up = _dipole(config, mid_label, initial_label)
    d_down = _dipole(config, mid_label, final_label)
    _, minimum = radial_solver.well_minimum(mid_curve)
    e_lo = minimum if args.e_min_cm1 is None else units.cm1_to_hartree(args.e_min_cm1)
    e_hi = (minimum + units.cm1_to_hartree(DEFAULT_STIRAP_SPAN_CM1) if args.e_max_cm1 is None
            else units.cm1_to_hartree(args.e_max_cm1))
    analysis = rovib_service.stirap_analysis(
        curves[initial_label], mid_curve, curves[final_label], mu, d_up, d_down, (e_lo, e_hi),
        initial_count=args.initial_count, J_mid=args.j, step=config.solver.rovib_step,
        n_jobs=args.threads, labels=(initial_label, mid_label, final_label))
    reference = analysis['intermediate_minimum']
    pathways = [p.to_dict(reference) for p in analysis['pathways']]
    output.write_json('pathways.json', pathways)
    output.write_table('dipoles_up', rovib_service.dipole_rows(
        analysis['initials'], analysis['intermediates'], analysis['up'], 'v_init'))
    output.write_table('dipoles_down', rovib_service.dipole_rows(
        [analysis['final']], analysis['intermediates'], [analysis['down']], 'v_final'))
    targets = rovib_service.stirap_targets(analysis)
    summary = {
        'intermediate': mid_label,
        'final': analysis['final'].to_dict(),
        'initials': [level.to_dict() for level in analysis['initials']],
        'intermediate_minimum_cm1': units.hartree_to_cm1(reference),
        'best_initial': targets['best_initial'],
        'best_product_by_initial': {str(v): m for v, m in targets['best_metric_by_initial'].items()},
        'top_intermediate_above_minimum_cm1': units.hartree_to_cm1(
            targets['top_intermediate_above_minimum']),
        'strongest_down_below_limit_cm1': -units.hartree_to_cm1(targets['strongest_down_energy']),
        'dipole_notes': [d.note for d in (d_up, d_down) if d.note],
    }
    output.write_json('stirap_summary.json', summary)
    print_table(pathways[:args.top], ['v_init', 'v_mid', 'E_mid_above_min_cm1', 'd_up_ea0',
                                      'd_down_ea0', 'product_e2a02'])
    return []


def cmd_validate(args, config, output):
    rows = validation_service.run(config, include_scattering=not args.no_scattering)
    output.write_table('validation', rows, ['check', 'value', 'limit', 'passed', 'detail'])
    print_table(rows, ['check', 'value', 'limit', 'passed'])
    failed = [row['check'] for row in rows if not row['passed']]
    if failed:
        raise NumericalError(f"{len(failed)} validation check(s) failed: {', '.join(failed)}")
    return []


COMMANDS = {
    'potentials': cmd_potentials,
    'channels': cmd_channels,
    'scan': cmd_scan,
    'resonances': cmd_resonances,
    'bound': cmd_bound,
    'rovib': cmd_rovib,
    'stirap': cmd_stirap,
    'validate': cmd_validate,
}


# ---------------------------------------------------------------- parser

def _add_scan_flags(parser, fields=True):
    parser.add_argument('--mtot', type=float, help='projection of the total angular momentum')
    parser.add_argument('--ell', type=parse_ells, help='partial waves, e.g. 0,2')
    if fields:
        parser.add_argument('--b-min', type=float, help='first field (G)')
        parser.add_argument('--b-max', type=float, help='last field (G)')
        parser.add_argument('--b-step', type=float, help='field step (G)')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='frag', description='Feshbach resonances and Raman pathways of heteronuclear dimers')
    parser.add_argument('--config', help='system file (TOML or JSON); default $FRAG_CONFIG')
    parser.add_argument('--out', default='out', help='output directory')
    parser.add_argument('--format', choices=FORMATS, default='csv')
    parser.add_argument('--threads', type=int, default=None, help='worker count; default $FRAG_THREADS')
    parser.add_argument('--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('potentials', help='curve summaries and tabulated curves')

    channels = sub.add_parser('channels', help='asymptotic channel table')
    channels.add_argument('--b', type=float, help='field (G); default the scan start')
    _add_scan_flags(channels, fields=False)

    scan = sub.add_parser('scan', help='scattering length versus field')
    _add_scan_flags(scan)

    resonances = sub.add_parser('resonances', help='resonances classified by partial wave')
    _add_scan_flags(resonances)
    resonances.add_argument('--pair', action='store_true',
                            help='pair poles with threshold crossings of bound levels')
    resonances.add_argument('--pair-tolerance', type=float, default=0.5, help='G')

    bound = sub.add_parser('bound', help='near-threshold bound levels')
    _add_scan_flags(bound)
    bound.add_argument('--b', type=float, help='single field (G); otherwise the scan grid')
    bound.add_argument('--e-min-ghz', type=float, default=-1.0)
    bound.add_argument('--e-max-ghz', type=float, default=-1e-6)
    bound.add_argument('--no-weights', action='store_true')

    rovib = sub.add_parser('rovib', help='rovibrational levels of one curve')
    rovib.add_argument('--state', help='curve label; default the singlet')
    rovib.add_argument('--j', type=int, default=0)
    rovib.add_argument('--e-min-cm1', type=float)
    rovib.add_argument('--e-max-cm1', type=float)

    stirap = sub.add_parser('stirap', help='two-photon pathway ranking')
    stirap.add_argument('--intermediate', default='3(0+)')
    stirap.add_argument('--j', type=int, default=1, help='rotation of the intermediate levels')
    stirap.add_argument('--initial-count', type=int, default=3)
    stirap.add_argument('--e-min-cm1', type=float, help='relative to the intermediate limit')
    stirap.add_argument('--e-max-cm1', type=float, help='relative to the intermediate limit')
    stirap.add_argument('--top', type=int, default=10)

    validate = sub.add_parser('validate', help='self-checks')
    validate.add_argument('--no-scattering', action='store_true', help='skip the unitarity check')
    return parser


def configure_logging(verbose=False):
    level = 'DEBUG' if verbose else os.getenv('FRAG_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def run(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    collector = WarningCollector()
    root = logging.getLogger()
    root.addHandler(collector)
    arguments = {key: value for key, value in vars(args).items()}
    output = OutputService(args.out, args.format)
    config, config_hash, run_id = None, None, None
    failures, message, exit_code = [], None, 0
    try:
        config = config_service.load_config(args.config)
        config_hash = config_service.config_hash(config)
        run_id = output.start_run(args.command, config_hash, arguments)
        failures = COMMANDS[args.command](args, config, output) or []
        if failures:
            logger.warning("%d scan point(s) failed; see manifest", len(failures))
    except FragError as error:
        exit_code, message = error.exit_code, str(error)
        logger.error("%s failed: %s", args.command, error)
        for violation in getattr(error, 'violations', []):
            print(f"error: {violation}", file=sys.stderr)
    finally:
        root.removeHandler(collector)
    provenance = list(config.provenance) if config else []
    output.write_manifest(args.command, config_hash, warnings=collector.messages, failures=failures,
                          provenance=provenance, arguments=arguments)
    if run_id is None:
        run_id = output.start_run(args.command, config_hash, arguments)
    output.finish_run(run_id, exit_code, message, collector.messages)
    output.close()
    return exit_code


if __name__ == '__main__':
    sys.exit(run())
