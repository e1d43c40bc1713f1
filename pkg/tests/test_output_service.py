import csv
import json
import logging

import pytest

from services.errors import InvalidParameterError
from services.output_service import OutputService, WarningCollector, format_number


def test_csv_tables_use_twelve_significant_digits(tmp_path):
    out = OutputService(tmp_path)
    rows = [{'B_G': 1.0 / 3.0, 'label': 'x', 'n': 2, 'ok': True, 'missing': None}]
    path = out.write_table('scan', rows)
    assert path.name == 'scan.csv'
    with open(path, newline='', encoding='utf-8') as handle:
        parsed = list(csv.reader(handle))
    assert parsed[0] == ['B_G', 'label', 'n', 'ok', 'missing']
    assert parsed[1] == ['0.333333333333', 'x', '2', 'True', '']
    assert out.written['scan.csv']['rows'] == 1


def test_json_tables(tmp_path):
    out = OutputService(tmp_path, fmt='json')
    path = out.write_table('channels', [{'index': 0, 'threshold_GHz': 2.0 ** 0.5}],
                           columns=['index', 'threshold_GHz'])
    records = json.loads(path.read_text(encoding='utf-8'))
    assert records == [{'index': 0, 'threshold_GHz': float(format_number(2.0 ** 0.5))}]


def test_unknown_format(tmp_path):
    with pytest.raises(InvalidParameterError):
        OutputService(tmp_path, fmt='xlsx')


def test_outputs_stay_in_the_directory(tmp_path):
    out = OutputService(tmp_path / 'run')
    with pytest.raises(InvalidParameterError):
        out.write_bytes('../escape.txt', b'x')


def test_writes_leave_no_temporary_files(tmp_path):
    out = OutputService(tmp_path)
    out.write_bytes('a.txt', b'first')
    out.write_bytes('a.txt', b'second')
    assert (tmp_path / 'a.txt').read_bytes() == b'second'
    assert [p.name for p in tmp_path.iterdir()] == ['a.txt']


def test_columns_file(tmp_path):
    out = OutputService(tmp_path)
    path = out.write_columns('curve.dat', 'R_a0 V_cm1', [1.0, 2.0], [-3.0, 0.5])
    assert path.read_text(encoding='utf-8') == '# R_a0 V_cm1\n1 -3\n2 0.5\n'


def test_manifest_lists_outputs_and_constants(tmp_path):
    out = OutputService(tmp_path)
    out.write_table('scan', [{'B_G': 1.0}])
    manifest = out.write_manifest('scan', 'abc', warnings=['w'], failures=[{'B_G': 3.0}],
                                  provenance=['note'], arguments={'threads': 1})
    on_disk = json.loads((tmp_path / 'manifest.json').read_text(encoding='utf-8'))
    assert on_disk == manifest
    assert manifest['config_hash'] == 'abc'
    assert set(manifest['outputs']) == {'scan.csv'}
    assert manifest['warnings'] == ['w']
    assert manifest['failures'] == [{'B_G': 3.0}]
    assert 'au_per_G' in manifest['constants']


def test_catalogue_records_runs(tmp_path):
    out = OutputService(tmp_path)
    run_id = out.start_run('channels', 'abc', {'mtot': 0.0})
    out.write_table('channels', [{'index': 0}])
    record = out.finish_run(run_id, 0, warnings=['careful'])
    assert record['status'] == 'ok'
    assert record['arguments'] == {'mtot': 0.0}
    assert record['warnings'] == ['careful']
    assert [o['name'] for o in record['outputs']] == ['channels.csv']
    failed = out.start_run('scan', 'abc')
    out.finish_run(failed, 3, message='diverged')
    runs = out.runs()
    assert [r['status'] for r in runs] == ['ok', 'failed']
    assert runs[1]['exit_code'] == 3
    out.close()


def test_warning_collector():
    collector = WarningCollector()
    logger = logging.getLogger('frag.test')
    logger.addHandler(collector)
    try:
        logger.info('quiet')
        logger.warning('loud %d', 1)
    finally:
        logger.removeHandler(collector)
    assert collector.messages == ['frag.test: loud 1']
