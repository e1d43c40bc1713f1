"""
Run outputs: atomic CSV/JSON tables, the run manifest and the SQLite catalogue.
"""

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from models.models import Base, OutputFile, RunRecord
from services import units
from services.errors import InvalidParameterError

logger = logging.getLogger(__name__)

ENGINE_VERSION = '0.1.0'
FORMATS = ('csv', 'json')


def format_number(value):
    return f"{value:.12g}"


def _plain(value):
    """Row value as it appears in a file: 12 significant digits, strings untouched."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if not math.isfinite(value) else float(format_number(value))
    if isinstance(value, complex):
        return _plain(value.real)
    if value is None:
        return None
    return value


class WarningCollector(logging.Handler):
    """Keeps every WARNING (and above) record of a run for the manifest."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(f"{record.name}: {record.getMessage()}")


class OutputService:
    def __init__(self, out_dir, fmt='csv', catalogue=None):
        if fmt not in FORMATS:
            raise InvalidParameterError(f"unknown output format '{fmt}'")
        self.out_dir = Path(out_dir).resolve()
        self.format = fmt
        self.catalogue_name = catalogue or os.getenv('FRAG_CATALOGUE', 'runs.sqlite')
        self.written = {}
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._engine = None
        self._session_factory = None

    # ---------------------------------------------------------- files

    def _target(self, name):
        path = (self.out_dir / name).resolve()
        if path.parent != self.out_dir:
            raise InvalidParameterError(f"output '{name}' would leave {self.out_dir}")
        return path

    def write_bytes(self, name, payload, rows=None):
        """temp file in the output directory, then os.replace"""
        path = self._target(name)
        handle, temporary = tempfile.mkstemp(dir=self.out_dir, prefix=f".{path.name}.", suffix='.tmp')
        try:
            with os.fdopen(handle, 'wb') as stream:
                stream.write(payload)
            os.replace(temporary, path)
        except BaseException:
            if os.path.exists(temporary):
                os.unlink(temporary)
            raise
        self.written[path.name] = {'sha256': hashlib.sha256(payload).hexdigest(), 'rows': rows}
        logger.debug("wrote %s (%d bytes)", path, len(payload))
        return path

    def write_table(self, name, rows, columns=None):
        """`name` without extension; the format decides between CSV and a JSON array."""
        rows = list(rows)
        if columns is None:
            columns = list(rows[0].keys()) if rows else []
        if self.format == 'json':
            records = [{key: _plain(row.get(key)) for key in columns} for row in rows]
            payload = (json.dumps(records, indent=2) + '\n').encode('utf-8')
            return self.write_bytes(f"{name}.json", payload, rows=len(rows))
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([self._cell(row.get(key)) for key in columns])
        return self.write_bytes(f"{name}.csv", buffer.getvalue().encode('utf-8'), rows=len(rows))

    @staticmethod
    def _cell(value):
        value = _plain(value)
        if value is None:
            return ''
        if isinstance(value, float):
            return format_number(value)
        return value

    def write_json(self, name, document):
        payload = (json.dumps(document, indent=2, default=_plain) + '\n').encode('utf-8')
        return self.write_bytes(name, payload)

    def write_columns(self, name, header, *columns):
        """Whitespace-separated numeric columns with a '#' header line."""
        lines = [f"# {header}"]
        lines += [' '.join(format_number(float(v)) for v in values) for values in zip(*columns)]
        return self.write_bytes(name, ('\n'.join(lines) + '\n').encode('utf-8'),
                                rows=len(lines) - 1)

    # ---------------------------------------------------------- manifest

    def write_manifest(self, command, config_hash, warnings=(), failures=(), provenance=(),
                       arguments=None):
        manifest = {
            'command': command,
            'config_hash': config_hash,
            'engine_version': ENGINE_VERSION,
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'arguments': arguments or {},
            'outputs': {name: info['sha256'] for name, info in sorted(self.written.items())},
            'provenance': list(provenance),
            'constants': units.constants_table(),
            'warnings': list(warnings),
            'failures': list(failures),
        }
        payload = (json.dumps(manifest, indent=2, default=str) + '\n').encode('utf-8')
        path = self._target('manifest.json')
        handle, temporary = tempfile.mkstemp(dir=self.out_dir, prefix='.manifest.', suffix='.tmp')
        with os.fdopen(handle, 'wb') as stream:
            stream.write(payload)
        os.replace(temporary, path)
        return manifest

    # ---------------------------------------------------------- catalogue

    def _session(self):
        if self._session_factory is None:
            self._engine = create_engine(f"sqlite:///{self._target(self.catalogue_name)}")
            Base.metadata.create_all(self._engine)
            self._session_factory = sessionmaker(bind=self._engine, expire_on_commit=False)
        return self._session_factory()

    def start_run(self, command, config_hash, arguments=None):
        session = self._session()
        try:
            record = RunRecord(command=command, config_hash=config_hash or '',
                               engine_version=ENGINE_VERSION,
                               arguments=json.dumps(arguments or {}, sort_keys=True, default=str))
            session.add(record)
            session.commit()
            return record.id
        finally:
            session.close()

    def finish_run(self, run_id, exit_code, message=None, warnings=()):
        session = self._session()
        try:
            record = session.get(RunRecord, run_id)
            record.status = 'ok' if exit_code == 0 else 'failed'
            record.exit_code = exit_code
            record.message = message
            record.set_warnings(warnings)
            record.finished_at = datetime.now(timezone.utc).replace(tzinfo=None)
            for name, info in sorted(self.written.items()):
                record.outputs.append(OutputFile(name=name, sha256=info['sha256'], rows=info['rows']))
            session.commit()
            return record.to_dict()
        finally:
            session.close()

    def runs(self):
        session = self._session()
        try:
            return [record.to_dict() for record in
                    session.query(RunRecord).order_by(RunRecord.id).all()]
        finally:
            session.close()

    def close(self):
        if self._engine is not None:
            self._engine.dispose()
