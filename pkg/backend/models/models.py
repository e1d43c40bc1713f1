from sqlalchemy import Column, DateTime, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship
from datetime import datetime, timezone
import json

Base = declarative_base()


def _utcnow():
    return datetime.now(timezone.utc).replace(tzinfo=None)


class RunRecord(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(32), nullable=False)
    arguments = Column(Text, nullable=True)  # JSON string of the parsed CLI flags
    config_hash = Column(String(64), nullable=False)
    engine_version = Column(String(32), nullable=False)
    status = Column(String(20), default='running')  # running, ok, failed
    exit_code = Column(Integer, nullable=True)
    message = Column(Text, nullable=True)
    warnings = Column(Text, nullable=True)  # JSON list
    started_at = Column(DateTime, default=_utcnow)
    finished_at = Column(DateTime, nullable=True)

    # Relationships
    outputs = relationship('OutputFile', backref='run', lazy=True, cascade='all, delete-orphan')

    def set_warnings(self, warnings):
        self.warnings = json.dumps(list(warnings))

    def get_warnings(self):
        if self.warnings:
            return json.loads(self.warnings)
        return []

    def to_dict(self):
        return {
            'id': self.id,
            'command': self.command,
            'arguments': json.loads(self.arguments) if self.arguments else {},
            'config_hash': self.config_hash,
            'engine_version': self.engine_version,
            'status': self.status,
            'exit_code': self.exit_code,
            'message': self.message,
            'warnings': self.get_warnings(),
            'started_at': self.started_at.isoformat() if self.started_at else None,
            'finished_at': self.finished_at.isoformat() if self.finished_at else None,
            'outputs': [output.to_dict() for output in self.outputs],
        }


class OutputFile(Base):
    __tablename__ = 'output_files'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('runs.id'), nullable=False)
    name = Column(String(255), nullable=False)
    sha256 = Column(String(64), nullable=False)
    rows = Column(Integer, nullable=True)

    def to_dict(self):
        return {
            'id': self.id,
            'run_id': self.run_id,
            'name': self.name,
            'sha256': self.sha256,
            'rows': self.rows,
        }
