"""
Trace and table export
NDJSON traces, per-step distance CSVs, violation CSVs and the run manifest,
all tagged with a schema version
"""

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np
import pandas as pd

import config
from swarm_sim import SimTrace, ViolationReport

logger = logging.getLogger(__name__)

TRACE_FILE = 'trace.ndjson'
DISTANCES_FILE = 'distances.csv'
VIOLATIONS_FILE = 'violations.csv'
MANIFEST_FILE = 'manifest.json'


def _jsonable(value):
    """numpy and inf aware conversion for json.dumps"""
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def trace_lines(trace: SimTrace):
    """Header line followed by one JSON object per step"""
    yield json.dumps({
        'schema_version': config.SCHEMA_VERSION,
        'type': 'header',
        'config': _jsonable(trace.config),
        'obstacles': [{'id': o.id, 'p': _jsonable(o.p), 'radius': o.radius} for o in trace.obstacles],
        'completed': trace.completed,
    }, sort_keys=True)
    for record in trace.records:
        yield json.dumps({
            'schema_version': config.SCHEMA_VERSION,
            'type': 'step',
            't': round(float(record['t']), 9),
            'states': _jsonable(record['states']),
            'commands': _jsonable(record['commands']),
            'neighbors': record['neighbors'],
            'agent_distances': _jsonable(record['agent_distances']),
            'obstacle_distances': _jsonable(record['obstacle_distances']),
            'agent_distances_min': _jsonable(record['agent_distances_min']),
            'obstacle_distances_min': _jsonable(record['obstacle_distances_min']),
            'stats': _jsonable(record['stats']),
        }, sort_keys=True)


def write_trace(trace: SimTrace, path: str) -> str:
    with open(path, 'w') as f:
        for line in trace_lines(trace):
            f.write(line + '\n')
    logger.info("Trace with %d steps written to %s", len(trace.records), path)
    return path


def trace_hash(trace: SimTrace) -> str:
    """SHA-256 over states, commands and neighbor sets; wall-clock timings excluded"""
    digest = hashlib.sha256()
    for record in trace.records:
        digest.update(np.float64(record['t']).tobytes())
        digest.update(np.ascontiguousarray(record['states'], dtype=np.float64).tobytes())
        if record['commands'] is not None:
            digest.update(np.ascontiguousarray(record['commands'], dtype=np.float64).tobytes())
        if record['neighbors'] is not None:
            digest.update(json.dumps(record['neighbors'], sort_keys=True).encode())
    return digest.hexdigest()


def distances_frame(trace: SimTrace) -> pd.DataFrame:
    """One row per step: t, d_i_j for agent pairs, do_i_k for agent-obstacle pairs"""
    rows = []
    for record in trace.records:
        row = {'t': record['t']}
        d = record['agent_distances']
        if len(d):
            n = len(record['states'])
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
            row.update({f'd_{i}_{j}': float(v) for (i, j), v in zip(pairs, d)})
        od = record['obstacle_distances']
        for i in range(od.shape[0]):
            for k in range(od.shape[1]):
                row[f'do_{i}_{k}'] = float(od[i, k])
        rows.append(row)
    frame = pd.DataFrame(rows)
    frame.insert(0, 'schema_version', config.SCHEMA_VERSION)
    return frame


def write_distances(trace: SimTrace, path: str) -> str:
    distances_frame(trace).to_csv(path, index=False)
    return path


def violations_frame(report: ViolationReport) -> pd.DataFrame:
    frame = report.to_frame()
    frame.insert(0, 'schema_version', config.SCHEMA_VERSION)
    return frame


def write_violations(report: ViolationReport, path: str) -> str:
    violations_frame(report).to_csv(path, index=False)
    return path


def write_table(frame: pd.DataFrame, path: str) -> str:
    """CSV with a leading schema_version column"""
    frame = frame.copy()
    if 'schema_version' not in frame.columns:
        frame.insert(0, 'schema_version', config.SCHEMA_VERSION)
    frame.to_csv(path, index=False)
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path


@dataclass
class RunManifest:
    """Provenance of one CLI invocation"""
    command: str
    config_path: Optional[str]
    output_dir: str
    resolved_config: dict
    seed: Optional[int] = None
    tool_version: str = config.TOOL_VERSION
    schema_version: str = config.SCHEMA_VERSION
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None
    wall_time_s: Optional[float] = None
    outputs: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def finish(self, outputs=()):
        self.finished_at = datetime.now(timezone.utc).isoformat()
        self.wall_time_s = time.perf_counter() - self._t0
        self.outputs = [os.path.basename(p) for p in outputs]

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop('_t0')
        return _jsonable(data)

    def write(self) -> str:
        path = os.path.join(self.output_dir, MANIFEST_FILE)
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        return path
