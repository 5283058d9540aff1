"""
Handlers behind the run, validate and compare verbs

Each handler returns the process exit code: 0 ok, 2 config error, 3 engine error,
4 comparison failure.
"""
import json
import logging
import os
import platform
import time
from typing import Optional

import numpy as np
import pydantic
import scipy

from spinshell.engine.config import Config
from spinshell.engine.errors import ComparisonError
from spinshell.engine.readout import compare_series
from spinshell.engine.records import CSV_COLUMNS, dump_json
from spinshell.engine.scenarios import ScenarioConfig
from spinshell.engine.workflow import ScenarioWorkflow
from spinshell.utils import MANIFEST_FILE, ConfigValidator, RecordValidator

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ENGINE = 3
EXIT_COMPARISON = 4


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def versions() -> dict:
    return {
        Config.APP_NAME: Config.APP_VERSION,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pydantic': pydantic.VERSION,
    }


def resolve_output_dir(config: ScenarioConfig, out: Optional[str]) -> str:
    """--out, then the scenario's output_dir, then <output root>/<scenario>-seed<seed>"""
    if out:
        return out
    if config.output_dir:
        return config.output_dir
    return os.path.join(Config.OUTPUT_ROOT, f"{config.scenario}-seed{config.seed}")


def write_manifest(out_dir: str, config: ScenarioConfig, result: dict, wall_time: float,
                   threads: int) -> str:
    manifest = {
        'app': Config.APP_NAME,
        'versions': versions(),
        'scenario': config.scenario,
        'config': config.echo(),
        'seeds': result['seeds'],
        'threads': threads,
        'wall_time_s': wall_time,
        'status': result['status'],
        'csv_schema': {'version': Config.CSV_SCHEMA_VERSION, 'columns': list(CSV_COLUMNS),
                       'significant_digits': Config.CSV_SIGNIFICANT_DIGITS},
        'files': result['files'],
        'warnings': result['warnings'],
    }
    if result['status'] == 'error':
        manifest['error'] = {'message': result['error'], 'class': result['error_class'],
                             'diagnostics': result['diagnostics']}
    return dump_json(manifest, os.path.join(out_dir, MANIFEST_FILE))


def run_command(config_path: str, out: Optional[str] = None, seed_override: Optional[int] = None,
                threads: Optional[int] = None) -> int:
    """Validate, run and bundle one scenario"""
    ok, config, errors = ConfigValidator.validate_file(config_path, seed_override)
    if not ok:
        _emit({'status': 'error', 'stage': 'config', 'errors': errors})
        return EXIT_CONFIG

    threads = threads or Config.THREADS
    Config.THREADS = threads
    out_dir = resolve_output_dir(config, out)
    started = time.perf_counter()
    result = ScenarioWorkflow().process(config, output_dir=out_dir, threads=threads)
    wall_time = time.perf_counter() - started

    if result['status'] == 'error' and result['exit_code'] == EXIT_CONFIG:
        _emit({'status': 'error', 'stage': 'config', 'errors': [result['error']]})
        return EXIT_CONFIG
    os.makedirs(out_dir, exist_ok=True)
    write_manifest(out_dir, config, result, wall_time, threads)
    if result['status'] == 'error':
        logger.error(f"Scenario failed: {result['error']}")
        _emit({'status': 'error', 'stage': 'engine', 'error': result['error'],
               'class': result['error_class'], 'diagnostics': result['diagnostics'], 'output': out_dir})
        return result['exit_code'] or EXIT_ENGINE

    logger.info(f"Scenario {config.scenario} finished in {wall_time:.2f} s")
    _emit({'status': 'success', 'output': out_dir, 'files': [MANIFEST_FILE] + result['files'],
           'summary': {k: v for k, v in result['summary'].items() if k != 'records'}})
    return EXIT_OK


def validate_command(config_path: str) -> int:
    """Schema and physics report without running anything"""
    ok, report = ConfigValidator.report(config_path)
    _emit(report)
    return EXIT_OK if ok else EXIT_CONFIG


def compare_command(path_a: str, path_b: str, out: Optional[str] = None) -> int:
    """Per-series deviations of two bundles (or a bundle and a prediction file)"""
    records = []
    for path in (path_a, path_b):
        ok, record, error = RecordValidator.load(path)
        if not ok:
            _emit({'status': 'error', 'stage': 'compare', 'error': error})
            return EXIT_COMPARISON
        records.append(record)

    readout = RecordValidator.manifest(path_a).get('config', {}).get('readout', {})
    tolerance = float(readout.get('tolerance', 1e-6))
    interpolate = bool(readout.get('interpolate', False))
    try:
        report = compare_series(records[0], records[1], tolerance, interpolate=interpolate)
    except ComparisonError as e:
        logger.error(f"Comparison failed: {e}")
        _emit({'status': 'error', 'stage': 'compare', 'error': str(e)})
        return EXIT_COMPARISON

    payload = {'status': 'success' if report.passed else 'failed', 'a': path_a, 'b': path_b,
               **report.to_dict()}
    if out:
        dump_json(payload, out)
    _emit(payload)
    return EXIT_OK if report.passed else EXIT_COMPARISON
