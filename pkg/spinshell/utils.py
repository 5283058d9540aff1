"""
Validation helpers for scenario files and result records
"""
import json
import logging
import os
from typing import List, Optional, Tuple

import numpy as np

from spinshell.engine.errors import ComparisonError, ConfigError
from spinshell.engine.records import TimeSeriesRecord
from spinshell.engine.scenarios import ScenarioConfig, load_config, physics_report

logger = logging.getLogger(__name__)

SERIES_FILE = 'series.csv'
MANIFEST_FILE = 'manifest.json'


class ConfigValidator:
    """Validates scenario files without running them"""

    @classmethod
    def validate_file(cls, path: str, seed_override: Optional[int] = None
                      ) -> Tuple[bool, Optional[ScenarioConfig], List[str]]:
        """
        Parse and schema-check a scenario file

        Returns:
            Tuple of (is_valid, config, error_lines)
        """
        if not os.path.isfile(path):
            return False, None, [f"{path}: no such file"]
        try:
            config = load_config(path, seed_override)
        except ConfigError as e:
            lines = getattr(e, 'fields', None) or [str(e)]
            for line in lines:
                logger.warning(f"Invalid scenario field {line}")
            return False, None, lines
        except OSError as e:
            return False, None, [f"{path}: {e}"]
        return True, config, []

    @classmethod
    def validate_physics(cls, config: ScenarioConfig) -> Tuple[bool, List[str], List[str]]:
        """
        Physics bounds beyond the schema

        Returns:
            Tuple of (is_valid, warnings, errors)
        """
        errors, warnings = physics_report(config)
        if errors:
            logger.warning(f"Scenario has {len(errors)} physics error(s)")
        return not errors, warnings, errors

    @classmethod
    def report(cls, path: str) -> Tuple[bool, dict]:
        """Full validation report of one file"""
        ok, config, errors = cls.validate_file(path)
        report = {'file': path, 'errors': errors, 'warnings': []}
        if ok:
            ok, warnings, physics_errors = cls.validate_physics(config)
            report['scenario'] = config.scenario
            report['warnings'] = warnings
            report['errors'] = physics_errors
        return ok, report


class RecordValidator:
    """Loads and checks records written by earlier runs or predictions"""

    @classmethod
    def load(cls, path: str) -> Tuple[bool, Optional[TimeSeriesRecord], Optional[str]]:
        """
        Load a record from a bundle directory or a CSV file

        Returns:
            Tuple of (is_valid, record, error_message)
        """
        target = os.path.join(path, SERIES_FILE) if os.path.isdir(path) else path
        if not os.path.isfile(target):
            return False, None, f"{target}: no such file"
        try:
            record = TimeSeriesRecord.from_csv(target)
        except ComparisonError as e:
            return False, None, str(e)
        except (OSError, ValueError, KeyError) as e:
            return False, None, f"{target}: unreadable record ({e})"
        return cls.validate_record(record)

    @classmethod
    def validate_record(cls, record: TimeSeriesRecord) -> Tuple[bool, Optional[TimeSeriesRecord], Optional[str]]:
        if len(record.t) == 0:
            return False, None, "record has no samples"
        if not np.all(np.isfinite(record.t)):
            return False, None, "record has non-finite times"
        if np.any(np.diff(record.t) <= 0):
            return False, None, "record times are not strictly increasing"
        if not record.series:
            return False, None, "record has no observables"
        return True, record, None

    @classmethod
    def manifest(cls, path: str) -> dict:
        """Manifest of a bundle directory, or an empty dict for plain files"""
        target = os.path.join(path, MANIFEST_FILE) if os.path.isdir(path) else None
        if target is None or not os.path.isfile(target):
            return {}
        try:
            with open(target) as handle:
                return json.load(handle)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"Ignoring unreadable manifest {target}: {e}")
            return {}
