"""
Time-series records shared by every engine

A record is a time grid plus named observables, each either a scalar series (T,)
or an indexed series (T, n) over sites or bonds. Records serialize to the long CSV
schema (t, observable, index, value) and to a JSON summary.
"""
from dataclasses import dataclass, field
from typing import Dict
import csv
import json
import logging
import os

import numpy as np

from spinshell.engine.config import Config
from spinshell.engine.errors import ComparisonError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ('t', 'observable', 'index', 'value')


def format_float(value: float) -> str:
    return f"{float(value):.{Config.CSV_SIGNIFICANT_DIGITS}g}"


@dataclass
class TimeSeriesRecord:
    """Observables sampled on a common time grid (seconds or toy units)"""
    t: np.ndarray
    series: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != len(self.t):
            raise ValueError(f"series {name!r} has {values.shape[0]} samples, grid has {len(self.t)}")
        self.series[name] = values

    def get(self, name: str) -> np.ndarray:
        if name not in self.series:
            raise KeyError(f"record has no observable {name!r}; available: {sorted(self.series)}")
        return self.series[name]

    @property
    def observables(self):
        return sorted(self.series)

    def shifted(self, offset: float) -> 'TimeSeriesRecord':
        return TimeSeriesRecord(t=self.t + offset, series=dict(self.series), metadata=dict(self.metadata))

    @staticmethod
    def concatenate(records) -> 'TimeSeriesRecord':
        """Join consecutive records; a repeated boundary sample is dropped"""
        records = list(records)
        if not records:
            raise ValueError("nothing to concatenate")
        names = set(records[0].series)
        t_parts = [records[0].t]
        parts = {n: [records[0].series[n]] for n in names}
        for rec in records[1:]:
            if set(rec.series) != names:
                raise ValueError("records carry different observables")
            start = 1 if len(t_parts[-1]) and len(rec.t) and np.isclose(rec.t[0], t_parts[-1][-1], rtol=1e-12, atol=0.0) else 0
            t_parts.append(rec.t[start:])
            for n in names:
                parts[n].append(rec.series[n][start:])
        out = TimeSeriesRecord(t=np.concatenate(t_parts), metadata=dict(records[0].metadata))
        for n in names:
            out.series[n] = np.concatenate(parts[n], axis=0)
        return out

    def rows(self):
        """Long-format rows; scalar series carry index -1"""
        for name in self.observables:
            values = self.series[name]
            for i, t in enumerate(self.t):
                if values.ndim == 1:
                    yield t, name, -1, values[i]
                else:
                    for j, v in enumerate(values[i]):
                        yield t, name, j, v

    def to_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(CSV_COLUMNS)
            for t, name, index, value in self.rows():
                writer.writerow([format_float(t), name, index, format_float(value)])
        logger.info(f"Wrote {len(self.series)} observables to {path}")
        return path

    @classmethod
    def from_csv(cls, path: str) -> 'TimeSeriesRecord':
        with open(path, newline='') as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
                raise ComparisonError(f"{path} does not use the columns {','.join(CSV_COLUMNS)}")
            raw: Dict[str, Dict[int, Dict[float, float]]] = {}
            times = set()
            for row in reader:
                t = float(row['t'])
                times.add(t)
                raw.setdefault(row['observable'], {}).setdefault(int(row['index']), {})[t] = float(row['value'])
        grid = np.array(sorted(times))
        record = cls(t=grid)
        for name, by_index in raw.items():
            if list(by_index) == [-1]:
                record.series[name] = np.array([by_index[-1].get(t, np.nan) for t in grid])
            else:
                width = max(by_index) + 1
                values = np.full((len(grid), width), np.nan)
                for j, samples in by_index.items():
                    values[:, j] = [samples.get(t, np.nan) for t in grid]
                record.series[name] = values
        return record

    def summary(self) -> dict:
        out = {
            'n_samples': int(len(self.t)),
            't_start': float(self.t[0]) if len(self.t) else None,
            't_end': float(self.t[-1]) if len(self.t) else None,
            'observables': self.observables,
        }
        out.update(self.metadata.get('summary', {}))
        return out


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dump_json(data, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w') as handle:
        json.dump(data, handle, indent=2, sort_keys=True, default=_json_default)
    return path


def write_table(path: str, columns, rows) -> str:
    """Plain CSV table; floats use the same round-trip formatting as records"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([
                format_float(v) if isinstance(v, (float, np.floating)) else ('' if v is None else v)
                for v in row
            ])
    return path
