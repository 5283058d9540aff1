"""
Readout of simulated signals

Amplitude and phase, zero-crossing detection, spectra, parameter sweeps,
power-law and linear fits, and the record comparison used by the compare verb.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.stats import linregress

from spinshell.engine.config import Config
from spinshell.engine.errors import ComparisonError, DomainError, ResampleRequiredError
from spinshell.engine.records import TimeSeriesRecord

logger = logging.getLogger(__name__)

NOISE_FLOOR = 1e-10
STDERR_SIGMAS = 2.0


@dataclass(frozen=True)
class ZeroCrossing:
    first: Optional[float]
    all: List[float] = field(default_factory=list)
    degenerate: bool = False


@dataclass(frozen=True)
class Signal:
    """Rotating-frame amplitude S, phase phi_R and the signed x component"""
    t: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    signed_x: np.ndarray


@dataclass(frozen=True)
class Spectrum:
    frequency: np.ndarray
    magnitude: np.ndarray


@dataclass
class SweepGrid:
    """Per-value records and zero-crossing times of a one-parameter sweep"""
    parameter: str
    values: np.ndarray
    records: List[Optional[TimeSeriesRecord]]
    t_zc: List[Optional[float]]
    errors: Dict[int, str] = field(default_factory=dict)

    @property
    def no_crossing_values(self) -> List[float]:
        return [float(v) for v, t, r in zip(self.values, self.t_zc, self.records) if r is not None and t is None]

    def crossing_window(self):
        """(min, max) of the values that produced a crossing, or None"""
        hits = [float(v) for v, t in zip(self.values, self.t_zc) if t is not None]
        return (min(hits), max(hits)) if hits else None

    def to_dict(self) -> dict:
        return {
            'parameter': self.parameter,
            'cells': [
                {'value': float(v), 't_zc': t, 'error': self.errors.get(i)}
                for i, (v, t) in enumerate(zip(self.values, self.t_zc))
            ],
            'crossing_window': self.crossing_window(),
        }

    def rows(self, observable: str = 'Ix_total'):
        """(param, t, value) rows of every successful cell"""
        for v, rec in zip(self.values, self.records):
            if rec is None or observable not in rec.series:
                continue
            for t, y in zip(rec.t, rec.get(observable)):
                yield float(v), float(t), float(y)


def zero_crossing(t, y, noise_floor: float = NOISE_FLOOR, stderr=None,
                  n_sigma: float = STDERR_SIGMAS) -> ZeroCrossing:
    """Sign changes of y(t) located by linear interpolation.

    Samples with |y| below noise_floor * max|y|, or below n_sigma standard errors when
    a per-sample stderr is given, are ignored, so crossings are taken between the
    neighbouring significant samples.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 2 or len(t) != len(y):
        raise DomainError("zero crossing needs at least two samples on a matching grid")
    scale = float(np.max(np.abs(y)))
    if scale == 0.0:
        return ZeroCrossing(first=None, degenerate=True)
    floor = np.full(len(y), noise_floor * scale)
    if stderr is not None:
        stderr = np.asarray(stderr, dtype=float)
        if stderr.shape != y.shape:
            raise DomainError("stderr must match the series")
        floor = np.maximum(floor, n_sigma * stderr)
    keep = np.nonzero(np.abs(y) >= floor)[0]
    crossings = []
    for i, j in zip(keep[:-1], keep[1:]):
        if y[i] * y[j] < 0:
            crossings.append(float(t[i] - y[i] * (t[j] - t[i]) / (y[j] - y[i])))
    return ZeroCrossing(first=crossings[0] if crossings else None, all=crossings)


def decompose_signal(t, x, y=None) -> Signal:
    """S = |x + i y|, phi_R = arg(x + i y) in [0, 2pi)"""
    x = np.asarray(x, dtype=float)
    y = np.zeros_like(x) if y is None else np.asarray(y, dtype=float)
    return Signal(t=np.asarray(t, dtype=float), amplitude=np.hypot(x, y),
                  phase=np.mod(np.arctan2(y, x), 2 * math.pi), signed_x=x)


def record_signal(record: TimeSeriesRecord) -> Signal:
    y = record.series.get('Iy_total')
    return decompose_signal(record.t, record.get('Ix_total'), y)


def spectrum(t, y, window: str = 'rectangular') -> Spectrum:
    """One-sided DFT magnitudes; the DC bin equals |mean| * N for the rectangular window"""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 2:
        raise DomainError("spectrum needs at least two samples")
    steps = np.diff(t)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ResampleRequiredError("spectrum needs a uniform time grid; resample first")
    if window == 'rectangular':
        weights = np.ones(len(y))
    elif window == 'hann':
        weights = np.hanning(len(y))
    else:
        raise DomainError(f"unknown window {window!r}")
    return Spectrum(frequency=np.fft.rfftfreq(len(y), steps[0]), magnitude=np.abs(np.fft.rfft(y * weights)))


def half_width(spec: Spectrum) -> float:
    """Frequency where the magnitude first drops to half its DC value"""
    half = spec.magnitude[0] / 2
    below = np.nonzero(spec.magnitude <= half)[0]
    if not len(below):
        return float('inf')
    i = below[0]
    if i == 0:
        return 0.0
    f0, f1 = spec.frequency[i - 1], spec.frequency[i]
    m0, m1 = spec.magnitude[i - 1], spec.magnitude[i]
    return float(f0 + (half - m0) * (f1 - f0) / (m1 - m0))


def readout_crossing(record: TimeSeriesRecord, observable: str, noise_floor: float = NOISE_FLOOR,
                     n_sigma: float = STDERR_SIGMAS) -> Optional[float]:
    """First zero crossing of a scalar series, measured from the record's readout start.

    A trajectory record's `<observable>_stderr` series sets the per-sample noise floor.
    """
    start = float(record.metadata.get('readout_start', record.t[0]))
    mask = record.t >= start
    if mask.sum() < 2:
        return None
    stderr = record.series.get(f"{observable}_stderr")
    hit = zero_crossing(record.t[mask], record.get(observable)[mask], noise_floor,
                        None if stderr is None else stderr[mask], n_sigma).first
    return None if hit is None else hit - start


def spatial_sign_change(profile, noise_floor: float = NOISE_FLOOR) -> Optional[int]:
    """First site whose sign differs from the first significant site, or None"""
    profile = np.asarray(profile, dtype=float)
    scale = float(np.max(np.abs(profile))) if profile.size else 0.0
    if scale == 0.0:
        return None
    signs = np.sign(np.where(np.abs(profile) >= noise_floor * scale, profile, 0.0))
    significant = np.nonzero(signs)[0]
    for i in significant[1:]:
        if signs[i] != signs[significant[0]]:
            return int(i)
    return None


def late_cut_crossings(record: TimeSeriesRecord, observable: str = 'Ix', n_cuts: int = 3,
                       fraction: float = 0.25) -> List[Tuple[float, Optional[int]]]:
    """Spatial sign-change site of a per-site series at n_cuts times in the last `fraction`"""
    values = record.get(observable)
    if values.ndim != 2:
        raise DomainError(f"{observable!r} is not a per-site series")
    first = int(np.floor((1.0 - fraction) * (len(record.t) - 1)))
    picks = np.unique(np.linspace(first, len(record.t) - 1, n_cuts).round().astype(int))
    return [(float(record.t[i]), spatial_sign_change(values[i])) for i in picks]


def sign_match_fraction(observed, predicted) -> float:
    """Fraction of sites where the observed sign equals the predicted one"""
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if observed.shape != predicted.shape or not observed.size:
        raise DomainError("profiles must be non-empty with equal shapes")
    return float(np.mean(np.sign(observed) == np.sign(predicted)))


def sweep(run_cell: Callable[[float], TimeSeriesRecord], parameter: str, values: Sequence[float],
          observable: str = 'Ix_total', threads: Optional[int] = None) -> SweepGrid:
    """Run one protocol per parameter value in parallel and collect t_zc.

    t_zc is measured from the record's readout start. A failing cell is recorded and
    the sweep continues.
    """
    values = np.asarray(values, dtype=float)
    if len(values) > 1:
        steps = np.diff(values)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise DomainError("sweep values must be strictly monotone")

    def work(value):
        try:
            return run_cell(float(value)), None
        except Exception as e:
            logger.error(f"Sweep cell {parameter}={value} failed: {e}")
            return None, str(e)

    with ThreadPoolExecutor(max_workers=max(1, threads or Config.THREADS)) as pool:
        results = list(pool.map(work, values))

    records = [r for r, _ in results]
    errors = {i: err for i, (_, err) in enumerate(results) if err is not None}
    t_zc = [None if r is None else readout_crossing(r, observable) for r in records]
    logger.info(f"Sweep over {parameter}: {sum(t is not None for t in t_zc)}/{len(values)} cells crossed zero")
    return SweepGrid(parameter=parameter, values=values, records=records, t_zc=t_zc, errors=errors)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_value: float
    stderr: float


def linear_trend(x, y) -> LinearFit:
    fit = linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return LinearFit(slope=float(fit.slope), intercept=float(fit.intercept),
                     r_value=float(fit.rvalue), stderr=float(fit.stderr))


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    r_value: float


def fit_power_law(t, y, t_min: Optional[float] = None, t_max: Optional[float] = None) -> PowerLawFit:
    """Least-squares fit of y = A t^alpha on log-log axes over [t_min, t_max]"""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = (t > 0) & (y > 0) & np.isfinite(y)
    if t_min is not None:
        mask &= t >= t_min
    if t_max is not None:
        mask &= t <= t_max
    if mask.sum() < 2:
        raise DomainError("power-law fit needs at least two positive samples")
    fit = linregress(np.log(t[mask]), np.log(y[mask]))
    return PowerLawFit(exponent=float(fit.slope), prefactor=float(math.exp(fit.intercept)),
                       r_value=float(fit.rvalue))


@dataclass
class ComparisonReport:
    tolerance: float
    series: Dict[str, dict] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(entry['passed'] for entry in self.series.values())

    def to_dict(self) -> dict:
        return {'tolerance': self.tolerance, 'passed': self.passed, 'series': self.series}


def compare_series(a: TimeSeriesRecord, b: TimeSeriesRecord, tolerance: float,
                   observables: Optional[Sequence[str]] = None, interpolate: bool = False) -> ComparisonReport:
    """Max/mean deviations and t_zc deltas of the observables both records share"""
    names = list(observables) if observables else sorted(set(a.series) & set(b.series))
    if not names:
        raise ComparisonError("records share no observables")
    same_grid = len(a.t) == len(b.t) and np.allclose(a.t, b.t, rtol=1e-12, atol=0.0)
    if not same_grid and not interpolate:
        raise ComparisonError("records use different time grids; enable interpolation to compare")
    report = ComparisonReport(tolerance=tolerance)
    for name in names:
        if name not in a.series or name not in b.series:
            raise ComparisonError(f"observable {name!r} missing from one record")
        va, vb = a.get(name), b.get(name)
        if va.shape[1:] != vb.shape[1:]:
            raise ComparisonError(f"observable {name!r} has shapes {va.shape} and {vb.shape}")
        if not same_grid:
            if va.ndim == 1:
                vb = np.interp(a.t, b.t, vb)
            else:
                vb = np.stack([np.interp(a.t, b.t, vb[:, j]) for j in range(vb.shape[1])], axis=1)
        diff = np.abs(va - vb)
        entry = {'max_abs': float(np.nanmax(diff)), 'mean_abs': float(np.nanmean(diff))}
        if va.ndim == 1:
            za = zero_crossing(a.t, va).first
            zb = zero_crossing(a.t, vb).first
            entry['t_zc'] = [za, zb]
            entry['t_zc_delta'] = None if za is None or zb is None else abs(za - zb)
        entry['passed'] = entry['max_abs'] <= tolerance
        report.series[name] = entry
    logger.info(f"Compared {len(names)} observables: {'pass' if report.passed else 'fail'}")
    return report
