"""
Classical spin dynamics of large 3D ensembles

Unit-vector spins follow dI_k/dt = 2pi grad_{I_k} H x I_k for Hamiltonians quadratic in
the spins (pair tensors plus site fields). Initial ensembles come from a heatbath draw of
an exponential weight in I^x; results are averaged over lattice configurations and
trajectories and coarse-grained into (r, theta) polarization maps.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence
import logging
import math

import numpy as np
from scipy.integrate import solve_ivp

from spinshell.engine.config import Config
from spinshell.engine.effective_hamiltonian import EffectiveHamiltonian
from spinshell.engine.errors import DomainError, EngineError
from spinshell.engine.geometry import SpinLattice, Z_AXIS
from spinshell.engine.records import TimeSeriesRecord

logger = logging.getLogger(__name__)


def langevin(mu: float) -> float:
    """Mean of I^x under the weight exp(mu I^x) on [-1, 1]: coth(mu) - 1/mu"""
    if abs(mu) < 1e-6:
        return mu / 3.0
    return 1.0 / math.tanh(mu) - 1.0 / mu


def _draw_longitudinal(mu: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of I^x from exp(mu I^x) on [-1, 1] for mu >= 0"""
    small = mu < 1e-12
    safe = np.where(small, 1.0, mu)
    x = 1.0 + np.log(u + (1.0 - u) * np.exp(-2 * safe)) / safe
    return np.clip(np.where(small, 2 * u - 1, x), -1.0, 1.0)


def heatbath_sample(mu_profile, seed=0, n_trajectories: int = 1, legacy: bool = False) -> np.ndarray:
    """Draw (n_trajectories, L, 3) unit spins with I^x ~ exp(mu_n I^x) and a uniform
    transverse angle; `seed` may be an int, SeedSequence or Generator.

    legacy reproduces the printed draw log(1 + u(e^{2mu} - 1))/mu, whose values lie in [0, 2].
    """
    mu = np.asarray(mu_profile, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise DomainError("chemical potentials must be finite")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (n_trajectories, len(mu))
    mu = np.broadcast_to(mu, shape)
    u = rng.random(shape)
    if legacy:
        small = np.abs(mu) < 1e-12
        safe = np.where(small, 1.0, mu)
        x = np.where(small, 2 * u, np.log1p(u * np.expm1(2 * safe)) / safe)
    else:
        x = _draw_longitudinal(np.abs(mu), u)
        x = np.where(mu < 0, -x, x)
    angle = rng.uniform(0.0, 2 * math.pi, shape)
    radius = np.sqrt(np.clip(1.0 - x ** 2, 0.0, None))
    return np.stack([x, radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def domain_wall_mu(lattice: SpinLattice, mu: float, r_pol: float) -> np.ndarray:
    """mu inside r_pol of the NV, 0 outside"""
    return np.where(lattice.radii <= r_pol, float(mu), 0.0)


class ClassicalModel:
    """Dense coupling tensor C[k, l] and site fields of a quadratic spin Hamiltonian"""

    def __init__(self, hamiltonian: EffectiveHamiltonian):
        self.hamiltonian = hamiltonian
        self.n_sites = hamiltonian.n_sites
        self.coupling = hamiltonian.dense_coupling()
        self.fields = np.asarray(hamiltonian.site_fields, dtype=float)

    def local_field(self, spins: np.ndarray) -> np.ndarray:
        """grad_{I_k} H for spins of shape (..., L, 3)"""
        return np.einsum('klab,...lb->...ka', self.coupling, spins) + self.fields

    def derivative(self, spins: np.ndarray) -> np.ndarray:
        return 2 * math.pi * np.cross(self.local_field(spins), spins)

    def energy(self, spins: np.ndarray) -> np.ndarray:
        pair = 0.5 * np.einsum('...ka,klab,...lb->...', spins, self.coupling, spins)
        return pair + np.einsum('...ka,ka->...', spins, self.fields)


def classical_derivative(spins, hamiltonian: EffectiveHamiltonian) -> np.ndarray:
    """Torque 2pi (sum_l T_kl I_l + f_k) x I_k on every spin"""
    return ClassicalModel(hamiltonian).derivative(np.asarray(spins, dtype=float))


def classical_energy(spins, hamiltonian: EffectiveHamiltonian):
    return ClassicalModel(hamiltonian).energy(np.asarray(spins, dtype=float))


@dataclass(frozen=True)
class ClassicalRun:
    """Trajectory-averaged record of one configuration plus requested snapshots"""
    record: TimeSeriesRecord
    final: np.ndarray
    snapshots: Dict[float, np.ndarray] = field(default_factory=dict)
    norm_drift: float = 0.0
    energy_drift: float = 0.0


def classical_evolve(spins, hamiltonian: EffectiveHamiltonian, t_grid,
                     snapshot_times: Sequence[float] = (), rtol: Optional[float] = None,
                     atol: float = 1e-12, max_refinements: int = 1) -> ClassicalRun:
    """Integrate all trajectories (M, L, 3) together with DOP853.

    Records the trajectory-mean Ix_total, per-site Ix and H. A failed integration is
    retried with a ten times tighter tolerance before an EngineError naming the worst site.
    """
    spins = np.asarray(spins, dtype=float)
    if spins.ndim == 2:
        spins = spins[None]
    m, n, _ = spins.shape
    if n != hamiltonian.n_sites:
        raise DomainError("spin array and Hamiltonian sizes differ")
    t_grid = np.asarray(t_grid, dtype=float)
    model = ClassicalModel(hamiltonian)
    rtol = Config.CLASSICAL_RTOL if rtol is None else rtol
    eval_times = np.union1d(t_grid, np.asarray(snapshot_times, dtype=float))

    def rhs(_t, y):
        return model.derivative(y.reshape(m, n, 3)).ravel()

    sol = None
    for attempt in range(max_refinements + 1):
        sol = solve_ivp(rhs, (eval_times[0], eval_times[-1]), spins.ravel(), method='DOP853',
                        t_eval=eval_times, rtol=rtol, atol=atol)
        if sol.success:
            break
        logger.warning(f"Classical integration failed ({sol.message}); refining tolerance")
        rtol /= 10
    if not sol.success:
        last = sol.y[:, -1].reshape(m, n, 3) if sol.y.size else spins
        norms = np.abs(np.linalg.norm(last, axis=-1) - 1.0)
        worst = np.unravel_index(int(np.argmax(norms)), norms.shape)
        raise EngineError("classical integration failed", {
            'message': sol.message, 't_reached': float(sol.t[-1]) if len(sol.t) else None,
            'worst_trajectory': int(worst[0]), 'worst_site': int(worst[1]),
            'norm_deviation': float(norms[worst]),
        })

    path = sol.y.T.reshape(len(eval_times), m, n, 3)
    on_grid = np.isin(eval_times, t_grid)
    samples = path[on_grid]
    energies = model.energy(samples)
    record = TimeSeriesRecord(t=eval_times[on_grid])
    record.add('Ix_total', samples[..., 0].sum(axis=-1).mean(axis=-1))
    record.add('Ix', samples[..., 0].mean(axis=1))
    record.add('H', energies.mean(axis=-1))

    norm_drift = float(np.max(np.abs(np.linalg.norm(path, axis=-1) - 1.0)))
    e0 = energies[0]
    scale = np.maximum(np.abs(e0), 1e-300)
    energy_drift = float(np.max(np.abs(energies - e0) / scale)) if len(energies) else 0.0
    record.metadata['summary'] = {'norm_drift': norm_drift, 'energy_drift': energy_drift}
    snapshots = {float(t): path[i] for i, t in enumerate(eval_times) if np.any(np.isclose(t, snapshot_times))}
    return ClassicalRun(record=record, final=path[-1], snapshots=snapshots,
                        norm_drift=norm_drift, energy_drift=energy_drift)


@dataclass(frozen=True)
class PolarizationMap:
    """Per-bin mean I^x over (r, theta); empty bins hold NaN"""
    r_edges: np.ndarray
    theta_edges: np.ndarray
    mean: np.ndarray
    count: np.ndarray
    time: Optional[float] = None

    @property
    def empty(self) -> np.ndarray:
        return self.count == 0

    def rows(self):
        r_mid = 0.5 * (self.r_edges[1:] + self.r_edges[:-1])
        th_mid = 0.5 * (self.theta_edges[1:] + self.theta_edges[:-1])
        for i, r in enumerate(r_mid):
            for j, th in enumerate(th_mid):
                yield r, th, self.mean[i, j], int(self.count[i, j]), self.time


def bin_coordinates(positions, nv_position=None, axis=Z_AXIS, fold: bool = False,
                    scaled: bool = False):
    """(r, theta) of every site; fold maps theta onto [0, pi/2], scaled divides r by
    cbrt|3cos^2(theta) - 1|"""
    positions = np.asarray(positions, dtype=float)
    rel = positions - (np.zeros(3) if nv_position is None else np.asarray(nv_position))
    r = np.linalg.norm(rel, axis=1)
    cos = np.clip(rel @ np.asarray(axis, dtype=float) / np.maximum(r, 1e-300), -1.0, 1.0)
    if fold:
        cos = np.abs(cos)
    theta = np.arccos(cos)
    if scaled:
        r = r / np.maximum(np.abs(3 * cos ** 2 - 1), 1e-12) ** (1.0 / 3.0)
    return r, theta


def coarse_grain(positions, values, r_edges, theta_edges, nv_position=None, axis=Z_AXIS,
                 fold: bool = False, scaled: bool = False, time: Optional[float] = None) -> PolarizationMap:
    """Bin per-site I^x samples; `positions` and `values` may stack several configurations"""
    values = np.asarray(values, dtype=float).ravel()
    r_edges = np.asarray(r_edges, dtype=float)
    theta_edges = np.asarray(theta_edges, dtype=float)
    if len(values) == 0:
        shape = (len(r_edges) - 1, len(theta_edges) - 1)
        return PolarizationMap(r_edges, theta_edges, np.full(shape, np.nan), np.zeros(shape, dtype=int), time)
    r, theta = bin_coordinates(positions, nv_position, axis, fold, scaled)
    count, _, _ = np.histogram2d(r, theta, bins=[r_edges, theta_edges])
    total, _, _ = np.histogram2d(r, theta, bins=[r_edges, theta_edges], weights=values)
    with np.errstate(invalid='ignore', divide='ignore'):
        mean = np.where(count > 0, total / np.where(count > 0, count, 1), np.nan)
    if np.any(count == 0):
        logger.warning(f"{int((count == 0).sum())} empty bin(s) in polarization map")
    return PolarizationMap(r_edges, theta_edges, mean, count.astype(int), time)


def sign_agreement(polarization_map: PolarizationMap, potential_map: np.ndarray, min_count: int = 50) -> float:
    """Fraction of populated bins where sign(mean I^x) equals sign(phi)"""
    populated = polarization_map.count >= min_count
    if not np.any(populated):
        return float('nan')
    agree = np.sign(polarization_map.mean[populated]) == np.sign(potential_map[populated])
    return float(np.mean(agree))


@dataclass(frozen=True)
class EnsembleResult:
    """Configuration-averaged record plus per-configuration runs"""
    record: TimeSeriesRecord
    runs: List[ClassicalRun]
    lattices: List[SpinLattice]
    seed: int

    def snapshot_map(self, time: float, r_edges, theta_edges, fold: bool = False,
                     scaled: bool = False) -> PolarizationMap:
        """Coarse-grained trajectory-mean I^x over all configurations at a snapshot time"""
        positions, values = [], []
        for lattice, run in zip(self.lattices, self.runs):
            if not run.snapshots:
                raise DomainError("no snapshots were recorded; pass snapshot_times to run_ensemble")
            key = min(run.snapshots, key=lambda t: abs(t - time))
            positions.append(lattice.positions)
            values.append(run.snapshots[key][..., 0].mean(axis=0))
        return coarse_grain(np.concatenate(positions), np.concatenate(values), r_edges, theta_edges,
                            self.lattices[0].nv_position, self.lattices[0].b_field_direction,
                            fold, scaled, time)


def run_ensemble(lattices: Sequence[SpinLattice], hamiltonians: Sequence[EffectiveHamiltonian],
                 mu_profiles: Sequence[np.ndarray], n_trajectories: int, t_grid,
                 seed: int = 0, snapshot_times: Sequence[float] = (), threads: Optional[int] = None,
                 legacy_heatbath: bool = False) -> EnsembleResult:
    """Heatbath-sample and evolve every configuration, each on its own random stream.

    The average is taken in configuration order so it does not depend on scheduling.
    """
    if not (len(lattices) == len(hamiltonians) == len(mu_profiles)):
        raise DomainError("need one Hamiltonian and one mu profile per lattice")
    streams = np.random.SeedSequence(seed).spawn(len(lattices))

    def work(index):
        rng = np.random.default_rng(streams[index])
        spins = heatbath_sample(mu_profiles[index], rng, n_trajectories, legacy_heatbath)
        logger.info(f"Classical configuration {index}: {spins.shape[1]} spins x {n_trajectories} trajectories")
        return classical_evolve(spins, hamiltonians[index], t_grid, snapshot_times)

    with ThreadPoolExecutor(max_workers=max(1, threads or Config.THREADS)) as pool:
        runs = list(pool.map(work, range(len(lattices))))

    record = TimeSeriesRecord(t=runs[0].record.t)
    record.add('Ix_total', np.mean([r.record.get('Ix_total') for r in runs], axis=0))
    record.add('H', np.mean([r.record.get('H') for r in runs], axis=0))
    record.metadata['summary'] = {
        'n_configurations': len(runs),
        'n_trajectories': n_trajectories,
        'norm_drift': max(r.norm_drift for r in runs),
        'energy_drift': max(r.energy_drift for r in runs),
    }
    return EnsembleResult(record=record, runs=runs, lattices=list(lattices),
                          seed=seed)
