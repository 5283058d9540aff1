"""
Exact quantum dynamics for small spin systems

Kicked Floquet evolution, static effective-Hamiltonian evolution, Lindblad evolution with
jump operators on the NV-adjacent site (density matrix or quantum-jump trajectories) and
multi-phase experimental protocols. Hamiltonians are in Hz, propagators apply 2*pi.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.integrate import solve_ivp
from scipy.linalg import eigh, expm

from spinshell.engine.config import Config
from spinshell.engine.effective_hamiltonian import (
    EffectiveHamiltonian, PulseSequence, bond_operators, build_dipolar_hamiltonian, to_sparse_matrix,
)
from spinshell.engine.errors import DomainError, EngineError
from spinshell.engine.geometry import SpinLattice
from spinshell.engine.records import TimeSeriesRecord
from spinshell.engine.spin_operators import (
    SIGMA, SIGMA_X, SIGMA_Y, SIGMA_Z, axis_spin, product_operator, rotation_2x2,
    site_operator, spin_operators, total_spin,
)

logger = logging.getLogger(__name__)

DEFAULT_OBSERVABLES = ('Ix_total', 'Ix', 'H')
TOTAL_OBSERVABLES = {'Ix_total': 0, 'Iy_total': 1, 'Iz_total': 2}
SITE_OBSERVABLES = {'Ix': 0, 'Iy': 1, 'Iz': 2}

SIGMA_PLUS = (SIGMA_X + 1j * SIGMA_Y) / 2
SIGMA_MINUS = (SIGMA_X - 1j * SIGMA_Y) / 2


class InitialStateSpec(BaseModel):
    """Product-state polarization profile along a common axis"""
    model_config = ConfigDict(frozen=True)

    profile: List[float]
    axis: Tuple[float, float, float] = (1.0, 0.0, 0.0)

    @field_validator('profile')
    @classmethod
    def _check_profile(cls, value):
        if not value:
            raise ValueError("profile must contain at least one site")
        bad = [i for i, p in enumerate(value) if abs(p) > 1]
        if bad:
            raise ValueError(f"|p_n| must not exceed 1 (sites {bad})")
        return value

    @field_validator('axis')
    @classmethod
    def _check_axis(cls, value):
        norm = math.sqrt(sum(v * v for v in value))
        if norm == 0:
            raise ValueError("polarization axis must be non-zero")
        return tuple(v / norm for v in value)


class DissipationSpec(BaseModel):
    """Jump operators L+, L-, Lz acting on one site, or on all sites with r^-6 rates"""
    model_config = ConfigDict(frozen=True)

    site: int = Field(0, ge=0)
    gamma_plus: float = Field(0.0, ge=0)
    gamma_minus: float = Field(0.0, ge=0)
    gamma_z: float = Field(0.0, ge=0)
    spatial_mode: Literal['single-site', 'r6'] = 'single-site'

    @classmethod
    def uniform(cls, gamma: float, site: int = 0, spatial_mode: str = 'single-site') -> 'DissipationSpec':
        return cls(site=site, gamma_plus=gamma, gamma_minus=gamma, gamma_z=gamma, spatial_mode=spatial_mode)

    @property
    def is_closed(self) -> bool:
        return self.gamma_plus == 0 and self.gamma_minus == 0 and self.gamma_z == 0

    def site_weights(self, n_spins: int) -> np.ndarray:
        if self.site >= n_spins:
            raise DomainError(f"dissipation site {self.site} outside a {n_spins}-spin system")
        weights = np.zeros(n_spins)
        if self.spatial_mode == 'single-site':
            weights[self.site] = 1.0
        else:
            # NV sits one lattice step before the dissipation site
            weights = (1.0 / (np.abs(np.arange(n_spins) - self.site) + 1.0)) ** 6
        return weights

    def jump_operators(self, n_spins: int) -> List[Tuple[float, sp.csr_matrix]]:
        """(rate, L) pairs with L+- = (sigma^x +- i sigma^y)/2 and Lz = sigma^z"""
        ops = []
        for site, w in enumerate(self.site_weights(n_spins)):
            if w == 0.0:
                continue
            for gamma, single in ((self.gamma_plus, SIGMA_PLUS), (self.gamma_minus, SIGMA_MINUS),
                                  (self.gamma_z, SIGMA_Z)):
                if gamma > 0:
                    ops.append((gamma * w, site_operator(single, site, n_spins)))
        return ops


class PhaseSpec(BaseModel):
    """One protocol phase: generator, duration and sampling"""
    model_config = ConfigDict(frozen=True)

    generator: Literal['KICKED', 'EFFECTIVE', 'FREE']
    duration: float = Field(..., ge=0)
    dissipation: bool = False
    n_samples: int = Field(50, ge=2)
    grid: Literal['linear', 'log'] = 'linear'
    label: Optional[str] = None


class ProtocolSpec(BaseModel):
    """Ordered phases, e.g. a closed waiting period followed by a dissipative readout"""
    phases: List[PhaseSpec]
    sequence: Optional[PulseSequence] = None
    dissipation: Optional[DissipationSpec] = None
    observables: Tuple[str, ...] = DEFAULT_OBSERVABLES

    @model_validator(mode='after')
    def _check_phases(self):
        if not self.phases:
            raise ValueError("a protocol needs at least one phase")
        if any(p.generator == 'KICKED' for p in self.phases) and self.sequence is None:
            raise ValueError("KICKED phases need a pulse sequence")
        if any(p.dissipation for p in self.phases) and self.dissipation is None:
            raise ValueError("dissipative phases need a dissipation block")
        return self

    @classmethod
    def wait_then_readout(cls, t_wait: float, t_readout: float, dissipation: DissipationSpec,
                          n_samples: int = 100, observables=DEFAULT_OBSERVABLES) -> 'ProtocolSpec':
        phases = []
        if t_wait > 0:
            phases.append(PhaseSpec(generator='EFFECTIVE', duration=t_wait, n_samples=max(2, n_samples // 2),
                                    label='wait'))
        phases.append(PhaseSpec(generator='EFFECTIVE', duration=t_readout, dissipation=True,
                                n_samples=n_samples, label='readout'))
        return cls(phases=phases, dissipation=dissipation, observables=tuple(observables))


@dataclass
class QuantumState:
    """Density matrix or an equally weighted bundle of pure trajectories"""
    n_spins: int
    representation: Literal['density', 'trajectories']
    rho: Optional[np.ndarray] = None
    psis: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return 2 ** self.n_spins

    def copy(self) -> 'QuantumState':
        return QuantumState(
            n_spins=self.n_spins,
            representation=self.representation,
            rho=None if self.rho is None else self.rho.copy(),
            psis=None if self.psis is None else self.psis.copy(),
            weights=None if self.weights is None else self.weights.copy(),
        )

    def density_matrix(self) -> np.ndarray:
        """rho, or the weighted mixture of the normalized trajectories"""
        if self.representation == 'density':
            return self.rho
        norms = np.linalg.norm(self.psis, axis=1)
        psis = self.psis / norms[:, None]
        return np.einsum('m,mi,mj->ij', self.weights, psis, psis.conj())

    def check(self, tolerance: float = 1e-8, positivity: bool = False) -> dict:
        """Trace error, Hermiticity error and optionally the minimum eigenvalue"""
        rho = self.density_matrix()
        report = {
            'trace_error': float(abs(np.trace(rho) - 1.0)),
            'hermiticity_error': float(np.max(np.abs(rho - rho.conj().T))),
        }
        if positivity:
            report['min_eigenvalue'] = float(np.min(np.linalg.eigvalsh((rho + rho.conj().T) / 2)))
        if report['trace_error'] > tolerance:
            logger.warning(f"State trace deviates from 1 by {report['trace_error']:.2e}")
        return report


def _check_size(n_spins: int, representation: str) -> None:
    limit = Config.MAX_DENSE_SPINS if representation == 'density' else Config.MAX_TRAJECTORY_SPINS
    if n_spins > limit:
        raise DomainError(f"{representation} evolution is limited to {limit} spins, got {n_spins}")


def uniform_profile(n_sites: int, n_p: int, p: float) -> List[float]:
    """First n_p sites polarized at p, the rest maximally mixed"""
    if not 0 <= n_p <= n_sites:
        raise DomainError(f"n_p must lie in [0, {n_sites}]")
    return [p] * n_p + [0.0] * (n_sites - n_p)


def domain_wall_profile(n_sites: int, n_plus: int, p_plus: float, n_minus: int, p_minus: float) -> List[float]:
    """n_plus sites at p_plus next to the NV, then n_minus sites at p_minus"""
    if n_plus < 0 or n_minus < 0 or n_plus + n_minus > n_sites:
        raise DomainError(f"domain wall of {n_plus}+{n_minus} sites does not fit {n_sites} sites")
    return [p_plus] * n_plus + [p_minus] * n_minus + [0.0] * (n_sites - n_plus - n_minus)


def _single_site_state(p: float, axis: np.ndarray) -> np.ndarray:
    n_sigma = sum(axis[a] * SIGMA[a] for a in range(3))
    return (np.eye(2) + p * n_sigma) / 2


def _axis_eigenstates(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(|+n>, |-n>) for a unit axis"""
    n_sigma = sum(axis[a] * SIGMA[a] for a in range(3))
    values, vectors = np.linalg.eigh(n_sigma)
    return vectors[:, 1], vectors[:, 0]


def prepare_state(spec: InitialStateSpec, n_spins: Optional[int] = None,
                  representation: Literal['density', 'trajectories'] = 'density',
                  n_trajectories: int = 1000, seed: int = 0) -> QuantumState:
    """Product state of (1 + p_n sigma.axis)/2.

    The trajectory representation samples every site in |+axis> with probability
    (1 + p_n)/2 and |-axis> otherwise; the bundle average reproduces the density matrix.
    """
    profile = np.asarray(spec.profile, dtype=float)
    n = len(profile) if n_spins is None else n_spins
    if len(profile) != n:
        raise DomainError(f"profile has {len(profile)} sites, system has {n}")
    _check_size(n, representation)
    axis = np.asarray(spec.axis, dtype=float)

    if representation == 'density':
        rho = product_operator([_single_site_state(p, axis) for p in profile])
        return QuantumState(n_spins=n, representation='density', rho=rho)

    if n_trajectories < 1:
        raise DomainError("need at least one trajectory")
    plus, minus = _axis_eigenstates(axis)
    rng = np.random.default_rng(seed)
    up = rng.random((n_trajectories, n)) < (1 + profile) / 2
    psis = np.empty((n_trajectories, 2 ** n), dtype=complex)
    for m in range(n_trajectories):
        psi = np.array([1.0 + 0j])
        for k in range(n):
            psi = np.kron(psi, plus if up[m, k] else minus)
        psis[m] = psi
    weights = np.full(n_trajectories, 1.0 / n_trajectories)
    logger.info(f"Sampled {n_trajectories} product-state trajectories for {n} spins")
    return QuantumState(n_spins=n, representation='trajectories', psis=psis, weights=weights)


class ObservableSet:
    """Named observables evaluated on density matrices or trajectory bundles"""

    def __init__(self, names: Sequence[str], n_spins: int,
                 hamiltonian: Optional[EffectiveHamiltonian] = None):
        self.names = list(names)
        self.n_spins = n_spins
        self._ops: Dict[str, list] = {}
        ops = spin_operators(n_spins)
        for name in self.names:
            if name in TOTAL_OBSERVABLES:
                self._ops[name] = [total_spin(n_spins, TOTAL_OBSERVABLES[name])]
            elif name in SITE_OBSERVABLES:
                self._ops[name] = [site[SITE_OBSERVABLES[name]] for site in ops]
            elif name == 'H':
                self._require(hamiltonian, name)
                self._ops[name] = [to_sparse_matrix(hamiltonian)]
            elif name == 'h':
                self._require(hamiltonian, name)
                self._ops[name] = bond_operators(hamiltonian)
            elif name == 'axis_total':
                axes = (hamiltonian.metadata.get('axes') if hamiltonian is not None else None)
                axes = np.tile([1.0, 0.0, 0.0], (n_spins, 1)) if axes is None else np.asarray(axes)
                self._ops[name] = [axis_spin(n_spins, axes)]
            else:
                raise DomainError(f"unknown observable {name!r}")

    @staticmethod
    def _require(hamiltonian, name):
        if hamiltonian is None:
            raise DomainError(f"observable {name!r} needs a Hamiltonian")

    def _scalar(self, name: str) -> bool:
        return name in TOTAL_OBSERVABLES or name in ('H', 'axis_total')

    def measure(self, state: QuantumState) -> Dict[str, np.ndarray]:
        out = {}
        if state.representation == 'density':
            rho = state.rho
            for name in self.names:
                values = np.array([np.real(op.T.multiply(rho).sum()) for op in self._ops[name]])
                out[name] = values[0] if self._scalar(name) else values
            return out
        norms2 = np.real(np.einsum('mi,mi->m', state.psis.conj(), state.psis))
        for name in self.names:
            per_traj = np.array([
                np.real(np.einsum('mi,mi->m', state.psis.conj(), (op @ state.psis.T).T)) / norms2
                for op in self._ops[name]
            ])
            mean = per_traj @ state.weights
            out[name] = mean[0] if self._scalar(name) else mean
            if self._scalar(name) and len(state.weights) > 1:
                var = np.sum(state.weights * (per_traj[0] - mean[0]) ** 2)
                out[f"{name}_stderr"] = math.sqrt(var / (len(state.weights) - 1))
        return out


def _new_record(t_grid, samples: List[Dict[str, np.ndarray]], metadata=None) -> TimeSeriesRecord:
    record = TimeSeriesRecord(t=np.asarray(t_grid, dtype=float), metadata=metadata or {})
    for name in samples[0]:
        record.add(name, np.array([s[name] for s in samples]))
    return record


def _dense_hamiltonian(hamiltonian: EffectiveHamiltonian) -> np.ndarray:
    h = to_sparse_matrix(hamiltonian).toarray()
    scale = max(np.max(np.abs(h)), 1e-300)
    if np.max(np.abs(h - h.conj().T)) > 1e-10 * scale:
        raise DomainError("Hamiltonian is not Hermitian")
    return h


def evolve_kicked(state: QuantumState, lattice: SpinLattice, sequence: PulseSequence, n_cycles: int,
                  observables: Sequence[str] = DEFAULT_OBSERVABLES, sample_every: int = 1,
                  return_state: bool = False):
    """Stroboscopic evolution under U = exp(-i2pi H_free t_dd) exp(-i2pi H_kick t_kick).

    H_free is the secular dipolar Hamiltonian plus the defect field along z; during the
    kick only the drive and the defect field act. The 'H' observable is H_free.
    """
    n = lattice.n_spins
    if state.n_spins != n:
        raise DomainError("state and lattice sizes differ")
    _check_size(n, state.representation)
    if n_cycles < 0 or sample_every < 1:
        raise DomainError("n_cycles must be non-negative and sample_every positive")
    if sequence.t_kick == 0:
        logger.warning("t_kick = 0: kicks are identities")

    h_free = build_dipolar_hamiltonian(lattice, sequence.detuning)
    u_free = expm(-2j * math.pi * sequence.t_dd * to_sparse_matrix(h_free).toarray())
    singles = []
    for eta in lattice.eta + sequence.detuning:
        w = math.hypot(sequence.rabi, eta)
        axis = (sequence.rabi / w, 0.0, eta / w) if w > 0 else (1.0, 0.0, 0.0)
        singles.append(rotation_2x2(2 * math.pi * w * sequence.t_kick, axis))
    u_cycle = u_free @ product_operator(singles)

    obs = ObservableSet(observables, n, h_free)
    state = state.copy()
    times, samples = [0.0], [obs.measure(state)]
    for cycle in range(1, n_cycles + 1):
        if state.representation == 'density':
            state.rho = u_cycle @ state.rho @ u_cycle.conj().T
        else:
            state.psis = state.psis @ u_cycle.T
        if cycle % sample_every == 0 or cycle == n_cycles:
            times.append(cycle * sequence.period)
            samples.append(obs.measure(state))
    logger.info(f"Kicked evolution of {n} spins over {n_cycles} cycles finished")
    record = _new_record(times, samples, {'generator': 'KICKED', 'period': sequence.period})
    return (record, state) if return_state else record


def evolve_effective(state: QuantumState, hamiltonian: EffectiveHamiltonian, t_grid,
                     observables: Sequence[str] = DEFAULT_OBSERVABLES, return_state: bool = False):
    """Exact evolution under a static Hamiltonian via its eigendecomposition"""
    if state.n_spins != hamiltonian.n_sites:
        raise DomainError("state and Hamiltonian sizes differ")
    _check_size(state.n_spins, state.representation)
    t_grid = np.asarray(t_grid, dtype=float)
    energies, vectors = eigh(_dense_hamiltonian(hamiltonian))
    obs = ObservableSet(observables, state.n_spins, hamiltonian)

    t0 = t_grid[0]
    out = state.copy()
    samples = []
    if state.representation == 'density':
        rho_eig = vectors.conj().T @ state.rho @ vectors
        for t in t_grid:
            phase = np.exp(-2j * math.pi * energies * (t - t0))
            out.rho = vectors @ (phase[:, None] * rho_eig * phase.conj()[None, :]) @ vectors.conj().T
            samples.append(obs.measure(out))
    else:
        coeffs = state.psis @ vectors.conj()
        for t in t_grid:
            phase = np.exp(-2j * math.pi * energies * (t - t0))
            out.psis = (coeffs * phase[None, :]) @ vectors.T
            samples.append(obs.measure(out))
    record = _new_record(t_grid, samples, {'generator': 'EFFECTIVE', 'kind': hamiltonian.kind})
    return (record, out) if return_state else record


def _refined_step(t_grid) -> float:
    """Step cap for a retried integration: a tenth of the smallest grid spacing"""
    steps = np.diff(t_grid)
    steps = steps[steps > 0]
    return float(steps.min()) / 10 if len(steps) else np.inf


def _lindblad_density(state: QuantumState, h: np.ndarray, jumps, t_grid, obs: ObservableSet,
                      max_refinements: int = 1):
    dim = state.dim
    ls = [(g, l.toarray()) for g, l in jumps]
    decay = sum(g * (l.conj().T @ l) for g, l in ls)
    h_eff = 2 * math.pi * h - 0.5j * decay

    def rhs(_t, y):
        rho = y.reshape(dim, dim)
        out = -1j * (h_eff @ rho - rho @ h_eff.conj().T)
        for g, l in ls:
            out += g * (l @ rho @ l.conj().T)
        return out.ravel()

    rtol = Config.DENSE_RTOL
    max_step = np.inf
    attempts = []
    sol = None
    for _ in range(max_refinements + 1):
        sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), state.rho.ravel(), method='RK45', t_eval=t_grid,
                        rtol=rtol, atol=1e-10, max_step=max_step)
        attempts.append({'rtol': rtol, 'message': sol.message,
                         't_reached': float(sol.t[-1]) if len(sol.t) else None})
        if sol.success:
            break
        logger.warning(f"Master-equation integration failed ({sol.message}); refining tolerance")
        rtol /= 10
        max_step = _refined_step(t_grid)
    if not sol.success:
        raise EngineError("master-equation integration failed", {'attempts': attempts})
    out = state.copy()
    samples = []
    for k in range(len(t_grid)):
        out.rho = sol.y[:, k].reshape(dim, dim)
        samples.append(obs.measure(out))
    trace_error = float(abs(np.trace(out.rho) - 1.0))
    return samples, out, {'trace_error_final': trace_error, 'n_rhs_evaluations': int(sol.nfev),
                         'refinements': len(attempts) - 1}


def _run_trajectory(psi0, h_eff, jumps, t_grid, rng, max_refinements: int = 1):
    """One quantum-jump trajectory; returns the normalized state at every grid time.

    The non-Hermitian equation d psi/dt = -i H_eff psi is integrated until the squared
    norm falls to a uniform random threshold; there a jump is drawn with probability
    proportional to gamma ||L psi||^2 and the state is renormalized.
    """
    def rhs(_t, y):
        return -1j * (h_eff @ y)

    psi = np.asarray(psi0, dtype=complex) / np.linalg.norm(psi0)
    out = np.empty((len(t_grid), len(psi)), dtype=complex)
    out[0] = psi
    t = float(t_grid[0])
    t_end = float(t_grid[-1])
    index = 1
    n_jumps = 0
    threshold = rng.random()
    while index < len(t_grid):
        if t >= t_end:
            out[index:] = psi / np.linalg.norm(psi)
            break

        def norm_drop(_t, y, level=threshold):
            return np.real(np.vdot(y, y)) - level
        norm_drop.terminal = True
        norm_drop.direction = -1

        t_eval = np.clip(t_grid[index:], t, t_end)
        rtol = Config.TRAJECTORY_RTOL
        max_step = np.inf
        attempts = []
        for _ in range(max_refinements + 1):
            sol = solve_ivp(rhs, (t, t_end), psi, method='DOP853', t_eval=t_eval, events=norm_drop,
                            rtol=rtol, atol=1e-9, max_step=max_step)
            attempts.append({'rtol': rtol, 'message': sol.message, 't_start': t})
            if sol.status != -1:
                break
            rtol /= 10
            max_step = _refined_step(t_grid)
        if sol.status == -1:
            raise EngineError("trajectory integration failed", {'attempts': attempts})
        # a segment ending in a jump before the next grid time carries no samples
        for k in range(len(sol.t)):
            out[index] = sol.y[:, k] / np.linalg.norm(sol.y[:, k])
            index += 1
        if sol.status != 1:
            break
        t = float(sol.t_events[0][0])
        psi = sol.y_events[0][0]
        amps = np.array([g * np.real(np.vdot(l @ psi, l @ psi)) for g, l in jumps])
        if amps.sum() > 0:
            j = int(np.searchsorted(np.cumsum(amps) / amps.sum(), rng.random()))
            psi = jumps[min(j, len(jumps) - 1)][1] @ psi
            n_jumps += 1
        psi = psi / np.linalg.norm(psi)
        threshold = rng.random()
    return out, n_jumps


def _lindblad_trajectories(state: QuantumState, h: sp.csr_matrix, jumps, t_grid, obs: ObservableSet,
                           seed: int, threads: int):
    decay = sum((g * (l.conj().T @ l) for g, l in jumps), sp.csr_matrix(h.shape, dtype=complex))
    h_eff = (2 * math.pi * h - 0.5j * decay).tocsr()
    streams = np.random.SeedSequence(seed).spawn(len(state.psis))

    def work(m):
        return _run_trajectory(state.psis[m], h_eff, jumps, t_grid, np.random.default_rng(streams[m]))

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(work, range(len(state.psis))))

    paths = np.stack([r[0] for r in results], axis=1)
    out = state.copy()
    samples = []
    for k in range(len(t_grid)):
        out.psis = paths[k]
        samples.append(obs.measure(out))
    total_jumps = int(sum(r[1] for r in results))
    return samples, out, {'n_trajectories': len(state.psis), 'n_jumps': total_jumps}


def evolve_lindblad(state: QuantumState, hamiltonian: EffectiveHamiltonian, dissipation: DissipationSpec,
                    t_grid, observables: Sequence[str] = DEFAULT_OBSERVABLES, seed: int = 0,
                    threads: Optional[int] = None, return_state: bool = False):
    """Lindblad evolution d rho/dt = -i2pi[H, rho] + sum gamma (L rho L^+ - {L^+ L, rho}/2).

    Density matrices are integrated with adaptive Runge-Kutta; trajectory bundles are
    unravelled into quantum jumps with independent random streams per trajectory.
    """
    if dissipation.is_closed:
        return evolve_effective(state, hamiltonian, t_grid, observables, return_state)
    if state.n_spins != hamiltonian.n_sites:
        raise DomainError("state and Hamiltonian sizes differ")
    _check_size(state.n_spins, state.representation)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0):
        raise DomainError("time grid must be non-decreasing")
    jumps = dissipation.jump_operators(state.n_spins)
    obs = ObservableSet(observables, state.n_spins, hamiltonian)
    logger.info(f"Lindblad evolution ({state.representation}) of {state.n_spins} spins with "
                f"{len(jumps)} jump operators")

    if state.representation == 'density':
        samples, final, diagnostics = _lindblad_density(state, _dense_hamiltonian(hamiltonian), jumps,
                                                        t_grid, obs)
    else:
        samples, final, diagnostics = _lindblad_trajectories(
            state, to_sparse_matrix(hamiltonian), jumps, t_grid, obs, seed, threads or Config.THREADS)
    record = _new_record(t_grid, samples, {'generator': 'EFFECTIVE', 'kind': hamiltonian.kind,
                                           'dissipation': dissipation.model_dump(), **diagnostics})
    return (record, final) if return_state else record


def _phase_grid(phase: PhaseSpec) -> np.ndarray:
    if phase.grid == 'log' and phase.duration > 0:
        first = phase.duration * 1e-3
        return np.concatenate([[0.0], np.geomspace(first, phase.duration, phase.n_samples - 1)])
    return np.linspace(0.0, phase.duration, phase.n_samples)


def run_protocol(spec: ProtocolSpec, state: QuantumState, lattice: Optional[SpinLattice] = None,
                 hamiltonian: Optional[EffectiveHamiltonian] = None, seed: int = 0,
                 threads: Optional[int] = None, return_state: bool = False):
    """Run the phases back to back; the record carries phase boundaries and the readout start.

    EFFECTIVE phases use `hamiltonian`, FREE phases the lab-frame dipolar Hamiltonian of
    `lattice`, KICKED phases the pulse sequence.
    """
    records = []
    boundaries = []
    readout_start = None
    offset = 0.0
    current = state
    for index, phase in enumerate(spec.phases):
        grid = _phase_grid(phase)
        logger.info(f"Protocol phase {index} ({phase.label or phase.generator}) for {phase.duration:g}")
        if phase.generator == 'KICKED':
            if phase.dissipation:
                raise DomainError("dissipation is only modelled on effective and free generators")
            if lattice is None:
                raise DomainError("KICKED phases need a lattice")
            n_cycles = int(round(phase.duration / spec.sequence.period))
            every = max(1, n_cycles // (phase.n_samples - 1))
            rec, current = evolve_kicked(current, lattice, spec.sequence, n_cycles, spec.observables,
                                         sample_every=every, return_state=True)
        else:
            if phase.generator == 'FREE':
                if lattice is None:
                    raise DomainError("FREE phases need a lattice")
                generator = build_dipolar_hamiltonian(lattice)
            else:
                if hamiltonian is None:
                    raise DomainError("EFFECTIVE phases need a Hamiltonian")
                generator = hamiltonian
            dissipation = spec.dissipation if phase.dissipation else DissipationSpec()
            rec, current = evolve_lindblad(current, generator, dissipation, grid, spec.observables,
                                           seed=seed + index, threads=threads, return_state=True)
        if phase.dissipation and readout_start is None:
            readout_start = offset
        boundaries.append(offset)
        records.append(rec.shifted(offset))
        offset += float(rec.t[-1])
    record = TimeSeriesRecord.concatenate(records)
    record.metadata.update({
        'phase_boundaries': boundaries,
        'readout_start': boundaries[-1] if readout_start is None else readout_start,
        'generator': 'PROTOCOL',
    })
    return (record, current) if return_state else record


def energy_density(state: QuantumState, hamiltonian: EffectiveHamiltonian) -> np.ndarray:
    """Bond energies <h_{k+1/2}>; they sum to <H>"""
    obs = ObservableSet(['h'], state.n_spins, hamiltonian)
    return obs.measure(state)['h']


@dataclass(frozen=True)
class EnergySpread:
    variance: np.ndarray
    center: np.ndarray
    reliable: np.ndarray = field(default_factory=lambda: np.array([], dtype=bool))


def energy_variance(bond_energies, positions: Optional[np.ndarray] = None,
                    tolerance: float = 1e-10) -> EnergySpread:
    """sigma_E^2 = sum (x - xbar)^2 <h_x> / <H> over bond positions x = k + 1/2.

    Accepts one profile (n_bonds,) or a series (T, n_bonds); samples whose total energy
    is negligible against sum |h| are flagged unreliable.
    """
    h = np.atleast_2d(np.asarray(bond_energies, dtype=float))
    x = np.arange(h.shape[1]) + 0.5 if positions is None else np.asarray(positions, dtype=float)
    total = h.sum(axis=1)
    reliable = np.abs(total) > tolerance * np.maximum(np.abs(h).sum(axis=1), 1e-300)
    if not np.all(reliable):
        logger.warning(f"{int((~reliable).sum())} energy profile(s) have near-zero total energy")
    safe = np.where(reliable, total, 1.0)
    center = (h @ x) / safe
    variance = np.einsum('tk,tk->t', (x[None, :] - center[:, None]) ** 2, h) / safe
    variance = np.where(reliable, variance, np.nan)
    if np.ndim(bond_energies) == 1:
        return EnergySpread(variance=variance[0], center=center[0], reliable=reliable[0])
    return EnergySpread(variance=variance, center=center, reliable=reliable)
