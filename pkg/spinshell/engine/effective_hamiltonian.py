"""
Effective Hamiltonians of the kicked dipolar spin system

Composed single-particle kicks, toggling-frame averages away from and close to the pi kick,
the simplified toy-chain models, on-site potential profiles and the crossing-radius solver.
All Hamiltonians are stored in Hz; propagators apply the 2*pi.
"""
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple
import logging
import math

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import quad
from scipy.optimize import brentq

from spinshell.engine.errors import DomainError, NoCrossingError
from spinshell.engine.geometry import (
    DEFAULT_CONSTANTS, FROZEN_CORE_RADIUS, NATURAL_ABUNDANCE, DEFAULT_LATTICE_CONSTANT,
    DIAMOND_BASIS, PhysicalConstants, SpinLattice,
)
from spinshell.engine.spin_operators import spin_operators

logger = logging.getLogger(__name__)

DIPOLAR_D = np.diag([-1.0, -1.0, 2.0])
X_HAT = np.array([1.0, 0.0, 0.0])

HamiltonianKind = Literal['SL', 'PI', 'TOGGLING_FULL', 'TOY_PI', 'TOY_PIHALF', 'DIPOLAR']

_LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI_CIVITA[_i, _j, _k] = 1.0
    _LEVI_CIVITA[_i, _k, _j] = -1.0


class PulseSequence(BaseModel):
    """Spin-locking train: kicks of length t_kick at Rabi frequency rabi, separated by t_dd"""
    model_config = ConfigDict(frozen=True)

    rabi: float = Field(..., ge=0, description="Hz")
    t_kick: float = Field(..., ge=0, description="s")
    t_dd: float = Field(..., ge=0, description="s")
    detuning: float = Field(0.0, description="Hz")

    @model_validator(mode='after')
    def _positive_period(self):
        if self.t_kick + self.t_dd <= 0:
            raise ValueError("period t_kick + t_dd must be positive")
        return self

    @classmethod
    def from_kick_angle(cls, rabi: float, kick_angle: float, t_dd: float,
                        detuning: float = 0.0) -> 'PulseSequence':
        if rabi <= 0:
            raise DomainError("a kick angle needs a positive Rabi frequency")
        return cls(rabi=rabi, t_kick=kick_angle / (2 * math.pi * rabi), t_dd=t_dd, detuning=detuning)

    @property
    def period(self) -> float:
        return self.t_kick + self.t_dd

    @property
    def kick_angle(self) -> float:
        return 2 * math.pi * self.rabi * self.t_kick

    @property
    def delta_theta(self) -> float:
        return self.kick_angle - math.pi


@dataclass(frozen=True)
class SiteKick:
    """Single-particle kick exp(-i theta_eff n.I)"""
    theta_eff: float
    axis: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """H = sum_pairs I_k^T T_kl I_l + sum_k f_k . I_k, with T_kl already scaled by the coupling"""
    kind: HamiltonianKind
    n_sites: int
    pairs: np.ndarray
    tensors: np.ndarray
    site_fields: np.ndarray
    metadata: dict = field(default_factory=dict)

    def pair_tensor(self, k: int, l: int) -> np.ndarray:
        for idx, (a, b) in enumerate(self.pairs):
            if (a, b) == (k, l):
                return self.tensors[idx]
            if (a, b) == (l, k):
                return self.tensors[idx].T
        return np.zeros((3, 3))

    def dense_coupling(self) -> np.ndarray:
        """(n, n, 3, 3) array with T[l, k] = T[k, l]^T and zero diagonal"""
        out = np.zeros((self.n_sites, self.n_sites, 3, 3))
        if len(self.pairs):
            k, l = self.pairs[:, 0], self.pairs[:, 1]
            out[k, l] = self.tensors
            out[l, k] = np.transpose(self.tensors, (0, 2, 1))
        return out


@dataclass(frozen=True)
class PotentialProfile:
    """On-site x-potential of a toy chain (Hz)"""
    phi: np.ndarray
    phi_max: float
    delta_theta: float
    n_nv: int = 0
    energy_scale: float = 1.0
    lattice_constant: float = 1.0 / math.pi ** (1.0 / 3.0)
    crossing_site: Optional[float] = None


@dataclass(frozen=True)
class CrossingRadius:
    r_c0: float
    r_c: float
    theta: float
    mode: str


def _cross_matrix(n: np.ndarray) -> np.ndarray:
    """epsilon(n)_ij = sum_k eps_ikj n_k, i.e. the matrix of v -> n x v"""
    return np.einsum('ikj,k->ij', _LEVI_CIVITA, n)


def compose_single_particle_kick(rabi: float, eta: float, t_kick: float, t_dd: float) -> SiteKick:
    """Fuse exp(-i eta t_dd I^z) exp(-i t_kick (rabi I^x + eta I^z)) into one rotation.

    Frequencies in Hz, times in s. Returns the rotation angle in [0, 2pi) and axis.
    """
    if rabi == 0 and eta == 0:
        raise DomainError("kick composition needs a non-zero Rabi frequency or field")
    omega = 2 * math.pi * rabi
    w = 2 * math.pi * eta
    alpha = t_kick * math.hypot(omega, w)
    half_dd = w * t_dd / 2
    if alpha > 0:
        sx = omega * t_kick / alpha * math.sin(alpha / 2)
        sz = w * t_kick / alpha * math.sin(alpha / 2)
    else:
        sx = sz = 0.0
    a0 = math.cos(alpha / 2) * math.cos(half_dd) - sz * math.sin(half_dd)
    vec = np.array([
        sx * math.cos(half_dd),
        sx * math.sin(half_dd),
        sz * math.cos(half_dd) + math.cos(alpha / 2) * math.sin(half_dd),
    ])
    norm = float(np.linalg.norm(vec))
    theta = 2 * math.atan2(norm, a0)
    if norm < 1e-14 or theta >= 2 * math.pi - 1e-12:
        logger.warning("Composed kick is the identity; using the x axis by convention")
        return SiteKick(theta_eff=0.0, axis=X_HAT.copy(), degenerate=True)
    return SiteKick(theta_eff=theta, axis=vec / norm)


def lattice_kicks(lattice: SpinLattice, sequence: PulseSequence):
    """Composed kick of every site (eta shifted by the drive detuning)"""
    return [
        compose_single_particle_kick(sequence.rabi, float(e) + sequence.detuning,
                                     sequence.t_kick, sequence.t_dd)
        for e in lattice.eta
    ]


def dephasing_sums(n_cycles: float, theta: float) -> Tuple[float, float]:
    """Cycle-averaged (G_s, G_c) of sin/cos(j theta); n_cycles may be math.inf"""
    if n_cycles < 1:
        raise DomainError("dephasing sums need at least one cycle")
    half = theta / 2
    if abs(math.sin(half)) < 1e-12:
        return 0.0, 1.0
    if math.isinf(n_cycles):
        return 0.0, 0.0
    amp = math.sin(n_cycles * half) / (n_cycles * math.sin(half))
    return amp * math.sin((n_cycles - 1) * half), amp * math.cos((n_cycles - 1) * half)


def _from_pair_list(kind, n_sites, pair_list, site_fields, metadata=None) -> EffectiveHamiltonian:
    if pair_list:
        pairs = np.array([p for p, _ in pair_list], dtype=int)
        tensors = np.array([t for _, t in pair_list], dtype=float)
    else:
        pairs = np.zeros((0, 2), dtype=int)
        tensors = np.zeros((0, 3, 3))
    return EffectiveHamiltonian(kind=kind, n_sites=n_sites, pairs=pairs, tensors=tensors,
                                site_fields=np.asarray(site_fields, dtype=float),
                                metadata=metadata or {})


def _scaled_pairs(lattice: SpinLattice, shape: np.ndarray):
    return [((k, l), b * shape) for k, l, b in lattice.coupling_pairs()]


def build_dipolar_hamiltonian(lattice: SpinLattice, detuning: float = 0.0) -> EffectiveHamiltonian:
    """Lab-frame secular dipolar Hamiltonian sum b_kl (3 I^z I^z - I.I) + sum (eta_k + detuning) I^z_k"""
    fields = np.zeros((lattice.n_spins, 3))
    fields[:, 2] = lattice.eta + detuning
    return _from_pair_list('DIPOLAR', lattice.n_spins, _scaled_pairs(lattice, DIPOLAR_D), fields)


def build_sl_hamiltonian(lattice: SpinLattice) -> EffectiveHamiltonian:
    """Spin-locking average Hamiltonian -1/2 sum b_kl (3 I^x I^x - I.I)"""
    shape = -0.5 * (3.0 * np.outer(X_HAT, X_HAT) - np.eye(3))
    return _from_pair_list('SL', lattice.n_spins, _scaled_pairs(lattice, shape),
                           np.zeros((lattice.n_spins, 3)))


def build_pihalf_hamiltonian(lattice: SpinLattice) -> EffectiveHamiltonian:
    """Toy model near pi/2: sum J_k (3/2 (I^z I^z + I^y I^y) - I.I)"""
    shape = np.diag([-1.0, 0.5, 0.5])
    return _from_pair_list('TOY_PIHALF', lattice.n_spins, _scaled_pairs(lattice, shape),
                           np.zeros((lattice.n_spins, 3)))


def site_phi_profile(n_sites: int, delta_theta: float, phi_max: float, n_nv: int = 0,
                     energy_scale: float = 1.0,
                     lattice_constant: float = 1.0 / math.pi ** (1.0 / 3.0)) -> PotentialProfile:
    """phi_n = E_s (min(1/(a|n - n_NV|)^3, phi_max) - delta_theta).

    phi_max and delta_theta are in units of the energy scale E_s; the plateau next to the
    NV sits at phi_max - delta_theta.
    """
    if phi_max <= 0 or energy_scale <= 0 or lattice_constant <= 0:
        raise DomainError("phi_max, energy scale and lattice constant must be positive")
    d = np.abs(np.arange(n_sites) - n_nv).astype(float)
    with np.errstate(divide='ignore'):
        inv = np.where(d > 0, 1.0 / (lattice_constant * np.where(d > 0, d, 1.0)) ** 3, np.inf)
    phi = energy_scale * (np.minimum(inv, phi_max) - delta_theta)
    crossing = None
    if 0 < delta_theta < phi_max:
        crossing = n_nv + 1.0 / (lattice_constant * delta_theta ** (1.0 / 3.0))
    return PotentialProfile(phi=phi, phi_max=phi_max, delta_theta=delta_theta, n_nv=n_nv,
                            energy_scale=energy_scale, lattice_constant=lattice_constant,
                            crossing_site=crossing)


def constant_profile(n_sites: int, phi: float) -> PotentialProfile:
    """Spatially uniform potential"""
    return PotentialProfile(phi=np.full(n_sites, float(phi)), phi_max=abs(phi), delta_theta=0.0)


def lattice_phi_profile(lattice: SpinLattice, sequence: PulseSequence,
                        mode: Literal['linearized', 'composed'] = 'linearized') -> np.ndarray:
    """Effective x-potential of each lattice site near the pi kick (Hz).

    linearized: eta + detuning + delta_theta / (2 pi tau)
    composed:   (theta_j - pi) / (2 pi tau) from the fused single-particle kick
    """
    tau = sequence.period
    if mode == 'linearized':
        return lattice.eta + sequence.detuning + sequence.delta_theta / (2 * math.pi * tau)
    if mode == 'composed':
        kicks = lattice_kicks(lattice, sequence)
        return np.array([(k.theta_eff - math.pi) / (2 * math.pi * tau) for k in kicks])
    raise DomainError(f"unknown profile mode {mode!r}")


def build_pi_hamiltonian(lattice: SpinLattice, sequence: Optional[PulseSequence] = None,
                         potential: Optional[PotentialProfile] = None,
                         mode: Literal['linearized', 'composed'] = 'linearized') -> EffectiveHamiltonian:
    """Hamiltonian-engineering model sum J_kl (3 I^z I^z - I.I) + sum phi_k I^x.

    Chains take phi from `potential` (kind TOY_PI); 3D lattices derive it from the
    sequence and the NV field (kind PI).
    """
    if lattice.dimension_tag == '1D':
        if potential is None:
            phi = np.zeros(lattice.n_spins)
        else:
            phi = np.asarray(potential.phi, dtype=float)
            if phi.shape != (lattice.n_spins,):
                raise DomainError("potential profile length does not match the chain")
        kind = 'TOY_PI'
    else:
        if sequence is None:
            raise DomainError("a 3D PI Hamiltonian needs the pulse sequence")
        if abs(sequence.delta_theta) > 0.5 * math.pi:
            logger.warning(f"Kick angle offset {sequence.delta_theta:.3f} rad is not small")
        phi = lattice_phi_profile(lattice, sequence, mode)
        kind = 'PI'
    fields = np.zeros((lattice.n_spins, 3))
    fields[:, 0] = phi
    return _from_pair_list(kind, lattice.n_spins, _scaled_pairs(lattice, DIPOLAR_D), fields)


def build_toggling_hamiltonian(lattice: SpinLattice, sequence: PulseSequence,
                               n_cycles: float = math.inf,
                               pi_tolerance: float = 0.05) -> EffectiveHamiltonian:
    """Leading-order toggling-frame Hamiltonian for kicks away from pi.

    M_kl = n_k n_k^T D n_l n_l^T
           + 1/2 G_c(theta_k - theta_l) [(1 - n_k n_k^T) D (1 - n_l n_l^T) + eps(n_k)^T D eps(n_l)]
    with site fields ((theta_k N) mod 2pi) / N n_k in angle per period.

    For finite n_cycles only the G_c(theta_k - theta_l) dephasing factor is applied. The
    G_s(theta_k - theta_l) and G_c(theta_k + theta_l) products, and the single-angle terms
    mixing n_k with the transverse plane, are dropped: they dephase as n_cycles grows and
    keeping them would break conservation of sum n_k . I_k.
    """
    kicks = lattice_kicks(lattice, sequence)
    thetas = np.array([k.theta_eff for k in kicks])
    axes = np.array([k.axis for k in kicks])
    near_pi = np.abs(thetas - math.pi) < pi_tolerance
    if np.any(near_pi):
        raise DomainError(
            f"{int(near_pi.sum())} site(s) have kick angles within {pi_tolerance} of pi; "
            "use build_pi_hamiltonian for this regime"
        )
    if np.any((thetas < pi_tolerance) | (thetas > 2 * math.pi - pi_tolerance)):
        logger.warning("Some composed kick angles are close to zero; averaging is unreliable")

    projectors = [np.outer(n, n) for n in axes]
    transverse = [np.eye(3) - p for p in projectors]
    eps = [_cross_matrix(n) for n in axes]
    pair_list = []
    for k, l, b in lattice.coupling_pairs():
        _, g_c = dephasing_sums(n_cycles, thetas[k] - thetas[l])
        m = projectors[k] @ DIPOLAR_D @ projectors[l]
        m = m + 0.5 * g_c * (transverse[k] @ DIPOLAR_D @ transverse[l] + eps[k].T @ DIPOLAR_D @ eps[l])
        pair_list.append(((k, l), b * m))

    if math.isinf(n_cycles):
        angles = np.zeros_like(thetas)
    else:
        angles = np.mod(thetas * n_cycles, 2 * math.pi) / n_cycles
    fields = (angles / (2 * math.pi * sequence.period))[:, None] * axes
    return _from_pair_list('TOGGLING_FULL', lattice.n_spins, pair_list, fields,
                           metadata={'axes': axes.tolist(), 'theta_eff': thetas.tolist()})


def to_sparse_matrix(hamiltonian: EffectiveHamiltonian) -> sp.csr_matrix:
    """2^N x 2^N sparse matrix of the Hamiltonian in Hz"""
    n = hamiltonian.n_sites
    ops = spin_operators(n)
    h = sp.csr_matrix((2 ** n, 2 ** n), dtype=complex)
    for (k, l), t in zip(hamiltonian.pairs, hamiltonian.tensors):
        for a in range(3):
            for b in range(3):
                if t[a, b] != 0.0:
                    h = h + t[a, b] * (ops[k][a] @ ops[l][b])
    for k, f in enumerate(hamiltonian.site_fields):
        for a in range(3):
            if f[a] != 0.0:
                h = h + f[a] * ops[k][a]
    return h.tocsr()


def bond_operators(hamiltonian: EffectiveHamiltonian):
    """Local energy densities h_{k+1/2} of a chain; they sum to the full Hamiltonian.

    Interior site fields are split evenly between their two bonds, end sites put their
    whole field on their only bond.
    """
    n = hamiltonian.n_sites
    if n < 2:
        raise DomainError("energy density needs a chain of at least two sites")
    ops = spin_operators(n)
    bonds = []
    for k in range(n - 1):
        t = hamiltonian.pair_tensor(k, k + 1)
        h = sp.csr_matrix((2 ** n, 2 ** n), dtype=complex)
        for a in range(3):
            for b in range(3):
                if t[a, b] != 0.0:
                    h = h + t[a, b] * (ops[k][a] @ ops[k + 1][b])
        for site in (k, k + 1):
            weight = 1.0 if site in (0, n - 1) else 0.5
            for a in range(3):
                f = hamiltonian.site_fields[site, a]
                if f != 0.0:
                    h = h + weight * f * ops[site][a]
        bonds.append(h.tocsr())
    return bonds


def crossing_radius(sequence: PulseSequence, electron_polarization: float, theta: float = 0.0,
                    mode: Literal['linearized', 'composed'] = 'linearized',
                    constants: PhysicalConstants = DEFAULT_CONSTANTS,
                    r_bounds: Tuple[float, float] = (FROZEN_CORE_RADIUS, 50.0),
                    tolerance: float = 1e-4, n_scan: int = 4000) -> CrossingRadius:
    """Radius where the effective potential changes sign along |3cos^2(theta) - 1| = 1.

    The outermost sign change inside r_bounds is bracketed on a log grid and refined by
    Brent's method; the angular answer is r_c0 * cbrt|3cos^2(theta) - 1|.
    """
    amplitude = 2.0 * electron_polarization * constants.K_exp
    tau = sequence.period

    def eta(r):
        return amplitude / r ** 3 + sequence.detuning

    if mode == 'linearized':
        def potential(r):
            return eta(r) + sequence.delta_theta / (2 * math.pi * tau)
    elif mode == 'composed':
        def potential(r):
            kick = compose_single_particle_kick(sequence.rabi, eta(r), sequence.t_kick, sequence.t_dd)
            return kick.theta_eff - math.pi
    else:
        raise DomainError(f"unknown crossing-radius mode {mode!r}")

    grid = np.geomspace(r_bounds[0], r_bounds[1], n_scan)
    values = np.array([potential(r) for r in grid])
    changes = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]
    changes = [i for i in changes if values[i] != values[i + 1]]
    if not changes:
        raise NoCrossingError(
            f"effective potential keeps its sign on [{r_bounds[0]}, {r_bounds[1]}] nm"
        )
    i = changes[-1]
    r_c0 = float(brentq(potential, grid[i], grid[i + 1], xtol=tolerance))
    angular = abs(3 * math.cos(theta) ** 2 - 1) ** (1.0 / 3.0)
    logger.info(f"Crossing radius r_c0 = {r_c0:.4f} nm ({mode})")
    return CrossingRadius(r_c0=r_c0, r_c=r_c0 * angular, theta=theta, mode=mode)


def natural_density(lattice_constant: float = DEFAULT_LATTICE_CONSTANT,
                    abundance: float = NATURAL_ABUNDANCE) -> float:
    """Nuclear-spin number density (nm^-3) of a diamond lattice at the given abundance"""
    return abundance * len(DIAMOND_BASIS) / lattice_constant ** 3


def spins_within_radius(r_c0: float, density: Optional[float] = None) -> float:
    """Expected spin count inside r < r_c0 cbrt|3cos^2(theta) - 1|"""
    if r_c0 < 0:
        raise DomainError("crossing radius must be non-negative")
    density = natural_density() if density is None else density
    root = 1.0 / math.sqrt(3.0)
    angular, _ = quad(lambda u: abs(3 * u * u - 1), -1.0, 1.0, points=[-root, root])
    return density * 2 * math.pi / 3 * r_c0 ** 3 * angular


def hamiltonian_to_dict(hamiltonian: EffectiveHamiltonian) -> dict:
    """Pair tensors as row-major triplets plus site fields"""
    return {
        'kind': hamiltonian.kind,
        'n_sites': hamiltonian.n_sites,
        'pairs': [
            {'k': int(k), 'l': int(l), 'tensor': t.reshape(3, 3).tolist()}
            for (k, l), t in zip(hamiltonian.pairs, hamiltonian.tensors)
        ],
        'site_fields': hamiltonian.site_fields.tolist(),
        'metadata': hamiltonian.metadata,
    }
