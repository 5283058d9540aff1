"""
Spin ensembles and their couplings
1D toy chains, 3D diamond-lattice samples, secular dipolar couplings and the NV gradient field
"""
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Tuple
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.transform import Rotation

from spinshell.engine.errors import DomainError, LatticeGenerationError

logger = logging.getLogger(__name__)

Z_AXIS = np.array([0.0, 0.0, 1.0])

# Fractional coordinates of the eight diamond sites in the conventional cubic cell
DIAMOND_BASIS = np.array([
    [0.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0],
    [0.25, 0.25, 0.25], [0.25, 0.75, 0.75], [0.75, 0.25, 0.75], [0.75, 0.75, 0.25],
])

FROZEN_CORE_RADIUS = 1.7  # nm
NATURAL_ABUNDANCE = 0.011
DEFAULT_LATTICE_CONSTANT = 0.357  # nm
MAX_PLACEMENT_ATTEMPTS = 10 ** 6


class PhysicalConstants(BaseModel):
    """Gyromagnetic ratios and the coupling prefactors derived from them.

    Prefactors are expressed as energy/h in Hz·nm³ so that b = J_exp (3cos²θ - 1) / r³
    comes out in Hz for r in nm.
    """
    model_config = ConfigDict(frozen=True)

    gamma_n: float = Field(1.83247171e8, gt=0, description="nuclear gyromagnetic ratio, rad/s/T")
    gamma_e: float = Field(1.76085963e11, gt=0, description="electron gyromagnetic ratio, rad/s/T")
    hbar: float = Field(1.054571817e-34, gt=0)
    mu0_over_4pi: float = Field(1e-7, gt=0)

    @model_validator(mode='after')
    def _electron_dominates(self):
        if self.gamma_e <= self.gamma_n:
            raise ValueError("gamma_e must exceed gamma_n")
        return self

    @property
    def J_exp(self) -> float:
        """mu0 hbar gamma_n^2 / 4pi in Hz·nm³"""
        return self.mu0_over_4pi * self.hbar * self.gamma_n ** 2 / (2 * math.pi) * 1e27

    @property
    def K_exp(self) -> float:
        """mu0 hbar gamma_n gamma_e / 4pi in Hz·nm³"""
        return self.mu0_over_4pi * self.hbar * self.gamma_n * self.gamma_e / (2 * math.pi) * 1e27


DEFAULT_CONSTANTS = PhysicalConstants()


class LatticeSpec(BaseModel):
    """Parameters of a random 3D diamond-lattice sample"""
    model_config = ConfigDict(frozen=True)

    n_spins: int = Field(..., ge=1)
    occupation_density: float = Field(0.005, gt=0, le=1)
    lattice_constant: float = Field(DEFAULT_LATTICE_CONSTANT, gt=0)
    d_min: Optional[float] = Field(None, gt=0, description="defaults to 2a")
    r_min: float = Field(3.0, gt=0)
    rng_seed: int = 0
    electron_polarization: float = Field(0.1, ge=0, le=1)
    orientation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @model_validator(mode='after')
    def _check_distances(self):
        if self.d_min is None:
            object.__setattr__(self, 'd_min', 2 * self.lattice_constant)
        if self.d_min < self.lattice_constant:
            raise ValueError("d_min must be at least one lattice constant")
        if self.r_min <= FROZEN_CORE_RADIUS:
            raise ValueError(f"r_min must exceed the frozen-core radius {FROZEN_CORE_RADIUS} nm")
        return self


@dataclass(frozen=True)
class SpinLattice:
    """Immutable spin ensemble with couplings (Hz) and defect-field values (Hz)"""
    positions: np.ndarray
    couplings: np.ndarray
    eta: np.ndarray
    dimension_tag: Literal['1D', '3D']
    nv_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_field_direction: np.ndarray = field(default_factory=lambda: Z_AXIS.copy())
    seed: Optional[int] = None
    spec: dict = field(default_factory=dict)

    @property
    def n_spins(self) -> int:
        return int(self.positions.shape[0])

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.positions - self.nv_position, axis=1)

    @property
    def polar_angles(self) -> np.ndarray:
        """Angle between each site's NV displacement and the field axis"""
        rel = self.positions - self.nv_position
        cos = rel @ self.b_field_direction / np.maximum(self.radii, 1e-300)
        return np.arccos(np.clip(cos, -1.0, 1.0))

    def coupling_pairs(self):
        """Non-zero upper-triangle couplings as (k, l, b_kl) triplets"""
        k, l = np.nonzero(np.triu(self.couplings, 1))
        return [(int(i), int(j), float(self.couplings[i, j])) for i, j in zip(k, l)]

    def with_eta(self, eta) -> 'SpinLattice':
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.n_spins,):
            raise DomainError(f"eta must have shape ({self.n_spins},), got {eta.shape}")
        return replace(self, eta=eta.copy())


def dipolar_coupling(r_vec, constants: PhysicalConstants = DEFAULT_CONSTANTS, axis=Z_AXIS) -> float:
    """Secular dipolar coupling b = J_exp (3cos²θ - 1) / r³ in Hz"""
    r_vec = np.asarray(r_vec, dtype=float)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise DomainError("dipolar coupling undefined for a zero-length separation")
    cos_theta = float(np.dot(axis, r_vec)) / r
    return constants.J_exp * (3.0 * cos_theta ** 2 - 1.0) / r ** 3


def dipolar_coupling_matrix(positions, constants: PhysicalConstants = DEFAULT_CONSTANTS,
                            axis=Z_AXIS, box_length: Optional[float] = None) -> np.ndarray:
    """All pairwise couplings; minimum-image displacements when box_length is given"""
    positions = np.asarray(positions, dtype=float)
    disp = positions[:, None, :] - positions[None, :, :]
    if box_length is not None:
        disp -= box_length * np.round(disp / box_length)
    r = np.linalg.norm(disp, axis=-1)
    np.fill_diagonal(r, np.inf)
    if not np.all(r > 0):
        raise DomainError("two sites share a position")
    cos_theta = disp @ axis / r
    b = constants.J_exp * (3.0 * cos_theta ** 2 - 1.0) / r ** 3
    np.fill_diagonal(b, 0.0)
    return b


def nv_gradient_field(position, electron_polarization: float,
                      constants: PhysicalConstants = DEFAULT_CONSTANTS, axis=Z_AXIS) -> float:
    """Field seen by a nucleus at `position` (nm, NV at origin): 2 P K_exp (3cos²θ - 1) / r³"""
    if not 0.0 <= electron_polarization <= 1.0:
        raise DomainError(f"electron polarization must lie in [0, 1], got {electron_polarization}")
    position = np.asarray(position, dtype=float)
    r = float(np.linalg.norm(position))
    if r == 0.0:
        raise DomainError("NV gradient field is singular at the NV position")
    cos_theta = float(np.dot(axis, position)) / r
    return 2.0 * electron_polarization * constants.K_exp * (3.0 * cos_theta ** 2 - 1.0) / r ** 3


def rotation_from_euler(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Active zyz rotation that orients the crystal axes relative to the field axis"""
    return Rotation.from_euler('zyz', [alpha, beta, gamma]).as_matrix()


def with_nv_field(lattice: SpinLattice, electron_polarization: float,
                  constants: PhysicalConstants = DEFAULT_CONSTANTS) -> SpinLattice:
    """Fill eta from the NV gradient field"""
    rel = lattice.positions - lattice.nv_position
    eta = np.array([
        nv_gradient_field(p, electron_polarization, constants, lattice.b_field_direction) for p in rel
    ])
    return lattice.with_eta(eta)


def _shell_radius(spec: LatticeSpec) -> float:
    """Outer radius whose shell holds n_spins occupied vertices on average"""
    vertex_density = len(DIAMOND_BASIS) / spec.lattice_constant ** 3
    volume = spec.n_spins / (spec.occupation_density * vertex_density)
    return (spec.r_min ** 3 + 3.0 * volume / (4.0 * math.pi)) ** (1.0 / 3.0)


def sample_diamond_lattice(spec: LatticeSpec,
                           constants: PhysicalConstants = DEFAULT_CONSTANTS) -> SpinLattice:
    """Rejection-sample n_spins diamond vertices in the shell r_min <= r <= R around the NV.

    R is chosen so the shell contains n_spins / occupation_density vertices. Candidates
    closer than d_min to an accepted site are rejected.
    """
    rng = np.random.default_rng(spec.rng_seed)
    a = spec.lattice_constant
    r_max = _shell_radius(spec)
    rotation = rotation_from_euler(*spec.orientation)
    m = int(math.ceil(r_max / a)) + 1

    accepted = np.empty((spec.n_spins, 3))
    n_accepted = 0
    rejected_by_distance = 0
    attempts = 0
    while n_accepted < spec.n_spins:
        if attempts >= MAX_PLACEMENT_ATTEMPTS:
            constraint = 'd_min' if rejected_by_distance else 'r_min'
            raise LatticeGenerationError(
                constraint,
                f"placed {n_accepted}/{spec.n_spins} spins after {attempts} attempts; "
                f"{constraint} constraint cannot be met at occupation {spec.occupation_density}",
            )
        attempts += 1
        cell = rng.integers(-m, m + 1, size=3)
        basis = DIAMOND_BASIS[rng.integers(len(DIAMOND_BASIS))]
        candidate = rotation @ (a * (cell + basis))
        r = np.linalg.norm(candidate)
        if r < spec.r_min or r > r_max:
            continue
        if n_accepted:
            d = np.linalg.norm(accepted[:n_accepted] - candidate, axis=1)
            if d.min() < spec.d_min:
                rejected_by_distance += 1
                continue
        accepted[n_accepted] = candidate
        n_accepted += 1

    logger.info(f"Sampled {spec.n_spins} diamond sites (R={r_max:.2f} nm, {attempts} attempts)")
    couplings = dipolar_coupling_matrix(accepted, constants) if spec.n_spins > 1 else np.zeros((1, 1))
    lattice = SpinLattice(
        positions=accepted,
        couplings=couplings,
        eta=np.zeros(spec.n_spins),
        dimension_tag='3D',
        seed=spec.rng_seed,
        spec=spec.model_dump(),
    )
    return with_nv_field(lattice, spec.electron_polarization, constants)


def build_chain(n_spins: int, lattice_constant: float = 1.0, position_jitter: float = 0.0,
                coupling: float = -0.025, disorder: float = 0.0, seed: int = 0) -> SpinLattice:
    """Open 1D chain x_j = a (j + 1) + dx_j with nearest-neighbour couplings J0 + W_k, W_k ~ U[-W, W]"""
    if n_spins < 2:
        raise DomainError("a chain needs at least two spins")
    if lattice_constant <= 0 or position_jitter < 0:
        raise DomainError("lattice constant must be positive and jitter non-negative")
    rng = np.random.default_rng(seed)
    width = abs(disorder)
    w = rng.uniform(-width, width, size=n_spins - 1) if width > 0 else np.zeros(n_spins - 1)
    dx = rng.normal(0.0, position_jitter, size=n_spins) if position_jitter > 0 else np.zeros(n_spins)

    positions = np.zeros((n_spins, 3))
    positions[:, 0] = lattice_constant * (np.arange(n_spins) + 1) + dx

    bonds = coupling + w
    couplings = np.diag(bonds, 1) + np.diag(bonds, -1)
    return SpinLattice(
        positions=positions,
        couplings=couplings,
        eta=np.zeros(n_spins),
        dimension_tag='1D',
        seed=seed,
        spec={
            'n_spins': n_spins, 'lattice_constant': lattice_constant,
            'position_jitter': position_jitter, 'coupling': coupling, 'disorder': disorder,
        },
    )


def chain_bonds(lattice: SpinLattice) -> np.ndarray:
    """Nearest-neighbour couplings J_k of a chain"""
    return np.diag(lattice.couplings, 1).copy()


def occupy_diamond_lattice(n_cells: int, occupation: float = NATURAL_ABUNDANCE,
                           lattice_constant: float = DEFAULT_LATTICE_CONSTANT,
                           seed: int = 0) -> Tuple[np.ndarray, float]:
    """Bernoulli occupation of a periodic n_cells³ diamond super-cell.

    Returns the occupied positions and the box length.
    """
    rng = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*(np.arange(n_cells),) * 3, indexing='ij'), axis=-1).reshape(-1, 3)
    vertices = (grid[:, None, :] + DIAMOND_BASIS[None, :, :]).reshape(-1, 3) * lattice_constant
    occupied = rng.random(len(vertices)) < occupation
    return vertices[occupied], n_cells * lattice_constant


def local_coupling_scale(positions, box_length: Optional[float] = None,
                         constants: PhysicalConstants = DEFAULT_CONSTANTS) -> np.ndarray:
    """Root-sum-square coupling of every site to all others"""
    b = dipolar_coupling_matrix(positions, constants, box_length=box_length)
    return np.sqrt(np.sum(b ** 2, axis=1))


def lattice_to_dict(lattice: SpinLattice) -> dict:
    """JSON-ready description: positions, coupling triplets, eta, seed and spec echo"""
    return {
        'dimension_tag': lattice.dimension_tag,
        'positions': lattice.positions.tolist(),
        'nv_position': lattice.nv_position.tolist(),
        'b_field_direction': lattice.b_field_direction.tolist(),
        'couplings': [[k, l, b] for k, l, b in lattice.coupling_pairs()],
        'eta': lattice.eta.tolist(),
        'seed': lattice.seed,
        'spec': lattice.spec,
    }


def lattice_from_dict(data: dict) -> SpinLattice:
    positions = np.asarray(data['positions'], dtype=float)
    n = len(positions)
    couplings = np.zeros((n, n))
    for k, l, b in data['couplings']:
        couplings[int(k), int(l)] = couplings[int(l), int(k)] = float(b)
    return SpinLattice(
        positions=positions,
        couplings=couplings,
        eta=np.asarray(data['eta'], dtype=float),
        dimension_tag=data['dimension_tag'],
        nv_position=np.asarray(data['nv_position'], dtype=float),
        b_field_direction=np.asarray(data['b_field_direction'], dtype=float),
        seed=data.get('seed'),
        spec=data.get('spec', {}),
    )
