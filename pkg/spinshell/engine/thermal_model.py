"""
Closed-form thermal predictions

Local-Gibbs profiles under diffusing energy, steady polarization values and the ETH
prethermal profiles of both kick regimes. Total polarizations are in spin units
(I = sigma/2) unless a function says otherwise; ETH site vectors are reported in
Pauli units together with their spin-unit halves.
"""
from dataclasses import dataclass, field
from typing import Literal, Optional
import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from spinshell.engine.effective_hamiltonian import EffectiveHamiltonian, site_phi_profile, to_sparse_matrix
from spinshell.engine.errors import DomainError
from spinshell.engine.quantum_engine import QuantumState
from spinshell.engine.readout import zero_crossing
from spinshell.engine.spin_operators import spin_operators

logger = logging.getLogger(__name__)

HIGH_TEMPERATURE_LIMIT = 0.3


class ThermalParams(BaseModel):
    """Toy-chain parameters of the local-Gibbs prediction (energies in units of |J0|)"""
    model_config = ConfigDict(frozen=True)

    delta_theta: float = 0.05 * math.pi
    phi_max: float = Field(0.5 * math.pi, gt=0)
    coupling: float = Field(1.0, description="J0; its sign enters the p^2 bond energy, the local-Gibbs bonds use |J0|")
    energy_scale: float = Field(1.0, gt=0)
    lattice_constant: float = Field(1.0 / math.pi ** (1.0 / 3.0), gt=0)
    diffusion: float = Field(1.0, gt=0)
    n_p: int = Field(11, ge=1)
    polarization: float = Field(0.6, ge=-1, le=1)
    n_nv: int = Field(0, ge=0)
    constant_phi: Optional[float] = None
    second_order: bool = False
    reflecting: bool = True

    @model_validator(mode='after')
    def _check_polarized_region(self):
        if self.n_nv > 0 and self.reflecting:
            raise ValueError("a reflecting boundary needs the NV at the chain end (n_nv = 0)")
        return self

    def phi(self, n_sites: int) -> np.ndarray:
        if self.constant_phi is not None:
            return np.full(n_sites, float(self.constant_phi))
        return site_phi_profile(n_sites, self.delta_theta, self.phi_max, self.n_nv,
                                self.energy_scale, self.lattice_constant).phi

    @property
    def phi_asymptote(self) -> float:
        if self.constant_phi is not None:
            return float(self.constant_phi)
        return -self.delta_theta * self.energy_scale


@dataclass(frozen=True)
class GibbsPrediction:
    """Local-Gibbs inverse temperatures and polarizations on (t, site)"""
    t: np.ndarray
    sites: np.ndarray
    beta: np.ndarray
    site_polarization: np.ndarray
    total: np.ndarray
    steady_value: float
    t_zc: Optional[float]
    initial_energy: float


@dataclass(frozen=True)
class EthPrediction:
    """Prethermal site profile; `sigma` in Pauli units, `spin` = sigma / 2"""
    regime: Literal['PI', 'NOPI']
    sigma: np.ndarray
    beta: Optional[float] = None
    mu: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    @property
    def spin(self) -> np.ndarray:
        return self.sigma / 2.0


def gaussian_energy_kernel(n, t: float, diffusion: float, n_nv: int = 0,
                           reflecting: bool = False) -> np.ndarray:
    """Energy distribution p_E(n, t) with variance D t centered at n_nv.

    At t = 0 all weight sits on n_nv. With `reflecting` the weight that would leave a
    chain ending at n_nv = 0 is folded back onto n > 0.
    """
    n = np.asarray(n, dtype=float)
    if t < 0 or diffusion <= 0:
        raise DomainError("need t >= 0 and a positive diffusion constant")
    if t == 0:
        return np.where(n == n_nv, 1.0, 0.0)
    var = diffusion * t
    kernel = np.exp(-(n - n_nv) ** 2 / (2 * var)) / math.sqrt(2 * math.pi * var)
    if reflecting:
        kernel = np.where(n > n_nv, 2.0 * kernel, kernel)
    return kernel


def _bond_denominator(phi: np.ndarray, couplings: np.ndarray) -> np.ndarray:
    """(3/2) J_n^2 + (phi_n^2 + phi_{n+1}^2)/2 with edge-extended J and phi"""
    phi_next = np.append(phi[1:], phi[-1])
    j = np.resize(couplings, len(phi)) if len(couplings) else np.zeros(len(phi))
    if len(couplings) and len(couplings) < len(phi):
        j[len(couplings):] = couplings[-1]
    return 1.5 * j ** 2 + 0.5 * (phi ** 2 + phi_next ** 2)


def initial_energy(phi, polarization: float, n_p: int, couplings=None, second_order: bool = False) -> float:
    """<H> of the uniformly polarized product state: (p/2) sum_{n<N_p} phi_n.

    The O(p^2) bond term -J_n p^2/4 over the polarized bonds is added with second_order.
    """
    phi = np.asarray(phi, dtype=float)
    if n_p > len(phi):
        raise DomainError("polarized region is longer than the profile")
    energy = 0.5 * polarization * float(np.sum(phi[:n_p]))
    if second_order:
        if couplings is None:
            raise DomainError("second-order energy needs the couplings")
        j = np.resize(np.asarray(couplings, dtype=float), max(n_p - 1, 0))
        energy -= 0.25 * polarization ** 2 * float(np.sum(j))
    return energy


def local_beta(sites, t: float, phi, couplings, energy: float, diffusion: float,
               n_nv: int = 0, reflecting: bool = False) -> np.ndarray:
    """beta_n(t) = -4 <H>_init p_E(n, t) / [(3/2) J_n^2 + (phi_n^2 + phi_{n+1}^2)/2]"""
    phi = np.asarray(phi, dtype=float)
    den = _bond_denominator(phi, np.atleast_1d(np.asarray(couplings, dtype=float)))
    beta = -4.0 * energy * gaussian_energy_kernel(sites, t, diffusion, n_nv, reflecting) / den
    worst = float(np.max(np.abs(beta) * np.sqrt(den))) if len(beta) else 0.0
    if worst > HIGH_TEMPERATURE_LIMIT:
        logger.warning(f"High-temperature expansion questionable: |beta|*scale = {worst:.2f}")
    return beta


def _sites_for(t: float, params: ThermalParams, minimum: int) -> int:
    spread = math.sqrt(params.diffusion * t) if t > 0 else 0.0
    return max(minimum, int(math.ceil(params.n_nv + 12 * spread)) + 2)


def predicted_site_polarization(t: float, params: ThermalParams, n_sites: Optional[int] = None,
                                energy: Optional[float] = None):
    """Per-site <I^x_n> = <H>_init phi_n p_E(n, t) / [...] and the matching beta_n"""
    energy = initial_energy_of(params) if energy is None else energy
    n_sites = _sites_for(t, params, params.n_p + 1) if n_sites is None else n_sites
    sites = np.arange(n_sites)
    phi = params.phi(n_sites)
    couplings = np.full(max(n_sites - 1, 1), abs(params.coupling))
    beta = local_beta(sites, t, phi, couplings, energy, params.diffusion, params.n_nv, params.reflecting)
    return sites, beta, -beta * phi / 4.0


def initial_energy_of(params: ThermalParams) -> float:
    phi = params.phi(params.n_p)
    couplings = np.full(max(params.n_p - 1, 1), params.coupling)
    return initial_energy(phi, params.polarization, params.n_p, couplings, params.second_order)


def predicted_total_polarization(t_grid, params: ThermalParams, n_sites: Optional[int] = None) -> GibbsPrediction:
    """I_x(t) summed over sites; the chain is extended with t unless n_sites is given.

    Per-site arrays are stored on the chain of the last time (zero-padded before).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    energy = initial_energy_of(params)
    width = n_sites or _sites_for(float(t_grid[-1]), params, params.n_p + 1)
    store = width <= 5000
    betas = np.zeros((len(t_grid), width)) if store else np.zeros((0, 0))
    sites_pol = np.zeros((len(t_grid), width)) if store else np.zeros((0, 0))
    total = np.zeros(len(t_grid))
    for i, t in enumerate(t_grid):
        sites, beta, pol = predicted_site_polarization(t, params, n_sites, energy)
        total[i] = pol.sum()
        if store:
            betas[i, :len(beta)] = beta[:width]
            sites_pol[i, :len(pol)] = pol[:width]
    crossing = zero_crossing(t_grid, total)
    steady = steady_polarization(params, mode='constant-phi' if params.constant_phi is not None else 'asymptotic')
    logger.info(f"Local-Gibbs prediction: E = {energy:.4g}, steady = {steady:.4g}, t_zc = {crossing.first}")
    return GibbsPrediction(t=t_grid, sites=np.arange(width), beta=betas, site_polarization=sites_pol,
                           total=total, steady_value=steady, t_zc=crossing.first, initial_energy=energy)


def steady_polarization(params: ThermalParams,
                        mode: Literal['constant-phi', 'asymptotic', 'dissipative'] = 'asymptotic',
                        energy_series=None, units: Literal['spin', 'pauli'] = 'spin'):
    """Late-time total polarization <H> phi / ((3/2) J0^2 + phi^2).

    constant-phi uses the full initial energy including the p^2 bond term; asymptotic uses
    phi_inf = -delta_theta E_s with the first-order energy; dissipative weights with the
    remaining energy <H>(t) of a simulation and returns one value per sample.
    """
    j2 = params.coupling ** 2
    factor = 2.0 if units == 'pauli' else 1.0
    if mode == 'constant-phi':
        if params.constant_phi is None:
            raise DomainError("constant-phi mode needs params.constant_phi")
        phi = float(params.constant_phi)
        couplings = np.full(max(params.n_p - 1, 1), params.coupling)
        energy = initial_energy(np.full(params.n_p, phi), params.polarization, params.n_p, couplings, True)
        return factor * energy * phi / (1.5 * j2 + phi ** 2)
    phi_inf = params.phi_asymptote
    if mode == 'asymptotic':
        return factor * initial_energy_of(params) * phi_inf / (1.5 * j2 + phi_inf ** 2)
    if mode == 'dissipative':
        if energy_series is None:
            raise DomainError("dissipative mode needs the energy series <H>(t)")
        return factor * np.asarray(energy_series, dtype=float) * phi_inf / (1.5 * j2 + phi_inf ** 2)
    raise DomainError(f"unknown steady-state mode {mode!r}")


def sign_inversion_window(params: ThermalParams):
    """(0, c / N_p): offsets between the two zeros of the initial energy, c = sum of the
    truncated inverse-cube profile over the polarized region"""
    unshifted = params.model_copy(update={'delta_theta': 0.0, 'constant_phi': None})
    c = float(np.sum(unshifted.phi(params.n_p))) / params.energy_scale
    return 0.0, c / params.n_p


def _trace_products(hamiltonian: EffectiveHamiltonian, state: QuantumState):
    h = to_sparse_matrix(hamiltonian)
    dim = 2 ** hamiltonian.n_sites
    tr_h2 = float(np.real(h.multiply(h.conj()).sum())) / dim
    rho = state.density_matrix()
    energy = float(np.real(h.T.multiply(rho).sum()))
    return energy, tr_h2


def eth_profile_pi(hamiltonian: EffectiveHamiltonian, state: QuantumState) -> EthPrediction:
    """High-temperature Gibbs profile <sigma^x_n> = -beta phi_n / 2, beta = -<H> / (tr H^2 / Z)"""
    if hamiltonian.kind not in ('PI', 'TOY_PI'):
        raise DomainError(f"PI-regime ETH needs a PI or TOY_PI Hamiltonian, got {hamiltonian.kind}")
    energy, tr_h2 = _trace_products(hamiltonian, state)
    if tr_h2 <= 0:
        raise DomainError("Hamiltonian is trivial")
    beta = -energy / tr_h2
    if abs(beta) * math.sqrt(tr_h2) > HIGH_TEMPERATURE_LIMIT:
        logger.warning(f"High-temperature expansion questionable: beta*sqrt(<H^2>) = {beta * math.sqrt(tr_h2):.2f}")
    sigma = np.zeros((hamiltonian.n_sites, 3))
    sigma[:, 0] = -beta * hamiltonian.site_fields[:, 0] / 2.0
    return EthPrediction(regime='PI', sigma=sigma, beta=beta,
                         metadata={'energy': energy, 'mean_h2': tr_h2})


def eth_profile_nopi(hamiltonian: EffectiveHamiltonian, state: QuantumState) -> EthPrediction:
    """Gibbs profile fixed by the conserved sum n_k . I_k: <sigma_n> = n_n tanh(mu/2)"""
    n = hamiltonian.n_sites
    axes = hamiltonian.metadata.get('axes')
    axes = np.tile([1.0, 0.0, 0.0], (n, 1)) if axes is None else np.asarray(axes, dtype=float)
    rho = state.density_matrix()
    ops = spin_operators(n)
    charge = 0.0
    for k in range(n):
        for a in range(3):
            if axes[k, a] != 0.0:
                charge += axes[k, a] * float(np.real(ops[k][a].T.multiply(rho).sum()))
    magnitude = np.clip(2.0 * charge / n, -1 + 1e-15, 1 - 1e-15)
    mu = 2.0 * math.atanh(magnitude)
    return EthPrediction(regime='NOPI', sigma=axes * magnitude, mu=mu, metadata={'charge': charge})
