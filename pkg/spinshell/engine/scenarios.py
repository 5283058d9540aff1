"""
Scenario files

A scenario is one YAML document: the scenario kind, a master seed, an optional output
directory and nested blocks for the lattice, pulse sequence, potential profile, initial
state, dissipation, protocol, engines and readout. Unknown keys are rejected.
"""
from typing import List, Literal, Optional, Tuple
import logging
import math

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from spinshell.engine.config import Config
from spinshell.engine.effective_hamiltonian import (
    PotentialProfile, PulseSequence, constant_profile, site_phi_profile,
)
from spinshell.engine.errors import ConfigError
from spinshell.engine.geometry import DEFAULT_LATTICE_CONSTANT, LatticeSpec
from spinshell.engine.quantum_engine import (
    DEFAULT_OBSERVABLES, DissipationSpec, InitialStateSpec, PhaseSpec, ProtocolSpec,
    domain_wall_profile, uniform_profile,
)
from spinshell.engine.thermal_model import ThermalParams

logger = logging.getLogger(__name__)

ScenarioKind = Literal[
    'state-engineering-1d', 'hamiltonian-engineering-1d', 'kicked-vs-effective', 'eth-check',
    'crossing-radius', 'classical-3d', 'thermal-predict', 'sweep',
]
ModelKind = Literal['SL', 'PI', 'TOGGLING_FULL', 'TOY_PI', 'TOY_PIHALF', 'DIPOLAR']

QUANTUM_SCENARIOS = ('state-engineering-1d', 'hamiltonian-engineering-1d', 'eth-check')
DEFAULT_MODELS = {
    'state-engineering-1d': 'TOY_PIHALF',
    'hamiltonian-engineering-1d': 'TOY_PI',
    'eth-check': 'TOY_PI',
    'kicked-vs-effective': 'TOGGLING_FULL',
    'classical-3d': 'PI',
}


class _Block(BaseModel):
    model_config = ConfigDict(extra='forbid')


class LatticeBlock(_Block):
    """Open chain (toy units) or random diamond sample around the NV (nm, Hz)"""
    kind: Literal['chain', 'diamond'] = 'chain'
    n_spins: int = Field(10, ge=1)
    lattice_constant: Optional[float] = Field(None, gt=0)
    coupling: float = Field(-1.0, description="nearest-neighbour J0 of a chain")
    disorder: float = Field(0.0, ge=0)
    position_jitter: float = Field(0.0, ge=0)
    occupation_density: float = Field(0.005, gt=0, le=1)
    d_min: Optional[float] = Field(None, gt=0)
    r_min: float = Field(3.0, gt=0)
    electron_polarization: float = Field(0.1, ge=0, le=1)
    orientation: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @model_validator(mode='after')
    def _check_chain(self):
        if self.kind == 'chain' and self.n_spins < 2:
            raise ValueError("a chain needs at least two spins")
        return self

    @property
    def spacing(self) -> float:
        if self.lattice_constant is not None:
            return self.lattice_constant
        return 1.0 if self.kind == 'chain' else DEFAULT_LATTICE_CONSTANT

    def to_spec(self, seed: int) -> LatticeSpec:
        return LatticeSpec(
            n_spins=self.n_spins, occupation_density=self.occupation_density,
            lattice_constant=self.spacing, d_min=self.d_min, r_min=self.r_min, rng_seed=seed,
            electron_polarization=self.electron_polarization, orientation=self.orientation,
        )


class SequenceBlock(_Block):
    """Pulse train given either by t_kick or by the kick angle (radians)"""
    rabi: float = Field(..., gt=0)
    t_kick: Optional[float] = Field(None, ge=0)
    kick_angle: Optional[float] = Field(None, ge=0)
    t_dd: float = Field(..., ge=0)
    detuning: float = 0.0
    n_cycles: Optional[int] = Field(None, ge=1, description="finite dephasing sums; omit for N -> infinity")
    periods: List[float] = Field(default_factory=list, description="periods tau compared by kicked-vs-effective")

    @model_validator(mode='after')
    def _one_kick_definition(self):
        if (self.t_kick is None) == (self.kick_angle is None):
            raise ValueError("give exactly one of t_kick and kick_angle")
        if any(tau <= 0 for tau in self.periods):
            raise ValueError("periods must be positive")
        return self

    def to_sequence(self, period: Optional[float] = None) -> PulseSequence:
        t_kick = self.t_kick if self.t_kick is not None else self.kick_angle / (2 * math.pi * self.rabi)
        t_dd = self.t_dd if period is None else period - t_kick
        if t_dd < 0:
            raise ConfigError(f"period {period} is shorter than the kick ({t_kick})")
        return PulseSequence(rabi=self.rabi, t_kick=t_kick, t_dd=t_dd, detuning=self.detuning)


class ProfileBlock(_Block):
    """On-site potential of toy chains, in units of |J0| unless energy_scale is set"""
    kind: Literal['site', 'constant', 'none'] = 'site'
    delta_theta: float = 0.05 * math.pi
    phi_max: float = Field(0.5 * math.pi, gt=0)
    n_nv: int = Field(0, ge=0)
    energy_scale: Optional[float] = Field(None, gt=0)
    lattice_constant: Optional[float] = Field(None, gt=0)
    value: float = 0.0

    def build(self, n_sites: int, coupling: float) -> Optional[PotentialProfile]:
        scale = self.energy_scale if self.energy_scale is not None else abs(coupling)
        if self.kind == 'none':
            return None
        if self.kind == 'constant':
            return constant_profile(n_sites, self.value * scale)
        kwargs = {} if self.lattice_constant is None else {'lattice_constant': self.lattice_constant}
        return site_phi_profile(n_sites, self.delta_theta, self.phi_max, self.n_nv, scale, **kwargs)


class InitialStateBlock(_Block):
    kind: Literal['uniform', 'domain-wall', 'explicit'] = 'uniform'
    n_p: Optional[int] = Field(None, ge=0)
    p: float = Field(0.6, ge=-1, le=1)
    n_plus: int = Field(3, ge=0)
    p_plus: float = Field(0.6, ge=-1, le=1)
    n_minus: int = Field(3, ge=0)
    p_minus: float = Field(-0.6, ge=-1, le=1)
    profile: List[float] = Field(default_factory=list)
    axis: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    representation: Literal['density', 'trajectories'] = 'density'
    n_trajectories: int = Field(200, ge=1)

    def to_spec(self, n_sites: int) -> InitialStateSpec:
        if self.kind == 'uniform':
            profile = uniform_profile(n_sites, n_sites if self.n_p is None else self.n_p, self.p)
        elif self.kind == 'domain-wall':
            profile = domain_wall_profile(n_sites, self.n_plus, self.p_plus, self.n_minus, self.p_minus)
        else:
            profile = self.profile
        return InitialStateSpec(profile=profile, axis=self.axis)


class DissipationBlock(_Block):
    """gamma sets all three rates unless a specific rate is given"""
    gamma: float = Field(1.0, ge=0)
    gamma_plus: Optional[float] = Field(None, ge=0)
    gamma_minus: Optional[float] = Field(None, ge=0)
    gamma_z: Optional[float] = Field(None, ge=0)
    site: int = Field(0, ge=0)
    spatial_mode: Literal['single-site', 'r6'] = 'single-site'

    def to_spec(self) -> DissipationSpec:
        def pick(value):
            return self.gamma if value is None else value

        return DissipationSpec(site=self.site, gamma_plus=pick(self.gamma_plus),
                               gamma_minus=pick(self.gamma_minus), gamma_z=pick(self.gamma_z),
                               spatial_mode=self.spatial_mode)


class PhaseBlock(_Block):
    generator: Literal['KICKED', 'EFFECTIVE', 'FREE']
    duration: float = Field(..., ge=0)
    dissipation: bool = False
    n_samples: int = Field(50, ge=2)
    grid: Literal['linear', 'log'] = 'linear'
    label: Optional[str] = None


class ProtocolBlock(_Block):
    """Explicit phases, or the closed wait followed by the dissipative readout"""
    phases: List[PhaseBlock] = Field(default_factory=list)
    t_wait: float = Field(0.0, ge=0)
    t_readout: float = Field(20.0, gt=0)
    n_samples: int = Field(101, ge=2)
    observables: List[str] = Field(default_factory=lambda: list(DEFAULT_OBSERVABLES))

    def to_spec(self, sequence: Optional[PulseSequence], dissipation: Optional[DissipationSpec]) -> ProtocolSpec:
        observables = tuple(self.observables)
        if self.phases:
            return ProtocolSpec(phases=[PhaseSpec(**p.model_dump()) for p in self.phases],
                                sequence=sequence, dissipation=dissipation, observables=observables)
        if dissipation is None:
            phases = []
            if self.t_wait > 0:
                phases.append(PhaseSpec(generator='EFFECTIVE', duration=self.t_wait,
                                        n_samples=max(2, self.n_samples // 2), label='wait'))
            phases.append(PhaseSpec(generator='EFFECTIVE', duration=self.t_readout,
                                    n_samples=self.n_samples, label='readout'))
            return ProtocolSpec(phases=phases, sequence=sequence, observables=observables)
        spec = ProtocolSpec.wait_then_readout(self.t_wait, self.t_readout, dissipation,
                                              self.n_samples, observables)
        return spec.model_copy(update={'sequence': sequence})


class ClassicalBlock(_Block):
    n_configs: int = Field(10, ge=1)
    n_trajectories: int = Field(30, ge=1)
    mu: float = 2.0
    r_pol: Optional[float] = Field(None, gt=0, description="mu inside r_pol, zero outside; omit for uniform")
    t_end: float = Field(0.05, gt=0)
    n_samples: int = Field(51, ge=2)
    r_bins: int = Field(6, ge=1)
    theta_bins: int = Field(4, ge=1)
    fold: bool = True
    scaled: bool = False
    min_count: int = Field(50, ge=1)
    potential_mode: Literal['linearized', 'composed'] = 'linearized'
    legacy_heatbath: bool = False


class ThermalBlock(ThermalParams):
    """Local-Gibbs parameters plus the prediction time grid"""
    model_config = ConfigDict(extra='forbid', frozen=True)

    t_start: float = Field(1e-2, gt=0)
    t_end: float = Field(1e4, gt=0)
    n_samples: int = Field(200, ge=2)
    grid: Literal['linear', 'log'] = 'log'
    n_sites: Optional[int] = Field(None, ge=2)

    def to_params(self) -> ThermalParams:
        return ThermalParams(**self.model_dump(include=set(ThermalParams.model_fields)))


class CrossingBlock(_Block):
    theta: float = 0.0
    mode: Literal['linearized', 'composed'] = 'linearized'
    density: Optional[float] = Field(None, gt=0, description="nm^-3; natural abundance when omitted")
    r_max: float = Field(50.0, gt=0)


class SweepBlock(_Block):
    """One-parameter sweep of a quantum scenario; `parameter` is a dotted field path"""
    base: Literal['state-engineering-1d', 'hamiltonian-engineering-1d'] = 'hamiltonian-engineering-1d'
    parameter: str = 'protocol.t_wait'
    values: List[float] = Field(..., min_length=1)


class ReadoutBlock(_Block):
    observable: str = 'Ix_total'
    noise_floor: float = Field(1e-10, ge=0)
    n_sigma: float = Field(2.0, ge=0, description="trajectory standard errors treated as noise")
    window: Literal['rectangular', 'hann'] = 'rectangular'
    spectrum: bool = False
    late_cuts: int = Field(3, ge=1)
    late_fraction: float = Field(0.25, gt=0, le=1)
    power_law_decades: float = Field(1.0, gt=0)
    tolerance: float = Field(1e-6, ge=0, description="max deviation accepted by compare")
    interpolate: bool = False


class ScenarioConfig(_Block):
    """Complete, self-describing description of one run"""
    scenario: ScenarioKind
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    hamiltonian: Optional[ModelKind] = None
    lattice: LatticeBlock = Field(default_factory=LatticeBlock)
    sequence: Optional[SequenceBlock] = None
    profile: ProfileBlock = Field(default_factory=ProfileBlock)
    initial_state: InitialStateBlock = Field(default_factory=InitialStateBlock)
    dissipation: Optional[DissipationBlock] = None
    protocol: ProtocolBlock = Field(default_factory=ProtocolBlock)
    classical: ClassicalBlock = Field(default_factory=ClassicalBlock)
    thermal: ThermalBlock = Field(default_factory=ThermalBlock)
    crossing: CrossingBlock = Field(default_factory=CrossingBlock)
    sweep: Optional[SweepBlock] = None
    readout: ReadoutBlock = Field(default_factory=ReadoutBlock)

    @model_validator(mode='after')
    def _check_scenario(self):
        needs_sequence = self.scenario in ('kicked-vs-effective', 'crossing-radius', 'classical-3d')
        if needs_sequence and self.sequence is None:
            raise ValueError(f"scenario {self.scenario} needs a sequence block")
        if self.scenario == 'classical-3d' and self.lattice.kind != 'diamond':
            raise ValueError("classical-3d runs on a diamond lattice")
        if self.scenario == 'sweep' and self.sweep is None:
            raise ValueError("scenario sweep needs a sweep block")
        if self.engine_scenario in QUANTUM_SCENARIOS + ('kicked-vs-effective',) and self.lattice.kind != 'chain':
            raise ValueError(f"scenario {self.engine_scenario} runs on a chain")
        kicked_model = self.model_kind == 'TOGGLING_FULL' or (self.model_kind == 'PI' and self.lattice.kind == 'diamond')
        if kicked_model and self.sequence is None:
            raise ValueError(f"Hamiltonian {self.model_kind} needs a sequence block")
        return self

    @property
    def model_kind(self) -> Optional[str]:
        if self.hamiltonian is not None:
            return self.hamiltonian
        scenario = self.sweep.base if self.scenario == 'sweep' and self.sweep else self.scenario
        return DEFAULT_MODELS.get(scenario)

    @property
    def engine_scenario(self) -> str:
        """The scenario whose engine actually runs (the base of a sweep)"""
        return self.sweep.base if self.scenario == 'sweep' else self.scenario

    def with_value(self, path: str, value) -> 'ScenarioConfig':
        """Copy with one dotted field replaced, validated again"""
        data = self.model_dump()
        keys = path.split('.')
        node = data
        for key in keys[:-1]:
            if not isinstance(node, dict) or node.get(key) is None:
                raise ConfigError(f"{path}: no such block")
            node = node[key]
        if not isinstance(node, dict) or keys[-1] not in node:
            raise ConfigError(f"{path}: no such field")
        node[keys[-1]] = value
        return parse_config(data)

    def echo(self) -> dict:
        return self.model_dump(mode='json')


def format_validation_error(error: ValidationError) -> List[str]:
    """One 'dotted.path: message' line per pydantic error"""
    lines = []
    for item in error.errors():
        path = '.'.join(str(part) for part in item['loc']) or '<root>'
        lines.append(f"{path}: {item['msg']}")
    return lines


def parse_config(data) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping at the top level")
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        lines = format_validation_error(e)
        error = ConfigError('; '.join(lines))
        error.fields = lines
        raise error from None


def load_config(path: str, seed_override: Optional[int] = None) -> ScenarioConfig:
    """Read and validate a YAML scenario file"""
    try:
        with open(path) as handle:
            data = yaml.safe_load(handle)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML ({e})") from None
    if seed_override is not None and isinstance(data, dict):
        data['seed'] = seed_override
    config = parse_config(data)
    logger.info(f"Loaded scenario {config.scenario} from {path} (seed {config.seed})")
    return config


def physics_report(config: ScenarioConfig) -> Tuple[List[str], List[str]]:
    """(errors, warnings) from physics bounds that the schema alone cannot express"""
    errors: List[str] = []
    warnings: List[str] = []
    scenario = config.engine_scenario
    n = config.lattice.n_spins
    state = config.initial_state

    if scenario in QUANTUM_SCENARIOS + ('kicked-vs-effective',):
        limit = Config.MAX_DENSE_SPINS if state.representation == 'density' else Config.MAX_TRAJECTORY_SPINS
        if n > limit:
            errors.append(f"lattice.n_spins: {state.representation} evolution is limited to {limit} spins, got {n}")
        if state.kind == 'explicit' and len(state.profile) != n:
            errors.append(f"initial_state.profile: {len(state.profile)} values for {n} sites")
        if state.kind == 'uniform' and state.n_p is not None and state.n_p > n:
            errors.append(f"initial_state.n_p: {state.n_p} exceeds the {n} sites")
        if state.kind == 'domain-wall' and state.n_plus + state.n_minus > n:
            errors.append(f"initial_state: domain wall of {state.n_plus}+{state.n_minus} sites does not fit {n} sites")
        if config.dissipation is not None and config.dissipation.site >= n:
            errors.append(f"dissipation.site: {config.dissipation.site} outside a {n}-spin chain")

    if scenario in QUANTUM_SCENARIOS:
        sequence = config.sequence.to_sequence() if config.sequence is not None else None
        dissipation = config.dissipation.to_spec() if config.dissipation is not None else None
        try:
            protocol = config.protocol.to_spec(sequence, dissipation)
        except ValidationError as e:
            errors.extend(f"protocol.{line}" for line in format_validation_error(e))
        else:
            kicked = any(p.generator == 'KICKED' for p in protocol.phases)
            if kicked and sequence is not None and sequence.t_kick == 0:
                warnings.append("sequence.t_kick: zero kick length with KICKED phases gives identity kicks")
        if scenario == 'hamiltonian-engineering-1d' and config.dissipation is None:
            warnings.append("dissipation: no block given, the readout is closed and t_zc may not exist")

    if scenario == 'kicked-vs-effective':
        if config.sequence.to_sequence().t_kick == 0:
            warnings.append("sequence.t_kick: zero kick length gives identity kicks")
        for tau in config.sequence.periods:
            try:
                config.sequence.to_sequence(tau)
            except ConfigError as e:
                errors.append(f"sequence.periods: {e}")

    if config.model_kind == 'TOGGLING_FULL' and config.sequence is not None:
        theta = config.sequence.to_sequence().kick_angle
        if abs(theta - math.pi) < 0.05:
            errors.append(f"sequence: kick angle {theta:.4f} is within 0.05 of pi; use a PI Hamiltonian")
    if config.model_kind in ('TOY_PI', 'PI') and config.sequence is not None:
        offset = config.sequence.to_sequence().delta_theta
        if abs(offset) > 0.5 * math.pi:
            warnings.append(f"sequence: kick angle offset {offset:.3f} rad from pi is not small")

    if scenario == 'thermal-predict' and config.thermal.t_end <= config.thermal.t_start:
        errors.append("thermal.t_end: must exceed thermal.t_start")

    if config.scenario == 'sweep':
        try:
            config.model_copy(update={'scenario': config.sweep.base, 'sweep': None}).with_value(
                config.sweep.parameter, config.sweep.values[0])
        except ConfigError as e:
            errors.append(f"sweep.parameter: {e}")
        if len(config.sweep.values) > 1:
            steps = [b - a for a, b in zip(config.sweep.values, config.sweep.values[1:])]
            if not (all(s > 0 for s in steps) or all(s < 0 for s in steps)):
                errors.append("sweep.values: must be strictly monotone")

    for message in warnings:
        logger.warning(message)
    return errors, warnings
