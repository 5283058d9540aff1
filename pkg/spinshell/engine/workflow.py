"""
LangGraph orchestration of one scenario run

validate -> build_lattice -> build_hamiltonian -> (engine chosen by scenario) -> readout -> bundle
"""
from typing import Dict, List, Optional, Tuple, TypedDict
import logging
import math
import os

import numpy as np
from langgraph.graph import END, StateGraph

from spinshell.engine.classical_engine import (
    bin_coordinates, coarse_grain, domain_wall_mu, run_ensemble, sign_agreement,
)
from spinshell.engine.config import Config
from spinshell.engine.effective_hamiltonian import (
    EffectiveHamiltonian, build_dipolar_hamiltonian, build_pi_hamiltonian, build_pihalf_hamiltonian,
    build_sl_hamiltonian, build_toggling_hamiltonian, crossing_radius, hamiltonian_to_dict,
    spins_within_radius,
)
from spinshell.engine.errors import ConfigError, SpinShellError
from spinshell.engine.geometry import (
    FROZEN_CORE_RADIUS, SpinLattice, build_chain, lattice_to_dict, sample_diamond_lattice,
)
from spinshell.engine.quantum_engine import (
    QuantumState, energy_variance, evolve_effective, evolve_kicked, prepare_state, run_protocol,
)
from spinshell.engine.readout import (
    compare_series, fit_power_law, half_width, late_cut_crossings, linear_trend, readout_crossing,
    record_signal, sign_match_fraction, spectrum, sweep, zero_crossing,
)
from spinshell.engine.records import TimeSeriesRecord, dump_json, write_table
from spinshell.engine.scenarios import QUANTUM_SCENARIOS, ScenarioConfig, physics_report
from spinshell.engine.thermal_model import (
    eth_profile_nopi, eth_profile_pi, predicted_total_polarization, sign_inversion_window,
    steady_polarization,
)

logger = logging.getLogger(__name__)

ENGINE_ROUTES = {
    'state-engineering-1d': 'protocol',
    'hamiltonian-engineering-1d': 'protocol',
    'eth-check': 'protocol',
    'kicked-vs-effective': 'kicked',
    'classical-3d': 'classical',
    'thermal-predict': 'thermal',
    'crossing-radius': 'crossing',
    'sweep': 'sweep',
}
NO_LATTICE = ('thermal-predict', 'crossing-radius', 'sweep')


class ScenarioState(TypedDict):
    """State carried through the scenario graph"""
    config: ScenarioConfig
    seeds: Dict[str, int]
    threads: int
    output_dir: Optional[str]
    lattice: Optional[SpinLattice]
    hamiltonian: Optional[EffectiveHamiltonian]
    final_state: Optional[QuantumState]
    records: Dict[str, TimeSeriesRecord]
    tables: Dict[str, Tuple[tuple, list]]
    summary: dict
    warnings: List[str]
    files: List[str]
    status: str
    error: Optional[str]
    error_class: Optional[str]
    exit_code: int
    diagnostics: dict


def derive_seeds(seed: int) -> Dict[str, int]:
    """Independent seeds for lattice sampling, state sampling and engine noise"""
    lattice, state, engine = np.random.SeedSequence(seed).generate_state(3)
    return {'master': int(seed), 'lattice': int(lattice), 'state': int(state), 'engine': int(engine)}


def lattice_seeds(seed: int, n_configs: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n_configs)]


def build_lattice(config: ScenarioConfig, seed: int) -> SpinLattice:
    block = config.lattice
    if block.kind == 'chain':
        return build_chain(block.n_spins, block.spacing, block.position_jitter, block.coupling,
                           block.disorder, seed)
    return sample_diamond_lattice(block.to_spec(lattice_seeds(seed, 1)[0]))


def build_hamiltonian(config: ScenarioConfig, lattice: SpinLattice) -> Optional[EffectiveHamiltonian]:
    kind = config.model_kind
    sequence = config.sequence.to_sequence() if config.sequence is not None else None
    if kind is None:
        return None
    if kind == 'SL':
        return build_sl_hamiltonian(lattice)
    if kind == 'TOY_PIHALF':
        return build_pihalf_hamiltonian(lattice)
    if kind == 'DIPOLAR':
        return build_dipolar_hamiltonian(lattice, sequence.detuning if sequence else 0.0)
    if kind == 'TOGGLING_FULL':
        n_cycles = config.sequence.n_cycles or math.inf
        return build_toggling_hamiltonian(lattice, sequence, n_cycles=n_cycles)
    if lattice.dimension_tag == '1D':
        return build_pi_hamiltonian(lattice, potential=config.profile.build(lattice.n_spins, config.lattice.coupling))
    return build_pi_hamiltonian(lattice, sequence, mode=config.classical.potential_mode)


def _observables(config: ScenarioConfig) -> Tuple[str, ...]:
    names = list(config.protocol.observables)
    if config.engine_scenario == 'eth-check':
        wanted = ['Ix', 'Iy', 'Iz'] if config.model_kind == 'TOGGLING_FULL' else ['Ix']
        names += [n for n in wanted if n not in names]
    return tuple(names)


def run_quantum(config: ScenarioConfig, lattice: SpinLattice, hamiltonian: EffectiveHamiltonian,
                seeds: Dict[str, int], threads: Optional[int] = None) -> Tuple[TimeSeriesRecord, QuantumState]:
    """Prepare the initial state and run the configured protocol"""
    block = config.initial_state
    state = prepare_state(block.to_spec(lattice.n_spins), lattice.n_spins, block.representation,
                          block.n_trajectories, seeds['state'])
    sequence = config.sequence.to_sequence() if config.sequence is not None else None
    dissipation = config.dissipation.to_spec() if config.dissipation is not None else None
    protocol = config.protocol.to_spec(sequence, dissipation)
    protocol = protocol.model_copy(update={'observables': _observables(config)})
    return run_protocol(protocol, state, lattice, hamiltonian, seeds['engine'], threads=threads, return_state=True)


class ScenarioWorkflow:
    """Graph that turns a validated scenario into records, tables and a summary"""

    def __init__(self):
        self.graph = self._build_graph()
        logger.info("Scenario workflow initialized")

    def _build_graph(self):
        workflow = StateGraph(ScenarioState)

        workflow.add_node("validate", self._validate_node)
        workflow.add_node("build_lattice", self._lattice_node)
        workflow.add_node("build_hamiltonian", self._hamiltonian_node)
        workflow.add_node("protocol", self._protocol_node)
        workflow.add_node("kicked", self._kicked_node)
        workflow.add_node("classical", self._classical_node)
        workflow.add_node("thermal", self._thermal_node)
        workflow.add_node("crossing", self._crossing_node)
        workflow.add_node("sweep", self._sweep_node)
        workflow.add_node("readout", self._readout_node)
        workflow.add_node("bundle", self._bundle_node)

        workflow.set_entry_point("validate")
        workflow.add_edge("validate", "build_lattice")
        workflow.add_edge("build_lattice", "build_hamiltonian")
        workflow.add_conditional_edges(
            "build_hamiltonian",
            self._route_scenario,
            {
                "protocol": "protocol",
                "kicked": "kicked",
                "classical": "classical",
                "thermal": "thermal",
                "crossing": "crossing",
                "sweep": "sweep",
                "failed": END,
            }
        )
        for engine in ("protocol", "kicked", "classical", "thermal", "crossing", "sweep"):
            workflow.add_edge(engine, "readout")
        workflow.add_edge("readout", "bundle")
        workflow.add_edge("bundle", END)

        return workflow.compile()

    def process(self, config: ScenarioConfig, output_dir: Optional[str] = None,
                threads: Optional[int] = None) -> dict:
        """Run one scenario; failures are reported in the result, never raised"""
        try:
            initial_state: ScenarioState = {
                'config': config,
                'seeds': derive_seeds(config.seed),
                'threads': threads or Config.THREADS,
                'output_dir': output_dir,
                'lattice': None,
                'hamiltonian': None,
                'final_state': None,
                'records': {},
                'tables': {},
                'summary': {'scenario': config.scenario},
                'warnings': [],
                'files': [],
                'status': 'processing',
                'error': None,
                'error_class': None,
                'exit_code': 0,
                'diagnostics': {},
            }
            logger.info(f"Running scenario {config.scenario} (seed {config.seed})")
            final_state = self.graph.invoke(initial_state)
            if final_state['status'] == 'processing':
                final_state['status'] = 'success'
            return self._format_response(final_state)
        except Exception as e:
            logger.error(f"Workflow error: {e}", exc_info=True)
            return self._error_response(config, e)

    @staticmethod
    def _fail(state: ScenarioState, stage: str, error: Exception) -> ScenarioState:
        if isinstance(error, SpinShellError):
            logger.error(f"{stage} failed: {error}")
        else:
            logger.error(f"{stage} failed: {error}", exc_info=True)
        state['status'] = 'error'
        state['error'] = f"{stage}: {error}"
        state['error_class'] = type(error).__name__
        state['exit_code'] = getattr(error, 'exit_code', 3) if isinstance(error, SpinShellError) else 3
        state['diagnostics'] = dict(getattr(error, 'diagnostics', {}) or {})
        return state

    def _validate_node(self, state: ScenarioState) -> ScenarioState:
        """Node: physics bounds the schema cannot express"""
        try:
            errors, warnings = physics_report(state['config'])
            state['warnings'].extend(warnings)
            if errors:
                raise ConfigError('; '.join(errors))
        except Exception as e:
            return self._fail(state, 'validate', e)
        return state

    def _lattice_node(self, state: ScenarioState) -> ScenarioState:
        if state['status'] == 'error' or state['config'].engine_scenario in NO_LATTICE:
            return state
        try:
            lattice = build_lattice(state['config'], state['seeds']['lattice'])
            state['lattice'] = lattice
            logger.info(f"Built {lattice.dimension_tag} lattice with {lattice.n_spins} spins")
        except Exception as e:
            return self._fail(state, 'build_lattice', e)
        return state

    def _hamiltonian_node(self, state: ScenarioState) -> ScenarioState:
        if state['status'] == 'error' or state['lattice'] is None:
            return state
        try:
            hamiltonian = build_hamiltonian(state['config'], state['lattice'])
            state['hamiltonian'] = hamiltonian
            if hamiltonian is not None:
                logger.info(f"Built {hamiltonian.kind} Hamiltonian with {len(hamiltonian.pairs)} pairs")
        except Exception as e:
            return self._fail(state, 'build_hamiltonian', e)
        return state

    def _route_scenario(self, state: ScenarioState) -> str:
        if state['status'] == 'error':
            logger.info("Routing to END after a failure")
            return "failed"
        return ENGINE_ROUTES[state['config'].scenario]

    def _protocol_node(self, state: ScenarioState) -> ScenarioState:
        """Node: quantum protocol on a toy chain"""
        try:
            record, final = run_quantum(state['config'], state['lattice'], state['hamiltonian'], state['seeds'],
                                        state['threads'])
            state['records']['series'] = record
            state['final_state'] = final
            state['summary']['phase_boundaries'] = record.metadata.get('phase_boundaries')
            state['summary']['readout_start'] = record.metadata.get('readout_start')
        except Exception as e:
            return self._fail(state, 'protocol', e)
        return state

    def _kicked_node(self, state: ScenarioState) -> ScenarioState:
        """Node: stroboscopic kicked evolution against the toggling-frame Hamiltonian, per period"""
        try:
            config = state['config']
            lattice = state['lattice']
            block = config.initial_state
            initial = prepare_state(block.to_spec(lattice.n_spins), lattice.n_spins, block.representation,
                                    block.n_trajectories, state['seeds']['state'])
            periods = sorted(config.sequence.periods, reverse=True) or [None]
            coupling = abs(config.lattice.coupling)
            cells = []
            for i, period in enumerate(periods):
                sequence = config.sequence.to_sequence(period)
                n_cycles = max(1, int(round(config.protocol.t_readout / sequence.period)))
                every = max(1, n_cycles // (config.protocol.n_samples - 1))
                kicked = evolve_kicked(initial, lattice, sequence, n_cycles, ('Ix_total', 'Ix'), every)
                toggling = build_toggling_hamiltonian(lattice, sequence, n_cycles=config.sequence.n_cycles or math.inf)
                effective = evolve_effective(initial, toggling, kicked.t, ('Ix_total', 'Ix'))
                report = compare_series(kicked, effective, config.readout.tolerance, ['Ix_total'])
                deviation = report.series['Ix_total']['max_abs'] / lattice.n_spins
                cells.append({'period': sequence.period, 'J_tau': coupling * sequence.period,
                              'n_cycles': n_cycles, 'deviation_per_spin': deviation})
                state['records'][f'kicked_{i}'] = kicked
                state['records'][f'effective_{i}'] = effective
                logger.info(f"Period {sequence.period:g}: max deviation per spin {deviation:.3e}")
            deviations = [c['deviation_per_spin'] for c in cells]
            state['records']['series'] = state['records'][f'kicked_{len(periods) - 1}']
            state['summary']['periods'] = cells
            state['summary']['monotone'] = all(b <= a for a, b in zip(deviations, deviations[1:]))
            state['tables']['convergence'] = (
                ('period', 'J_tau', 'n_cycles', 'deviation_per_spin'),
                [(c['period'], c['J_tau'], c['n_cycles'], c['deviation_per_spin']) for c in cells],
            )
        except Exception as e:
            return self._fail(state, 'kicked', e)
        return state

    def _classical_node(self, state: ScenarioState) -> ScenarioState:
        """Node: heatbath ensemble over lattice configurations, polarization map at the last time"""
        try:
            config = state['config']
            block = config.classical
            sequence = config.sequence.to_sequence()
            seeds = lattice_seeds(state['seeds']['lattice'], block.n_configs)
            lattices = [state['lattice']] + [sample_diamond_lattice(config.lattice.to_spec(s)) for s in seeds[1:]]
            hamiltonians = [state['hamiltonian']] + [
                build_pi_hamiltonian(l, sequence, mode=block.potential_mode) for l in lattices[1:]
            ]
            if block.r_pol is None:
                mus = [np.full(l.n_spins, block.mu) for l in lattices]
            else:
                mus = [domain_wall_mu(l, block.mu, block.r_pol) for l in lattices]
            t_grid = np.linspace(0.0, block.t_end, block.n_samples)
            result = run_ensemble(lattices, hamiltonians, mus, block.n_trajectories, t_grid,
                                  seed=state['seeds']['engine'], snapshot_times=[t_grid[-1]],
                                  threads=state['threads'], legacy_heatbath=block.legacy_heatbath)

            positions = np.concatenate([l.positions for l in lattices])
            r, _ = bin_coordinates(positions, fold=block.fold, scaled=block.scaled)
            r_edges = np.linspace(r.min(), r.max() * (1 + 1e-9), block.r_bins + 1)
            theta_edges = np.linspace(0.0, 0.5 * math.pi if block.fold else math.pi, block.theta_bins + 1)
            phi = np.concatenate([h.site_fields[:, 0] for h in hamiltonians])
            potential = coarse_grain(positions, phi, r_edges, theta_edges, fold=block.fold, scaled=block.scaled)
            polarization = result.snapshot_map(t_grid[-1], r_edges, theta_edges, block.fold, block.scaled)
            agreement = sign_agreement(polarization, potential.mean, block.min_count)

            state['records']['series'] = result.record
            phi_means = potential.mean.ravel()
            state['tables']['polarization_map'] = (
                ('r', 'theta', 'mean_Ix', 'mean_phi', 'count'),
                [(float(r_mid), float(th), float(m), float(phi_means[i]), c)
                 for i, (r_mid, th, m, c, _) in enumerate(polarization.rows())],
            )
            state['summary'].update(result.record.metadata['summary'])
            state['summary']['sign_agreement'] = agreement
            state['summary']['populated_bins'] = int((polarization.count >= block.min_count).sum())
        except Exception as e:
            return self._fail(state, 'classical', e)
        return state

    def _thermal_node(self, state: ScenarioState) -> ScenarioState:
        """Node: local-Gibbs prediction of the total signal"""
        try:
            block = state['config'].thermal
            params = block.to_params()
            if block.grid == 'log':
                t_grid = np.geomspace(block.t_start, block.t_end, block.n_samples)
            else:
                t_grid = np.linspace(block.t_start, block.t_end, block.n_samples)
            prediction = predicted_total_polarization(t_grid, params, block.n_sites)
            record = TimeSeriesRecord(t=prediction.t, metadata={'generator': 'THERMAL'})
            record.add('Ix_total', prediction.total)
            state['records']['series'] = record
            state['summary'].update({
                'initial_energy': prediction.initial_energy,
                'steady_value': prediction.steady_value,
                'steady_value_pauli': steady_polarization(
                    params, 'constant-phi' if params.constant_phi is not None else 'asymptotic', units='pauli'),
                'prediction_t_zc': prediction.t_zc,
                'sign_inversion_window': list(sign_inversion_window(params)),
            })
        except Exception as e:
            return self._fail(state, 'thermal', e)
        return state

    def _crossing_node(self, state: ScenarioState) -> ScenarioState:
        """Node: crossing radius and enclosed spin count"""
        try:
            config = state['config']
            block = config.crossing
            result = crossing_radius(config.sequence.to_sequence(), config.lattice.electron_polarization,
                                     block.theta, block.mode, r_bounds=(FROZEN_CORE_RADIUS, block.r_max))
            state['summary'].update({
                'r_c0': result.r_c0,
                'r_c': result.r_c,
                'theta': result.theta,
                'mode': result.mode,
                'spins_within_radius': spins_within_radius(result.r_c0, block.density),
            })
        except Exception as e:
            return self._fail(state, 'crossing', e)
        return state

    def _sweep_node(self, state: ScenarioState) -> ScenarioState:
        """Node: one quantum run per parameter value"""
        try:
            config = state['config']
            block = config.sweep
            base = config.model_copy(update={'scenario': block.base, 'sweep': None})
            seeds = state['seeds']

            def run_cell(value: float) -> TimeSeriesRecord:
                cell = base.with_value(block.parameter, value)
                lattice = build_lattice(cell, seeds['lattice'])
                record, _ = run_quantum(cell, lattice, build_hamiltonian(cell, lattice), seeds, threads=1)
                return record

            grid = sweep(run_cell, block.parameter, block.values, config.readout.observable, state['threads'])
            observable = config.readout.observable
            minima = [None if r is None else float(np.min(r.get(observable))) for r in grid.records]
            summary = grid.to_dict()
            for cell, low in zip(summary['cells'], minima):
                cell['min_signal'] = low
            hits = [(float(v), t) for v, t in zip(grid.values, grid.t_zc) if t is not None]
            if len(hits) >= 2:
                trend = linear_trend([h[0] for h in hits], [h[1] for h in hits])
                summary['t_zc_trend'] = {'slope': trend.slope, 'intercept': trend.intercept,
                                         'r_value': trend.r_value}
            state['summary']['sweep'] = summary
            state['tables']['sweep'] = (('param', 't', 'value'), list(grid.rows(observable)))
            if grid.errors:
                state['warnings'].append(f"{len(grid.errors)} sweep cell(s) failed")
        except Exception as e:
            return self._fail(state, 'sweep', e)
        return state

    def _readout_node(self, state: ScenarioState) -> ScenarioState:
        """Node: signal decomposition, zero crossing, spectra, energy spread and profile checks"""
        if state['status'] == 'error':
            return state
        try:
            config = state['config']
            readout = config.readout
            record = state['records'].get('series')
            if record is None or readout.observable not in record.series:
                return state
            signal = record_signal(record)
            record.add('signed_x', signal.signed_x)
            record.add('S', signal.amplitude)
            record.add('phi_R', signal.phase)
            state['summary']['t_zc'] = readout_crossing(record, readout.observable, readout.noise_floor, readout.n_sigma)
            start = float(record.metadata.get('readout_start', record.t[0]))
            mask = record.t >= start
            if mask.sum() >= 2:
                stderr = record.series.get(f"{readout.observable}_stderr")
                crossings = zero_crossing(record.t[mask], record.get(readout.observable)[mask], readout.noise_floor,
                                          None if stderr is None else stderr[mask], readout.n_sigma)
                state['summary']['n_crossings'] = len(crossings.all)
            if readout.spectrum:
                self._spectrum_readout(state, record, mask)
            if 'h' in record.series:
                self._energy_readout(state, record)
            if config.engine_scenario in QUANTUM_SCENARIOS and 'Ix' in record.series:
                self._profile_readout(state, record)
        except Exception as e:
            return self._fail(state, 'readout', e)
        return state

    def _spectrum_readout(self, state, record, mask):
        readout = state['config'].readout
        try:
            spec = spectrum(record.t[mask], record.get(readout.observable)[mask], readout.window)
        except SpinShellError as e:
            state['warnings'].append(f"spectrum skipped: {e}")
            logger.warning(f"Spectrum skipped: {e}")
            return
        state['summary']['spectrum_half_width'] = half_width(spec)
        state['tables']['spectrum'] = (('frequency', 'magnitude'),
                                       list(zip(spec.frequency.tolist(), spec.magnitude.tolist())))

    def _energy_readout(self, state, record):
        spread = energy_variance(record.get('h'))
        record.add('sigma_E2', spread.variance)
        t_max = float(record.t[-1])
        t_min = t_max / 10 ** state['config'].readout.power_law_decades
        try:
            fit = fit_power_law(record.t, spread.variance, t_min, t_max)
        except SpinShellError as e:
            state['warnings'].append(f"power-law fit skipped: {e}")
            return
        state['summary']['energy_spread_fit'] = {'exponent': fit.exponent, 'prefactor': fit.prefactor,
                                                 'r_value': fit.r_value, 't_min': t_min, 't_max': t_max}

    def _profile_readout(self, state, record):
        config = state['config']
        readout = config.readout
        hamiltonian = state['hamiltonian']
        n_late = max(1, int(math.ceil(readout.late_fraction * len(record.t))))
        late = record.get('Ix')[-n_late:].mean(axis=0)
        state['summary']['late_cuts'] = [
            {'t': t, 'sign_change_site': site}
            for t, site in late_cut_crossings(record, 'Ix', readout.late_cuts, readout.late_fraction)
        ]
        if hamiltonian.kind in ('PI', 'TOY_PI'):
            eth = eth_profile_pi(hamiltonian, state['final_state'])
            predicted = eth.spin[:, 0]
            state['summary']['sign_match'] = sign_match_fraction(late, predicted)
            state['summary']['beta'] = eth.beta
            if config.engine_scenario == 'eth-check':
                deviation = float(np.mean(np.abs(late - predicted)))
                scale = float(np.max(np.abs(late)))
                state['summary']['eth'] = {'regime': 'PI', 'mean_abs_deviation': deviation,
                                           'relative_deviation': deviation / scale if scale > 0 else None}
                state['tables']['eth_profile'] = (('site', 'predicted_Ix', 'observed_Ix'),
                                                  [(i, float(p), float(o)) for i, (p, o) in enumerate(zip(predicted, late))])
        elif hamiltonian.kind == 'TOGGLING_FULL' and config.engine_scenario == 'eth-check':
            eth = eth_profile_nopi(hamiltonian, state['final_state'])
            observed = np.stack([record.get(name)[-n_late:].mean(axis=0) for name in ('Ix', 'Iy', 'Iz')], axis=1)
            norms = np.linalg.norm(observed, axis=1) * np.linalg.norm(eth.sigma, axis=1)
            cosines = np.sum(observed * eth.sigma, axis=1) / np.where(norms > 0, norms, 1.0)
            state['summary']['eth'] = {'regime': 'NOPI', 'mu': eth.mu, 'mean_cosine': float(np.mean(cosines))}
            state['tables']['eth_profile'] = (
                ('site', 'predicted_x', 'predicted_y', 'predicted_z', 'observed_x', 'observed_y', 'observed_z'),
                [(i, *map(float, eth.spin[i]), *map(float, observed[i])) for i in range(len(observed))],
            )

    def _bundle_node(self, state: ScenarioState) -> ScenarioState:
        """Node: write CSV series, tables and the JSON summary"""
        if state['status'] == 'error' or not state['output_dir']:
            return state
        try:
            out = state['output_dir']
            os.makedirs(out, exist_ok=True)
            files = []
            for name in sorted(state['records']):
                state['records'][name].to_csv(os.path.join(out, f"{name}.csv"))
                files.append(f"{name}.csv")
            for name in sorted(state['tables']):
                columns, rows = state['tables'][name]
                write_table(os.path.join(out, f"{name}.csv"), columns, rows)
                files.append(f"{name}.csv")
            if state['lattice'] is not None:
                dump_json(lattice_to_dict(state['lattice']), os.path.join(out, 'lattice.json'))
                files.append('lattice.json')
            if state['hamiltonian'] is not None:
                dump_json(hamiltonian_to_dict(state['hamiltonian']), os.path.join(out, 'hamiltonian.json'))
                files.append('hamiltonian.json')
            state['summary']['records'] = {name: rec.summary() for name, rec in sorted(state['records'].items())}
            dump_json(state['summary'], os.path.join(out, 'summary.json'))
            files.append('summary.json')
            state['files'] = files
            logger.info(f"Wrote {len(files)} files to {out}")
        except Exception as e:
            return self._fail(state, 'bundle', e)
        return state

    def _format_response(self, state: ScenarioState) -> dict:
        return {
            'status': state['status'],
            'scenario': state['config'].scenario,
            'seeds': state['seeds'],
            'summary': state['summary'],
            'records': state['records'],
            'tables': state['tables'],
            'files': state['files'],
            'warnings': state['warnings'],
            'error': state['error'],
            'error_class': state['error_class'],
            'exit_code': state['exit_code'],
            'diagnostics': state['diagnostics'],
        }

    def _error_response(self, config: ScenarioConfig, error: Exception) -> dict:
        return {
            'status': 'error',
            'scenario': config.scenario,
            'seeds': derive_seeds(config.seed),
            'summary': {},
            'records': {},
            'tables': {},
            'files': [],
            'warnings': [],
            'error': f"An error occurred: {error}",
            'error_class': type(error).__name__,
            'exit_code': getattr(error, 'exit_code', 3),
            'diagnostics': dict(getattr(error, 'diagnostics', {}) or {}),
        }
