"""
Test suite for the spinshell command line
Tests config validation, exit codes, result bundles and run-to-run reproducibility
"""
import contextlib
import io
import json
import os
import tempfile

import pytest
import yaml

from spinshell.cli import main
from spinshell.engine.errors import ConfigError
from spinshell.engine.scenarios import parse_config

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')

SMALL_CHAIN = {
    'scenario': 'hamiltonian-engineering-1d',
    'seed': 3,
    'lattice': {'kind': 'chain', 'n_spins': 4, 'coupling': -1.0},
    'profile': {'kind': 'site'},
    'initial_state': {'kind': 'uniform', 'n_p': 2, 'p': 0.6,
                      'representation': 'trajectories', 'n_trajectories': 8},
    'dissipation': {'gamma': 1.0, 'site': 0},
    'protocol': {'t_readout': 2.0, 'n_samples': 11, 'observables': ['Ix_total', 'Ix', 'H']},
}


def print_test(test_name: str, passed: bool, details: str = ""):
    """Print test result"""
    status = "✓ PASS" if passed else "✗ FAIL"
    print(f"{status}: {test_name}")
    if details:
        print(f"   {details}")
    print()


def run_cli(*argv):
    """Exit code and parsed stdout payload of one invocation"""
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        code = main(list(argv))
    text = buffer.getvalue()
    return code, (json.loads(text) if text.strip() else {})


def write_config(directory: str, data: dict, name: str = 'scenario.yaml') -> str:
    path = os.path.join(directory, name)
    with open(path, 'w') as handle:
        yaml.safe_dump(data, handle)
    return path


def read_bytes(path: str) -> bytes:
    with open(path, 'rb') as handle:
        return handle.read()


def test_validate_shipped_configs():
    for name in sorted(os.listdir(CONFIG_DIR)):
        code, report = run_cli('validate', '--config', os.path.join(CONFIG_DIR, name))
        assert code == 0, f"{name}: {report['errors']}"
    print_test("Shipped scenarios validate", True, f"{len(os.listdir(CONFIG_DIR))} files")


def test_malformed_config_names_field():
    """A negative Rabi frequency is a config error naming the field"""
    with tempfile.TemporaryDirectory() as tmp:
        path = write_config(tmp, {'scenario': 'crossing-radius',
                                  'sequence': {'rabi': -5.0, 'kick_angle': 3.0, 't_dd': 1e-5}})
        code, payload = run_cli('run', '--config', path, '--out', os.path.join(tmp, 'out'))
        assert code == 2
        assert payload['stage'] == 'config'
        assert any(line.startswith('sequence.rabi') for line in payload['errors'])
        assert not os.path.exists(os.path.join(tmp, 'out'))
    print_test("Malformed config rejected", True, f"errors = {payload['errors']}")


def test_unknown_key_rejected():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_config(tmp, {'scenario': 'thermal-predict', 'thermal': {'n_p': 5, 'colour': 'red'}})
        code, report = run_cli('validate', '--config', path)
        assert code == 2
        assert any('colour' in line for line in report['errors'])
    print_test("Unknown keys rejected", True)


def test_missing_config_file():
    code, payload = run_cli('run', '--config', '/nonexistent/scenario.yaml')
    assert code == 2
    assert 'no such file' in payload['errors'][0]
    print_test("Missing config file", True)


def test_physics_error_reported_by_validate():
    data = dict(SMALL_CHAIN, lattice={'kind': 'chain', 'n_spins': 20},
                initial_state={'kind': 'uniform', 'p': 0.6})
    with tempfile.TemporaryDirectory() as tmp:
        code, report = run_cli('validate', '--config', write_config(tmp, data))
    assert code == 2
    assert any(line.startswith('lattice.n_spins') for line in report['errors'])
    print_test("Physics bounds checked", True, f"errors = {report['errors']}")


def test_invalid_threads():
    code, _ = run_cli('run', '--config', os.path.join(CONFIG_DIR, 'thermal_predict.yaml'), '--threads', '0')
    assert code == 2
    print_test("Non-positive thread budget", True)


def test_thermal_run_bundle():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, 'thermal')
        code, payload = run_cli('run', '--config', os.path.join(CONFIG_DIR, 'thermal_predict.yaml'), '--out', out)
        assert code == 0
        assert payload['status'] == 'success'
        for name in ('series.csv', 'summary.json', 'manifest.json'):
            assert os.path.isfile(os.path.join(out, name))
        with open(os.path.join(out, 'summary.json')) as handle:
            summary = json.load(handle)
        with open(os.path.join(out, 'manifest.json')) as handle:
            manifest = json.load(handle)
    assert summary['initial_energy'] > 0
    assert summary['steady_value'] < 0
    assert summary['steady_value_pauli'] == pytest.approx(2 * summary['steady_value'])
    assert summary['prediction_t_zc'] is not None
    assert manifest['status'] == 'success'
    assert manifest['csv_schema']['columns'] == ['t', 'observable', 'index', 'value']
    print_test("Thermal prediction bundle", True, f"t_zc = {summary['prediction_t_zc']:.2f}")


def test_crossing_run():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, 'crossing')
        code, _ = run_cli('run', '--config', os.path.join(CONFIG_DIR, 'crossing_radius.yaml'), '--out', out)
        assert code == 0
        with open(os.path.join(out, 'summary.json')) as handle:
            summary = json.load(handle)
    assert 2.55 <= summary['r_c0'] <= 2.85
    assert 130 <= summary['spins_within_radius'] <= 170
    print_test("Crossing radius run", True,
               f"r_c0 = {summary['r_c0']:.3f} nm, N = {summary['spins_within_radius']:.0f}")


def test_quantum_run_reproducible():
    """Same config and seed give byte-identical series"""
    with tempfile.TemporaryDirectory() as tmp:
        path = write_config(tmp, SMALL_CHAIN)
        first = os.path.join(tmp, 'a')
        second = os.path.join(tmp, 'b')
        assert run_cli('run', '--config', path, '--out', first)[0] == 0
        assert run_cli('run', '--config', path, '--out', second, '--threads', '2')[0] == 0
        assert read_bytes(os.path.join(first, 'series.csv')) == read_bytes(os.path.join(second, 'series.csv'))
        for name in ('lattice.json', 'hamiltonian.json'):
            assert os.path.isfile(os.path.join(first, name))
    print_test("Run-to-run reproducibility", True)


def test_compare_bundles():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_config(tmp, SMALL_CHAIN)
        quantum = os.path.join(tmp, 'quantum')
        thermal = os.path.join(tmp, 'thermal')
        assert run_cli('run', '--config', path, '--out', quantum)[0] == 0
        assert run_cli('run', '--config', os.path.join(CONFIG_DIR, 'thermal_predict.yaml'), '--out', thermal)[0] == 0

        report_path = os.path.join(tmp, 'report.json')
        code, payload = run_cli('compare', quantum, quantum, '--out', report_path)
        assert code == 0
        assert payload['passed']
        assert payload['series']['Ix_total']['max_abs'] == 0.0
        assert os.path.isfile(report_path)

        code, payload = run_cli('compare', quantum, thermal)
        assert code == 4
        assert payload['stage'] == 'compare'

        code, _ = run_cli('compare', quantum, os.path.join(tmp, 'missing'))
        assert code == 4
    print_test("Compare verb", True)


def test_seed_override_changes_trajectories():
    with tempfile.TemporaryDirectory() as tmp:
        path = write_config(tmp, SMALL_CHAIN)
        assert run_cli('run', '--config', path, '--out', os.path.join(tmp, 'a'))[0] == 0
        assert run_cli('run', '--config', path, '--out', os.path.join(tmp, 'b'), '--seed-override', '99')[0] == 0
        with open(os.path.join(tmp, 'b', 'manifest.json')) as handle:
            manifest = json.load(handle)
        assert manifest['config']['seed'] == 99
        assert read_bytes(os.path.join(tmp, 'a', 'series.csv')) != read_bytes(os.path.join(tmp, 'b', 'series.csv'))
    print_test("Seed override", True)


def test_scenario_config_errors():
    with pytest.raises(ConfigError):
        parse_config({'scenario': 'kicked-vs-effective'})
    with pytest.raises(ConfigError):
        parse_config({'scenario': 'classical-3d', 'sequence': {'rabi': 1e4, 'kick_angle': 3.0, 't_dd': 1e-5}})
    with pytest.raises(ConfigError):
        parse_config(['not', 'a', 'mapping'])
    config = parse_config(SMALL_CHAIN)
    with pytest.raises(ConfigError):
        config.with_value('protocol.t_wiat', 1.0)
    assert config.with_value('protocol.t_wait', 5.0).protocol.t_wait == 5.0
    print_test("Scenario config errors", True)


def run_all_tests():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("SPINSHELL - COMMAND LINE TEST SUITE")
    print("=" * 60 + "\n")

    tests = [
        test_validate_shipped_configs,
        test_malformed_config_names_field,
        test_unknown_key_rejected,
        test_missing_config_file,
        test_physics_error_reported_by_validate,
        test_invalid_threads,
        test_thermal_run_bundle,
        test_crossing_run,
        test_quantum_run_reproducible,
        test_compare_bundles,
        test_seed_override_changes_trajectories,
        test_scenario_config_errors,
    ]
    results = []
    for test in tests:
        try:
            test()
            results.append(True)
        except Exception as e:
            print_test(test.__name__, False, f"Error: {e}")
            results.append(False)

    # Summary
    print("=" * 60)
    print("TEST SUMMARY")
    print("=" * 60)
    total = len(results)
    passed = sum(results)
    print(f"Total Tests: {total}")
    print(f"Passed: {passed} ✓")
    print(f"Failed: {total - passed} ✗")
    print("=" * 60 + "\n")
    return passed == total


if __name__ == "__main__":
    run_all_tests()
