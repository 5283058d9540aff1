"""
Test suite for the classical engine
Tests heatbath sampling, the spin equations of motion, ensembles and polarization maps
"""
import math

import numpy as np
import pytest

from spinshell.engine.classical_engine import (
    bin_coordinates, classical_derivative, classical_energy, classical_evolve, coarse_grain,
    domain_wall_mu, heatbath_sample, langevin, run_ensemble, sign_agreement,
)
from spinshell.engine.effective_hamiltonian import (
    build_pi_hamiltonian, build_sl_hamiltonian, constant_profile, site_phi_profile,
)
from spinshell.engine.errors import DomainError
from spinshell.engine.geometry import LatticeSpec, build_chain, sample_diamond_lattice


def print_test(test_name: str, passed: bool, details: str = ""):
    """Print test result"""
    status = "✓ PASS" if passed else "✗ FAIL"
    print(f"{status}: {test_name}")
    if details:
        print(f"   {details}")
    print()


def toy_chain(n: int = 6, seed: int = 0):
    lattice = build_chain(n, coupling=-1.0, disorder=0.2, seed=seed)
    return lattice, build_pi_hamiltonian(lattice, potential=site_phi_profile(n, 0.05 * math.pi, 0.5 * math.pi))


def test_langevin():
    assert langevin(0.0) == 0.0
    assert langevin(1.0) == pytest.approx(1 / math.tanh(1.0) - 1.0)
    assert langevin(1e-8) == pytest.approx(1e-8 / 3)
    assert langevin(-2.0) == pytest.approx(-langevin(2.0))
    print_test("Langevin function", True, f"L(1) = {langevin(1.0):.5f}")


def test_heatbath_matches_langevin():
    n = 20000
    for mu in (0.5, 1.0, 2.0):
        spins = heatbath_sample([mu], seed=11, n_trajectories=n)
        x = spins[:, 0, 0]
        stderr = x.std() / math.sqrt(n)
        assert abs(x.mean() - langevin(mu)) < 3 * stderr
        assert np.allclose(np.linalg.norm(spins, axis=-1), 1.0)
    flipped = heatbath_sample([-1.0], seed=11, n_trajectories=n)[:, 0, 0]
    assert abs(flipped.mean() + langevin(1.0)) < 3 * flipped.std() / math.sqrt(n)
    print_test("Heatbath mean matches the Langevin function", True)


def test_heatbath_zero_mu_is_isotropic():
    spins = heatbath_sample(np.zeros(3), seed=2, n_trajectories=5000)
    assert spins.shape == (5000, 3, 3)
    assert abs(spins[..., 0].mean()) < 0.03
    assert np.all(np.abs(spins[..., 0]) <= 1.0)
    print_test("Zero chemical potential", True)


def test_heatbath_legacy_range():
    x = heatbath_sample([1.0], seed=4, n_trajectories=2000, legacy=True)[:, 0, 0]
    assert x.min() >= 0.0 and x.max() <= 2.0
    print_test("Legacy heatbath draw", True, f"range [{x.min():.3f}, {x.max():.3f}]")


def test_heatbath_rejects_non_finite():
    with pytest.raises(DomainError):
        heatbath_sample([np.inf])
    print_test("Non-finite mu rejected", True)


def test_heatbath_deterministic():
    a = heatbath_sample([0.5, 1.0], seed=8, n_trajectories=10)
    b = heatbath_sample([0.5, 1.0], seed=np.random.default_rng(8), n_trajectories=10)
    assert np.array_equal(a, b)
    print_test("Heatbath determinism", True)


def test_polarized_state_is_stationary():
    """All spins along x with no potential feel no torque"""
    lattice = build_chain(5, coupling=-1.0, disorder=0.3, seed=1)
    spins = np.tile([1.0, 0.0, 0.0], (5, 1))
    for hamiltonian in (build_sl_hamiltonian(lattice), build_pi_hamiltonian(lattice, potential=constant_profile(5, 0.0))):
        assert np.max(np.abs(classical_derivative(spins, hamiltonian))) < 1e-12
    run = classical_evolve(spins, build_pi_hamiltonian(lattice), np.linspace(0.0, 10.0, 11))
    assert np.allclose(run.record.get('Ix'), 1.0, atol=1e-10)
    print_test("Polarized state is stationary", True)


def test_energy_matches_pair_sum():
    lattice, hamiltonian = toy_chain(3)
    spins = heatbath_sample([1.0, 0.0, -1.0], seed=3)[0]
    expected = float(spins[:, 0] @ hamiltonian.site_fields[:, 0])
    for (k, l), tensor in zip(hamiltonian.pairs, hamiltonian.tensors):
        expected += spins[k] @ tensor @ spins[l]
    assert classical_energy(spins, hamiltonian) == pytest.approx(expected, rel=1e-12)
    print_test("Classical energy", True, f"E = {expected:.5f}")


def test_norm_and_energy_drift():
    lattice, hamiltonian = toy_chain(6)
    spins = heatbath_sample(np.full(6, 1.0), seed=5, n_trajectories=4)
    run = classical_evolve(spins, hamiltonian, np.linspace(0.0, 5.0, 26), snapshot_times=[2.5])
    energy = run.record.get('H')
    assert run.norm_drift < 1e-6
    assert np.max(np.abs(energy - energy[0])) < 1e-6
    assert 2.5 in run.snapshots
    assert run.snapshots[2.5].shape == (4, 6, 3)
    assert run.record.get('Ix').shape == (26, 6)
    print_test("Norm and energy drift", True, f"norm drift = {run.norm_drift:.1e}")


def test_evolve_rejects_size_mismatch():
    lattice, hamiltonian = toy_chain(4)
    with pytest.raises(DomainError):
        classical_evolve(np.tile([1.0, 0.0, 0.0], (5, 1)), hamiltonian, [0.0, 1.0])
    print_test("Size mismatch rejected", True)


def test_ensemble_deterministic_across_threads():
    chains = [toy_chain(5, seed) for seed in (0, 1)]
    lattices = [c[0] for c in chains]
    hamiltonians = [c[1] for c in chains]
    mu = [np.full(5, 1.0)] * 2
    t_grid = np.linspace(0.0, 2.0, 11)
    one = run_ensemble(lattices, hamiltonians, mu, 3, t_grid, seed=21, threads=1)
    many = run_ensemble(lattices, hamiltonians, mu, 3, t_grid, seed=21, threads=3)
    assert np.array_equal(one.record.get('Ix_total'), many.record.get('Ix_total'))
    assert one.record.metadata['summary']['n_configurations'] == 2
    other = run_ensemble(lattices, hamiltonians, mu, 3, t_grid, seed=22, threads=1)
    assert not np.array_equal(one.record.get('Ix_total'), other.record.get('Ix_total'))
    print_test("Ensemble determinism", True)


def test_ensemble_needs_snapshots_for_maps():
    lattice, hamiltonian = toy_chain(4)
    result = run_ensemble([lattice], [hamiltonian], [np.ones(4)], 2, [0.0, 1.0], seed=1)
    with pytest.raises(DomainError):
        result.snapshot_map(1.0, [0.0, 10.0], [0.0, math.pi])
    with pytest.raises(DomainError):
        run_ensemble([lattice], [], [np.ones(4)], 2, [0.0, 1.0])
    print_test("Snapshot maps need snapshots", True)


def test_domain_wall_mu():
    lattice = sample_diamond_lattice(LatticeSpec(n_spins=30, rng_seed=4))
    mu = domain_wall_mu(lattice, 1.5, 6.0)
    assert np.all(mu[lattice.radii <= 6.0] == 1.5)
    assert np.all(mu[lattice.radii > 6.0] == 0.0)
    print_test("Domain-wall chemical potential", True, f"{int((mu > 0).sum())} polarized spins")


def test_bin_coordinates():
    positions = [[0.0, 0.0, 2.0], [0.0, 0.0, -2.0], [3.0, 0.0, 0.0]]
    r, theta = bin_coordinates(positions)
    assert np.allclose(r, [2.0, 2.0, 3.0])
    assert np.allclose(theta, [0.0, math.pi, math.pi / 2])
    _, folded = bin_coordinates(positions, fold=True)
    assert np.allclose(folded, [0.0, 0.0, math.pi / 2])
    scaled, _ = bin_coordinates(positions, scaled=True)
    assert scaled[0] == pytest.approx(2.0 / 2.0 ** (1.0 / 3.0))
    print_test("Bin coordinates", True)


def test_coarse_grain():
    positions = [[0.0, 0.0, 1.0], [0.0, 0.0, 1.5], [0.0, 0.0, 3.0], [2.0, 0.0, 0.0]]
    values = [0.2, 0.4, -0.5, 0.1]
    grid = coarse_grain(positions, values, [0.0, 2.0, 4.0], [0.0, math.pi / 4, math.pi / 2 + 1e-9])
    assert grid.count.tolist() == [[2, 0], [1, 1]]
    assert grid.mean[0, 0] == pytest.approx(0.3)
    assert np.isnan(grid.mean[0, 1])
    assert grid.empty[0, 1]
    assert len(list(grid.rows())) == 4
    print_test("Coarse graining", True)


def test_sign_agreement():
    positions = [[0.0, 0.0, 1.0]] * 3 + [[0.0, 0.0, 3.0]] * 3
    values = [0.2, 0.1, 0.3, -0.2, -0.1, 0.05]
    grid = coarse_grain(positions, values, [0.0, 2.0, 4.0], [0.0, math.pi])
    assert sign_agreement(grid, np.array([[1.0], [-1.0]]), min_count=3) == 1.0
    assert sign_agreement(grid, np.array([[1.0], [1.0]]), min_count=3) == 0.5
    assert math.isnan(sign_agreement(grid, np.array([[1.0], [1.0]]), min_count=10))
    print_test("Sign agreement", True)


def run_all_tests():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("SPINSHELL - CLASSICAL ENGINE TEST SUITE")
    print("=" * 60 + "\n")

    tests = [
        test_langevin,
        test_heatbath_matches_langevin,
        test_heatbath_zero_mu_is_isotropic,
        test_heatbath_legacy_range,
        test_heatbath_rejects_non_finite,
        test_heatbath_deterministic,
        test_polarized_state_is_stationary,
        test_energy_matches_pair_sum,
        test_norm_and_energy_drift,
        test_evolve_rejects_size_mismatch,
        test_ensemble_deterministic_across_threads,
        test_ensemble_needs_snapshots_for_maps,
        test_domain_wall_mu,
        test_bin_coordinates,
        test_coarse_grain,
        test_sign_agreement,
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
