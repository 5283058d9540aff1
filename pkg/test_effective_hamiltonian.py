"""
Test suite for effective Hamiltonians
Tests kick composition, dephasing sums, the model reductions and the crossing radius
"""
import math

import numpy as np
import pytest
from scipy.linalg import eigvalsh, expm

from spinshell.engine.effective_hamiltonian import (
    PulseSequence, build_dipolar_hamiltonian, build_pi_hamiltonian, build_pihalf_hamiltonian,
    build_sl_hamiltonian, build_toggling_hamiltonian, compose_single_particle_kick, crossing_radius,
    dephasing_sums, hamiltonian_to_dict, lattice_phi_profile, natural_density, site_phi_profile,
    spins_within_radius, to_sparse_matrix,
)
from spinshell.engine.errors import DomainError, NoCrossingError
from spinshell.engine.geometry import LatticeSpec, build_chain, sample_diamond_lattice
from spinshell.engine.spin_operators import SIGMA_X, SIGMA_Z, axis_spin, rotation_2x2, total_spin

METHODS_SEQUENCE = PulseSequence.from_kick_angle(50e3, 0.94 * math.pi, 51e-6)


def print_test(test_name: str, passed: bool, details: str = ""):
    """Print test result"""
    status = "✓ PASS" if passed else "✗ FAIL"
    print(f"{status}: {test_name}")
    if details:
        print(f"   {details}")
    print()


def brute_force_kick(rabi, eta, t_kick, t_dd):
    """exp(-i 2pi eta t_dd Z/2) exp(-i 2pi t_kick (rabi X + eta Z)/2)"""
    kick = expm(-1j * 2 * math.pi * t_kick * (rabi * SIGMA_X + eta * SIGMA_Z) / 2)
    free = expm(-1j * 2 * math.pi * eta * t_dd * SIGMA_Z / 2)
    return free @ kick


def commutator_norm(a, b) -> float:
    return float(np.max(np.abs((a @ b - b @ a).toarray())))


def test_kick_without_field():
    kick = compose_single_particle_kick(1e4, 0.0, 20e-6, 40e-6)
    assert kick.theta_eff == pytest.approx(2 * math.pi * 1e4 * 20e-6, rel=1e-12)
    assert np.allclose(kick.axis, [1.0, 0.0, 0.0])
    print_test("Kick without field", True, f"theta = {kick.theta_eff:.6f}")


def test_kick_without_drive():
    eta, t_kick, t_dd = 1e3, 50e-6, 100e-6
    kick = compose_single_particle_kick(0.0, eta, t_kick, t_dd)
    assert kick.theta_eff == pytest.approx(2 * math.pi * eta * (t_kick + t_dd), rel=1e-12)
    assert np.allclose(kick.axis, [0.0, 0.0, 1.0])
    print_test("Kick without drive", True, f"theta = {kick.theta_eff:.6f}")


def test_kick_matches_unitary_product():
    """Generic parameters against the explicit 2x2 product"""
    rabi, eta, t_kick, t_dd = 10e3, 3e3, 50e-6, 40e-6
    kick = compose_single_particle_kick(rabi, eta, t_kick, t_dd)
    u = brute_force_kick(rabi, eta, t_kick, t_dd)
    v = rotation_2x2(kick.theta_eff, kick.axis)
    fidelity = abs(np.trace(u.conj().T @ v)) / 2
    assert abs(1 - fidelity) < 1e-12
    assert abs(np.linalg.norm(kick.axis) - 1) < 1e-12
    assert 0 <= kick.theta_eff < 2 * math.pi
    print_test("Kick matches unitary product", True, f"axis = {np.round(kick.axis, 4)}")


def test_kick_fidelity_grid():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        rabi = rng.uniform(1e3, 1e5)
        eta = rng.uniform(-5e3, 5e3)
        t_kick = rng.uniform(1e-6, 5e-5)
        t_dd = rng.uniform(1e-6, 1e-4)
        kick = compose_single_particle_kick(rabi, eta, t_kick, t_dd)
        u = brute_force_kick(rabi, eta, t_kick, t_dd)
        v = rotation_2x2(kick.theta_eff, kick.axis)
        worst = max(worst, abs(1 - abs(np.trace(u.conj().T @ v)) / 2))
    assert worst < 1e-12
    print_test("Kick fidelity over 100 points", True, f"worst = {worst:.2e}")


def test_kick_identity_convention():
    kick = compose_single_particle_kick(1e4, 0.0, 1e-4, 0.0)
    assert kick.degenerate
    assert kick.theta_eff == 0.0
    assert np.allclose(kick.axis, [1.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        compose_single_particle_kick(0.0, 0.0, 1e-5, 1e-5)
    print_test("Identity kick convention", True)


def test_dephasing_sums():
    g_s, g_c = dephasing_sums(4, math.pi / 2)
    direct = np.mean([math.cos(j * math.pi / 2) for j in range(4)])
    assert abs(g_c) < 1e-12 and abs(direct) < 1e-12
    for n in (1, 3, 10):
        assert dephasing_sums(n, 2 * math.pi) == (0.0, 1.0)
    n = 5000
    g_s, g_c = dephasing_sums(n, 0.3)
    bound = 1 / (n * abs(math.sin(0.15)))
    assert abs(g_s) <= bound and abs(g_c) <= bound
    assert dephasing_sums(math.inf, 0.3) == (0.0, 0.0)
    print_test("Dephasing sums", True, f"G(N=5000, 0.3) = ({g_s:.2e}, {g_c:.2e})")


def test_dephasing_sums_match_direct_sum():
    for n, theta in ((3, 0.7), (7, 2.1), (12, -1.3)):
        g_s, g_c = dephasing_sums(n, theta)
        assert g_s == pytest.approx(np.mean([math.sin(j * theta) for j in range(n)]), abs=1e-12)
        assert g_c == pytest.approx(np.mean([math.cos(j * theta) for j in range(n)]), abs=1e-12)
    print_test("Dephasing sums against direct sums", True)


def test_sl_two_spin_spectrum():
    lattice = build_chain(2, coupling=1.0)
    h = to_sparse_matrix(build_sl_hamiltonian(lattice)).toarray()
    assert np.allclose(h, h.conj().T)
    assert np.allclose(eigvalsh(h), [-0.25, -0.25, 0.0, 0.5], atol=1e-12)
    print_test("Spin-locking two-spin spectrum", True)


def test_sl_conserves_x():
    lattice = build_chain(3, coupling=-1.0, disorder=0.4, seed=2)
    h = to_sparse_matrix(build_sl_hamiltonian(lattice))
    assert commutator_norm(h, total_spin(3, 0)) < 1e-14
    print_test("Spin-locking conserves total I^x", True)


def test_toggling_reduces_to_sl():
    lattice = build_chain(4, coupling=-1.0, disorder=0.3, seed=1)
    sequence = PulseSequence.from_kick_angle(1e3, math.pi / 2, 1e-3)
    toggling = build_toggling_hamiltonian(lattice, sequence)
    sl = build_sl_hamiltonian(lattice)
    assert np.array_equal(toggling.pairs, sl.pairs)
    assert np.max(np.abs(toggling.tensors - sl.tensors)) < 1e-12
    assert np.max(np.abs(toggling.site_fields)) < 1e-12
    print_test("Toggling frame reduces to spin locking", True)


def test_toggling_conserves_local_axes():
    lattice = build_chain(3, coupling=-1.0, seed=0).with_eta([100.0, -50.0, 200.0])
    sequence = PulseSequence.from_kick_angle(1e3, math.pi / 2, 1e-3)
    for n_cycles in (math.inf, 7):
        hamiltonian = build_toggling_hamiltonian(lattice, sequence, n_cycles=n_cycles)
        h = to_sparse_matrix(hamiltonian)
        generator = axis_spin(3, hamiltonian.metadata['axes'])
        scale = float(np.max(np.abs(h.toarray())))
        assert commutator_norm(h, generator) < 1e-11 * scale
    print_test("Toggling frame conserves the local axes", True)


def test_toggling_single_site():
    lattice = build_chain(2, coupling=0.0).with_eta([300.0, 0.0])
    sequence = PulseSequence.from_kick_angle(1e3, math.pi / 2, 1e-3)
    hamiltonian = build_toggling_hamiltonian(lattice, sequence, n_cycles=5)
    assert len(hamiltonian.pairs) == 0
    assert np.linalg.norm(hamiltonian.site_fields[0]) > 0
    print_test("Toggling frame without couplings", True)


def test_toggling_rejects_pi():
    lattice = build_chain(3, coupling=-1.0)
    sequence = PulseSequence.from_kick_angle(1e3, math.pi, 1e-3)
    with pytest.raises(DomainError):
        build_toggling_hamiltonian(lattice, sequence)
    print_test("Toggling frame rejects pi kicks", True)


def test_pi_without_potential_is_dipolar():
    lattice = build_chain(3, coupling=-1.0, disorder=0.2, seed=3)
    pi = build_pi_hamiltonian(lattice)
    dipolar = build_dipolar_hamiltonian(lattice)
    assert pi.kind == 'TOY_PI'
    assert np.array_equal(pi.tensors, dipolar.tensors)
    assert np.all(pi.site_fields == 0.0)
    print_test("PI model without potential is dipolar", True)


def test_site_phi_profile():
    delta, phi_max = 0.05 * math.pi, 0.5 * math.pi
    profile = site_phi_profile(10, delta, phi_max)
    a = 1 / math.pi ** (1 / 3)
    for n, phi in enumerate(profile.phi):
        inverse = math.inf if n == 0 else 1 / (a * n) ** 3
        assert phi == pytest.approx(min(inverse, phi_max) - delta, rel=1e-12)
    signs = np.sign(profile.phi)
    assert int(np.sum(signs[1:] != signs[:-1])) == 1
    assert profile.crossing_site == pytest.approx(20 ** (1 / 3), rel=1e-12)
    print_test("Site potential profile", True, f"crossing near site {profile.crossing_site:.3f}")


def test_pi_hamiltonian_fields_from_profile():
    lattice = build_chain(6, coupling=-1.0)
    profile = site_phi_profile(6, 0.05 * math.pi, 0.5 * math.pi)
    hamiltonian = build_pi_hamiltonian(lattice, potential=profile)
    assert np.allclose(hamiltonian.site_fields[:, 0], profile.phi)
    assert np.all(hamiltonian.site_fields[:, 1:] == 0.0)
    with pytest.raises(DomainError):
        build_pi_hamiltonian(lattice, potential=site_phi_profile(5, 0.1, 1.0))
    print_test("PI model fields from the profile", True)


def test_pihalf_shape():
    lattice = build_chain(2, coupling=2.0)
    hamiltonian = build_pihalf_hamiltonian(lattice)
    assert np.allclose(hamiltonian.tensors[0], 2.0 * np.diag([-1.0, 0.5, 0.5]))
    print_test("pi/2 toy model tensor", True)


def test_lattice_phi_profile_linearized():
    lattice = sample_diamond_lattice(LatticeSpec(n_spins=5, rng_seed=1))
    phi = lattice_phi_profile(lattice, METHODS_SEQUENCE)
    expected = lattice.eta + METHODS_SEQUENCE.delta_theta / (2 * math.pi * METHODS_SEQUENCE.period)
    assert np.allclose(phi, expected)
    hamiltonian = build_pi_hamiltonian(lattice, METHODS_SEQUENCE)
    assert hamiltonian.kind == 'PI'
    assert np.allclose(hamiltonian.site_fields[:, 0], expected)
    print_test("Linearized lattice potential", True)


def test_crossing_radius_methods_point():
    result = crossing_radius(METHODS_SEQUENCE, 0.1)
    assert 2.55 <= result.r_c0 <= 2.85
    assert result.r_c == pytest.approx(result.r_c0 * 2 ** (1 / 3))
    print_test("Crossing radius at 0.94 pi", True, f"r_c0 = {result.r_c0:.3f} nm")


def test_crossing_radius_matches_scan():
    result = crossing_radius(METHODS_SEQUENCE, 0.1)
    grid = np.geomspace(1.7, 50.0, 10000)
    amplitude = 2 * 0.1 * 54157.5
    potential = amplitude / grid ** 3 + METHODS_SEQUENCE.delta_theta / (2 * math.pi * METHODS_SEQUENCE.period)
    i = int(np.nonzero(np.diff(np.sign(potential)))[0][-1])
    assert grid[i] - 1e-3 <= result.r_c0 <= grid[i + 1] + 1e-3
    print_test("Crossing radius against a dense scan", True)


def test_crossing_radius_monotone():
    radii = [crossing_radius(PulseSequence.from_kick_angle(50e3, f * math.pi, 51e-6), 0.1).r_c0
             for f in (0.90, 0.94, 0.98)]
    assert radii[0] < radii[1] < radii[2]
    print_test("Crossing radius shrinks with the offset", True, f"radii = {np.round(radii, 3)}")


def test_crossing_radius_without_offset():
    with pytest.raises(NoCrossingError):
        crossing_radius(PulseSequence.from_kick_angle(50e3, math.pi, 51e-6), 0.1)
    print_test("No crossing without kick offset", True)


def test_crossing_radius_composed():
    result = crossing_radius(METHODS_SEQUENCE, 0.1, mode='composed', r_bounds=(0.5, 50.0))
    eta = 2 * 0.1 * 54157.5 / result.r_c0 ** 3
    kick = compose_single_particle_kick(METHODS_SEQUENCE.rabi, eta, METHODS_SEQUENCE.t_kick,
                                        METHODS_SEQUENCE.t_dd)
    assert abs(kick.theta_eff - math.pi) < 1e-2
    print_test("Composed crossing radius", True, f"r_c0 = {result.r_c0:.3f} nm")


def test_spins_within_radius():
    r_c0 = crossing_radius(METHODS_SEQUENCE, 0.1).r_c0
    count = spins_within_radius(r_c0)
    assert 130 <= count <= 170
    # unit density gives about 70 spins, half the often quoted 150; that figure needs natural abundance
    unit = spins_within_radius(r_c0, 1.0)
    assert unit == pytest.approx(16 * math.pi / (9 * math.sqrt(3)) * r_c0 ** 3, rel=1e-8)
    assert 50 <= unit <= 80
    assert spins_within_radius(0.0) == 0.0
    assert natural_density() == pytest.approx(0.011 * 8 / 0.357 ** 3)
    print_test("Spins inside the crossing radius", True, f"N = {count:.1f}")


def test_spins_within_radius_monte_carlo():
    r_c0, density = 2.0, 1.0
    rng = np.random.default_rng(5)
    half = r_c0 * 2 ** (1 / 3)
    points = rng.uniform(-half, half, size=(400000, 3))
    r = np.linalg.norm(points, axis=1)
    cos = points[:, 2] / r
    inside = r < r_c0 * np.abs(3 * cos ** 2 - 1) ** (1 / 3)
    estimate = density * inside.mean() * (2 * half) ** 3
    exact = spins_within_radius(r_c0, density)
    assert abs(estimate - exact) / exact < 0.02
    print_test("Enclosed volume against Monte Carlo", True, f"{estimate:.2f} vs {exact:.2f}")


def test_hamiltonian_json():
    lattice = build_chain(3, coupling=-1.0)
    data = hamiltonian_to_dict(build_sl_hamiltonian(lattice))
    assert data['kind'] == 'SL'
    assert len(data['pairs']) == 2
    assert np.array(data['pairs'][0]['tensor']).shape == (3, 3)
    print_test("Hamiltonian JSON export", True)


def run_all_tests():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("SPINSHELL - EFFECTIVE HAMILTONIAN TEST SUITE")
    print("=" * 60 + "\n")

    tests = [
        test_kick_without_field,
        test_kick_without_drive,
        test_kick_matches_unitary_product,
        test_kick_fidelity_grid,
        test_kick_identity_convention,
        test_dephasing_sums,
        test_dephasing_sums_match_direct_sum,
        test_sl_two_spin_spectrum,
        test_sl_conserves_x,
        test_toggling_reduces_to_sl,
        test_toggling_conserves_local_axes,
        test_toggling_single_site,
        test_toggling_rejects_pi,
        test_pi_without_potential_is_dipolar,
        test_site_phi_profile,
        test_pi_hamiltonian_fields_from_profile,
        test_pihalf_shape,
        test_lattice_phi_profile_linearized,
        test_crossing_radius_methods_point,
        test_crossing_radius_matches_scan,
        test_crossing_radius_monotone,
        test_crossing_radius_without_offset,
        test_crossing_radius_composed,
        test_spins_within_radius,
        test_spins_within_radius_monte_carlo,
        test_hamiltonian_json,
    ]
    results = []
    for test in tests:
        try:
            test()
            results.append(True)
        except Exception as e:
            print_test(test.__name__, False, f"Error: {e}")
            results.append(False)

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
