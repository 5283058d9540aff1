"""Sparse spin-1/2 operator algebra (I = sigma/2), site 0 is the leftmost tensor factor"""
from functools import lru_cache
from typing import Tuple

import numpy as np
import scipy.sparse as sp

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA = (SIGMA_X, SIGMA_Y, SIGMA_Z)


def site_operator(single: np.ndarray, site: int, n_spins: int) -> sp.csr_matrix:
    """Embed a 2x2 operator at `site` of an n-spin register"""
    left = sp.identity(2 ** site, dtype=complex, format='csr')
    right = sp.identity(2 ** (n_spins - site - 1), dtype=complex, format='csr')
    return sp.kron(sp.kron(left, sp.csr_matrix(single)), right, format='csr')


@lru_cache(maxsize=32)
def spin_operators(n_spins: int) -> Tuple[Tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix], ...]:
    """(I^x, I^y, I^z) for every site"""
    return tuple(
        tuple(site_operator(s / 2.0, k, n_spins) for s in SIGMA)
        for k in range(n_spins)
    )


def total_spin(n_spins: int, axis: int = 0) -> sp.csr_matrix:
    ops = spin_operators(n_spins)
    total = sp.csr_matrix((2 ** n_spins, 2 ** n_spins), dtype=complex)
    for site in ops:
        total = total + site[axis]
    return total


def axis_spin(n_spins: int, directions) -> sp.csr_matrix:
    """Sum_k n_k . I_k for per-site unit vectors"""
    ops = spin_operators(n_spins)
    total = sp.csr_matrix((2 ** n_spins, 2 ** n_spins), dtype=complex)
    for k, n in enumerate(np.asarray(directions, dtype=float)):
        for a in range(3):
            if n[a] != 0.0:
                total = total + n[a] * ops[k][a]
    return total


def rotation_2x2(angle: float, axis) -> np.ndarray:
    """exp(-i angle n.sigma/2)"""
    axis = np.asarray(axis, dtype=float)
    n_sigma = sum(axis[a] * SIGMA[a] for a in range(3))
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * n_sigma


def product_operator(singles) -> np.ndarray:
    """Dense Kronecker product of per-site 2x2 matrices"""
    out = np.array([[1.0 + 0j]])
    for m in singles:
        out = np.kron(out, m)
    return out
