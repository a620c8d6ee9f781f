"""Spectral kernel: canonical gauges, eigendecomposition, tangent exponential."""

import numpy as np
import pytest
import scipy.linalg

from manidiff.errors import ContractError
from manidiff.numerics import (
    canonicalize_columns,
    expm_tangent,
    reorthonormalize,
    sym_eig,
)


def _haar_unitary(n, rng, complex_entries=True):
    g = rng.standard_normal((n, n))
    if complex_entries:
        g = g + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def test_canonicalize_pivot_real_positive(rng):
    u = _haar_unitary(5, rng)
    c = canonicalize_columns(u)
    piv = np.argmax(np.abs(c), axis=0)
    vals = c[piv, np.arange(5)]
    assert np.max(np.abs(vals.imag)) < 1e-14
    assert np.all(vals.real > 0)


def test_canonicalize_idempotent_and_phase_invariant(rng):
    u = _haar_unitary(4, rng)
    c = canonicalize_columns(u)
    assert np.max(np.abs(canonicalize_columns(c) - c)) < 1e-15
    # any column rephasing lands on the same representative
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=4))
    assert np.max(np.abs(canonicalize_columns(u * phases) - c)) < 1e-13


def test_canonicalize_real_sign_and_det(rng):
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    c = canonicalize_columns(q, ensure_det_one=True)
    piv = np.argmax(np.abs(c), axis=0)
    # all pivots positive except possibly the det-repaired last column
    assert np.all(c[piv[:-1], np.arange(3)] > 0)
    assert abs(np.linalg.det(c) - 1.0) < 1e-12
    with pytest.raises(ContractError):
        canonicalize_columns(_haar_unitary(3, np.random.default_rng(1)), ensure_det_one=True)


def test_sym_eig_reconstructs(rng):
    for dtype_complex in (False, True):
        g = rng.standard_normal((6, 6))
        if dtype_complex:
            g = g + 1j * rng.standard_normal((6, 6))
        m = g + np.conj(g.T)
        sd = sym_eig(m)
        rec = (sd.eigvecs * sd.eigvals) @ np.conj(sd.eigvecs.T)
        assert np.max(np.abs(rec - m)) < 1e-9 * np.linalg.norm(m)
        assert np.all(np.diff(sd.eigvals) <= 0)  # descending
        ref = np.sort(scipy.linalg.eigvalsh(m))[::-1]
        assert np.max(np.abs(sd.eigvals - ref)) < 1e-10


def test_sym_eig_min_gap(rng):
    lam = np.array([3.0, 1.5, 1.1])
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    sd = sym_eig(q @ np.diag(lam) @ q.T)
    assert abs(float(sd.min_gap) - 0.4) < 1e-10


def test_sym_eig_rejects_non_hermitian():
    with pytest.raises(ContractError):
        sym_eig(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ContractError):
        sym_eig(np.zeros((2, 3)))


def test_sym_eig_batched(rng):
    g = rng.standard_normal((4, 5, 5))
    m = g + np.swapaxes(g, -1, -2)
    sd = sym_eig(m)
    for i in range(4):
        single = sym_eig(m[i])
        assert np.array_equal(sd.eigvecs[i], single.eigvecs)
        assert np.array_equal(sd.eigvals[i], single.eigvals)


def test_expm_tangent_matches_scipy(rng):
    a = rng.standard_normal((4, 4))
    a = a - a.T
    assert np.max(np.abs(expm_tangent(a) - scipy.linalg.expm(a))) < 1e-12
    b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    b = 0.5 * (b - np.conj(b.T))
    assert np.max(np.abs(expm_tangent(b) - scipy.linalg.expm(b))) < 1e-12


def test_expm_tangent_output_unitary(rng):
    a = 5.0 * (lambda m: m - np.conj(m.T))(rng.standard_normal((6, 6)) * 1j)
    q = expm_tangent(a)
    assert np.max(np.abs(np.conj(q.T) @ q - np.eye(6))) < 1e-11


def test_expm_tangent_rejects_non_skew():
    with pytest.raises(ContractError):
        expm_tangent(np.eye(3))


def test_reorthonormalize_polar_factor(rng):
    q = _haar_unitary(5, rng)
    noisy = q + 1e-3 * (rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5)))
    r = reorthonormalize(noisy)
    assert np.max(np.abs(np.conj(r.T) @ r - np.eye(5))) < 1e-12
    # polar factor via svd as the oracle
    w, _, vh = np.linalg.svd(noisy)
    assert np.max(np.abs(r - w @ vh)) < 1e-12
    assert np.max(np.abs(r - q)) < 5e-3


def test_reorthonormalize_rejects_far_input():
    with pytest.raises(ContractError):
        reorthonormalize(2.0 * np.eye(3))
