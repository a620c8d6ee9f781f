"""Dense matrix kernels used everywhere else.

Hermitian/symmetric eigendecomposition with a deterministic phase convention,
matrix exponential of skew-(Hermitian) matrices, and re-orthonormalization
(polar factor). All operations accept leading batch axes and preserve the
input dtype class (real in -> real out, complex in -> complex out).

Conventions fixed here and relied on by every other module:
  * eigendecompositions are returned as M = U diag(lam) U^* with eigenvectors
    as COLUMNS of U and eigenvalues sorted DESCENDING;
  * the phase/sign ambiguity of each eigenvector is resolved by making its
    largest-modulus entry real and positive (ties broken by lowest row index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

HERMITIAN_TOL = 1e-10
SKEW_TOL = 1e-10


def _adjoint(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


@dataclass
class SpectralData:
    """Eigendecomposition M = eigvecs diag(eigvals) eigvecs^*.

    eigvals are sorted descending; min_gap is the smallest consecutive
    eigenvalue difference (per batch element for batched input).
    """

    eigvecs: np.ndarray
    eigvals: np.ndarray
    min_gap: np.ndarray


def canonicalize_columns(u: np.ndarray, ensure_det_one: bool = False) -> np.ndarray:
    """Fix the per-column phase/sign of an orthogonal/unitary matrix.

    Each column is multiplied by the unit scalar that makes its
    largest-modulus entry real and positive; np.argmax breaks ties at the
    lowest row index. With ensure_det_one (real input), a resulting
    determinant of -1 is repaired by flipping the sign of the last column.
    Idempotent.
    """
    u = np.asarray(u)
    piv = np.argmax(np.abs(u), axis=-2)  # (..., n) pivot row per column
    pivot_vals = np.take_along_axis(u, piv[..., None, :], axis=-2)[..., 0, :]
    if np.iscomplexobj(u):
        mod = np.abs(pivot_vals)
        # zero pivots cannot occur for unit columns; guard keeps 0/0 out
        phase = np.where(mod > 0, pivot_vals / np.where(mod > 0, mod, 1.0), 1.0)
        out = u * np.conj(phase)[..., None, :]
    else:
        sign = np.where(pivot_vals >= 0, 1.0, -1.0)
        out = u * sign[..., None, :]
    if ensure_det_one:
        if np.iscomplexobj(out):
            raise ContractError("determinant repair is defined for real matrices only")
        det = np.linalg.det(out)
        flip = np.where(det < 0, -1.0, 1.0)
        out = out.copy()
        out[..., :, -1] *= flip[..., None]
    return out


def sym_eig(m: np.ndarray) -> SpectralData:
    """Eigendecomposition of a Hermitian (or real-symmetric) matrix.

    Returns SpectralData with descending eigenvalues and phase-canonicalized
    eigenvector columns; UC diag(lam) UC^* reconstructs m to ~1e-9 ||m||.
    Raises ContractError for non-square or non-Hermitian input.
    """
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ContractError(f"sym_eig expects a square matrix, got shape {m.shape}")
    scale = np.linalg.norm(m, axis=(-2, -1))
    herm_err = np.linalg.norm(m - _adjoint(m), axis=(-2, -1))
    if np.any(herm_err > HERMITIAN_TOL * np.maximum(1.0, scale)):
        raise ContractError("sym_eig input is not Hermitian within tolerance")
    lam, u = np.linalg.eigh(m)
    lam = lam[..., ::-1]
    u = u[..., ::-1]
    u = canonicalize_columns(u)
    diffs = lam[..., :-1] - lam[..., 1:]
    if m.shape[-1] == 1:
        min_gap = np.zeros(lam.shape[:-1])
    else:
        min_gap = np.maximum(diffs.min(axis=-1), 0.0)
    return SpectralData(eigvecs=u, eigvals=lam, min_gap=np.asarray(min_gap))


def expm_tangent(a: np.ndarray) -> np.ndarray:
    """exp(A) for skew-symmetric / skew-Hermitian A, via eigh of iA.

    Output Q is orthogonal/unitary to ~1e-12. Input skewness is a contract:
    ||A + A^*|| must be <= 1e-10 * max(1, ||A||).
    """
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ContractError(f"expm_tangent expects a square matrix, got shape {a.shape}")
    scale = np.linalg.norm(a, axis=(-2, -1))
    skew_err = np.linalg.norm(a + _adjoint(a), axis=(-2, -1))
    if np.any(skew_err > SKEW_TOL * np.maximum(1.0, scale)):
        raise ContractError("expm_tangent input is not skew within tolerance")
    h = 1j * a  # Hermitian
    lam, u = np.linalg.eigh(h)
    phases = np.exp(-1j * lam)
    q = np.einsum("...ij,...j,...kj->...ik", u, phases, np.conj(u))
    if not np.iscomplexobj(a):
        return q.real
    return q


def reorthonormalize(q: np.ndarray) -> np.ndarray:
    """Nearest orthogonal/unitary matrix in Frobenius norm (polar factor).

    Determinant sign is preserved for real input. Raises ContractError when
    q is too far from orthogonal (||q^*q - I|| > 0.1) or nearly singular
    (some singular value < 0.5).
    """
    q = np.asarray(q)
    if q.ndim < 2 or q.shape[-1] != q.shape[-2]:
        raise ContractError(f"reorthonormalize expects a square matrix, got shape {q.shape}")
    n = q.shape[-1]
    eye = np.eye(n, dtype=q.dtype)
    gram_err = np.linalg.norm(_adjoint(q) @ q - eye, axis=(-2, -1))
    if np.any(gram_err > 0.1):
        raise ContractError("reorthonormalize input is not within 0.1 of orthogonal")
    w, sv, vh = np.linalg.svd(q)
    if np.any(sv[..., -1] < 0.5):
        raise ContractError("reorthonormalize input is nearly singular (sigma_min < 0.5)")
    return w @ vh
