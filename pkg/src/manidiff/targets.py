"""Closed-form regression targets for the reverse-diffusion drift and covariance.

The drift target is J_phi(z) . (z/2 + score(z)) + 1/2 tr(grad^2 phi)(z) where
score(z) = (z - origin e^{-s/2}) / (e^{-s} - 1) is the conditional Gaussian
score of the ambient OU process and phi is the manifold projection. The z/2
part is the time-reversal of the OU restoring drift; the sphere and group
projections are scale invariant (phi(c z) = phi(z) for c > 0), so J . z = 0
and the term survives only on the torus. Dropping it there makes the sampled
torus marginals provably wrong (the reverse SDE no longer reverses the
forward projection), which is directly visible as near-uniform samples. The
finite-difference oracle for phi is authoritative; every closed form below is
validated against it in the tests.

Per manifold:
  * torus  — J = I and the Hessian trace vanishes: target = z/2 + score.
  * sphere — J = (1/r)(I - zz^T/r^2), tr(grad^2 phi) = -(d-1) z / r^3; the
    radial Hessian part is kept (it is annihilated later by the sampler's
    tangent projection).
  * groups — first-order eigenvector perturbation of M = Z + Z^*. With U the
    canonical eigenvector matrix, lam descending, S = score + score^*, and
    V = U^* S U, the coefficient matrix K (value = U K, column i gets
    K_ji u_j) is

        K_ji = V_ji / (lam_i - lam_j)            j != i
        K_ii = c_gap * sum_{j!=i} 1/(lam_i - lam_j)^2

    with c_gap = -1 for SO(n) and -2 for U(n) (real vs complex coordinate
    count). U(n) additionally needs corrections because the implemented phi
    pins a per-column phase gauge (pivot entry real positive); writing r_i for
    the pivot row of column i and a_i = U[r_i, i] > 0:

        K_ii += i * theta_i,  theta_i = -Im((U K^score)[r_i, i]) / a_i
        K_ji += (2 / a_i) conj(U[r_i, j]) / (lam_i - lam_j)^2
        K_ii += -(1 / a_i^2) sum_{l!=i} |U[r_i, l]|^2 / (lam_i - lam_l)^2

    (first line: gauge response to the score motion; the other two: gauge
    part of the Hessian trace). The returned group drift is tangent-projected,
    U skew(K), which drops the real diagonal of K. SO(n)'s sign gauge is
    locally constant and needs no correction.

The covariance target is the Gram J^T J in closed form: identity (torus),
the scalar 1/r (sphere), or the antisymmetric gap matrix A_ij =
1/(lam_i - lam_j) (groups).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegeneracyError, SingularityError
from .forward import GateConfig, clip_elapsed, omega_gate
from .manifolds import Manifold, Sphere, Torus, _MatrixGroup, _adjoint

# counts drift_target calls whose elapsed time had to be clipped up to s_min
_CLIP_WARNINGS = 0


def clip_warning_count() -> int:
    return _CLIP_WARNINGS


def reset_clip_warning_count() -> None:
    global _CLIP_WARNINGS
    _CLIP_WARNINGS = 0


def score_vector(z: np.ndarray, origin: np.ndarray, s) -> np.ndarray:
    """Conditional score of Z_s | Z_0 = origin, per real coordinate.

    Equals grad_z log N(z; origin e^{-s/2}, (1 - e^{-s}) I) (applied to the
    real and imaginary parts independently for complex ambient spaces).
    """
    z = np.asarray(z)
    origin = np.asarray(origin)
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise ContractError("score requires s > 0")
    extra = z.ndim - s_arr.ndim
    s_b = s_arr.reshape(s_arr.shape + (1,) * extra)
    return (z - origin * np.exp(-0.5 * s_b)) / (np.exp(-s_b) - 1.0)


@dataclass
class DriftTarget:
    value: np.ndarray | None   # ambient representation; zero rows where gated
    gated: np.ndarray          # boolean, broadcast over batch axes


@dataclass
class CovarianceTarget:
    kind: str                      # "identity" | "scalar" | "gap_matrix"
    alpha: np.ndarray | None = None
    gap: np.ndarray | None = None  # antisymmetric A, A_ij = 1/(lam_i - lam_j)
    gated: np.ndarray | bool = False


def _safe_inverse_gaps(lam: np.ndarray, min_gap: float) -> np.ndarray:
    """G with G[j, i] = 1/(lam_i - lam_j) off the diagonal, zero diagonal.

    Denominators are sign-preservingly bounded away from zero by min_gap, so
    the defensive cap |G| <= 1/min_gap holds; inside the gate the cap never
    binds (consecutive gaps >= min_gap imply all gaps do).
    """
    denom = lam[..., None, :] - lam[..., :, None]
    sign = np.where(denom < 0, -1.0, 1.0)
    denom = sign * np.maximum(np.abs(denom), min_gap)
    g = 1.0 / denom
    n = lam.shape[-1]
    g = g * (1.0 - np.eye(n))
    return g


def _group_drift_coeffs(manifold: _MatrixGroup, z: np.ndarray, score: np.ndarray, cfg: GateConfig):
    """(U, K) with the full coefficient matrix K, before tangent projection."""
    u, lam, _ = manifold.spectral_project(z)
    s_mat = score + _adjoint(score)
    v = _adjoint(u) @ s_mat @ u
    g = _safe_inverse_gaps(lam, cfg.min_gap)
    gsq = g * g
    k = v * g
    lap_diag = gsq.sum(axis=-2)  # sum_j 1/(lam_i - lam_j)^2 for column i
    n = manifold.n
    idx = np.arange(n)
    if not manifold.complex_entries:
        k = k.real.copy()
        k[..., idx, idx] = -lap_diag
        return u, k
    # canonical phase gauge corrections (pivot row per column)
    k = k.copy()
    r = np.argmax(np.abs(u), axis=-2)
    a0 = np.take_along_axis(u, r[..., None, :], axis=-2)[..., 0, :].real
    d = u @ k  # score-driven motion in the smooth gauge
    d_pivot = np.take_along_axis(d, r[..., None, :], axis=-2)[..., 0, :]
    theta = -d_pivot.imag / a0
    # pivot rows of u: p[..., i, j] = u[r_i, j]
    p = np.take_along_axis(u, r[..., :, None], axis=-2)
    k = k + 2.0 * np.conj(np.swapaxes(p, -1, -2)) * gsq / a0[..., None, :]
    diag2 = -np.einsum("...il,...li->...i", np.abs(p) ** 2, gsq) / a0**2
    k[..., idx, idx] += -2.0 * lap_diag + 1j * theta + diag2
    return u, k


def drift_target(
    manifold: Manifold,
    z: np.ndarray,
    origin: np.ndarray,
    s,
    cfg: GateConfig | None = None,
) -> DriftTarget:
    """Regression target for the reverse drift at ambient state z.

    Batched over leading axes of z/origin; s is a scalar or a per-batch array.
    Gated entries get a zero value and gated=True (they contribute zero loss,
    they are never resampled). Elapsed times below cfg.s_min are clipped up,
    counted in clip_warning_count().
    """
    global _CLIP_WARNINGS
    if cfg is None:
        cfg = GateConfig()
    z = np.asarray(z)
    if np.any(np.asarray(s) < cfg.s_min):
        _CLIP_WARNINGS += 1
    s = clip_elapsed(s, cfg)
    gated = ~omega_gate(manifold, z, cfg)
    sc = score_vector(z, origin, s)
    if isinstance(manifold, Torus):
        # J = I keeps the reversed restoring drift z/2; the curved manifolds
        # lose it to scale invariance of phi (J . z = 0)
        value = 0.5 * z + sc
    elif isinstance(manifold, Sphere):
        r = np.linalg.norm(z, axis=-1)[..., None]
        zhat = z / r
        tang = (sc - np.sum(sc * zhat, axis=-1)[..., None] * zhat) / r
        value = tang - 0.5 * (manifold.dim - 1) * z / r**3
    else:
        u, k = _group_drift_coeffs(manifold, z, sc, cfg)
        value = u @ (0.5 * (k - _adjoint(k)))  # tangent projection U skew(K)
    gated_arr = np.asarray(gated)
    if np.any(gated_arr):
        mask = gated_arr.reshape(gated_arr.shape + (1,) * (value.ndim - gated_arr.ndim))
        value = np.where(mask, 0.0, value)
    return DriftTarget(value=value, gated=gated)


def covariance_target(
    manifold: Manifold,
    z: np.ndarray,
    cfg: GateConfig | None = None,
) -> CovarianceTarget:
    if cfg is None:
        cfg = GateConfig()
    z = np.asarray(z)
    gated = ~omega_gate(manifold, z, cfg)
    if isinstance(manifold, Torus):
        return CovarianceTarget(kind="identity", gated=gated)
    if isinstance(manifold, Sphere):
        r = np.linalg.norm(z, axis=-1)
        alpha = 1.0 / np.maximum(r, 1e-300)
        alpha = np.where(gated, 0.0, alpha)
        return CovarianceTarget(kind="scalar", alpha=alpha, gated=gated)
    lam = np.linalg.eigvalsh(z + _adjoint(z))[..., ::-1]  # descending
    a = -_safe_inverse_gaps(lam, cfg.min_gap)  # A[i, j] = 1/(lam_i - lam_j)
    if np.any(gated):
        a = np.where(np.asarray(gated)[..., None, None], 0.0, a)
    return CovarianceTarget(kind="gap_matrix", gap=a, gated=gated)


def jacobian_gram(
    manifold: Manifold,
    z: np.ndarray,
    cfg: GateConfig | None = None,
) -> np.ndarray:
    """Closed-form J_phi^T J_phi, restricted to its nonzero eigenframe.

    Returned as an intrinsic_dim x intrinsic_dim matrix, diagonal in:
      * torus  — the coordinate frame: I_d;
      * sphere — any orthonormal tangent frame at z/||z||: (1/r^2) I_{d-1};
      * groups — the unordered-eigenpair input frame, entries 4/(lam_i-lam_j)^2
        per pair i<j (U(n): per real and imaginary pair mode, plus n zero
        entries for the phase modes, which the canonical gauge parallels out).

    Frame order for groups matches Manifold.tangent_frame: pairs (i, j), i<j,
    row-major; for U(n) real-type pairs, then imaginary-type, then diagonal.
    """
    if cfg is None:
        cfg = GateConfig()
    z = np.asarray(z)
    ok = omega_gate(manifold, z, cfg)
    if not np.all(ok):
        if isinstance(manifold, Sphere):
            raise SingularityError("jacobian_gram on a gated (near-zero) point")
        raise DegeneracyError("jacobian_gram on a gated (near-degenerate) point")
    if isinstance(manifold, Torus):
        return np.eye(manifold.dim)
    if isinstance(manifold, Sphere):
        r2 = np.sum(z * z, axis=-1)
        return np.eye(manifold.dim - 1) / r2
    lam = np.linalg.eigvalsh(z + _adjoint(z))[..., ::-1]
    n = manifold.n
    iu, ju = np.triu_indices(n, k=1)
    pair = 4.0 / (lam[..., iu] - lam[..., ju]) ** 2
    if manifold.complex_entries:
        diag = np.concatenate([pair, pair, np.zeros(lam.shape[:-1] + (n,))], axis=-1)
    else:
        diag = pair
    return diag[..., :, None] * np.eye(manifold.intrinsic_dim)


def gram_from_covariance(manifold: Manifold, cov: CovarianceTarget) -> np.ndarray:
    """The g*^2 implied by a covariance target, in jacobian_gram's frame.

    The sampler drives each unordered pair (i, j) with a symmetric Brownian
    matrix entry of variance 2 dt per real coordinate scaled by A_ij, giving
    quadratic variation 4 A_ij^2 per pair mode and none in the phase modes.
    """
    if cov.kind == "identity":
        return np.eye(manifold.intrinsic_dim)
    if cov.kind == "scalar":
        return np.asarray(cov.alpha)[..., None, None] ** 2 * np.eye(manifold.intrinsic_dim)
    n = manifold.n
    iu, ju = np.triu_indices(n, k=1)
    a = np.asarray(cov.gap)
    pair = 4.0 * a[..., iu, ju] ** 2
    if manifold.complex_entries:
        diag = np.concatenate([pair, pair, np.zeros(a.shape[:-2] + (n,))], axis=-1)
    else:
        diag = pair
    return diag[..., :, None] * np.eye(manifold.intrinsic_dim)
