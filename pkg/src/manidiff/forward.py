"""Closed-form forward diffusion and the average-case regularity gate.

The forward process is the projection X_s = phi(Z_s) of an ambient
Ornstein-Uhlenbeck process dZ = -1/2 Z ds + dB started at Z_0 = psi(x_0),
so Z_s | x_0 ~ N(psi(x_0) e^{-s/2}, (1 - e^{-s}) I) and no SDE solver is ever
run forward. The gate marks ambient points where the projection is badly
conditioned (tiny eigengap, near-zero norm); gated samples contribute zero
loss instead of being resampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .manifolds import Manifold, Sphere, Torus, _adjoint


@dataclass
class GateConfig:
    min_gap: float = 1e-6       # groups: smallest allowed consecutive eigengap of Z+Z*
    min_norm: float = 0.5       # sphere: smallest allowed ambient norm
    s_min: float = 1e-3         # early-stopping clip on elapsed diffusion time

    def __post_init__(self):
        if self.min_gap <= 0 or self.min_norm <= 0 or self.s_min <= 0:
            raise ContractError("gate thresholds must be strictly positive")


@dataclass
class OuSample:
    z: np.ndarray         # ambient state at elapsed time s
    s: float | np.ndarray
    origin: np.ndarray    # psi(x_0)
    gate_ok: np.ndarray


def ou_sample(
    manifold: Manifold,
    origin: np.ndarray,
    s: float | np.ndarray,
    rng: np.random.Generator,
    cfg: GateConfig | None = None,
) -> OuSample:
    """Draw Z_s | Z_0 = origin from the OU bridge-free closed form.

    origin may carry leading batch axes; s is a scalar or broadcastable to the
    batch shape. For complex ambient spaces (U(n)) the noise is i.i.d. standard
    normal on the real coordinates, i.e. independent N(0,1) real and imaginary
    parts per entry.
    """
    if cfg is None:
        cfg = GateConfig()
    origin = np.asarray(origin)
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ContractError("elapsed time s must be nonnegative")
    if np.iscomplexobj(origin):
        xi = rng.standard_normal(origin.shape) + 1j * rng.standard_normal(origin.shape)
    else:
        xi = rng.standard_normal(origin.shape)
    # broadcast per-batch times over the trailing point axes
    extra = origin.ndim - s_arr.ndim
    s_b = s_arr.reshape(s_arr.shape + (1,) * extra)
    z = origin * np.exp(-0.5 * s_b) + np.sqrt(1.0 - np.exp(-s_b)) * xi
    return OuSample(z=z, s=s, origin=origin, gate_ok=omega_gate(manifold, z, cfg))


def omega_gate(manifold: Manifold, z: np.ndarray, cfg: GateConfig) -> np.ndarray:
    """True where the ambient point is in the well-conditioned region.

    Torus: everywhere. Sphere: ||z|| >= min_norm. Groups: the smallest
    consecutive eigengap of Z + Z* is >= min_gap (a function of the spectrum
    only, never of the eigenvectors).
    """
    z = np.asarray(z)
    if isinstance(manifold, Torus):
        return np.ones(z.shape[:-1], dtype=bool) if z.ndim > 1 else np.bool_(True)
    if isinstance(manifold, Sphere):
        return np.linalg.norm(z, axis=-1) >= cfg.min_norm
    lam = np.linalg.eigvalsh(z + _adjoint(z))
    gaps = np.diff(lam, axis=-1)
    return np.min(gaps, axis=-1) >= cfg.min_gap


def clip_elapsed(s: float | np.ndarray, cfg: GateConfig):
    """Early-stopping clip: elapsed times below s_min are raised to s_min."""
    return np.maximum(s, cfg.s_min)


def gate_rejection_rate(
    manifold: Manifold,
    cfg: GateConfig,
    s: float,
    n_trials: int,
    rng: np.random.Generator | None = None,
) -> float:
    """Fraction of forward draws from random origins that fail the gate."""
    if n_trials < 100:
        raise ContractError("n_trials must be at least 100")
    if rng is None:
        rng = np.random.default_rng(0)
    points = manifold.random_point(rng, count=n_trials)
    sample = ou_sample(manifold, manifold.lift(points), s, rng, cfg)
    return float(np.mean(~sample.gate_ok))
