"""Synthetic datasets: wrapped Gaussian mixtures and quantum-oscillator
time-evolution operators, plus the torus target density used for likelihood
evaluation and JSONL dataset files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .manifolds import Manifold, Torus, _adjoint, _MatrixGroup, _skew, manifold_from_json
from .numerics import canonicalize_columns, expm_tangent, reorthonormalize

TWO_PI = 2.0 * np.pi


@dataclass
class WrappedGaussianSpec:
    manifold: Manifold
    means: np.ndarray          # (k, *point_shape) stacked component means
    cov_scale: float           # sigma^2, isotropic on the tangent space

    def __post_init__(self):
        self.means = np.asarray(self.means)
        if len(self.means) < 1:
            raise ContractError("need at least one mixture component")
        if self.cov_scale <= 0:
            raise ContractError("cov_scale must be positive")


def sample_wrapped_gaussian(spec: WrappedGaussianSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Mixture draw: pick a mean uniformly, take a tangent Gaussian step.

    Z ~ N(0, sigma^2 I) in an orthonormal tangent frame at the chosen mean,
    X = exp_mean(Z).
    """
    m = spec.manifold
    comp = rng.integers(0, len(spec.means), size=count)
    first = np.asarray(spec.means[0])
    out = np.zeros((count,) + first.shape, dtype=first.dtype)
    sigma = np.sqrt(spec.cov_scale)
    for i in range(len(spec.means)):
        take = np.where(comp == i)[0]
        if take.size == 0:
            continue
        frame = m.tangent_frame(spec.means[i])
        flat_frame = frame.reshape(len(frame), -1)
        coeff = sigma * rng.standard_normal((take.size, len(frame)))
        v = (coeff @ flat_frame).reshape((take.size,) + np.asarray(spec.means[i]).shape)
        base = np.broadcast_to(spec.means[i], v.shape)
        if isinstance(m, _MatrixGroup):
            # raw group exponential, no gauge snap: exp_map's phase/sign
            # canonicalization would teleport draws that cross a gauge-cell
            # boundary, distorting the distance-to-mean law; the lift is
            # gauge-invariant, so downstream training is unaffected either way
            pts = reorthonormalize(base @ expm_tangent(_skew(_adjoint(base) @ v)))
        else:
            pts = m.exp_map(base, v)
        if pts.dtype != out.dtype:
            out = out.astype(pts.dtype)
        out[take] = pts
    return out


@dataclass
class OscillatorSpec:
    n: int                       # retained modes; dataset lives on U(n)
    grid_points: int = 128
    half_width: float = 10.0
    hbar_over_2m: float = 0.5
    evolution_time: float = 1.0
    omega_range: tuple = (2.0, 3.0)
    x0_std: float = 1.0

    def __post_init__(self):
        if self.grid_points < 4 * self.n:
            raise ContractError("grid too coarse: need grid_points >= 4n")
        if self.half_width <= 0:
            raise ContractError("half_width must be positive")


def _grid_and_laplacian(spec: OscillatorSpec):
    x = np.linspace(-spec.half_width, spec.half_width, spec.grid_points)
    h = x[1] - x[0]
    lap = (np.diag(np.full(spec.grid_points - 1, 1.0), 1)
           + np.diag(np.full(spec.grid_points - 1, 1.0), -1)
           + np.diag(np.full(spec.grid_points, -2.0))) / h**2
    return x, lap


def _full_hamiltonian(spec: OscillatorSpec, omega: float, x0: float):
    x, lap = _grid_and_laplacian(spec)
    v = 0.5 * omega**2 * (x - x0) ** 2
    return spec.hbar_over_2m * lap - np.diag(v)


def reference_basis(spec: OscillatorSpec) -> np.ndarray:
    """Top-n eigenvectors (largest eigenvalues) of the fixed reference
    Hamiltonian H0 (omega = 2.5, x0 = 0); all draws share this basis."""
    h0 = _full_hamiltonian(spec, omega=2.5, x0=0.0)
    lam, vec = np.linalg.eigh(h0)
    return vec[:, -spec.n:][:, ::-1]


def oscillator_dataset(spec: OscillatorSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """Canonicalized e^{i t H_n} for random (omega, x0) oscillator Hamiltonians
    projected onto the shared reference basis."""
    basis = reference_basis(spec)
    out = np.zeros((count, spec.n, spec.n), dtype=complex)
    for j in range(count):
        omega = rng.uniform(*spec.omega_range)
        x0 = rng.normal(0.0, spec.x0_std)
        h_full = _full_hamiltonian(spec, omega, x0)
        h_n = basis.T @ h_full @ basis
        h_n = 0.5 * (h_n + h_n.T)
        lam, vec = np.linalg.eigh(h_n)
        out[j] = (vec * np.exp(1j * spec.evolution_time * lam)) @ vec.conj().T
    return canonicalize_columns(out)


def oscillator_unitary(spec: OscillatorSpec, omega: float, x0: float) -> np.ndarray:
    """Single (omega, x0) operator, before canonicalization."""
    basis = reference_basis(spec)
    h_n = basis.T @ _full_hamiltonian(spec, omega, x0) @ basis
    h_n = 0.5 * (h_n + h_n.T)
    lam, vec = np.linalg.eigh(h_n)
    return (vec * np.exp(1j * spec.evolution_time * lam)) @ vec.conj().T


def wrapped_gaussian_log_density(spec: WrappedGaussianSpec, x: np.ndarray, truncation: int = 6) -> np.ndarray:
    """log of the wrapped Gaussian mixture density on the torus.

    Isotropic covariance factorizes the wrap sum per coordinate:
    (1/k) sum_i prod_c sum_{m=-K..K} N(x_c + 2 pi m; mean_ic, sigma^2).
    Log-sum-exp stabilized; batched over leading axes of x.
    """
    if not isinstance(spec.manifold, Torus):
        raise ContractError("log density is implemented for the torus only")
    if truncation < 1:
        raise ContractError("truncation must be >= 1")
    x = np.asarray(x, dtype=float)
    sigma2 = spec.cov_scale
    wraps = TWO_PI * np.arange(-truncation, truncation + 1)
    # delta[..., i, c, m] = x_c + 2 pi m - mean_ic
    delta = x[..., None, :, None] - spec.means[:, :, None] + wraps[None, None, :]
    log_terms = -0.5 * delta**2 / sigma2 - 0.5 * np.log(TWO_PI * sigma2)
    per_coord = _logsumexp(log_terms, axis=-1)
    per_comp = per_coord.sum(axis=-1)
    return _logsumexp(per_comp, axis=-1) - np.log(len(spec.means))


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    hi = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(hi, axis=axis) + np.log(np.sum(np.exp(a - hi), axis=axis))


# -- dataset files ----------------------------------------------------------------

def save_dataset(path: str, manifold: Manifold, points: np.ndarray, meta: dict | None = None) -> None:
    """JSONL: header line with the manifold spec, then one point per line."""
    points = np.asarray(points)
    header = {"manifold": manifold.to_json(), "count": int(len(points))}
    if meta:
        header["meta"] = meta
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for p in points:
            if np.iscomplexobj(p):
                fh.write(json.dumps({"re": p.real.tolist(), "im": p.imag.tolist()}) + "\n")
            else:
                fh.write(json.dumps({"v": p.tolist()}) + "\n")


def load_dataset(path: str):
    """Returns (manifold, points array, header dict)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        manifold = manifold_from_json(header["manifold"])
        pts = []
        for line in fh:
            doc = json.loads(line)
            if "re" in doc:
                pts.append(np.asarray(doc["re"]) + 1j * np.asarray(doc["im"]))
            else:
                pts.append(np.asarray(doc["v"], dtype=float))
    return manifold, np.stack(pts), header
