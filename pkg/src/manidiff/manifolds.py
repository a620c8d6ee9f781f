"""The four supported manifolds: flat torus, sphere, SO(n), U(n).

Each manifold bundles the projection phi from ambient Euclidean space, its
restricted right inverse psi (lift), the exponential map, geodesic distance,
and tangent utilities. Points and ambient vectors are plain numpy arrays:

  * torus  — angle vectors in [0, 2pi)^d, ambient R^d;
  * sphere — unit vectors in R^d (the (d-1)-sphere), ambient R^d;
  * so(n)  — real orthogonal matrices with det +1, ambient R^{n x n};
  * u(n)   — complex unitary matrices, ambient C^{n x n} (2n^2 real coords).

Group points are always kept phase/sign-canonicalized (see numerics), so
equality of group elements is testable up to tolerance. All operations accept
leading batch axes.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DegeneracyError, SingularityError
from .numerics import canonicalize_columns, expm_tangent, reorthonormalize, sym_eig

TWO_PI = 2.0 * np.pi


def _adjoint(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def _skew(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m - _adjoint(m))


class Manifold:
    """Base interface; concrete geometry lives in the subclasses."""

    kind: str = ""

    # -- identity / serialization -------------------------------------------------
    @property
    def name(self) -> str:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    # -- dimensions ---------------------------------------------------------------
    @property
    def ambient_dim(self) -> int:
        """Number of real coordinates of the ambient space phi maps from."""
        raise NotImplementedError

    @property
    def intrinsic_dim(self) -> int:
        raise NotImplementedError

    # -- flat real coordinates for ambient arrays ---------------------------------
    def ambient_to_flat(self, z: np.ndarray) -> np.ndarray:
        """View an ambient array as flat real coordinates (batch axes kept)."""
        return np.asarray(z, dtype=float)

    def flat_to_ambient(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float)

    # -- core operations ------------------------------------------------------------
    def project(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def lift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def exp_map(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def geodesic_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tangent_project(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- support used by data synthesis and the nets -------------------------------
    def random_point(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        """Uniform (torus/sphere) or Haar (groups) random points."""
        raise NotImplementedError

    def tangent_frame(self, x: np.ndarray) -> np.ndarray:
        """Orthonormal basis of the tangent space at x, shape (intrinsic_dim, *ambient)."""
        raise NotImplementedError

    def features(self, x: np.ndarray) -> np.ndarray:
        """Model input features for a point (batch axes kept)."""
        raise NotImplementedError

    @property
    def feature_dim(self) -> int:
        raise NotImplementedError

    def validate_point(self, x: np.ndarray) -> None:
        """Raise ContractError when x violates the point invariants."""
        raise NotImplementedError


class Torus(Manifold):
    kind = "torus"

    def __init__(self, dim: int):
        if dim < 1:
            raise ContractError("torus dimension must be >= 1")
        self.dim = int(dim)

    @property
    def name(self) -> str:
        return f"torus-{self.dim}"

    def to_json(self) -> dict:
        return {"kind": "torus", "dim": self.dim}

    @property
    def ambient_dim(self) -> int:
        return self.dim

    @property
    def intrinsic_dim(self) -> int:
        return self.dim

    def project(self, z: np.ndarray) -> np.ndarray:
        return np.mod(np.asarray(z, dtype=float), TWO_PI)

    def lift(self, x: np.ndarray) -> np.ndarray:
        # centered section into [-pi, pi): a cluster of points near angle 0
        # gets one connected set of representatives instead of splitting
        # across the 0 / 2pi seam, which would leave the regression target
        # with an irreducible branch ambiguity
        return np.mod(np.asarray(x, dtype=float) + np.pi, TWO_PI) - np.pi

    def exp_map(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.mod(np.asarray(x, dtype=float) + np.asarray(v, dtype=float), TWO_PI)

    def geodesic_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        delta = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        delta = np.minimum(delta, TWO_PI - delta)
        return np.sqrt(np.sum(delta**2, axis=-1))

    def tangent_project(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.asarray(w, dtype=float)

    def random_point(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        shape = (self.dim,) if count is None else (count, self.dim)
        return rng.uniform(0.0, TWO_PI, size=shape)

    def tangent_frame(self, x: np.ndarray) -> np.ndarray:
        return np.eye(self.dim)

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.concatenate([np.cos(x), np.sin(x)], axis=-1)

    @property
    def feature_dim(self) -> int:
        return 2 * self.dim

    def validate_point(self, x: np.ndarray) -> None:
        x = np.asarray(x)
        if x.shape[-1] != self.dim:
            raise ContractError(f"torus point has wrong dimension {x.shape}")
        if np.any(x < 0.0) or np.any(x >= TWO_PI):
            raise ContractError("torus point outside [0, 2pi)")


class Sphere(Manifold):
    """Unit sphere S^{d-1} embedded in R^d ('sphere d' names the ambient dim)."""

    kind = "sphere"

    def __init__(self, dim: int):
        if dim < 2:
            raise ContractError("sphere ambient dimension must be >= 2")
        self.dim = int(dim)

    @property
    def name(self) -> str:
        return f"sphere-{self.dim}"

    def to_json(self) -> dict:
        return {"kind": "sphere", "dim": self.dim}

    @property
    def ambient_dim(self) -> int:
        return self.dim

    @property
    def intrinsic_dim(self) -> int:
        return self.dim - 1

    def project(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        norm = np.linalg.norm(z, axis=-1)
        if np.any(norm <= 1e-8):
            raise SingularityError("sphere projection of a near-zero vector")
        return z / norm[..., None]

    def lift(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float, copy=True)

    def exp_map(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v, axis=-1)
        small = nv < 1e-14
        safe = np.where(small, 1.0, nv)
        out = np.cos(nv)[..., None] * x + np.sin(nv)[..., None] * (v / safe[..., None])
        # the closed form preserves the norm only for exactly tangent v;
        # exp_map(x, 0) must return x exactly
        out = out / np.linalg.norm(out, axis=-1)[..., None]
        return np.where(small[..., None], x, out)

    def geodesic_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dot = np.sum(np.asarray(x, dtype=float) * np.asarray(y, dtype=float), axis=-1)
        return np.arccos(np.clip(dot, -1.0, 1.0))

    def tangent_project(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        return w - np.sum(w * x, axis=-1)[..., None] * x

    def random_point(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        shape = (self.dim,) if count is None else (count, self.dim)
        g = rng.standard_normal(shape)
        return g / np.linalg.norm(g, axis=-1)[..., None]

    def tangent_frame(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dim
        e1 = np.zeros(d)
        e1[0] = 1.0
        if abs(x[0] - 1.0) < 1e-12:
            return np.eye(d)[1:]
        # Householder reflection sending e1 to x; remaining columns span x-perp
        v = x - e1
        h = np.eye(d) - 2.0 * np.outer(v, v) / np.dot(v, v)
        return h[:, 1:].T

    def features(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)

    @property
    def feature_dim(self) -> int:
        return self.dim

    def validate_point(self, x: np.ndarray) -> None:
        x = np.asarray(x)
        if x.shape[-1] != self.dim:
            raise ContractError(f"sphere point has wrong dimension {x.shape}")
        if np.any(np.abs(np.linalg.norm(x, axis=-1) - 1.0) > 1e-10):
            raise ContractError("sphere point is not unit norm")


class _MatrixGroup(Manifold):
    """Shared implementation for SO(n) and U(n)."""

    complex_entries: bool = False

    def __init__(self, n: int):
        if n < 2:
            raise ContractError("matrix group size must be >= 2")
        self.n = int(n)
        # psi's spectrum: Lambda = diag(n, n-1, ..., 1)/n, min eigengap 1/n
        self.lift_spectrum = np.arange(self.n, 0, -1, dtype=float) / self.n

    @property
    def ambient_dim(self) -> int:
        return 2 * self.n * self.n if self.complex_entries else self.n * self.n

    def ambient_to_flat(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        if self.complex_entries:
            z = z.astype(complex)
            parts = np.stack([z.real, z.imag], axis=-1)
            return parts.reshape(z.shape[:-2] + (2 * self.n * self.n,))
        return np.asarray(z, dtype=float).reshape(z.shape[:-2] + (self.n * self.n,))

    def flat_to_ambient(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.complex_entries:
            parts = v.reshape(v.shape[:-1] + (self.n, self.n, 2))
            return parts[..., 0] + 1j * parts[..., 1]
        return v.reshape(v.shape[:-1] + (self.n, self.n))

    def _canonicalize(self, u: np.ndarray) -> np.ndarray:
        return canonicalize_columns(u, ensure_det_one=not self.complex_entries)

    def spectral_project(self, z: np.ndarray):
        """(canonical point, eigvals, min_gap) of z + z^*; shared with targets."""
        z = np.asarray(z)
        m = z + _adjoint(z)
        sd = sym_eig(m)
        u = self._canonicalize(sd.eigvecs)
        return u, sd.eigvals, sd.min_gap

    def project(self, z: np.ndarray) -> np.ndarray:
        u, _, min_gap = self.spectral_project(z)
        if np.any(min_gap <= 1e-12):
            raise DegeneracyError("eigengap too small for group projection")
        return u

    def lift(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        lam = self.lift_spectrum
        m = np.einsum("...ij,j,...kj->...ik", x, lam, np.conj(x))
        # strict upper triangle of m plus half its diagonal (so t + t^* = m)
        t = np.triu(m, 1).copy()
        idx = np.arange(self.n)
        t[..., idx, idx] = 0.5 * np.einsum("...ii->...i", m)
        if not self.complex_entries:
            t = t.real
        return t

    def exp_map(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        a = _skew(_adjoint(x) @ np.asarray(v))
        norms = np.linalg.norm(a, axis=(-2, -1))
        if np.all(norms == 0.0):
            return np.array(x, copy=True)
        q = x @ expm_tangent(a)
        q = self._canonicalize(reorthonormalize(q))
        zero = norms == 0.0
        if np.any(zero):
            # exp_map(x, 0) must return x exactly
            q = np.where(zero[..., None, None], x, q)
        return q

    def geodesic_distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        w = _adjoint(np.asarray(x)) @ np.asarray(y)
        # w is orthogonal/unitary; ||log w||_F from its eigenphases
        ev = np.linalg.eigvals(w.astype(complex))
        theta = np.angle(ev)
        return np.sqrt(np.sum(theta**2, axis=-1))

    def tangent_project(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        return x @ _skew(_adjoint(x) @ np.asarray(w))

    def random_point(self, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
        shape = (self.n, self.n) if count is None else (count, self.n, self.n)
        g = rng.standard_normal(shape)
        if self.complex_entries:
            g = g + 1j * rng.standard_normal(shape)
        q, r = np.linalg.qr(g)
        diag = np.einsum("...ii->...i", r)
        if self.complex_entries:
            ph = diag / np.abs(diag)
        else:
            ph = np.where(diag >= 0, 1.0, -1.0)
        q = q * ph[..., None, :]
        if not self.complex_entries:
            # Haar on O(n) -> SO(n): flip last column on the det=-1 branch
            det = np.linalg.det(q)
            q = q.copy()
            q[..., :, -1] *= np.where(det < 0, -1.0, 1.0)[..., None]
        return self._canonicalize(q)

    def _skew_basis(self) -> np.ndarray:
        n = self.n
        basis = []
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        for i in range(n):
            for j in range(i + 1, n):
                b = np.zeros((n, n), dtype=complex if self.complex_entries else float)
                b[i, j] = inv_sqrt2
                b[j, i] = -inv_sqrt2
                basis.append(b)
        if self.complex_entries:
            for i in range(n):
                for j in range(i + 1, n):
                    b = np.zeros((n, n), dtype=complex)
                    b[i, j] = 1j * inv_sqrt2
                    b[j, i] = 1j * inv_sqrt2
                    basis.append(b)
            for k in range(n):
                b = np.zeros((n, n), dtype=complex)
                b[k, k] = 1j
                basis.append(b)
        return np.stack(basis)

    def tangent_frame(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self._skew_basis()

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.ambient_to_flat(np.asarray(x))

    @property
    def feature_dim(self) -> int:
        return self.ambient_dim

    def validate_point(self, x: np.ndarray) -> None:
        x = np.asarray(x)
        if x.shape[-2:] != (self.n, self.n):
            raise ContractError(f"group point has wrong shape {x.shape}")
        gram_err = np.linalg.norm(_adjoint(x) @ x - np.eye(self.n), axis=(-2, -1))
        if np.any(gram_err > 1e-8):
            raise ContractError("group point is not orthogonal/unitary within 1e-8")
        if not self.complex_entries:
            if np.any(np.abs(np.linalg.det(x) - 1.0) > 1e-8):
                raise ContractError("SO(n) point does not have det +1")
        canon = self._canonicalize(x)
        if np.max(np.abs(canon - x)) > 1e-8:
            raise ContractError("group point is not canonicalized")


class SpecialOrthogonal(_MatrixGroup):
    kind = "so"
    complex_entries = False

    @property
    def name(self) -> str:
        return f"so-{self.n}"

    def to_json(self) -> dict:
        return {"kind": "so", "n": self.n}

    @property
    def intrinsic_dim(self) -> int:
        return self.n * (self.n - 1) // 2


class Unitary(_MatrixGroup):
    kind = "u"
    complex_entries = True

    @property
    def name(self) -> str:
        return f"u-{self.n}"

    def to_json(self) -> dict:
        return {"kind": "u", "n": self.n}

    @property
    def intrinsic_dim(self) -> int:
        return self.n * self.n


MANIFOLD_KINDS = {
    "torus": Torus,
    "sphere": Sphere,
    "so": SpecialOrthogonal,
    "u": Unitary,
}


def make_manifold(kind: str, dim: int | None = None, n: int | None = None) -> Manifold:
    kind = kind.lower()
    if kind not in MANIFOLD_KINDS:
        raise ContractError(f"unknown manifold kind {kind!r}")
    if kind in ("torus", "sphere"):
        if dim is None:
            raise ContractError(f"{kind} requires dim")
        return MANIFOLD_KINDS[kind](dim)
    if n is None:
        raise ContractError(f"{kind} requires n")
    return MANIFOLD_KINDS[kind](n)


def manifold_from_json(doc: dict) -> Manifold:
    return make_manifold(doc["kind"], dim=doc.get("dim"), n=doc.get("n"))
