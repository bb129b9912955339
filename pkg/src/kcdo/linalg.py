"""Regularised symmetric solves, Kronecker-structured inversion and the
finite-sample bound calculator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .kernels import KernelSpec, as_samples, gram

__all__ = [
    "SingularSystemError",
    "SymmetricFactorization",
    "solve_regularized",
    "pseudo_solve",
    "KroneckerGram",
    "kron_solve",
    "kron_jitter",
    "BoundReport",
    "prop2_bound",
    "tikhonov_schedule",
    "SpanBasis",
]

SYMMETRY_TOL = 1e-12
EIG_RCOND = 1e-12
KRON_JITTER = 1e-10
_BELOW_ONE = float(np.nextafter(1.0, 0.0))


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a system is singular and no regularisation can rescue it."""


def _check_symmetric(G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {G.shape}")
    n = G.shape[0]
    if n == 0:
        return G
    # Row blocks keep the temporaries small for large Gram matrices.
    step = max(1, (1 << 22) // n)
    scale = 1.0
    worst = 0.0
    for s in range(0, n, step):
        blk = G[s : s + step]
        scale = max(scale, float(np.max(np.abs(blk))))
        worst = max(worst, float(np.max(np.abs(blk - G[:, s : s + step].T))))
    if worst > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return G


def _add_diagonal(A: np.ndarray, alpha: float) -> None:
    if alpha:
        A.flat[:: A.shape[0] + 1] += alpha


class SymmetricFactorization:
    """Reusable factorisation of ``G + alpha I`` for a symmetric ``G``.

    A Cholesky factorisation is attempted first. If it fails and ``alpha > 0``
    the system is solved through an eigendecomposition with eigenvalues below
    ``1e-12 * lambda_max`` treated as zero. With ``alpha == 0`` a numerically
    singular matrix raises :class:`SingularSystemError`.

    With ``overwrite=True`` the caller's matrix is consumed to hold the
    factor (no copy); the eigendecomposition fallback is then unavailable and
    a failed Cholesky raises :class:`SingularSystemError`.

    The object is immutable after construction and safe to share.
    """

    def __init__(self, G, alpha: float = 0.0, fallback: bool = True, overwrite: bool = False):
        G = _check_symmetric(G)
        alpha = float(alpha)
        if not (alpha >= 0.0 and math.isfinite(alpha)):
            raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
        self.alpha = alpha
        self.n = G.shape[0]
        self.method = "cholesky"
        if overwrite and G.flags.c_contiguous:
            A = G.T  # Fortran-ordered view of the same symmetric matrix
        elif overwrite:
            A = G
        else:
            A = np.array(G, order="F")
        _add_diagonal(A, alpha)
        try:
            self._chol = la.cho_factor(A, lower=True, overwrite_a=True, check_finite=False)
            if not np.all(np.diag(self._chol[0]) > 0):
                raise np.linalg.LinAlgError
            return
        except (np.linalg.LinAlgError, ValueError):
            self._chol = None
        if overwrite or not fallback:
            raise SingularSystemError("matrix is not positive definite")
        A = np.array(G)
        _add_diagonal(A, alpha)
        w, V = np.linalg.eigh(A)
        lam_max = float(np.max(np.abs(w))) if w.size else 0.0
        keep = w > EIG_RCOND * lam_max
        if lam_max == 0.0 or (alpha == 0.0 and not np.all(keep)):
            raise SingularSystemError("singular system with alpha = 0")
        self.method = "eigh"
        self._V = V[:, keep]
        self._winv = 1.0 / w[keep]

    def solve(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if B.shape[0] != self.n:
            raise ValueError(f"right-hand side has {B.shape[0]} rows, expected {self.n}")
        if self._chol is not None:
            return la.cho_solve(self._chol, B, check_finite=False)
        coef = self._V.T @ B
        coef = coef * (self._winv[:, None] if B.ndim == 2 else self._winv)
        return self._V @ coef


def solve_regularized(G, alpha: float, B) -> np.ndarray:
    """Solve ``(G + alpha I) X = B`` for symmetric positive semidefinite ``G``."""
    return SymmetricFactorization(G, alpha).solve(B)


def pseudo_solve(G, B, rcond: float = EIG_RCOND) -> np.ndarray:
    """Minimum-norm solve of ``G X = B`` via a truncated eigendecomposition."""
    G = _check_symmetric(G)
    w, V = np.linalg.eigh(G)
    lam_max = float(np.max(np.abs(w))) if w.size else 0.0
    if lam_max == 0.0:
        raise SingularSystemError("zero matrix has no pseudo-solve")
    keep = w > rcond * lam_max
    V = V[:, keep]
    coef = V.T @ np.asarray(B, dtype=float)
    inv = 1.0 / w[keep]
    coef = coef * (inv[:, None] if coef.ndim == 2 else inv)
    return V @ coef


@dataclass(frozen=True)
class KroneckerGram:
    """``G_1 kron ... kron G_d`` stored by its factors.

    The flattening convention matches :func:`numpy.kron`: the first factor
    indexes the slowest-varying coordinate, as produced by a grid built with
    ``itertools.product`` or ``meshgrid(..., indexing="ij")``.
    """

    factors: tuple[np.ndarray, ...]

    def __post_init__(self):
        fs = tuple(_check_symmetric(f) for f in self.factors)
        if not fs:
            raise ValueError("need at least one factor")
        object.__setattr__(self, "factors", fs)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def size(self) -> int:
        return int(np.prod(self.sizes))

    def matvec(self, b) -> np.ndarray:
        return _apply_factorwise(self.sizes, [lambda X, f=f: f @ X for f in self.factors], b)

    def to_dense(self) -> np.ndarray:
        """Materialise the full matrix (testing only)."""
        out = self.factors[0]
        for f in self.factors[1:]:
            out = np.kron(out, f)
        return out

    @classmethod
    def from_grid(cls, spec: KernelSpec, axes: Sequence[np.ndarray]) -> "KroneckerGram":
        """Factor Grams of a product-form kernel on a Cartesian grid."""
        if spec.family == "product":
            factors = spec.factors
        else:
            factors = [KernelSpec(spec.family, (s,)) for s in spec.bandwidth]
        if len(axes) != len(factors):
            raise ValueError("one axis per kernel dimension required")
        return cls(tuple(gram(f, np.asarray(ax, float)[:, None]) for f, ax in zip(factors, axes)))


def _apply_factorwise(sizes, ops, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    total = int(np.prod(sizes))
    if b.shape[0] != total:
        raise ValueError(f"vector has length {b.shape[0]}, Kronecker size is {total}")
    extra = b.shape[1:]
    X = b.reshape(tuple(sizes) + extra)
    for axis, op in enumerate(ops):
        X = np.moveaxis(X, axis, 0)
        shp = X.shape
        X = op(X.reshape(shp[0], -1)).reshape(shp)
        X = np.moveaxis(X, 0, axis)
    return X.reshape((total,) + extra)


def kron_jitter(G_f: np.ndarray) -> float:
    """Per-factor numerical jitter ``1e-10 * trace(G_f) / m_f``."""
    return KRON_JITTER * float(np.trace(G_f)) / G_f.shape[0]


def kron_solve(KG: KroneckerGram, B) -> np.ndarray:
    """``(G_1 kron ... kron G_d)^{-1} B`` without forming the full matrix.

    Each factor is Cholesky-factorised after adding :func:`kron_jitter`,
    and the inverse is applied along one tensor axis at a time. The result
    approximates ``G^{-1} B``; it is *not* a solve with ``G + alpha I``.
    """
    facts = []
    for G_f in KG.factors:
        try:
            facts.append(SymmetricFactorization(G_f, kron_jitter(G_f), fallback=False))
        except SingularSystemError as exc:
            raise SingularSystemError("Kronecker factor singular beyond jitter rescue") from exc
    return _apply_factorwise(KG.sizes, [f.solve for f in facts], B)


@dataclass(frozen=True)
class BoundReport:
    """Finite-sample bound on the estimation error of the regularised solution."""

    M: int
    N: int
    a: float
    b: float
    alpha: float
    c: float
    mu_norm: float
    epsilon: float
    probability: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _check_exponent(name, v):
    if not (0.0 < v < 0.5):
        raise ValueError(f"{name} must lie in (0, 1/2), got {v}")


def prop2_bound(M: int, N: int, a: float, b: float, alpha: float, c: float = 1.0,
                mu_norm: float | None = None, embedding=None) -> BoundReport:
    """Error bound ``epsilon`` on the RKHS distance between regularised
    solutions with empirical and exact operators, and the probability with
    which it holds.

    ``mu_norm`` is the RKHS norm of the embedding of the target measure; when
    omitted it is replaced by the plug-in estimate ``sqrt(w^T G w)`` of
    ``embedding``.
    """
    _check_exponent("a", a)
    _check_exponent("b", b)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not c > 0:
        raise ValueError(f"c must be positive, got {c}")
    if M < 1 or N < 1:
        raise ValueError("sample counts must be positive")
    if mu_norm is None:
        if embedding is None:
            raise ValueError("supply mu_norm or an embedding for the plug-in estimate")
        mu_norm = embedding.norm()
    if mu_norm < 0:
        raise ValueError("mu_norm must be non-negative")
    eps_n = float(N) ** (-2 * a)
    eps_m = float(M) ** (-2 * b)
    epsilon = eps_m / alpha**2 * (mu_norm + eps_n) + eps_n / alpha
    # Each Hoeffding factor is clamped separately; two negative factors must
    # not multiply into a positive probability.
    p_mu = max(0.0, 1.0 - 2.0 * math.exp(-float(N) ** (1 - 2 * a) / (8 * c**2)))
    p_cov = max(0.0, 1.0 - 2.0 * math.exp(-float(M) ** (1 - 2 * b) / (8 * c**4)))
    # The exact product is < 1; keep that true after rounding.
    prob = min(p_mu * p_cov, _BELOW_ONE)
    return BoundReport(int(M), int(N), float(a), float(b), float(alpha), float(c),
                       float(mu_norm), float(epsilon), prob)


def tikhonov_schedule(M: int, N: int, a: float = 0.49, b: float = 0.49,
                      c_prime: float = 0.99999) -> float:
    """Consistent regularisation ``max(M^-b, N^-2a) ** c_prime``."""
    _check_exponent("a", a)
    _check_exponent("b", b)
    if not (0.0 < c_prime < 1.0):
        raise ValueError(f"c_prime must lie in (0, 1), got {c_prime}")
    if M < 1 or N < 1:
        raise ValueError("sample counts must be positive")
    return max(float(M) ** (-b), float(N) ** (-2 * a)) ** c_prime


class SpanBasis:
    """Orthonormal coordinates for the span of ``k(b_j, .)`` over basis points.

    ``coords(X)`` maps points to coordinates ``xi(x)`` such that
    ``<k(x, .), k(y, .)> ~= xi(x) . xi(y)``; any RKHS element supported on
    points whose feature maps lie in the span is represented exactly, so
    inner products and norms become Euclidean. :meth:`residual` reports
    ``k(x, x) - |xi(x)|^2``, the squared distance of ``k(x, .)`` to the span.
    """

    def __init__(self, kernel: KernelSpec, points, rcond: float = 1e-13):
        self.kernel = kernel
        self.points = as_samples(points, kernel.dimension, "basis points")
        w, V = np.linalg.eigh(gram(kernel, self.points))
        keep = w > rcond * w[-1]
        self._proj = V[:, keep] / np.sqrt(w[keep])
        self.rank = int(keep.sum())

    def coords(self, X, chunk: int = 20000) -> np.ndarray:
        X = as_samples(X, self.kernel.dimension)
        out = np.empty((X.shape[0], self.rank))
        for s in range(0, X.shape[0], chunk):
            out[s : s + chunk] = gram(self.kernel, X[s : s + chunk], self.points) @ self._proj
        return out

    def mean_coords(self, X, weights=None, chunk: int = 20000) -> np.ndarray:
        """Coordinates of ``sum_i w_i k(x_i, .)`` (uniform weights by default)."""
        X = as_samples(X, self.kernel.dimension)
        n = X.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
        acc = np.zeros(self.rank)
        for s in range(0, n, chunk):
            acc += w[s : s + chunk] @ self.coords(X[s : s + chunk])
        return acc

    def residual(self, X) -> np.ndarray:
        C = self.coords(X)
        return 1.0 - np.einsum("ij,ij->i", C, C)
