"""Density reconstruction from kernel mean embeddings.

Given an embedding ``mu = sum_a w_a k(a, .)`` and samples ``z_1..z_M`` of a
reference measure, the regularised inverse problem ``(C + alpha I) u = mu``
is solved with the empirical covariance operator ``C`` of the reference
samples. The solution is returned as ``u = sum_i beta_i k(z_i, .)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .kernels import KernelSpec, as_samples, density_mass, gram
from .linalg import KroneckerGram, SymmetricFactorization, pseudo_solve, solve_regularized

__all__ = [
    "EmbeddingCoefficients",
    "ReferenceMeasure",
    "DensityEstimate",
    "embed",
    "uniform_reference",
    "reconstruct_density",
    "evaluate",
    "l1_error",
    "normalize_reference",
    "METHODS",
]

METHODS = ("restricted", "representer")


@dataclass(frozen=True)
class EmbeddingCoefficients:
    """The RKHS element ``sum_i weights[i] * k(anchors[i], .)``."""

    anchors: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        A = as_samples(self.anchors, self.kernel.dimension, "anchors")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != A.shape[0]:
            raise ValueError("one weight per anchor required")
        object.__setattr__(self, "anchors", A)
        object.__setattr__(self, "weights", w)

    def __call__(self, Y) -> np.ndarray:
        """Evaluate the element at the rows of ``Y``."""
        return gram(self.kernel, Y, self.anchors) @ self.weights

    def norm_squared(self) -> float:
        w = self.weights
        return float(w @ gram(self.kernel, self.anchors) @ w)

    def norm(self) -> float:
        return math.sqrt(max(self.norm_squared(), 0.0))

    def scaled(self, factor: float) -> "EmbeddingCoefficients":
        return EmbeddingCoefficients(self.anchors, factor * self.weights, self.kernel)


def embed(samples, kernel: KernelSpec, weights=None) -> EmbeddingCoefficients:
    """Empirical mean embedding ``N^{-1} sum_i k(x_i, .)``."""
    X = as_samples(samples, kernel.dimension)
    n = X.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    return EmbeddingCoefficients(X, w, kernel)


@dataclass(frozen=True)
class ReferenceMeasure:
    """Samples of a finite reference measure on a box.

    ``weights`` are per-point quadrature weights summing to one; ``None``
    means the uniform ``1/M``. Supplying them is the hook for importance
    sampling a non-uniform reference measure. ``total_mass`` is the measure
    of the whole box (its Lebesgue volume for a uniform measure).
    """

    points: np.ndarray
    total_mass: float
    mode: str
    bounds: np.ndarray
    axes: tuple[np.ndarray, ...] | None = None
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        Z = as_samples(self.points, bounds.shape[0], "reference points")
        object.__setattr__(self, "points", Z)
        object.__setattr__(self, "bounds", bounds)
        if self.mode not in ("iid_uniform", "grid", "custom"):
            raise ValueError(f"unknown reference mode {self.mode!r}")
        if not self.total_mass > 0:
            raise ValueError("total_mass must be positive")
        if np.any(Z < bounds[:, 0]) or np.any(Z > bounds[:, 1]):
            raise ValueError("reference points must lie inside the bounds")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != Z.shape[0] or np.any(w <= 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
                raise ValueError("weights must be positive, one per point, summing to one")
            object.__setattr__(self, "weights", w)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def uniform(self) -> bool:
        return self.weights is None

    def quadrature_weights(self) -> np.ndarray:
        return np.full(self.M, 1.0 / self.M) if self.weights is None else self.weights

    def kronecker_gram(self, kernel: KernelSpec) -> KroneckerGram:
        """Factorised Gram of a product-form kernel on this grid."""
        if self.axes is None:
            raise ValueError("Kronecker structure needs a grid reference measure")
        return KroneckerGram.from_grid(kernel, self.axes)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "M": self.M,
            "total_mass": self.total_mass,
            "bounds": self.bounds.tolist(),
        }


def _as_bounds(bounds) -> np.ndarray:
    b = np.asarray(bounds, dtype=float)
    if b.ndim == 1:
        b = b.reshape(1, 2) if b.size == 2 else b
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("bounds must be (lo, hi) pairs, one per dimension")
    if not np.all(np.isfinite(b)) or np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("empty box: every upper bound must exceed its lower bound")
    return b


def grid_side(M: int, d: int) -> int:
    """Integer ``m`` with ``m ** d == M``; raises if none exists."""
    m = int(round(M ** (1.0 / d)))
    for cand in (m - 1, m, m + 1):
        if cand >= 1 and cand**d == M:
            return cand
    raise ValueError(f"grid mode needs M to be a perfect {d}-th power, got M={M}")


def uniform_reference(bounds, M: int, mode: str = "grid", seed=None) -> ReferenceMeasure:
    """Uniform (Lebesgue) reference measure on a box.

    ``grid`` places cell centres of a regular lattice with ``M ** (1/d)``
    cells per axis, so averaging over the points is the midpoint rule;
    ``iid_uniform`` draws ``M`` points from the uniform distribution.
    """
    b = _as_bounds(bounds)
    d = b.shape[0]
    if M < 1:
        raise ValueError("M must be at least 1")
    mass = float(np.prod(b[:, 1] - b[:, 0]))
    if mode == "grid":
        m = grid_side(M, d)
        axes = tuple(lo + (np.arange(m) + 0.5) * (hi - lo) / m for lo, hi in b)
        mesh = np.meshgrid(*axes, indexing="ij")
        Z = np.stack([g.reshape(-1) for g in mesh], axis=1)
        return ReferenceMeasure(Z, mass, "grid", b, axes)
    if mode == "iid_uniform":
        rng = np.random.default_rng(seed)
        Z = rng.uniform(b[:, 0], b[:, 1], size=(M, d))
        return ReferenceMeasure(Z, mass, "iid_uniform", b)
    raise ValueError(f"unknown reference mode {mode!r}")


@dataclass(frozen=True)
class DensityEstimate:
    """The function ``y -> sum_i beta[i] * k(ref_points[i], y)``."""

    ref_points: np.ndarray
    beta: np.ndarray
    kernel: KernelSpec
    normalized: bool = False

    def __post_init__(self):
        Z = as_samples(self.ref_points, self.kernel.dimension, "reference points")
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if beta.shape[0] != Z.shape[0]:
            raise ValueError("one coefficient per reference point required")
        object.__setattr__(self, "ref_points", Z)
        object.__setattr__(self, "beta", beta)

    def __call__(self, Y) -> np.ndarray:
        return evaluate(self, Y)

    def mass(self) -> float:
        """Integral over R^d (the kernel must be a density family)."""
        return float(self.beta.sum()) * density_mass(self.kernel)


def reconstruct_density(mu: EmbeddingCoefficients, ref: ReferenceMeasure, alpha: float,
                        method: str = "restricted") -> DensityEstimate:
    """Regularised reconstruction of ``dP/dq`` from the embedding ``mu``.

    Parameters
    ----------
    mu : EmbeddingCoefficients
        Embedding of the target measure.
    ref : ReferenceMeasure
        Samples ``z_i`` defining the empirical covariance operator.
    alpha : float
        Tikhonov regularisation, > 0.
    method : {"restricted", "representer"}
        ``restricted``: ``beta = M^-2 (G_Z + alpha I)^-2 K_ZA w``, the restricted
        inverse used by the conditional density operator.
        ``representer``: Galerkin solution of
        ``(M^-1 G_Z + alpha I) G_Z beta = K_ZA w``; its values at the
        reference points equal those of the exact empirical solution.
        The two agree only up to scale, so compare them after normalising.

    Returns
    -------
    DensityEstimate
        Unnormalised, with raw (possibly negative) coefficients.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if ref.dimension != mu.kernel.dimension:
        raise ValueError("reference measure and kernel dimensions differ")
    G = gram(mu.kernel, ref.points)
    s = gram(mu.kernel, ref.points, mu.anchors) @ mu.weights
    if method == "restricted":
        F = SymmetricFactorization(G, alpha)
        if ref.uniform:
            beta = F.solve(F.solve(s)) / ref.M**2
        else:
            d = ref.weights
            beta = d * F.solve(F.solve(d * s))
    else:
        if ref.uniform:
            v = solve_regularized(G / ref.M, alpha, s)
        else:
            r = np.sqrt(ref.weights)
            v = solve_regularized(r[:, None] * G * r[None, :], alpha, r * s) / r
        beta = pseudo_solve(G, v)
    return DensityEstimate(ref.points, beta, mu.kernel)


def evaluate(est: DensityEstimate, Y) -> np.ndarray:
    """``v_j = sum_i beta_i k(z_i, y_j)``."""
    return gram(est.kernel, Y, est.ref_points) @ est.beta


Density = Union[DensityEstimate, Callable[[np.ndarray], np.ndarray]]


def _values(f: Density, Z: np.ndarray) -> np.ndarray:
    if isinstance(f, DensityEstimate):
        return evaluate(f, Z)
    return np.asarray(f(Z), dtype=float).reshape(-1)


def l1_error(est: Density, truth: Density, ref: ReferenceMeasure) -> float:
    """Quadrature estimate of ``int |est - truth| d(ref)`` over the box.

    Computed as ``total_mass * sum_i w_i |est(z_i) - truth(z_i)|`` with the
    reference quadrature weights ``w_i`` (``1/M`` when uniform).
    """
    diff = np.abs(_values(est, ref.points) - _values(truth, ref.points))
    return float(ref.total_mass * (ref.quadrature_weights() @ diff))


def normalize_reference(est: DensityEstimate, ref: ReferenceMeasure) -> DensityEstimate:
    """Rescale ``est`` so its quadrature integral over the box of ``ref`` is one.

    This is the normalisation in the reference measure itself, as opposed to
    :func:`kcdo.cdo.normalize`, which uses the kernel mass over all of R^d.
    The two differ when signed coefficients cancel outside the box.
    """
    total = ref.total_mass * float(ref.quadrature_weights() @ evaluate(est, ref.points))
    if not total > 0:
        raise ValueError("mass non-positive, cannot normalize")
    return DensityEstimate(est.ref_points, est.beta / total, est.kernel)
