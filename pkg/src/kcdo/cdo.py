"""Conditional density operator: fit, predict, normalise, sample, moments.

A fitted model caches

- a Cholesky factor of ``G_X + N alpha I`` (input side), and
- ``W = M^-2 (G_Z + alpha' I)^-2 G_ZY`` (output side, ``M x N``),

so the conditional density at ``x*`` is ``sum_i beta_i l(z_i, .)`` with
``beta = W (G_X + N alpha I)^-1 k_X(x*)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    KernelSpec,
    as_samples,
    density_mass,
    density_variance,
    gram,
    kernel_from_median,
)
from .linalg import SingularSystemError, SymmetricFactorization, tikhonov_schedule
from .reconstruct import DensityEstimate, EmbeddingCoefficients, ReferenceMeasure

__all__ = [
    "PairedData",
    "FittedCDO",
    "Moments",
    "fit",
    "fit_grouped",
    "predict_point",
    "predict_marginal",
    "normalize",
    "sample",
    "mean_variance",
    "output_weights",
    "factorize_inputs",
]


@dataclass(frozen=True)
class PairedData:
    """Paired samples ``(x_i, y_i)``, optionally grouped by distinct input.

    ``groups`` maps each row to a group index; ``inputs`` holds one row per
    group. Use :meth:`with_groups` to detect repeated inputs automatically.
    """

    X: np.ndarray
    Y: np.ndarray
    groups: np.ndarray | None = None
    inputs: np.ndarray | None = None

    def __post_init__(self):
        X = as_samples(self.X, name="X")
        Y = as_samples(self.Y, name="Y")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.groups is not None:
            g = np.asarray(self.groups, dtype=np.int64).reshape(-1)
            if g.shape[0] != X.shape[0]:
                raise ValueError("one group label per row required")
            n_groups = int(g.max()) + 1 if g.size else 0
            if g.min() < 0 or np.any(np.bincount(g, minlength=n_groups) == 0):
                raise ValueError("empty group")
            inputs = X[np.unique(g, return_index=True)[1]] if self.inputs is None else \
                as_samples(self.inputs, X.shape[1], "group inputs")
            if inputs.shape[0] != n_groups:
                raise ValueError("one input row per group required")
            object.__setattr__(self, "groups", g)
            object.__setattr__(self, "inputs", inputs)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def group_sizes(self) -> np.ndarray:
        if self.groups is None:
            raise ValueError("data carries no grouping")
        return np.bincount(self.groups)

    @classmethod
    def with_groups(cls, X, Y) -> "PairedData":
        """Group rows that share an identical input row."""
        X = as_samples(X, name="X")
        inputs, inverse = np.unique(X, axis=0, return_inverse=True)
        return cls(X, Y, inverse.reshape(-1), inputs)

    @property
    def has_repeats(self) -> bool:
        return self.groups is not None and self.inputs.shape[0] < self.N


@dataclass(frozen=True)
class FittedCDO:
    """Cached factors of the empirical conditional density operator.

    ``X`` holds the training inputs (distinct inputs for grouped fits),
    ``input_reg`` the shift added to ``G_X`` (``N * alpha`` or
    ``n_distinct * alpha``).
    """

    input_kernel: KernelSpec
    output_kernel: KernelSpec
    X: np.ndarray
    ref: ReferenceMeasure
    alpha: float
    alpha_out: float
    input_reg: float
    W: np.ndarray
    n_samples: int
    grouped: bool = False
    factor: SymmetricFactorization = field(default=None, repr=False, compare=False)

    @property
    def M(self) -> int:
        return self.ref.M

    def input_weights(self, k_vec) -> np.ndarray:
        return self.factor.solve(np.asarray(k_vec, dtype=float))

    def predict_point(self, x_star) -> DensityEstimate:
        return predict_point(self, x_star)

    def predict_marginal(self, embedding: EmbeddingCoefficients) -> DensityEstimate:
        return predict_marginal(self, embedding)


def _resolve_kernel(kernel, data: np.ndarray) -> KernelSpec:
    if isinstance(kernel, KernelSpec):
        if kernel.dimension != data.shape[1]:
            raise ValueError(
                f"kernel dimension {kernel.dimension} does not match data dimension {data.shape[1]}"
            )
        return kernel
    return kernel_from_median(kernel, data)


def _resolve_alphas(alpha, alpha_out, schedule, M, N):
    if alpha is None or alpha_out is None:
        a, b, c_prime = schedule
        s = tikhonov_schedule(M, N, a, b, c_prime)
        alpha = s if alpha is None else alpha
        alpha_out = s if alpha_out is None else alpha_out
    if not (alpha > 0 and alpha_out > 0):
        raise ValueError(f"regularisation must be positive, got alpha={alpha}, alpha'={alpha_out}")
    return float(alpha), float(alpha_out)


def factorize_inputs(kernel: KernelSpec, X: np.ndarray, reg: float) -> SymmetricFactorization:
    # The Gram is built only to be factorised, so it is consumed in place;
    # rebuild it for the eigendecomposition fallback if Cholesky fails.
    try:
        return SymmetricFactorization(gram(kernel, X), reg, overwrite=True)
    except SingularSystemError:
        return SymmetricFactorization(gram(kernel, X), reg)


def _output_map(kernel: KernelSpec, ref: ReferenceMeasure, alpha_out: float, G_ZY: np.ndarray):
    F = SymmetricFactorization(gram(kernel, ref.points), alpha_out)
    if ref.uniform:
        return F.solve(F.solve(G_ZY)) / ref.M**2
    d = ref.weights[:, None]
    return d * F.solve(F.solve(d * G_ZY))


DEFAULT_SCHEDULE = (0.49, 0.49, 0.99999)


def fit(data: PairedData, ref: ReferenceMeasure, input_kernel="laplace", output_kernel="gaussian",
        alpha: float | None = None, alpha_out: float | None = None,
        schedule=DEFAULT_SCHEDULE) -> FittedCDO:
    """Fit the conditional density operator on paired samples.

    Parameters
    ----------
    data : PairedData
    ref : ReferenceMeasure
        Reference measure on the output space.
    input_kernel, output_kernel : KernelSpec or family name
        A family name resolves the bandwidth by the median heuristic on the
        training inputs / outputs.
    alpha, alpha_out : float, optional
        Input- and output-side regularisation. Missing values are taken from
        :func:`~kcdo.linalg.tikhonov_schedule` with ``schedule = (a, b, c')``.
    """
    X, Y = data.X, data.Y
    N = data.N
    k = _resolve_kernel(input_kernel, X)
    l = _resolve_kernel(output_kernel, Y)
    if ref.dimension != l.dimension:
        raise ValueError("reference measure and output kernel dimensions differ")
    alpha, alpha_out = _resolve_alphas(alpha, alpha_out, schedule, ref.M, N)
    factor = factorize_inputs(k, X, N * alpha)
    W = _output_map(l, ref, alpha_out, gram(l, ref.points, Y))
    return FittedCDO(k, l, X, ref, alpha, alpha_out, N * alpha, W, N, False, factor)


def fit_grouped(data: PairedData, ref: ReferenceMeasure, input_kernel="laplace",
                output_kernel="gaussian", alpha: float | None = None,
                alpha_out: float | None = None, schedule=DEFAULT_SCHEDULE) -> FittedCDO:
    """Fit using the distinct inputs only.

    Output feature columns become per-group means, so ``G_X`` is
    ``n_distinct x n_distinct`` and the input-side shift is
    ``n_distinct * alpha``. The schedule (when used) is evaluated at the
    total row count ``N``.

    With equal group sizes the result coincides with :func:`fit` on the
    flattened rows at the *same* ``alpha``: ``(E G E^T + N alpha I)^-1 E``
    equals ``E (G + n_distinct alpha I)^-1 / n`` for the ``N x n_distinct``
    repetition matrix ``E`` with ``E^T E = n I``.
    """
    if data.groups is None:
        data = PairedData.with_groups(data.X, data.Y)
    Xd, Y = data.inputs, data.Y
    n_d = Xd.shape[0]
    k = _resolve_kernel(input_kernel, data.X)
    l = _resolve_kernel(output_kernel, Y)
    if ref.dimension != l.dimension:
        raise ValueError("reference measure and output kernel dimensions differ")
    alpha, alpha_out = _resolve_alphas(alpha, alpha_out, schedule, ref.M, data.N)
    factor = factorize_inputs(k, Xd, n_d * alpha)
    K = gram(l, ref.points, Y)
    order = np.argsort(data.groups, kind="stable")
    sizes = data.group_sizes
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    G_ZY = np.add.reduceat(K[:, order], starts, axis=1) / sizes
    W = _output_map(l, ref, alpha_out, G_ZY)
    return FittedCDO(k, l, Xd, ref, alpha, alpha_out, n_d * alpha, W, data.N, True, factor)


def _beta(model: FittedCDO, k_vec: np.ndarray) -> np.ndarray:
    return model.W @ model.factor.solve(k_vec)


def predict_point(model: FittedCDO, x_star) -> DensityEstimate:
    """Unnormalised conditional density estimate at the input ``x_star``."""
    x = np.atleast_1d(np.asarray(x_star, dtype=float))
    if x.shape != (model.input_kernel.dimension,):
        raise ValueError(f"x_star must have dimension {model.input_kernel.dimension}")
    k_vec = gram(model.input_kernel, model.X, x[None, :])[:, 0]
    return DensityEstimate(model.ref.points, _beta(model, k_vec), model.output_kernel)


def predict_marginal(model: FittedCDO, embedding: EmbeddingCoefficients) -> DensityEstimate:
    """Output density for an input distribution given by its embedding.

    The kernel column ``k(x_j, x*)`` is replaced by the embedding evaluated at
    the training inputs (kernel sum rule).
    """
    if embedding.kernel != model.input_kernel:
        raise ValueError("embedding kernel differs from the model's input kernel")
    k_vec = gram(model.input_kernel, model.X, embedding.anchors) @ embedding.weights
    return DensityEstimate(model.ref.points, _beta(model, k_vec), model.output_kernel)


def normalize(est: DensityEstimate) -> DensityEstimate:
    """Rescale so the estimate integrates to one over R^d.

    Coefficients keep their signs; normalising an already normalised
    estimate returns it unchanged.
    """
    if est.normalized:
        return est
    if not est.kernel.is_density:
        raise ValueError("kernel has no density mass")
    total = float(est.beta.sum())
    if not total > 0:
        raise ValueError("mass non-positive, cannot normalize")
    beta = est.beta / (density_mass(est.kernel) * total)
    return DensityEstimate(est.ref_points, beta, est.kernel, normalized=True)


def output_weights(est: DensityEstimate) -> np.ndarray:
    """Mixture weights ``max(beta, 0) / sum(max(beta, 0))``."""
    pos = np.clip(est.beta, 0.0, None)
    total = pos.sum()
    if not total > 0:
        raise ValueError("no positive coefficients; estimate is not a mixture")
    return pos / total


def _noise(kernel: KernelSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    if kernel.family == "product":
        return np.concatenate([_noise(f, rng, n) for f in kernel.factors], axis=1)
    scale = np.asarray(kernel.bandwidth)
    if kernel.family == "gaussian":
        return rng.normal(0.0, 1.0, size=(n, kernel.dimension)) * scale
    return rng.laplace(0.0, 1.0, size=(n, kernel.dimension)) * scale


def sample(est: DensityEstimate, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` samples from the clipped mixture ``sum_i w_i l(z_i, .)``.

    Negative coefficients are dropped and the rest renormalised. ``seed``
    may be an int or a :class:`numpy.random.Generator`.
    """
    if not est.kernel.is_density:
        raise ValueError("kernel is not a density family")
    w = output_weights(est)
    rng = np.random.default_rng(seed)
    idx = rng.choice(w.shape[0], size=int(n), p=w)
    return est.ref_points[idx] + _noise(est.kernel, rng, int(n))


@dataclass(frozen=True)
class Moments:
    """Predictive mean and variance per output coordinate.

    ``renormalized`` records that the coefficients had to be clipped or
    rescaled into mixture weights before the moments were taken. Unpacks as
    ``mean, variance = mean_variance(est)``.
    """

    mean: np.ndarray
    variance: np.ndarray
    renormalized: bool

    def __iter__(self):
        return iter((self.mean, self.variance))


def mean_variance(est: DensityEstimate) -> Moments:
    """Closed-form mean and variance of the mixture represented by ``est``.

    ``m = sum_i w_i z_i`` and ``v = sum_i w_i z_i^2 - m^2 + v_l`` with the
    clipped mixture weights ``w`` and the kernel variance ``v_l``.
    """
    if not est.kernel.is_density:
        raise ValueError("kernel is not a density family")
    w = output_weights(est)
    mass_weights = est.beta * density_mass(est.kernel)
    renormalized = not (est.normalized and np.all(est.beta >= 0)
                        and np.allclose(w, mass_weights, rtol=1e-12, atol=0))
    Z = est.ref_points
    m = w @ Z
    v = w @ (Z * Z) - m * m + density_variance(est.kernel)
    return Moments(m, v, renormalized)
