"""Kernel evaluation, Gram matrices and bandwidth selection.

Three families are supported, all normalised so that ``k(x, x) = 1``:

- ``gaussian``: ``exp(-sum_c (x_c - y_c)^2 / (2 sigma_c^2))``
- ``laplace``:  ``exp(-sum_c |x_c - y_c| / sigma_c)`` (l1 form, factorises
  across coordinates)
- ``product``:  product of univariate factor kernels, one per coordinate

Gaussian and Laplace kernels are also unnormalised probability densities;
:func:`density_mass` and :func:`density_variance` return the corresponding
mass and per-coordinate variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "KernelSpec",
    "as_samples",
    "eval_kernel",
    "gram",
    "median_heuristic",
    "kernel_from_median",
    "density_mass",
    "density_variance",
    "FAMILIES",
]

FAMILIES = ("gaussian", "laplace", "product")
DENSITY_FAMILIES = ("gaussian", "laplace")

# Upper bound on elements of one Gram chunk (keeps temporaries near 32 MB).
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class KernelSpec:
    """A positive semidefinite kernel with per-dimension bandwidths.

    Use the :meth:`gaussian`, :meth:`laplace` and :meth:`product`
    constructors rather than instantiating directly.
    """

    family: str
    bandwidth: tuple[float, ...]
    factors: tuple["KernelSpec", ...] = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        bw = tuple(float(b) for b in self.bandwidth)
        if not bw:
            raise ValueError("kernel needs at least one dimension")
        if not all(math.isfinite(b) and b > 0 for b in bw):
            raise ValueError(f"bandwidths must be finite and positive, got {bw}")
        object.__setattr__(self, "bandwidth", bw)
        if self.family == "product":
            if len(self.factors) != len(bw):
                raise ValueError("product kernel needs exactly one factor per dimension")
            for f in self.factors:
                if f.family == "product" or f.dimension != 1:
                    raise ValueError("product factors must be univariate gaussian/laplace kernels")
        elif self.factors:
            raise ValueError(f"{self.family} kernel takes no factors")

    @property
    def dimension(self) -> int:
        return len(self.bandwidth)

    @property
    def is_density(self) -> bool:
        """True when every coordinate is a Gaussian or Laplace density."""
        return self.family in DENSITY_FAMILIES or self.family == "product"

    @classmethod
    def gaussian(cls, bandwidth, dimension: int | None = None) -> "KernelSpec":
        return cls("gaussian", _broadcast(bandwidth, dimension))

    @classmethod
    def laplace(cls, bandwidth, dimension: int | None = None) -> "KernelSpec":
        return cls("laplace", _broadcast(bandwidth, dimension))

    @classmethod
    def product(cls, factors: Sequence["KernelSpec"]) -> "KernelSpec":
        factors = tuple(factors)
        return cls("product", tuple(f.bandwidth[0] for f in factors), factors)

    def to_dict(self) -> dict:
        d = {"family": self.family, "bandwidth": list(self.bandwidth)}
        if self.factors:
            d["factors"] = [f.to_dict() for f in self.factors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        factors = tuple(cls.from_dict(f) for f in d.get("factors", ()))
        return cls(d["family"], tuple(d["bandwidth"]), factors)


def _broadcast(bandwidth, dimension):
    bw = np.atleast_1d(np.asarray(bandwidth, dtype=float))
    if bw.ndim != 1:
        raise ValueError("bandwidth must be a scalar or a vector")
    if dimension is None:
        return tuple(bw.tolist())
    if bw.size == 1:
        return tuple([float(bw[0])] * int(dimension))
    if bw.size != dimension:
        raise ValueError(f"got {bw.size} bandwidths for dimension {dimension}")
    return tuple(bw.tolist())


def as_samples(A, dimension: int | None = None, name: str = "samples") -> np.ndarray:
    """Coerce ``A`` to a finite ``(n, d)`` float array."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None] if dimension in (None, 1) else A[None, :]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty (n, d) array, got shape {A.shape}")
    if dimension is not None and A.shape[1] != dimension:
        raise ValueError(f"{name} has dimension {A.shape[1]}, kernel expects {dimension}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def _fill_block(spec: KernelSpec, A: np.ndarray, B: np.ndarray, out: np.ndarray) -> None:
    # Coordinates are accumulated in a fixed order so any block of the Gram
    # matrix equals the entrywise evaluation bit for bit.
    if spec.family == "product":
        out.fill(1.0)
        for c, f in enumerate(spec.factors):
            tmp = np.empty_like(out)
            _fill_block(f, A[:, c : c + 1], B[:, c : c + 1], tmp)
            out *= tmp
        return
    out.fill(0.0)
    for c, s in enumerate(spec.bandwidth):
        diff = np.subtract.outer(A[:, c], B[:, c])
        if spec.family == "gaussian":
            diff /= s
            out += diff * diff
        else:
            np.abs(diff, out=diff)
            diff /= s
            out += diff
    if spec.family == "gaussian":
        out *= -0.5
    else:
        np.negative(out, out=out)
    np.exp(out, out=out)


def gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Gram matrix ``G[i, j] = k(A_i, B_j)``.

    Parameters
    ----------
    spec : KernelSpec
    A : (n, d) array_like
    B : (m, d) array_like, optional
        Defaults to ``A``.

    Returns
    -------
    (n, m) ndarray
    """
    A = as_samples(A, spec.dimension, "left samples")
    B = A if B is None else as_samples(B, spec.dimension, "right samples")
    n, m = A.shape[0], B.shape[0]
    out = np.empty((n, m))
    rows = max(1, _CHUNK_ELEMENTS // max(m, 1))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        _fill_block(spec, A[start:stop], B, out[start:stop])
    return out


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Evaluate ``k(x, y)`` for two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (spec.dimension,) or y.shape != (spec.dimension,):
        raise ValueError(
            f"points must have dimension {spec.dimension}, got {x.shape} and {y.shape}"
        )
    return float(gram(spec, x[None, :], y[None, :])[0, 0])


def median_heuristic(A, metric: str = "euclidean") -> float:
    """Lower median of all pairwise distances between distinct points.

    ``metric`` is ``"euclidean"`` (pairs with the Gaussian kernel) or ``"l1"``
    (pairs with the Laplace kernel). For an even number of pairs the element
    at index ``(m - 1) // 2`` of the sorted distances is returned.
    """
    A = as_samples(A)
    if A.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    if metric not in ("euclidean", "l1"):
        raise ValueError(f"unknown metric {metric!r}")
    d = pdist(A, "euclidean" if metric == "euclidean" else "cityblock")
    k = (d.size - 1) // 2
    med = float(np.partition(d, k)[k])
    if med <= 0.0:
        raise ValueError("degenerate sample, bandwidth undefined")
    return med


def kernel_from_median(family: str, A) -> KernelSpec:
    """Build a kernel whose bandwidth is the median heuristic on ``A``.

    For ``product`` the factors are Laplace kernels with one median per
    coordinate.
    """
    A = as_samples(A)
    d = A.shape[1]
    if family == "gaussian":
        return KernelSpec.gaussian(median_heuristic(A, "euclidean"), d)
    if family == "laplace":
        return KernelSpec.laplace(median_heuristic(A, "l1"), d)
    if family == "product":
        return KernelSpec.product(
            [KernelSpec.laplace(median_heuristic(A[:, c : c + 1], "l1"), 1) for c in range(d)]
        )
    raise ValueError(f"unknown kernel family {family!r}")


def density_mass(spec: KernelSpec) -> float:
    """Integral of ``y -> k(x, y)`` over R^d."""
    if spec.family == "product":
        return float(np.prod([density_mass(f) for f in spec.factors]))
    bw = np.asarray(spec.bandwidth)
    if spec.family == "gaussian":
        return float(np.prod(np.sqrt(2.0 * np.pi) * bw))
    return float(np.prod(2.0 * bw))


def density_variance(spec: KernelSpec) -> np.ndarray:
    """Per-coordinate variance of the kernel viewed as a density."""
    if spec.family == "product":
        return np.concatenate([density_variance(f) for f in spec.factors])
    bw = np.asarray(spec.bandwidth)
    if spec.family == "gaussian":
        return bw**2
    return 2.0 * bw**2
