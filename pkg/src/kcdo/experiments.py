"""Reproducible experiments: the rotated-circle (donut) benchmark, a Monte
Carlo check of the finite-sample error bound, and the embedding rate.

Everything here is deterministic given the seeds; random streams are
derived from ``(seed, index)`` pairs so runs aggregate in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import norm

from .cdo import DEFAULT_SCHEDULE, PairedData, fit, normalize, predict_point
from .kernels import KernelSpec, kernel_from_median
from .linalg import SpanBasis, prop2_bound, tikhonov_schedule
from .reconstruct import ReferenceMeasure, l1_error, normalize_reference, uniform_reference

__all__ = [
    "DonutSpec",
    "donut_reference",
    "resolve_bandwidth",
    "run_donut",
    "summarize_donut",
    "BoundSetup",
    "run_bound_check",
    "embedding_rate",
]

DONUT_BOX = ((-2.0, 2.0), (-2.0, 2.0))


@dataclass(frozen=True)
class DonutSpec:
    """Gaussian mixture whose means sit on a unit circle in the (x, y) plane,
    tilted about the y axis by ``rotation_deg``.

    Samples are ``(x, y, z)``; the benchmark estimates ``p(y, z | x)``.
    """

    n_means: int = 50
    samples_per_mean: int = 50
    noise_std: float = 0.2
    rotation_deg: float = 10.0
    slices: tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self):
        if self.n_means < 1 or self.samples_per_mean < 1:
            raise ValueError("n_means and samples_per_mean must be positive")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        object.__setattr__(self, "slices", tuple(float(s) for s in self.slices))

    @property
    def N(self) -> int:
        return self.n_means * self.samples_per_mean

    def with_n(self, N: int) -> "DonutSpec":
        if N % self.n_means:
            raise ValueError(f"N={N} is not a multiple of n_means={self.n_means}")
        return DonutSpec(self.n_means, N // self.n_means, self.noise_std,
                         self.rotation_deg, self.slices)

    def means(self) -> np.ndarray:
        t = 2.0 * np.pi * np.arange(self.n_means) / self.n_means
        th = np.deg2rad(self.rotation_deg)
        return np.stack([np.cos(t) * np.cos(th), np.sin(t), -np.cos(t) * np.sin(th)], axis=1)

    def sample(self, seed) -> tuple[np.ndarray, np.ndarray]:
        """``(X, Y)`` with ``X`` of shape ``(N, 1)`` and ``Y`` of shape ``(N, 2)``."""
        rng = np.random.default_rng(seed)
        P = np.repeat(self.means(), self.samples_per_mean, axis=0)
        P = P + self.noise_std * rng.standard_normal(P.shape)
        return P[:, :1], P[:, 1:]

    def _component_weights(self, x: float) -> np.ndarray:
        logw = norm.logpdf(x, self.means()[:, 0], self.noise_std)
        w = np.exp(logw - logw.max())
        return w / w.sum()

    def _components(self, Y: np.ndarray) -> np.ndarray:
        m, s = self.means(), self.noise_std
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return norm.pdf(Y[:, :1], m[None, :, 1], s) * norm.pdf(Y[:, 1:2], m[None, :, 2], s)

    def conditional(self, x: float):
        """Exact ``p(y, z | x)``: the mixture reweighted by each
        component's density at ``x``."""
        w = self._component_weights(float(x))
        return lambda Y: self._components(Y) @ w

    def marginal_given_uniform(self, lo: float, hi: float, n_quad: int = 2001):
        """``int p(y, z | x) dx / (hi - lo)`` by the trapezoid rule in ``x``."""
        xs = np.linspace(lo, hi, n_quad)
        W = np.stack([self._component_weights(x) for x in xs])
        w = trapezoid(W, xs, axis=0) / (hi - lo)
        return lambda Y: self._components(Y) @ w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slices"] = list(self.slices)
        return d


def donut_reference(N: int) -> ReferenceMeasure:
    """Grid of ``floor(sqrt(N))**2`` cell centres on the side-4 square."""
    m = int(math.isqrt(N))
    return uniform_reference(DONUT_BOX, m * m, "grid")


def resolve_bandwidth(family: str, policy, data: np.ndarray) -> KernelSpec:
    """``policy`` is ``"median"`` or a positive bandwidth."""
    if policy == "median":
        return kernel_from_median(family, data)
    bw = float(policy)
    d = data.shape[1]
    if family == "gaussian":
        return KernelSpec.gaussian(bw, d)
    if family == "laplace":
        return KernelSpec.laplace(bw, d)
    if family == "product":
        return KernelSpec.product([KernelSpec.laplace(bw, 1)] * d)
    raise ValueError(f"unknown kernel family {family!r}")


@dataclass
class DonutRun:
    N: int
    M: int
    seed: int
    sigma_in: float
    sigma_out: float
    alpha: float
    errors: dict = field(default_factory=dict)
    errors_kernel_mass: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)


def _l1_or_inf(normalizer, est, truth, evalref):
    try:
        return l1_error(normalizer(est), truth, evalref)
    except ValueError:
        return math.inf


def run_donut(spec: DonutSpec, ladder=(100, 400, 900, 2500), seeds=range(10),
              input_kernel: str = "laplace", output_kernel: str = "gaussian",
              input_bandwidth="median", output_bandwidth="median",
              schedule=DEFAULT_SCHEDULE, eval_side: int = 100,
              keep_estimates: bool = False) -> list[DonutRun]:
    """Fit a CDO of ``(y, z)`` given ``x`` along the ``N`` ladder.

    Errors are L1 distances on a fixed ``eval_side**2`` midpoint grid of the
    box. ``errors`` normalises each slice estimate in the reference measure
    (quadrature integral over the box equal to one); ``errors_kernel_mass``
    uses the kernel-mass normalisation of :func:`kcdo.cdo.normalize`. An
    estimate whose mass is not positive cannot be normalised and scores
    ``inf``.
    """
    evalref = uniform_reference(DONUT_BOX, eval_side**2, "grid")
    truths = {x: spec.conditional(x) for x in spec.slices}
    by_reference = lambda est: normalize_reference(est, evalref)
    runs = []
    for N in ladder:
        s = spec.with_n(N)
        ref = donut_reference(N)
        for seed in seeds:
            X, Y = s.sample((int(seed), N))
            k = resolve_bandwidth(input_kernel, input_bandwidth, X)
            l = resolve_bandwidth(output_kernel, output_bandwidth, Y)
            model = fit(PairedData(X, Y), ref, k, l, schedule=schedule)
            run = DonutRun(N, ref.M, int(seed), k.bandwidth[0], l.bandwidth[0], model.alpha)
            for x in spec.slices:
                est = predict_point(model, [x])
                run.errors[x] = _l1_or_inf(by_reference, est, truths[x], evalref)
                run.errors_kernel_mass[x] = _l1_or_inf(normalize, est, truths[x], evalref)
                if keep_estimates:
                    run.estimates[x] = est
            runs.append(run)
    return runs


def summarize_donut(runs: list[DonutRun], which: str = "errors") -> dict:
    """Median error per ``N`` and slice; ``inf`` entries take part in the
    median."""
    out = {}
    for N in sorted({r.N for r in runs}):
        sel = [getattr(r, which) for r in runs if r.N == N]
        out[str(N)] = {f"{x:g}": float(np.median([e[x] for e in sel])) for x in sel[0]}
    return out


@dataclass(frozen=True)
class BoundSetup:
    """One-dimensional setup with an accurately computable ``u_alpha``.

    Reference measure ``q = U[0, 1]``; target ``P = Beta(2, 2)`` with density
    ``6 x (1 - x)``; Gaussian kernel of bandwidth ``sigma``. The exact
    covariance operator and embedding are replaced by midpoint quadrature on
    ``M0`` points, and all RKHS quantities are computed in orthonormal
    coordinates of the span of ``n_basis`` kernel sections.
    """

    sigma: float = 0.2
    M0: int = 100_000
    n_basis: int = 60

    def basis(self) -> SpanBasis:
        return SpanBasis(KernelSpec.gaussian(self.sigma, 1), np.linspace(0.0, 1.0, self.n_basis))

    def exact(self, basis: SpanBasis):
        grid = (np.arange(self.M0) + 0.5) / self.M0
        C = np.zeros((basis.rank, basis.rank))
        mu = np.zeros(basis.rank)
        for s in range(0, self.M0, 20000):
            Xi = basis.coords(grid[s : s + 20000])
            C += Xi.T @ Xi
            mu += (6.0 * grid[s : s + 20000] * (1.0 - grid[s : s + 20000])) @ Xi
        return C / self.M0, mu / self.M0


def run_bound_check(ladder=((1000, 1000), (1000, 10000), (10000, 1000), (10000, 10000)),
                    trials: int = 200, a: float = 0.25, b: float = 0.25,
                    c_prime: float = 0.99999, alpha: float | None = None,
                    setup: BoundSetup = BoundSetup(), seed: int = 0) -> list[dict]:
    """Empirical coverage of the error bound, one row per ``(N, M)``.

    Each trial draws ``N`` samples of ``P`` and ``M`` samples of ``q``,
    forms the empirical solution ``u_hat = (C_hat + alpha)^-1 mu_hat`` and
    records ``|u_alpha - u_hat|_H``. ``alpha`` defaults to the schedule value
    at ``(M, N)``.
    """
    basis = setup.basis()
    C, mu = setup.exact(basis)
    mu_norm = float(np.linalg.norm(mu))
    eye = np.eye(basis.rank)
    rows = []
    for N, M in ladder:
        al = tikhonov_schedule(M, N, a, b, c_prime) if alpha is None else float(alpha)
        report = prop2_bound(M, N, a, b, al, 1.0, mu_norm)
        u_alpha = np.linalg.solve(C + al * eye, mu)
        err = np.empty(trials)
        mu_err = np.empty(trials)
        for t in range(trials):
            rng = np.random.default_rng((seed, N, M, t))
            Xi_p = basis.coords(rng.beta(2.0, 2.0, N))
            Xi_q = basis.coords(rng.uniform(0.0, 1.0, M))
            mu_hat = Xi_p.mean(axis=0)
            u_hat = np.linalg.solve(Xi_q.T @ Xi_q / M + al * eye, mu_hat)
            err[t] = np.linalg.norm(u_alpha - u_hat)
            mu_err[t] = np.linalg.norm(mu_hat - mu)
        rows.append({
            **report.to_dict(),
            "trials": trials,
            "coverage": float(np.mean(err <= report.epsilon)),
            "median_error": float(np.median(err)),
            "median_mu_error": float(np.median(mu_err)),
            "passed": bool(np.mean(err <= report.epsilon) >= report.probability - 0.05),
        })
    return rows


def embedding_rate(Ns=(100, 1000, 10000), n_ref: int = 1_000_000, repeats: int = 30,
                   sigma: float = 1.0, seed: int = 0) -> dict:
    """RKHS distance between ``N``-sample embeddings of a standard normal
    and a large reference embedding, with its log-log slope in ``N``."""
    basis = SpanBasis(KernelSpec.gaussian(sigma, 1), np.linspace(-8.0, 8.0, 81))
    rng = np.random.default_rng((seed, 0))
    ref = basis.mean_coords(rng.standard_normal(n_ref))
    med = []
    for N in Ns:
        d = [np.linalg.norm(basis.mean_coords(np.random.default_rng((seed, N, r)).standard_normal(N)) - ref)
             for r in range(repeats)]
        med.append(float(np.median(d)))
    slope = float(np.polyfit(np.log(Ns), np.log(med), 1)[0])
    return {"N": list(Ns), "median_distance": med, "slope": slope, "n_ref": n_ref,
            "repeats": repeats, "sigma": sigma}
