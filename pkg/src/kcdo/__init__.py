"""Density reconstruction from kernel mean embeddings and the conditional
density operator built on it."""

from .cdo import (
    FittedCDO,
    Moments,
    PairedData,
    fit,
    fit_grouped,
    mean_variance,
    normalize,
    predict_marginal,
    predict_point,
    sample,
)
from .kernels import KernelSpec, density_mass, density_variance, eval_kernel, gram, median_heuristic
from .linalg import (
    BoundReport,
    KroneckerGram,
    SingularSystemError,
    SymmetricFactorization,
    kron_solve,
    prop2_bound,
    solve_regularized,
    tikhonov_schedule,
)
from .reconstruct import (
    DensityEstimate,
    EmbeddingCoefficients,
    ReferenceMeasure,
    embed,
    evaluate,
    l1_error,
    normalize_reference,
    reconstruct_density,
    uniform_reference,
)

__version__ = "0.1.0"
