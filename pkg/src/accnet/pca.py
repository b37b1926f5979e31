"""Principal component analysis for logged coordinator traffic.

Small and dependency-free on purpose: the harness logs per-step message
vectors to CSV, and this module turns a stack of them into orthogonal
components ranked by explained variance so message usage can be inspected
in two dimensions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = ["PCAResult", "fit_pca", "project"]


@dataclass(frozen=True)
class PCAResult:
    """Eigendecomposition of the sample covariance.

    ``components`` holds one unit-norm direction per row, ordered by
    descending variance. ``explained`` sums to 1 unless the data has zero
    variance, in which case it is all zeros.
    """

    mean: np.ndarray
    components: np.ndarray
    variances: np.ndarray
    explained: np.ndarray

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def fit_pca(data, n_components: int | None = None) -> PCAResult:
    """Fit components to ``data`` of shape (samples, features).

    Uses the symmetric eigensolver on the covariance matrix. Each
    component's sign is fixed so its first nonzero loading is positive,
    making repeated fits on the same data comparable.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ContractError(f"expected a (samples, features) matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ContractError("need at least two samples to estimate variance")
    if n_components is None:
        n_components = d
    if not 1 <= n_components <= d:
        raise ContractError(f"n_components must be in [1, {d}], got {n_components}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    variances = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T

    for row in components:
        nz = np.nonzero(np.abs(row) > 1e-12)[0]
        if nz.size and row[nz[0]] < 0:
            row *= -1.0

    total = float(variances.sum())
    explained = variances / total if total > 0 else np.zeros_like(variances)
    return PCAResult(mean=mean,
                     components=components[:n_components],
                     variances=variances[:n_components],
                     explained=explained[:n_components])


def project(result: PCAResult, data) -> np.ndarray:
    """Coordinates of ``data`` in the fitted component basis."""
    x = np.asarray(data, dtype=float)
    if x.shape[-1] != result.dim:
        raise ContractError(
            f"data has {x.shape[-1]} features, fit expects {result.dim}")
    return (x - result.mean) @ result.components.T
