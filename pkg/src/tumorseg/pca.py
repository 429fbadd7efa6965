"""Channel-space PCA that fuses four modalities into three planes.

Each pixel is a 4-vector of modality intensities. The 4x4 covariance is
diagonalised with cyclic Jacobi rotations and pixels are projected onto the
three leading eigenvectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-9
OFFDIAG_TOL = 1e-12
MAX_SWEEPS = 100


class NumericInputError(ValueError):
    pass


@dataclass(frozen=True)
class EigenResult4:
    eigenvalues: np.ndarray  # (4,), non-increasing
    eigenvectors: np.ndarray  # (4, 4), column i pairs with eigenvalues[i]
    sweeps: int = 0


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for i in range(out.shape[1]):
        j = int(np.argmax(np.abs(out[:, i])))
        if out[j, i] < 0:
            out[:, i] = -out[:, i]
    return out


def symmetric_eigen_4(c) -> EigenResult4:
    """Eigen-decomposition of a symmetric 4x4 matrix by cyclic Jacobi sweeps.

    Sweeps stop once every off-diagonal magnitude is below 1e-12, or after
    100 sweeps. Eigenvectors are signed so that the first component of
    largest magnitude is non-negative.
    """
    a = np.array(c, dtype=np.float64)
    if a.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericInputError("matrix has non-finite entries")
    asym = np.max(np.abs(a - a.T))
    if asym > SYMMETRY_TOL:
        raise ValueError(f"matrix not symmetric: max |C - C^T| = {asym:.3g}")
    a = (a + a.T) / 2.0
    v = np.eye(4)
    sweeps = 0
    iu = np.triu_indices(4, 1)
    while sweeps < MAX_SWEEPS and np.max(np.abs(a[iu])) >= OFFDIAG_TOL:
        sweeps += 1
        for p in range(3):
            for q in range(p + 1, 4):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                cs = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * cs
                rot = np.eye(4)
                rot[p, p] = rot[q, q] = cs
                rot[p, q] = sn
                rot[q, p] = -sn
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return EigenResult4(vals[order], _sign_fix(v[:, order]), sweeps)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (4,)
    covariance: np.ndarray  # (4, 4)
    eigen: EigenResult4

    @property
    def components(self) -> np.ndarray:
        """(4, 3) leading eigenvectors."""
        return self.eigen.eigenvectors[:, :3]

    def project(self, pixels: np.ndarray) -> np.ndarray:
        return (pixels - self.mean) @ self.components

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components.T + self.mean


def fit_pca(pixels) -> PcaModel:
    """Fit on an (N, 4) array of pixel vectors, N >= 4."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 4:
        raise ValueError(f"expected (N, 4) pixel vectors, got {x.shape}")
    if x.shape[0] < 4:
        raise ValueError(f"need at least 4 pixels, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericInputError("non-finite intensities in PCA input")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / x.shape[0]
    cov = (cov + cov.T) / 2.0
    return PcaModel(mean, cov, symmetric_eigen_4(cov))


def pca_fuse(slice4, model: PcaModel | None = None) -> np.ndarray:
    """(H, W, 4) slice -> (H, W, 3) real-valued principal-component planes.

    Planes come out in descending eigenvalue order. By default the model is
    fitted on this slice; pass ``model`` to reuse a per-volume fit.
    """
    s = np.asarray(slice4, dtype=np.float64)
    if s.ndim != 3 or s.shape[2] != 4:
        raise ValueError(f"expected (H, W, 4) slice, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NumericInputError("non-finite intensities in PCA input")
    h, w, _ = s.shape
    pixels = s.reshape(-1, 4)
    if model is None:
        model = fit_pca(pixels)
    return model.project(pixels).reshape(h, w, 3)
