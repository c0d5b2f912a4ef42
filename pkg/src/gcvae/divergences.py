"""Sample-based divergences between a latent batch and prior draws.

Three estimators, all differentiable with respect to the posterior sample
matrix ``Zq`` (they sit inside the training loss):

* ``mmd`` -- squared maximum mean discrepancy with a Gaussian kernel,
  biased V-statistic form: E_pp[k] - 2 E_qp[k] + E_qq[k].
* ``mahalanobis`` -- squared distance between the two sample means under a
  diagonal covariance metric (identity feature map).
* ``scaled_mmd`` -- the squared MMD scaled by the mean inverse variance of a
  diagonal covariance, a scalar covariance-trace correction.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError, ValidationError
from .tensor import Tensor

DIVERGENCE_KINDS = ("mmd", "mahalanobis", "scaled_mmd")


@dataclass(frozen=True)
class DivergenceKind:
    """Which estimator to run, plus its two knobs."""

    kind: str
    kernel_bandwidth: float
    cov_regularizer: float = 1e-6

    def __post_init__(self):
        if self.kind not in DIVERGENCE_KINDS:
            raise ContractError(f"unknown divergence {self.kind!r}, expected {DIVERGENCE_KINDS}")
        if not self.kernel_bandwidth > 0:
            raise ContractError(f"kernel_bandwidth must be > 0, got {self.kernel_bandwidth}")
        if not self.cov_regularizer > 0:
            raise ContractError(f"cov_regularizer must be > 0, got {self.cov_regularizer}")


@dataclass
class DiagCovariance:
    """Per-dimension variances and their regularised reciprocals."""

    var: Tensor
    inv: Tensor


def default_bandwidth(latent_dim: int) -> float:
    return math.sqrt(latent_dim)


def median_bandwidth(samples: np.ndarray) -> float:
    """Median pairwise distance of a sample matrix; a data-driven bandwidth."""
    z = np.asarray(samples, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ContractError("median_bandwidth needs an (n >= 2, k) sample matrix")
    sq = np.sum(z * z, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    d2 = np.maximum(d2, 0.0)
    upper = d2[np.triu_indices(z.shape[0], k=1)]
    med = float(np.median(upper))
    return math.sqrt(med) if med > 0 else 1.0


def _check_samples(z: Tensor, name: str, min_rows: int):
    if len(z.shape) != 2:
        raise ShapeError(f"{name} must be an (n, k) sample matrix, got {z.shape}")
    if z.shape[0] < min_rows:
        raise ContractError(f"{name} needs at least {min_rows} rows, got {z.shape[0]}")


def gaussian_kernel_mean(a: Tensor, b: Tensor, sigma_k: float) -> Tensor:
    """Mean Gaussian kernel value over all cross pairs of two sample sets.

    (1/nm) * sum_ij exp(-||a_i - b_j||^2 / (2 sigma_k^2)).
    """
    _check_samples(a, "a", 1)
    _check_samples(b, "b", 1)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"sample dims differ: {a.shape[1]} vs {b.shape[1]}")
    if not sigma_k > 0:
        raise ContractError(f"sigma_k must be > 0, got {sigma_k}")
    n, m = a.shape[0], b.shape[0]
    a2 = T.reshape(T.reduce_sum(T.square(a), axis=1), (n, 1))
    b2 = T.reshape(T.reduce_sum(T.square(b), axis=1), (1, m))
    cross = T.matmul(a, b, transpose_b=True)
    d2 = T.add(T.matmul(a2, Tensor(np.ones((1, m)))),
               T.sub(T.matmul(Tensor(np.ones((n, 1))), b2), T.scalar_mul(cross, 2.0)))
    # Cancellation can leave distances a hair below zero; clamp before exp.
    d2 = T.relu(d2)
    k = T.exp(T.scalar_mul(d2, -1.0 / (2.0 * sigma_k * sigma_k)))
    return T.reduce_mean(k)


def mmd_squared(zq: Tensor, zp: Tensor, sigma_k: float) -> Tensor:
    """Biased (V-statistic) squared MMD between posterior and prior samples.

    Identical inputs give exactly 0.0; the estimate is always >= -1e-12.
    """
    _check_samples(zq, "zq", 2)
    _check_samples(zp, "zp", 2)
    k_pp = gaussian_kernel_mean(zp, zp, sigma_k)
    k_qp = gaussian_kernel_mean(zq, zp, sigma_k)
    k_qq = gaussian_kernel_mean(zq, zq, sigma_k)
    return T.add(T.sub(k_pp, T.scalar_mul(k_qp, 2.0)), k_qq)


def diag_covariance(z: Tensor, eps_reg: float = 1e-6) -> DiagCovariance:
    """Per-dimension sample variance (divisor n-1) with regularised inverse.

    The inverse is computed as exp(-log(var + eps)), which keeps the whole
    statistic differentiable with respect to the samples.
    """
    _check_samples(z, "z", 2)
    if not eps_reg > 0:
        raise ContractError(f"eps_reg must be > 0, got {eps_reg}")
    n, k = z.shape
    mean_row = T.reshape(T.reduce_mean(z, axis=0), (1, k))
    centred = T.sub(z, T.matmul(Tensor(np.ones((n, 1))), mean_row))
    var = T.scalar_mul(T.reduce_sum(T.square(centred), axis=0), 1.0 / (n - 1))
    inv = T.exp(T.scalar_mul(T.log(T.add(var, Tensor(np.full(k, eps_reg)))), -1.0))
    if np.any(var.data < 0.0) or not np.all(np.isfinite(inv.data)) or np.any(inv.data <= 0.0):
        raise ValidationError("diagonal covariance left its valid range")
    return DiagCovariance(var=var, inv=inv)


def mahalanobis_squared(zq: Tensor, zp: Tensor, cov: DiagCovariance) -> Tensor:
    """Squared Mahalanobis distance between the two sample means.

    (m_q - m_p)^T diag(cov.inv) (m_q - m_p); zero when the means coincide,
    non-negative because cov.inv is positive.
    """
    _check_samples(zq, "zq", 1)
    _check_samples(zp, "zp", 1)
    if zq.shape[1] != zp.shape[1]:
        raise ShapeError(f"sample dims differ: {zq.shape[1]} vs {zp.shape[1]}")
    if cov.inv.shape != (zq.shape[1],):
        raise ShapeError(f"covariance has {cov.inv.shape} entries for dim {zq.shape[1]}")
    diff = T.sub(T.reduce_mean(zq, axis=0), T.reduce_mean(zp, axis=0))
    return T.reduce_sum(T.mul(T.square(diff), cov.inv))


def scaled_mmd(zq: Tensor, zp: Tensor, sigma_k: float, cov: DiagCovariance) -> Tensor:
    """Squared MMD scaled by the mean inverse variance.

    With cov.inv identically one this collapses to ``mmd_squared`` exactly.
    """
    base = mmd_squared(zq, zp, sigma_k)
    return T.mul(base, T.reduce_mean(cov.inv))


def vstack_pair(a: Tensor, b: Tensor) -> Tensor:
    """Row-stack two sample matrices, keeping gradients flowing to both.

    Built from constant selector matmuls so it stays inside the primitive set.
    """
    _check_samples(a, "a", 1)
    _check_samples(b, "b", 1)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"sample dims differ: {a.shape[1]} vs {b.shape[1]}")
    n, m = a.shape[0], b.shape[0]
    sel_a = np.zeros((n + m, n))
    sel_a[:n] = np.eye(n)
    sel_b = np.zeros((n + m, m))
    sel_b[n:] = np.eye(m)
    return T.add(T.matmul(Tensor(sel_a), a), T.matmul(Tensor(sel_b), b))
