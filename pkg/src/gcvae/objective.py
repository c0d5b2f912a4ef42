"""Variant table and loss composition for the controlled-weight objectives.

The minimised loss is always

    total = (1 - alpha - beta) * recon_nll + beta * kl + gamma * corr

where ``corr`` is a sample divergence between the posterior latent batch and
prior draws. Variants differ only in how the weights are produced:

=============  ===========================  ==========================  ============
variant        alpha                        beta / gamma                divergence
=============  ===========================  ==========================  ============
elbo           -beta (recon weight 1)       beta = 1,  gamma = 0        --
beta_vae       -beta (recon weight 1)       beta = 10, gamma = 0        --
control_vae    -beta_t (recon weight 1)     beta_t PI(kl -> 10), g = 0  --
info_vae       0 (recon weight 1)           beta = 0,  gamma = 1000     mmd
gcvae1         PI(recon -> 10)              PI(kl -> 30), PI(c -> 0.1)  mmd
gcvae2         PI(recon -> 10)              PI(kl -> 30), PI(c -> 0.1)  mahalanobis
gcvae3         PI(recon -> 10)              PI(kl -> 30), PI(c -> 0.1)  scaled_mmd
=============  ===========================  ==========================  ============

Fixed-recon variants encode alpha = -beta so the reconstruction coefficient
is exactly 1 while the identity above still holds; only the three
PI-controlled gcvae weights pass through ``clamp_weights``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .control import WeightTriple
from .errors import ContractError, NonFiniteLossError, UnsupportedVariantError
from .tensor import Tensor
from . import tensor as T

VARIANTS = ("elbo", "beta_vae", "control_vae", "info_vae", "gcvae1", "gcvae2", "gcvae3")

# Recognised but deliberately not implemented (needs an adversarial
# discriminator, which is out of scope here).
KNOWN_UNSUPPORTED = ("factor_vae",)

DEFAULT_TARGET_RECON = 10.0
DEFAULT_TARGET_KL = 30.0
DEFAULT_TARGET_CORR = 0.1
DEFAULT_CONTROL_VAE_TARGET_KL = 10.0
DEFAULT_BETA_VAE_BETA = 10.0
DEFAULT_INFO_VAE_LAMBDA = 1000.0


@dataclass(frozen=True)
class WeightMode:
    """How one weight is produced: a fixed value or a PI set point."""

    kind: str  # "fixed" | "pid"
    value: float

    def __post_init__(self):
        if self.kind not in ("fixed", "pid"):
            raise ContractError(f"unknown weight mode {self.kind!r}")


@dataclass(frozen=True)
class VariantConfig:
    """Resolved per-variant wiring for the training loop."""

    name: str
    recon_unit: bool           # True: recon coefficient pinned to 1 via alpha = -beta
    alpha: WeightMode | None   # None for recon_unit variants
    beta: WeightMode
    gamma: WeightMode
    divergence: str | None     # "mmd" | "mahalanobis" | "scaled_mmd" | None


def variant_reduction(name: str) -> VariantConfig:
    """Map a variant name to its weight wiring; loud error on unsupported names."""
    if name in KNOWN_UNSUPPORTED:
        raise UnsupportedVariantError(
            f"variant {name!r} is recognised but not supported: it requires an "
            f"adversarial density-ratio discriminator that this package does not "
            f"implement. Supported variants: {', '.join(VARIANTS)}")
    if name == "elbo":
        return VariantConfig(name, True, None, WeightMode("fixed", 1.0),
                             WeightMode("fixed", 0.0), None)
    if name == "beta_vae":
        return VariantConfig(name, True, None, WeightMode("fixed", DEFAULT_BETA_VAE_BETA),
                             WeightMode("fixed", 0.0), None)
    if name == "control_vae":
        return VariantConfig(name, True, None, WeightMode("pid", DEFAULT_CONTROL_VAE_TARGET_KL),
                             WeightMode("fixed", 0.0), None)
    if name == "info_vae":
        return VariantConfig(name, True, None, WeightMode("fixed", 0.0),
                             WeightMode("fixed", DEFAULT_INFO_VAE_LAMBDA), "mmd")
    if name in ("gcvae1", "gcvae2", "gcvae3"):
        divergence = {"gcvae1": "mmd", "gcvae2": "mahalanobis", "gcvae3": "scaled_mmd"}[name]
        return VariantConfig(name, False,
                             WeightMode("pid", DEFAULT_TARGET_RECON),
                             WeightMode("pid", DEFAULT_TARGET_KL),
                             WeightMode("pid", DEFAULT_TARGET_CORR),
                             divergence)
    raise UnsupportedVariantError(
        f"unknown variant {name!r}; supported: {', '.join(VARIANTS)}")


@dataclass
class LossBreakdown:
    """The composed total plus its three terms and the weight snapshot."""

    total: Tensor
    recon_nll: Tensor
    kl: Tensor
    corr: Tensor
    weights: WeightTriple

    def values(self):
        return {
            "total": self.total.item(),
            "recon_nll": self.recon_nll.item(),
            "kl": self.kl.item(),
            "corr": self.corr.item(),
            "alpha": self.weights.alpha,
            "beta": self.weights.beta,
            "gamma": self.weights.gamma,
        }


def compose_loss(recon_nll: Tensor, kl: Tensor, corr, weights: WeightTriple) -> LossBreakdown:
    """Combine the loss terms under a pre-clamped weight triple.

    ``corr`` may be None when the variant carries no divergence term; the
    breakdown then records an exact zero. Non-finite terms raise
    :class:`NonFiniteLossError` carrying the partial breakdown.
    """
    if corr is None:
        corr = Tensor(0.0)
    for label, term in (("recon_nll", recon_nll), ("kl", kl), ("corr", corr)):
        if term.data.shape != ():
            raise ContractError(f"{label} must be scalar, got shape {term.shape}")
    parts = {"recon_nll": recon_nll.item(), "kl": kl.item(), "corr": corr.item(),
             "alpha": weights.alpha, "beta": weights.beta, "gamma": weights.gamma}
    bad = [k for k, v in parts.items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteLossError(
            f"non-finite loss term(s) {', '.join(bad)}: {parts}", breakdown=parts)
    recon_coeff = 1.0 - weights.alpha - weights.beta
    total = T.add(T.scalar_mul(recon_nll, recon_coeff), T.scalar_mul(kl, weights.beta))
    if weights.gamma != 0.0 or corr.item() != 0.0:
        total = T.add(total, T.scalar_mul(corr, weights.gamma))
    return LossBreakdown(total=total, recon_nll=recon_nll, kl=kl, corr=corr, weights=weights)


def mutual_info_report(recon_nll: float, kl: float, corr: float):
    """Surrogate mutual-information pair (I_p, I_q).

    I_p = -recon_nll (a lower bound on decoder information up to a constant);
    I_q = kl - corr (posterior-vs-aggregate information split).
    """
    return (-float(recon_nll), float(kl) - float(corr))
