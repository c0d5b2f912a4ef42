"""Histogram-based disentanglement scores: MIG, JEMMIG, Modularity.

Codes are continuous (posterior means); they are discretised into B
equal-width bins per dimension before any information quantity is computed.
All entropies and mutual informations are plug-in estimates from empirical
joint histograms, in nats, with the 0 * ln 0 := 0 convention.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedScoreError, ValidationError

DEFAULT_BINS = 20


@dataclass
class FactorTable:
    """Ground-truth generative factors: an (n, K) integer table."""

    factors: np.ndarray
    cardinalities: tuple

    def __post_init__(self):
        self.factors = np.asarray(self.factors, dtype=np.int64)
        if self.factors.ndim != 2:
            raise ContractError(f"factors must be (n, K), got shape {self.factors.shape}")
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if len(self.cardinalities) != self.factors.shape[1]:
            raise ContractError(
                f"{len(self.cardinalities)} cardinalities for {self.factors.shape[1]} factors")
        for k, card in enumerate(self.cardinalities):
            col = self.factors[:, k]
            if card < 1 or col.min(initial=0) < 0 or (col.size and col.max() >= card):
                raise ValidationError(
                    f"factor {k} has entries outside [0, {card})")

    @property
    def n(self) -> int:
        return self.factors.shape[0]


@dataclass
class CodeTable:
    """Continuous latent codes (n, k) plus the bin count used to discretise."""

    codes: np.ndarray
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if self.codes.ndim != 2:
            raise ContractError(f"codes must be (n, k), got shape {self.codes.shape}")
        if self.bins < 2:
            raise ContractError(f"need at least 2 bins, got {self.bins}")


@dataclass
class MetricScores:
    """Per-item scores plus their mean; NaN marks skipped items."""

    per_item: np.ndarray
    mean: float


def discretize(codes: np.ndarray, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width binning per column over each column's [min, max] range.

    Constant columns map to bin 0; maxima land in the last bin.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2:
        raise ContractError(f"codes must be (n, k), got shape {codes.shape}")
    if bins < 2:
        raise ContractError(f"need at least 2 bins, got {bins}")
    if not np.all(np.isfinite(codes)):
        raise ContractError("codes must be finite")
    lo = codes.min(axis=0)
    width = (codes.max(axis=0) - lo) / bins
    out = np.zeros(codes.shape, dtype=np.int64)
    live = width > 0
    if np.any(live):
        scaled = (codes[:, live] - lo[live]) / width[live]
        out[:, live] = np.clip(scaled.astype(np.int64), 0, bins - 1)
    return out


def _joint_counts(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    va = int(a.max()) + 1
    vb = int(b.max()) + 1
    return np.bincount(a * vb + b, minlength=va * vb).reshape(va, vb)


def entropy(labels: np.ndarray) -> float:
    """Plug-in entropy of an integer label column, in nats."""
    labels = _check_labels(labels)
    counts = np.bincount(labels)
    p = counts[counts > 0] / labels.size
    return float(-(p * np.log(p)).sum())


def joint_entropy(a: np.ndarray, b: np.ndarray) -> float:
    a = _check_labels(a)
    b = _check_labels(b)
    _check_same_length(a, b)
    p = _joint_counts(a, b).ravel()
    p = p[p > 0] / a.size
    return float(-(p * np.log(p)).sum())


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in mutual information between two integer columns, in nats."""
    a = _check_labels(a)
    b = _check_labels(b)
    _check_same_length(a, b)
    joint = _joint_counts(a, b) / a.size
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mask = joint > 0
    ratio = joint[mask] / np.outer(pa, pb)[mask]
    return float((joint[mask] * np.log(ratio)).sum())


def _check_labels(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.size == 0:
        raise ContractError(f"labels must be a non-empty 1-D array, got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.integer):
        raise ContractError(f"labels must be integers, got dtype {x.dtype}")
    if x.min() < 0:
        raise ContractError("labels must be non-negative")
    return x.astype(np.int64)


def _check_same_length(a, b):
    if a.shape[0] != b.shape[0]:
        raise ContractError(f"label columns have different lengths: {a.shape[0]} vs {b.shape[0]}")


def _mi_matrix(codes: CodeTable, factors: FactorTable) -> np.ndarray:
    if codes.codes.shape[0] != factors.n:
        raise ContractError(
            f"codes ({codes.codes.shape[0]} rows) and factors ({factors.n} rows) disagree")
    disc = discretize(codes.codes, codes.bins)
    n_codes = disc.shape[1]
    n_factors = factors.factors.shape[1]
    mi = np.zeros((n_codes, n_factors))
    for j in range(n_codes):
        for k in range(n_factors):
            mi[j, k] = mutual_information(disc[:, j], factors.factors[:, k])
    return mi


def mig(codes: CodeTable, factors: FactorTable, denominator: str = "sum") -> MetricScores:
    """Mutual information gap per factor.

    For each factor, the gap between the two most informative codes,
    normalised by the total information all codes carry about the factor
    (``denominator="sum"``) or by the factor entropy (``"entropy"``).
    Factors about which no code is informative score 0.
    """
    if denominator not in ("sum", "entropy"):
        raise ContractError(f"unknown denominator {denominator!r}")
    mi = _mi_matrix(codes, factors)
    n_factors = mi.shape[1]
    per = np.zeros(n_factors)
    for k in range(n_factors):
        col = np.sort(mi[:, k])[::-1]
        gap = col[0] - (col[1] if col.size > 1 else 0.0)
        denom = col.sum() if denominator == "sum" else entropy(factors.factors[:, k])
        per[k] = gap / denom if denom > 0 else 0.0
    return MetricScores(per_item=per, mean=float(per.mean()))


def jemmig(codes: CodeTable, factors: FactorTable) -> MetricScores:
    """Joint-entropy-minus-information gap, reported in normalised form.

    raw_k = H(y_k, z_I) - I(y_k, z_I) + I(y_k, z_II) with z_I, z_II the two
    most informative codes; reported_k = 1 - raw_k / (H(y_k) + ln B), so
    higher is better and scores live in [0, 1].
    """
    mi = _mi_matrix(codes, factors)
    disc = discretize(codes.codes, codes.bins)
    log_bins = np.log(codes.bins)
    n_factors = mi.shape[1]
    per = np.zeros(n_factors)
    for k in range(n_factors):
        y = factors.factors[:, k]
        order = np.argsort(mi[:, k])[::-1]
        top = order[0]
        second_mi = mi[order[1], k] if order.size > 1 else 0.0
        raw = joint_entropy(y, disc[:, top]) - mi[top, k] + second_mi
        per[k] = 1.0 - raw / (entropy(y) + log_bins)
    per = np.clip(per, 0.0, 1.0)
    return MetricScores(per_item=per, mean=float(per.mean()))


def modularity(codes: CodeTable, factors: FactorTable) -> MetricScores:
    """Per-code modularity: 1 minus normalised off-target squared information.

    For code j with best factor theta_j = max_k m_jk:
    1 - sum_{k != argmax} m_jk^2 / (theta_j^2 * (K - 1)). Codes carrying no
    information (theta_j = 0) are skipped (NaN); if every code is
    uninformative the score is undefined.
    """
    mi = _mi_matrix(codes, factors)
    n_codes, n_factors = mi.shape
    per = np.full(n_codes, np.nan)
    for j in range(n_codes):
        theta = mi[j].max()
        if theta <= 0.0:
            continue
        if n_factors == 1:
            per[j] = 1.0
            continue
        best = int(np.argmax(mi[j]))
        off = float((mi[j] ** 2).sum() - mi[j, best] ** 2)
        per[j] = 1.0 - off / (theta * theta * (n_factors - 1))
    kept = per[~np.isnan(per)]
    if kept.size == 0:
        raise UndefinedScoreError("modularity undefined: every code is uninformative")
    return MetricScores(per_item=per, mean=float(kept.mean()))
