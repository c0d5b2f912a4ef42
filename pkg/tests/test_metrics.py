"""Disentanglement metric checks against brute-force information oracles."""

import itertools
import math
from collections import Counter

import numpy as np
import pytest

from gcvae import metrics as MX
from gcvae.errors import ContractError, UndefinedScoreError, ValidationError


# ---------------------------------------------------------------------------
# oracles: direct plug-in estimators over explicit count tables
# ---------------------------------------------------------------------------


def entropy_reference(labels):
    n = len(labels)
    return -sum((c / n) * math.log(c / n) for c in Counter(labels).values())


def joint_entropy_reference(a, b):
    return entropy_reference(list(zip(a, b)))


def mi_reference(a, b):
    """I(A;B) = sum_ab p(a,b) log( p(a,b) / (p(a) p(b)) )."""
    n = len(a)
    pa = Counter(a)
    pb = Counter(b)
    pab = Counter(zip(a, b))
    total = 0.0
    for (va, vb), c in pab.items():
        p_joint = c / n
        total += p_joint * math.log(p_joint / ((pa[va] / n) * (pb[vb] / n)))
    return total


def mig_reference(disc, factors, denominator="sum"):
    n_codes, n_factors = disc.shape[1], factors.shape[1]
    per = []
    for k in range(n_factors):
        col = sorted((mi_reference(list(disc[:, j]), list(factors[:, k]))
                      for j in range(n_codes)), reverse=True)
        gap = col[0] - (col[1] if len(col) > 1 else 0.0)
        denom = sum(col) if denominator == "sum" else entropy_reference(list(factors[:, k]))
        per.append(gap / denom if denom > 0 else 0.0)
    return per


def factorial_design(cards=(3, 4, 5)):
    """Every factor combination once: factors are exactly independent."""
    rows = list(itertools.product(*[range(c) for c in cards]))
    return np.array(rows, dtype=np.int64)


# ---------------------------------------------------------------------------
# discretisation
# ---------------------------------------------------------------------------


def test_discretize_two_bins():
    codes = np.array([[0.0], [0.2], [0.5], [0.9], [1.0]])
    got = MX.discretize(codes, bins=2)
    assert got.ravel().tolist() == [0, 0, 1, 1, 1]


def test_discretize_constant_column_is_bin_zero():
    got = MX.discretize(np.full((7, 2), 3.25), bins=5)
    assert np.array_equal(got, np.zeros((7, 2), dtype=np.int64))


def test_discretize_uniform_grid_balances_bins():
    codes = np.arange(100.0).reshape(100, 1)
    got = MX.discretize(codes, bins=10).ravel()
    counts = np.bincount(got, minlength=10)
    assert counts.tolist() == [10] * 10


def test_discretize_maximum_lands_in_last_bin():
    got = MX.discretize(np.array([[0.0], [1.0]]), bins=20).ravel()
    assert got.tolist() == [0, 19]


def test_discretize_contract():
    with pytest.raises(ContractError):
        MX.discretize(np.zeros((3, 2)), bins=1)
    with pytest.raises(ContractError):
        MX.discretize(np.zeros(5))
    with pytest.raises(ContractError):
        MX.discretize(np.array([[np.nan], [0.0]]))


# ---------------------------------------------------------------------------
# information estimators
# ---------------------------------------------------------------------------


def test_entropy_examples():
    assert MX.entropy(np.zeros(10, dtype=np.int64)) == 0.0
    uniform4 = np.repeat(np.arange(4), 25)
    assert abs(MX.entropy(uniform4) - math.log(4)) < 1e-12


def test_entropy_matches_reference_on_random_labels():
    rng = np.random.default_rng(0)
    for _ in range(10):
        labels = rng.integers(0, 6, size=200)
        assert abs(MX.entropy(labels) - entropy_reference(list(labels))) < 1e-12


def test_joint_entropy_properties():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 4, size=300)
    b = rng.integers(0, 3, size=300)
    got = MX.joint_entropy(a, b)
    assert abs(got - joint_entropy_reference(list(a), list(b))) < 1e-12
    assert abs(MX.joint_entropy(a, b) - MX.joint_entropy(b, a)) < 1e-12
    assert abs(MX.joint_entropy(a, a) - MX.entropy(a)) < 1e-12


def test_mutual_information_of_identical_uniform_labels():
    labels = np.repeat(np.arange(4), 25)
    assert abs(MX.mutual_information(labels, labels) - math.log(4)) < 1e-12


def test_mutual_information_of_exact_product_design_is_zero():
    a = np.repeat(np.arange(2), 50)          # 50 zeros then 50 ones
    b = np.tile(np.repeat(np.arange(2), 25), 2)  # balanced within each half
    assert MX.mutual_information(a, b) == 0.0


def test_mutual_information_skewed_table_value():
    # joint counts [[40, 10], [10, 40]] -> 2*(0.4 ln 1.6 + 0.1 ln 0.4) nats
    a = np.repeat(np.arange(2), 50)
    b = np.concatenate([np.repeat(0, 40), np.repeat(1, 10),
                        np.repeat(0, 10), np.repeat(1, 40)])
    got = MX.mutual_information(a, b)
    expected = 0.8 * math.log(1.6) + 0.2 * math.log(0.4)
    assert abs(got - expected) < 1e-12
    assert abs(got - 0.1927447570217575) < 1e-12
    # the same table reads 0.278 when expressed in bits
    assert abs(got / math.log(2) - 0.278) < 1e-3


def test_mutual_information_matches_reference_on_random_labels():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = rng.integers(0, 5, size=400)
        b = (a + rng.integers(0, 3, size=400)) % 5
        got = MX.mutual_information(a, b)
        assert abs(got - mi_reference(list(a), list(b))) < 1e-12


def test_mutual_information_bounds_and_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.integers(0, 6, size=250)
        b = rng.integers(0, 4, size=250)
        mi = MX.mutual_information(a, b)
        assert mi >= -1e-12
        assert mi <= min(MX.entropy(a), MX.entropy(b)) + 1e-12
        assert abs(mi - MX.mutual_information(b, a)) < 1e-12


def test_label_contracts():
    with pytest.raises(ContractError):
        MX.entropy(np.array([0.5, 1.5]))
    with pytest.raises(ContractError):
        MX.entropy(np.array([], dtype=np.int64))
    with pytest.raises(ContractError):
        MX.mutual_information(np.array([0, 1]), np.array([0, 1, 2]))
    with pytest.raises(ContractError):
        MX.entropy(np.array([-1, 0]))


# ---------------------------------------------------------------------------
# MIG
# ---------------------------------------------------------------------------


def test_mig_is_one_for_a_perfect_code():
    factors = factorial_design()
    table = MX.FactorTable(factors, cardinalities=(3, 4, 5))
    codes = MX.CodeTable(factors.astype(np.float64), bins=20)
    scores = MX.mig(codes, table)
    assert np.array_equal(scores.per_item, np.ones(3))
    assert scores.mean == 1.0


def test_mig_is_zero_for_duplicated_codes():
    factors = factorial_design()
    table = MX.FactorTable(factors, cardinalities=(3, 4, 5))
    dup = np.hstack([factors.astype(np.float64), factors.astype(np.float64)])
    scores = MX.mig(MX.CodeTable(dup, bins=20), table)
    assert scores.mean == 0.0


def test_mig_matches_brute_force_reference():
    rng = np.random.default_rng(4)
    factors = rng.integers(0, (3, 4), size=(200, 2))
    table = MX.FactorTable(factors, cardinalities=(3, 4))
    codes_arr = rng.standard_normal((200, 3)) + factors[:, [0, 1, 0]]
    for denominator in ("sum", "entropy"):
        codes = MX.CodeTable(codes_arr, bins=10)
        got = MX.mig(codes, table, denominator=denominator)
        disc = MX.discretize(codes_arr, 10)
        ref = mig_reference(disc, factors, denominator)
        assert np.allclose(got.per_item, ref, atol=1e-10)
        assert abs(got.mean - np.mean(ref)) < 1e-10


def test_mig_scores_stay_in_unit_interval():
    rng = np.random.default_rng(5)
    for seed in range(5):
        factors = rng.integers(0, 4, size=(150, 3))
        codes = rng.standard_normal((150, 4))
        scores = MX.mig(MX.CodeTable(codes, bins=8),
                        MX.FactorTable(factors, cardinalities=(4, 4, 4)))
        assert np.all(scores.per_item >= 0.0)
        assert np.all(scores.per_item <= 1.0)


def test_mig_unknown_denominator():
    factors = factorial_design((2, 2))
    with pytest.raises(ContractError):
        MX.mig(MX.CodeTable(factors.astype(float), bins=4),
               MX.FactorTable(factors, cardinalities=(2, 2)),
               denominator="max")


def test_mig_is_invariant_to_row_permutation():
    rng = np.random.default_rng(6)
    factors = factorial_design((3, 3))
    codes = factors.astype(np.float64) + 0.01 * rng.standard_normal(factors.shape)
    table = MX.FactorTable(factors, cardinalities=(3, 3))
    base = MX.mig(MX.CodeTable(codes, bins=6), table).mean
    perm = rng.permutation(factors.shape[0])
    table_p = MX.FactorTable(factors[perm], cardinalities=(3, 3))
    permuted = MX.mig(MX.CodeTable(codes[perm], bins=6), table_p).mean
    assert base == permuted


def test_mig_is_invariant_to_positive_affine_code_scaling():
    factors = factorial_design((3, 4))
    table = MX.FactorTable(factors, cardinalities=(3, 4))
    base = MX.mig(MX.CodeTable(factors.astype(np.float64), bins=12), table).per_item
    scaled = MX.mig(MX.CodeTable(2.0 * factors + 1.0, bins=12), table).per_item
    assert np.array_equal(base, scaled)


def test_null_mig_is_small_for_uninformative_codes():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        factors = factorial_design((4, 5, 5))  # 100 rows
        reps = np.tile(factors, (20, 1))       # 2000 rows
        codes = rng.standard_normal((reps.shape[0], 6))
        scores = MX.mig(MX.CodeTable(codes, bins=20),
                        MX.FactorTable(reps, cardinalities=(4, 5, 5)))
        assert scores.mean < 0.05


# ---------------------------------------------------------------------------
# JEMMIG
# ---------------------------------------------------------------------------


def test_jemmig_perfect_single_code():
    factors = np.repeat(np.arange(5), 20).reshape(-1, 1)
    table = MX.FactorTable(factors, cardinalities=(5,))
    scores = MX.jemmig(MX.CodeTable(factors.astype(np.float64), bins=10), table)
    assert scores.per_item.tolist() == [1.0]
    assert scores.mean == 1.0


def test_jemmig_reported_form_matches_manual_computation():
    rng = np.random.default_rng(7)
    factors = rng.integers(0, 3, size=(400, 1))
    codes_arr = np.hstack([factors + 0.1 * rng.standard_normal((400, 1)),
                           rng.standard_normal((400, 1))])
    bins = 6
    got = MX.jemmig(MX.CodeTable(codes_arr, bins=bins),
                    MX.FactorTable(factors, cardinalities=(3,))).per_item[0]
    disc = MX.discretize(codes_arr, bins)
    y = list(factors[:, 0])
    mis = [mi_reference(list(disc[:, j]), y) for j in range(2)]
    top = int(np.argmax(mis))
    raw = (joint_entropy_reference(y, list(disc[:, top]))
           - mis[top] + mis[1 - top])
    expected = 1.0 - raw / (entropy_reference(y) + math.log(bins))
    assert abs(got - min(max(expected, 0.0), 1.0)) < 1e-10


def test_jemmig_independent_codes_score_low():
    rng = np.random.default_rng(8)
    factors = np.tile(factorial_design((4, 4)), (200, 1))  # 3200 rows
    codes = rng.standard_normal((factors.shape[0], 3))
    scores = MX.jemmig(MX.CodeTable(codes, bins=20),
                       MX.FactorTable(factors, cardinalities=(4, 4)))
    assert np.all(scores.per_item < 0.15)


def test_jemmig_scores_clipped_to_unit_interval():
    rng = np.random.default_rng(9)
    for _ in range(5):
        factors = rng.integers(0, 5, size=(120, 2))
        codes = rng.standard_normal((120, 3)) * 4
        scores = MX.jemmig(MX.CodeTable(codes, bins=8),
                           MX.FactorTable(factors, cardinalities=(5, 5)))
        assert np.all((scores.per_item >= 0.0) & (scores.per_item <= 1.0))


# ---------------------------------------------------------------------------
# modularity
# ---------------------------------------------------------------------------


def test_modularity_single_factor_is_one():
    factors = np.repeat(np.arange(4), 25).reshape(-1, 1)
    codes = factors.astype(np.float64) + 0.001
    scores = MX.modularity(MX.CodeTable(codes, bins=8),
                           MX.FactorTable(factors, cardinalities=(4,)))
    assert scores.mean == 1.0


def test_modularity_equal_split_across_two_factors_is_zero():
    y = np.repeat(np.arange(4), 25)
    factors = np.stack([y, y], axis=1)  # two identical factors
    codes = y.astype(np.float64).reshape(-1, 1)
    scores = MX.modularity(MX.CodeTable(codes, bins=8),
                           MX.FactorTable(factors, cardinalities=(4, 4)))
    assert scores.per_item.tolist() == [0.0]


def test_modularity_skips_uninformative_codes():
    factors = factorial_design((3, 3))
    informative = factors[:, :1].astype(np.float64)
    dead = np.zeros((factors.shape[0], 1))  # constant -> zero information
    scores = MX.modularity(MX.CodeTable(np.hstack([informative, dead]), bins=6),
                           MX.FactorTable(factors, cardinalities=(3, 3)))
    assert np.isnan(scores.per_item[1])
    assert scores.mean == scores.per_item[0]


def test_modularity_undefined_when_nothing_informative():
    factors = factorial_design((3, 3))
    dead = np.zeros((factors.shape[0], 2))
    with pytest.raises(UndefinedScoreError):
        MX.modularity(MX.CodeTable(dead, bins=6),
                      MX.FactorTable(factors, cardinalities=(3, 3)))


def test_modularity_matches_manual_formula():
    rng = np.random.default_rng(10)
    factors = rng.integers(0, (3, 4, 2), size=(300, 3))
    codes_arr = factors @ np.array([[1.0, 0.2, 0.0]]).T + 0.05 * rng.standard_normal((300, 1))
    table = MX.FactorTable(factors, cardinalities=(3, 4, 2))
    got = MX.modularity(MX.CodeTable(codes_arr, bins=10), table).per_item[0]
    disc = MX.discretize(codes_arr, 10)
    mis = np.array([mi_reference(list(disc[:, 0]), list(factors[:, k])) for k in range(3)])
    theta = mis.max()
    off = float((mis**2).sum() - mis.max() ** 2)
    expected = 1.0 - off / (theta * theta * 2)
    assert abs(got - expected) < 1e-10


# ---------------------------------------------------------------------------
# table validation
# ---------------------------------------------------------------------------


def test_factor_table_validation():
    with pytest.raises(ValidationError):
        MX.FactorTable(np.array([[0], [3]]), cardinalities=(3,))
    with pytest.raises(ContractError):
        MX.FactorTable(np.array([[0], [1]]), cardinalities=(2, 2))
    with pytest.raises(ContractError):
        MX.FactorTable(np.zeros(4, dtype=np.int64), cardinalities=(1,))


def test_code_table_validation():
    with pytest.raises(ContractError):
        MX.CodeTable(np.zeros((4, 2)), bins=1)
    with pytest.raises(ContractError):
        MX.CodeTable(np.zeros(4))


def test_metric_row_count_mismatch():
    factors = MX.FactorTable(np.zeros((5, 1), dtype=np.int64), cardinalities=(1,))
    codes = MX.CodeTable(np.zeros((6, 2)))
    with pytest.raises(ContractError):
        MX.mig(codes, factors)
