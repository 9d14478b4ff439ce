import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from onewaygate.model import (
    DegenerateGroupError,
    DensitySpec,
    GammParams,
    GroupedObservations,
    brute_force_posterior,
    build_lfdr_table,
    generate_dataset,
    lambda_group,
    lfdr_cond,
    lfdr_group,
    lfdr_hypothesis,
    lfdr_hypothesis_direct,
    lfdr_star,
    tpbern_pmf,
    tpbern_sample,
)
from onewaygate.simulate import mixture_preset

K1 = DensitySpec((1.0,), (2.0,), 1.0)
FLAT = DensitySpec((1.0,), (0.0,), 1.0)  # f1 == f0


def enumerate_posterior(x, pi1, pi2, w, mu):
    """Test-local oracle: joint law written out term by term with plain floats."""
    n = len(x)
    f0 = [stats.norm.pdf(v) for v in x]
    f1 = [sum(wk * stats.norm.pdf(v, mk, 1.0) for wk, mk in zip(w, mu)) for v in x]
    norm = 1.0 - (1.0 - pi2) ** n
    null = (1.0 - pi1) * np.prod(f0)
    sig_total, sig_null_j = 0.0, np.zeros(n)
    for z in itertools.product((0, 1), repeat=n):
        if sum(z) == 0:
            continue
        prior = np.prod([pi2 if zj else 1.0 - pi2 for zj in z]) / norm
        lik = np.prod([f1[j] if z[j] else f0[j] for j in range(n)])
        term = pi1 * prior * lik
        sig_total += term
        for j in range(n):
            if not z[j]:
                sig_null_j[j] += term
    return null / (null + sig_total), sig_null_j / sig_total


# --- TPBern ------------------------------------------------------------------

def test_tpbern_pmf_examples():
    assert tpbern_pmf([1], 0.37) == pytest.approx(1.0)
    assert tpbern_pmf([0, 0], 0.5) == 0.0
    assert tpbern_pmf([1, 0], 0.5) == pytest.approx(1 / 3)


@pytest.mark.parametrize("n,pi", [(1, 0.2), (3, 0.3), (6, 0.05), (8, 0.9)])
def test_tpbern_pmf_normalises(n, pi):
    total = sum(tpbern_pmf(z, pi) for z in itertools.product((0, 1), repeat=n))
    assert total == pytest.approx(1.0, abs=1e-13)


def test_tpbern_sample_singleton_and_truncation():
    rng = np.random.default_rng(1)
    assert tpbern_sample(0.5, 1, rng).tolist() == [1]
    for _ in range(500):
        assert tpbern_sample(0.05, 7, rng).sum() >= 1


def test_tpbern_sample_frequency_of_both_ones():
    rng = np.random.default_rng(2)
    draws = np.array([tpbern_sample(0.3, 2, rng) for _ in range(100_000)])
    freq = np.mean(draws.sum(axis=1) == 2)
    p = 0.09 / 0.51
    se = np.sqrt(p * (1 - p) / draws.shape[0])
    assert abs(freq - p) < 3 * se


# --- Lfdr* and lambda --------------------------------------------------------

def test_lfdr_star_examples():
    # f1(1) = f0(1) when mu = 2: equal likelihoods give the prior null mass
    assert lfdr_star(1.0, 0.3, K1) == pytest.approx(0.7, abs=1e-14)
    f0, f1 = 0.398942280401433, 0.053990966513188
    assert lfdr_star(0.0, 0.3, K1) == pytest.approx(0.7 * f0 / (0.7 * f0 + 0.3 * f1), abs=1e-12)
    assert lfdr_star(0.0, 0.3, K1) == pytest.approx(0.94518, abs=5e-6)
    assert abs(lfdr_star(3.0, 1e-8, K1) - 1.0) < 1e-6


def test_lfdr_star_rejects_bad_input():
    with pytest.raises(ValueError):
        lfdr_star(np.inf, 0.3, K1)
    with pytest.raises(ValueError):
        lfdr_star(0.0, 1.0, K1)


def test_lambda_examples():
    pi2, n = 0.3, 10
    assert lambda_group(1 - (1 - pi2) ** n, pi2, n) == pytest.approx(1.0, rel=1e-12)
    assert lambda_group(0.5, 0.3, 10) == pytest.approx(0.0282475249 / (1 - 0.0282475249), rel=1e-9)
    assert lambda_group(0.5, 0.3, 10) == pytest.approx(0.029068, abs=1e-6)
    pi1 = 0.37
    assert lambda_group(pi1, 0.2, 1) == pytest.approx(pi1 * 0.8 / (0.63 * 0.2), rel=1e-12)


def test_lfdr_group_examples():
    assert lfdr_group(0.37, 1.0) == pytest.approx(0.37, rel=1e-14)
    assert lfdr_group(0.5, 2.0) == pytest.approx(1 / 3, rel=1e-14)
    assert lfdr_group(0.25, 1 / 3) == pytest.approx(0.5, rel=1e-14)
    assert lfdr_group(0.0, 0.5) == 0.0
    assert lfdr_group(1.0, 0.5) == 1.0


def test_lfdr_cond_examples():
    assert lfdr_cond(0.4, 0.4) == 0.0
    assert lfdr_cond(0.9, 0.45) == pytest.approx(0.45 / 0.55, rel=1e-14)
    assert lfdr_cond(0.0, 0.0) == 0.0
    with pytest.raises(DegenerateGroupError):
        lfdr_cond(1.0, 1.0)


def test_lfdr_hypothesis_examples():
    assert lfdr_hypothesis(0.0, 0.0) == 0.0
    assert lfdr_hypothesis(1.0, 0.3) == 1.0
    assert lfdr_hypothesis(1.0, 0.0) == 1.0


def test_uninformative_pair_recovers_prior():
    post, _ = brute_force_posterior([0.3, -1.2], 0.5, 0.5, FLAT)
    assert post == pytest.approx(0.5, abs=1e-14)
    L = 0.5 * 0.5  # Lfdr* = 1 - pi2 for both members
    lam = lambda_group(0.5, 0.5, 2)
    assert lam == pytest.approx(1 / 3)
    assert lfdr_group(L, lam) == pytest.approx(0.5)


def test_brute_force_singleton_conditional_is_zero():
    _, cond = brute_force_posterior([0.7], 0.4, 0.3, K1)
    assert cond.tolist() == [0.0]


def test_brute_force_matches_test_oracle():
    rng = np.random.default_rng(3)
    for K in (1, 2, 3):
        w, mu = mixture_preset(K)
        d = DensitySpec(w, mu, 1.0)
        for _ in range(5):
            n = int(rng.integers(1, 6))
            x = rng.normal(0, 2, n)
            pi1, pi2 = rng.uniform(0.05, 0.95, 2)
            g, c = brute_force_posterior(x, pi1, pi2, d)
            g2, c2 = enumerate_posterior(x, pi1, pi2, w, mu)
            assert g == pytest.approx(g2, abs=1e-12)
            np.testing.assert_allclose(c, c2, atol=1e-12)


# --- tables ------------------------------------------------------------------

def _random_instance(rng):
    K = int(rng.integers(1, 4))
    w, mu = mixture_preset(K)
    n = int(rng.integers(1, 9))
    pi1, pi2 = rng.uniform(0.05, 0.95, 2)
    x = rng.normal(0, 2, n)
    return x, pi1, pi2, DensitySpec(w, mu, 1.0)


def test_closed_form_matches_enumeration():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        x, pi1, pi2, d = _random_instance(rng)
        table = build_lfdr_table(GroupedObservations(x, [x.size]), GammParams(pi1, pi2, d))
        g, c = brute_force_posterior(x, pi1, pi2, d)
        worst = max(worst, abs(table.lfdr_group[0] - g), np.max(np.abs(table.lfdr_cond - c)))
    assert worst < 1e-10


def test_single_member_group_table():
    table = build_lfdr_table(GroupedObservations([1.3], [1]), GammParams(0.4, 0.3, K1))
    assert table.lfdr_cond[0] == 0.0
    assert table.lfdr_hyp[0] == pytest.approx(table.lfdr_group[0], abs=1e-15)


def test_no_group_effect_reduces_to_lfdr_star():
    rng = np.random.default_rng(5)
    pi2, n = 0.3, 6
    params = GammParams(1 - (1 - pi2) ** n, pi2, K1)
    data = GroupedObservations(rng.normal(1, 2, 5 * n), [n] * 5)
    table = build_lfdr_table(data, params)
    np.testing.assert_allclose(table.lam, 1.0, rtol=1e-12)
    np.testing.assert_allclose(table.lfdr_hyp, table.lfdr_star, atol=1e-12)


def test_dual_formula_identity():
    rng = np.random.default_rng(6)
    for _ in range(200):
        m = int(rng.integers(1, 6))
        sizes = rng.integers(1, 9, m)
        K = int(rng.integers(1, 4))
        params = GammParams(*rng.uniform(0.05, 0.95, 2), DensitySpec(*mixture_preset(K), 1.0))
        data = GroupedObservations(rng.normal(0, 2, sizes.sum()), sizes)
        t = build_lfdr_table(data, params)
        gi = t.group_index
        direct = lfdr_hypothesis_direct(t.lfdr_star, t.lfdr_star_group[gi], t.lam[gi])
        assert np.max(np.abs(direct - t.lfdr_hyp)) < 1e-12


def test_degenerate_group_sets_conditional_to_zero():
    # Lfdr* underflows to 1 only in the limit; force it through pi2 -> 0
    data = GroupedObservations([0.0, 0.1], [2])
    table = build_lfdr_table(data, GammParams(0.5, 1e-17, K1))
    assert 1.0 - table.lfdr_star_group[0] < 1e-15
    assert np.all(table.lfdr_cond == 0.0)
    assert np.all(table.lfdr_hyp == table.lfdr_group[0])


def test_extreme_statistics_stay_finite():
    data = GroupedObservations([40.0, -40.0, 0.0, 35.0], [2, 2])
    table = build_lfdr_table(data, GammParams(0.5, 0.3, K1))
    for arr in (table.lfdr_hyp, table.lfdr_group, table.lfdr_cond):
        assert np.all(np.isfinite(arr)) and np.all((arr >= 0) & (arr <= 1))


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-6, 6), min_size=1, max_size=6),
    pi1=st.floats(0.01, 0.99),
    pi2=st.floats(0.01, 0.99),
)
def test_table_invariants(x, pi1, pi2):
    data = GroupedObservations(x, [len(x)])
    t = build_lfdr_table(data, GammParams(pi1, pi2, K1))
    for arr in (t.lfdr_star, t.lfdr_cond, t.lfdr_hyp, t.lfdr_group):
        assert np.all((arr >= 0) & (arr <= 1))
    # a hypothesis is null whenever its group is null
    assert np.all(t.lfdr_hyp >= t.lfdr_group[0] - 1e-12)
    assert t.lfdr_star_group[0] == pytest.approx(np.prod(t.lfdr_star), rel=1e-10, abs=1e-300)


# --- data containers and generation -----------------------------------------

def test_grouped_observations_validation():
    with pytest.raises(ValueError):
        GroupedObservations([1.0, 2.0], [3])
    with pytest.raises(ValueError):
        GroupedObservations([1.0], [0, 1])
    with pytest.raises(ValueError):
        GroupedObservations([np.nan], [1])
    arr = np.array([1.0, 2.0])
    GroupedObservations(arr, [2])
    arr[0] = 5.0  # caller's array stays writable


def test_params_validation():
    with pytest.raises(ValueError):
        GammParams(1.2, 0.3)
    with pytest.raises(ValueError):
        build_lfdr_table(GroupedObservations([0.0], [1]), GammParams(1.0, 0.3))
    with pytest.raises(ValueError):
        GammParams(0.5, (0.2, 0.3)).shared_pi2


def test_generate_all_signal_singletons():
    data, truth = generate_dataset(50, 1, GammParams(1.0, 0.3, K1), np.random.default_rng(0))
    assert truth.theta_hyp.all()


def test_generate_truth_consistency():
    rng = np.random.default_rng(7)
    data, truth = generate_dataset(400, 5, GammParams(0.4, 0.3, K1), rng)
    gi = data.group_index
    per_group = np.bincount(gi, weights=truth.theta_cond, minlength=data.m)
    assert np.all(per_group[truth.theta_group] >= 1)
    assert not truth.theta_hyp[~truth.theta_group[gi]].any()
    assert abs(truth.theta_group.mean() - 0.4) < 4 * np.sqrt(0.24 / 400)


def test_generate_is_seed_deterministic():
    p = GammParams(0.5, 0.3, DensitySpec(*mixture_preset(3), 1.0))
    a, ta = generate_dataset(30, 4, p, np.random.default_rng(11))
    b, tb = generate_dataset(30, 4, p, np.random.default_rng(11))
    assert a == b
    assert np.array_equal(ta.theta_hyp, tb.theta_hyp)


def test_group_effect_range_at_fitted_school_estimates():
    # fitted (pi1, pi2) = (0.53, 0.59), districts of 1 to 277 schools: lambda spans 0 to 0.78
    lam = lambda_group(0.53, 0.59, np.array([1, 2, 10, 277]))
    assert lam[0] == pytest.approx(0.78, abs=0.005)
    assert np.all(np.diff(lam) < 0) and lam[-1] < 1e-100
