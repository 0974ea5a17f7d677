import numpy as np
import pytest

from evmt import (
    ConfigurationError,
    InputError,
    ProcedureSpec,
    ebh_select,
    fdp_power,
    procedure_to_evalues,
    solve_threshold,
    storey_pi0,
)

from oracles import (
    brute_bc_rejections,
    brute_bc_threshold,
    brute_bh,
    brute_ebh,
    brute_fbc_threshold,
    brute_storey,
    random_pvalues,
)


def lfdr_curve(pi, kappa):
    """Monotone rejection curve used for fbc tests."""
    def phi(p):
        p = max(p, 1e-15)
        return pi / (pi + (1.0 - pi) * (1.0 - kappa) * p ** (-kappa))
    return phi


def random_curves(rng, n):
    pis = rng.uniform(0.2, 0.9, size=n)
    kappas = rng.uniform(0.1, 0.9, size=n)
    return [lfdr_curve(pi, ka) for pi, ka in zip(pis, kappas)]


def make_spec(kind, alpha, pvals=None, rng=None):
    if kind == "fbc":
        funcs = random_curves(rng, len(pvals))
        return ProcedureSpec(kind="fbc", alpha=alpha, rejection_functions=funcs)
    return ProcedureSpec(kind=kind, alpha=alpha)


# ---------------------------------------------------------------------------
# solve_threshold


def test_bh_small_example():
    p = [0.01, 0.02, 0.04, 0.9]
    res = solve_threshold(p, ProcedureSpec(kind="bh", alpha=0.05))
    khat, expected = brute_bh(p, 0.05)
    assert khat == 2
    assert set(res.rejected) == expected == {0, 1}
    assert res.feasible
    # plateau supremum: k_hat * alpha / n
    assert res.threshold == pytest.approx(2 * 0.05 / 4)


def test_bc_small_example():
    p = [0.01, 0.02, 0.03, 0.9]
    res = solve_threshold(p, ProcedureSpec(kind="bc", alpha=0.34))
    assert set(res.rejected) == brute_bc_rejections(p, 0.34) == {0, 1, 2}
    assert res.m_at_T == 1.0
    assert res.threshold == pytest.approx(brute_bc_threshold(p, 0.34)) == 0.03


def test_all_ones_infeasible_every_kind():
    p = [1.0, 1.0, 1.0]
    rng = np.random.default_rng(0)
    for kind in ("bh", "storey", "bc", "fbc"):
        res = solve_threshold(p, make_spec(kind, 0.05, p, rng))
        assert not res.feasible
        assert res.threshold is None
        assert res.rejected.size == 0


def test_pvalue_validation():
    with pytest.raises(InputError):
        solve_threshold([0.1, 1.2], ProcedureSpec(kind="bh", alpha=0.05))
    with pytest.raises(InputError):
        solve_threshold([0.1, np.nan], ProcedureSpec(kind="bh", alpha=0.05))
    with pytest.raises(InputError):
        solve_threshold([], ProcedureSpec(kind="bh", alpha=0.05))


def test_invalid_spec_configuration():
    with pytest.raises(ConfigurationError):
        ProcedureSpec(kind="bh", alpha=1.5)
    with pytest.raises(ConfigurationError):
        ProcedureSpec(kind="bh", alpha=0.0)
    with pytest.raises(ConfigurationError):
        ProcedureSpec(kind="storey", alpha=0.05, storey_lambda=1.0)
    with pytest.raises(ConfigurationError):
        ProcedureSpec(kind="nope", alpha=0.05)
    with pytest.raises(ConfigurationError):
        ProcedureSpec(kind="fbc", alpha=0.05)


def test_fbc_rejects_non_monotone_curves():
    funcs = [lambda p: 0.4 - 0.3 * p] * 3
    spec = ProcedureSpec(kind="fbc", alpha=0.05, rejection_functions=funcs)
    with pytest.raises(ConfigurationError):
        solve_threshold([0.1, 0.5, 0.9], spec)


def test_fbc_t_upper_bound_enforced():
    funcs = [lfdr_curve(0.5, 0.5)] * 3
    bound = funcs[0](0.5)
    spec = ProcedureSpec(
        kind="fbc", alpha=0.05, rejection_functions=funcs, t_upper=bound + 0.01
    )
    with pytest.raises(ConfigurationError):
        solve_threshold([0.1, 0.5, 0.9], spec)


def test_fbc_matches_brute_force_grid():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(3, 40))
        p = random_pvalues(rng, n)
        funcs = random_curves(rng, n)
        alpha = float(rng.uniform(0.05, 0.6))
        spec = ProcedureSpec(kind="fbc", alpha=alpha, rejection_functions=funcs)
        res = solve_threshold(p, spec)
        u = [f(x) for f, x in zip(funcs, p)]
        v = [f(1.0 - x) for f, x in zip(funcs, p)]
        t_up = (1.0 - 1e-9) * min(f(0.5) for f in funcs)
        t_oracle = brute_fbc_threshold(u, v, alpha, t_up)
        if t_oracle is None:
            assert not res.feasible
        else:
            assert res.threshold == pytest.approx(t_oracle)
            assert set(res.rejected) == {i for i, x in enumerate(u) if x <= t_oracle}


def test_bc_matches_brute_force_grid():
    rng = np.random.default_rng(11)
    for _ in range(200):
        p = random_pvalues(rng, int(rng.integers(2, 60)))
        alpha = float(rng.uniform(0.05, 0.6))
        res = solve_threshold(p, ProcedureSpec(kind="bc", alpha=alpha))
        t_oracle = brute_bc_threshold(p, alpha)
        if t_oracle is None:
            assert not res.feasible
        else:
            assert res.threshold == pytest.approx(t_oracle)
            assert set(res.rejected) == brute_bc_rejections(p, alpha)


# ---------------------------------------------------------------------------
# storey_pi0


def test_storey_pi0_direct_counts():
    assert storey_pi0([0.1, 0.2, 0.6, 0.9], 0.5) == pytest.approx(1.5)
    # lambda = 0 with no zero p-values: (1 + n) / n
    assert storey_pi0([0.3, 0.7, 0.9], 0.0) == pytest.approx(4.0 / 3.0)
    assert storey_pi0([0.0, 0.9], 0.5) == pytest.approx(2.0)


def test_storey_pi0_rejects_lambda_one():
    with pytest.raises(ConfigurationError):
        storey_pi0([0.5, 0.5], 1.0)


def test_storey_threshold_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = random_pvalues(rng, int(rng.integers(2, 60)))
        alpha = float(rng.uniform(0.02, 0.4))
        lam = float(rng.uniform(0.0, 0.9))
        spec = ProcedureSpec(kind="storey", alpha=alpha, storey_lambda=lam)
        res = solve_threshold(p, spec)
        khat, expected = brute_storey(p, alpha, lam)
        assert set(res.rejected) == expected
        assert res.feasible == (khat > 0)


# ---------------------------------------------------------------------------
# procedure_to_evalues


def test_bc_evalue_conversion_values():
    p = [0.01, 0.02, 0.03, 0.9]
    spec = ProcedureSpec(kind="bc", alpha=0.34)
    res = solve_threshold(p, spec)
    e = procedure_to_evalues(p, spec, res)
    assert e.tolist() == [4.0, 4.0, 4.0, 0.0]


def test_infeasible_conversion_is_all_zero():
    p = [1.0, 1.0, 1.0]
    spec = ProcedureSpec(kind="bc", alpha=0.05)
    res = solve_threshold(p, spec)
    e = procedure_to_evalues(p, spec, res)
    assert not res.feasible
    assert np.all(e == 0.0)


def test_bh_conversion_reproduces_rejections_via_ebh():
    p = [0.01, 0.02, 0.04, 0.9]
    spec = ProcedureSpec(kind="bh", alpha=0.05)
    res = solve_threshold(p, spec)
    e = procedure_to_evalues(p, spec, res)
    assert set(ebh_select(e, 0.05)) == set(res.rejected) == {0, 1}


# ---------------------------------------------------------------------------
# ebh_select


def test_ebh_grouped_toy_rejects_nothing():
    e = np.zeros(1100)
    e[:20] = 1000.0
    e[20:40] = 100.0
    assert ebh_select(e, 0.05).size == 0


def test_ebh_all_zero():
    assert ebh_select(np.zeros(5), 0.1).size == 0


def test_ebh_small_example():
    # thresholds n / (i alpha) = 20, 10, 6.67, 5
    assert set(ebh_select([30.0, 10.0, 2.0, 0.0], 0.2)) == {0, 1}


def test_ebh_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n = int(rng.integers(1, 60))
        e = rng.choice([0.0, 1.0, 5.0], size=n) * rng.exponential(10.0, size=n)
        alpha = float(rng.uniform(0.02, 0.5))
        assert set(ebh_select(e, alpha)) == brute_ebh(list(e), alpha)


def test_ebh_tie_absorption():
    # two equal values straddling the formal cutoff are both rejected
    e = [8.0, 8.0, 0.0, 0.0]
    # n/(i*alpha) with alpha=0.5: 8, 4, 2.67, 2
    assert set(ebh_select(e, 0.5)) == {0, 1}


# ---------------------------------------------------------------------------
# fdp_power


def test_fdp_power_examples():
    # rejected {0, 1}; non-null = index 0 only
    fdp, power = fdp_power([0, 1], [1, 0, 0, 0])
    assert fdp == 0.5 and power == 1.0
    fdp, power = fdp_power([], [1, 0, 0, 0])
    assert fdp == 0.0 and power == 0.0
    fdp, power = fdp_power([0], [0, 0, 0])
    assert fdp == 1.0 and power == 0.0


def test_fdp_power_range_check():
    with pytest.raises(InputError):
        fdp_power([5], [0, 1])


# ---------------------------------------------------------------------------
# module invariants


@pytest.mark.parametrize("kind", ["bh", "storey", "bc", "fbc"])
def test_equivalence_between_procedure_and_ebh(kind):
    rng = np.random.default_rng(17)
    for _ in range(250):
        p = random_pvalues(rng)
        spec = make_spec(kind, float(rng.uniform(0.02, 0.5)), p, rng)
        res = solve_threshold(p, spec)
        e = procedure_to_evalues(p, spec, res)
        assert set(ebh_select(e, spec.alpha)) == set(res.rejected)


@pytest.mark.parametrize("kind", ["bh", "storey", "bc", "fbc"])
def test_alpha_monotonicity(kind):
    rng = np.random.default_rng(23)
    for _ in range(60):
        p = random_pvalues(rng, int(rng.integers(5, 80)))
        lo = float(rng.uniform(0.02, 0.3))
        hi = lo + float(rng.uniform(0.0, 0.5))
        if kind == "fbc":
            funcs = random_curves(rng, p.size)
            spec_lo = ProcedureSpec(kind=kind, alpha=lo, rejection_functions=funcs)
            spec_hi = ProcedureSpec(kind=kind, alpha=hi, rejection_functions=funcs)
        else:
            spec_lo = ProcedureSpec(kind=kind, alpha=lo)
            spec_hi = ProcedureSpec(kind=kind, alpha=hi)
        r_lo = set(solve_threshold(p, spec_lo).rejected)
        r_hi = set(solve_threshold(p, spec_hi).rejected)
        assert r_lo <= r_hi


def test_ebh_alpha_monotonicity():
    rng = np.random.default_rng(29)
    for _ in range(100):
        n = int(rng.integers(2, 50))
        e = rng.exponential(5.0, size=n)
        lo = float(rng.uniform(0.02, 0.3))
        hi = lo + float(rng.uniform(0.0, 0.5))
        assert set(ebh_select(e, lo)) <= set(ebh_select(e, hi))


def test_fdp_bounded_by_null_evalue_sum():
    # mechanics of the e-value FDP bound: FDP <= (alpha/n) * sum of null e-values
    rng = np.random.default_rng(31)
    for _ in range(200):
        n = int(rng.integers(5, 80))
        p = random_pvalues(rng, n)
        truth = (rng.uniform(size=n) < 0.3).astype(int)
        alpha = float(rng.uniform(0.05, 0.4))
        spec = ProcedureSpec(kind="bc", alpha=alpha)
        res = solve_threshold(p, spec)
        e = procedure_to_evalues(p, spec, res)
        rej = ebh_select(e, alpha) if e.any() else np.empty(0, dtype=int)
        fdp, _ = fdp_power(rej, truth)
        null_sum = e[truth == 0].sum()
        assert fdp <= alpha / n * null_sum + 1e-12


def test_m_at_threshold_bounds():
    rng = np.random.default_rng(37)
    for _ in range(100):
        p = random_pvalues(rng, int(rng.integers(2, 60)))
        alpha = float(rng.uniform(0.05, 0.5))
        bc = solve_threshold(p, ProcedureSpec(kind="bc", alpha=alpha))
        if bc.feasible:
            assert bc.m_at_T >= 1.0
            assert bc.m_at_T <= alpha * max(1, bc.rejected.size) * (1 + 1e-12)
        bh = solve_threshold(p, ProcedureSpec(kind="bh", alpha=alpha))
        if bh.feasible:
            assert bh.m_at_T > 0.0
            assert bh.m_at_T == pytest.approx(p.size * bh.threshold)
            # plateau convention puts the ratio exactly at alpha
            assert bh.m_at_T <= alpha * max(1, bh.rejected.size) * (1 + 1e-12)


@pytest.mark.parametrize("kind", ["bh", "storey", "bc"])
def test_permutation_equivariance(kind):
    rng = np.random.default_rng(41)
    for _ in range(50):
        p = random_pvalues(rng, int(rng.integers(3, 60)))
        alpha = float(rng.uniform(0.05, 0.5))
        spec = ProcedureSpec(kind=kind, alpha=alpha)
        perm = rng.permutation(p.size)
        base = solve_threshold(p, spec)
        shuffled = solve_threshold(p[perm], spec)
        assert {int(np.where(perm == i)[0][0]) for i in base.rejected} == set(
            shuffled.rejected
        )
