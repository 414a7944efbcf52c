import numpy as np
import pytest

from dppwalk import stats as st
from dppwalk.env import LatticeWindow, ProcessSpec


def test_ks_statistic_hand_value():
    # single sample at 0 against N(0,1): D = 1 - Phi(0) = 0.5
    assert st.ks_statistic([0.0], st.normal_cdf(1.0)) == pytest.approx(0.5)


def test_ks_accepts_matching_law():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 2.0, size=4000)
    stat = st.ks_statistic(x, st.normal_cdf(4.0))
    assert st.ks_pvalue(stat, 4000) > 0.01


def test_ks_rejects_wrong_law():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1.0, size=4000)
    stat = st.ks_statistic(x, st.normal_cdf(4.0))
    assert st.ks_pvalue(stat, 4000) < 1e-6


def test_ks_empty_sample():
    with pytest.raises(ValueError):
        st.ks_statistic([], st.normal_cdf(1.0))


def test_velocity_zero_band():
    rng = np.random.default_rng(1)
    rep = st.velocity_test(rng.normal(0, 100, size=(2000, 2)), horizon=10000)
    assert rep.passes
    assert rep.band_sigmas == 3.0


def test_velocity_negative_control():
    rng = np.random.default_rng(1)
    biased = rng.normal(0, 100, size=(2000, 2)) + np.array([80.0, 0.0])
    rep = st.velocity_test(biased, horizon=10000)
    assert not rep.passes


def test_gap_mean_estimators_agree():
    spec = ProcessSpec.bernoulli(0.5)
    assert st.analytic_gap_mean(spec) == 2.0
    import dppwalk.env as envmod
    env = envmod.sample(spec, LatticeWindow((8192,)), seed=3)
    birkhoff = st.birkhoff_gap_mean(env)
    assert birkhoff == pytest.approx(2.0, rel=0.01)
    assert st.analytic_gap_mean(ProcessSpec.explicit([(0,)])) is None


def test_moment_bernoulli_analytic():
    spec = ProcessSpec.bernoulli(0.5)
    w = LatticeWindow((4096,))
    m1 = st.moment_estimate(spec, w, 1.0, 40000, seed=1)
    m2 = st.moment_estimate(spec, w, 2.0, 40000, seed=1)
    assert m1.estimate == pytest.approx(2.0, rel=0.02)   # 1/p
    assert m2.estimate == pytest.approx(6.0, rel=0.05)   # (2-p)/p^2
    assert not m1.diverging and not m2.diverging


def test_moment_degenerate_gaps():
    rep = st.moment_from_samples(np.ones(5000), 3.0)
    assert rep.estimate == 1.0
    assert not rep.diverging


def test_moment_power_law_warns():
    k = np.arange(1, 20001)
    pmf = k ** -2.5
    pmf /= pmf.sum()
    gaps = np.random.default_rng(2).choice(k, p=pmf, size=40000)
    rep = st.moment_from_samples(gaps, 2.0)
    assert rep.diverging
    assert rep.hill_index < 2.0


def test_moment_rejects_bad_q():
    with pytest.raises(ValueError):
        st.moment_estimate(ProcessSpec.bernoulli(0.5), LatticeWindow((64,)),
                           0.0, 10, seed=0)


def test_clt_1d_bernoulli_small():
    rep = st.clt_1d(ProcessSpec.bernoulli(0.5), LatticeWindow((4096,)),
                    2000, 2000, seed=11)
    assert rep.target[0] == 4.0
    assert rep.target_provenance == "analytic"
    assert rep.empirical[0] == pytest.approx(4.0, rel=0.15)
    assert rep.passes
    assert rep.notes["estimator_agreement"] < 0.05


def test_gap_mean_internal_consistency_long_line():
    # analytic vs line-average estimator agree within 1% on a long window
    import dppwalk.env as envmod
    spec = ProcessSpec.bernoulli(0.5)
    env = envmod.sample(spec, LatticeWindow((1 << 17,)), seed=2)
    assert abs(st.birkhoff_gap_mean(env) - 2.0) / 2.0 < 0.01


def test_clt_1d_periodic_environment():
    sites = [(k,) for k in range(0, 96, 3)]
    rep = st.clt_1d(ProcessSpec.explicit(sites), LatticeWindow((96,)),
                    200, 500, seed=7)
    assert rep.target_provenance == "birkhoff"
    assert rep.target[0] == pytest.approx(9.0)


def test_clt_1d_rejects_wrong_dim():
    with pytest.raises(ValueError):
        st.clt_1d(ProcessSpec.bernoulli(0.5), LatticeWindow((8, 8)),
                  10, 10, seed=0)


def test_clt_1d_deterministic():
    a = st.clt_1d(ProcessSpec.bernoulli(0.5), LatticeWindow((1024,)),
                  300, 300, seed=5)
    b = st.clt_1d(ProcessSpec.bernoulli(0.5), LatticeWindow((1024,)),
                  300, 300, seed=5)
    assert a.to_json() == b.to_json()


def test_clt_hd_corrector_variant():
    rep = st.clt_hd(ProcessSpec.bernoulli(0.5), LatticeWindow((96, 96)),
                    512, 2000, seed=13)
    assert rep.dimension == 2
    assert rep.excluded == 0  # periodic embedding keeps wrapped walks
    assert rep.passes
    D_traj = np.array(rep.notes["D_trajectory"])
    assert np.abs(np.diag(D_traj) - rep.target).max() < 0.1 * rep.target.max()
    assert not rep.notes["moment_check"]["diverging"]


def test_clt_hd_raw_variant_excludes_wrapped():
    rep = st.clt_hd(ProcessSpec.bernoulli(0.5), LatticeWindow((96, 96)),
                    256, 500, seed=13, use_corrector=False)
    assert rep.walkers + rep.excluded == 500


def test_clt_hd_rejects_1d():
    with pytest.raises(ValueError):
        st.clt_hd(ProcessSpec.bernoulli(0.5), LatticeWindow((64,)),
                  10, 10, seed=0)


def test_recurrence_d1():
    rep = st.recurrence_report(ProcessSpec.bernoulli(0.5), LatticeWindow((2048,)),
                               2000, 1000, seed=3)
    assert rep.dimension == 1
    assert rep.verdict == "consistent-with-recurrent"
    assert 0.4 < rep.details["return_exponent"] < 0.6


def test_recurrence_d2():
    rep = st.recurrence_report(ProcessSpec.bernoulli(0.5), LatticeWindow((128, 128)),
                               100, 10, seed=3)
    assert rep.verdict == "consistent-with-recurrent"
    assert rep.details["cauchy_tail_passes"]
    assert rep.details["nash_williams_partial_sum"] > 0


def test_recurrence_d3():
    rep = st.recurrence_report(ProcessSpec.bernoulli(0.7), LatticeWindow((21, 21, 21)),
                               1200, 0, seed=3, green_slope_tol=2e-4)
    assert rep.verdict == "consistent-with-transient"
    assert rep.details["green_tail_slope"] <= 2e-4


def test_report_serialization():
    rep = st.clt_1d(ProcessSpec.bernoulli(0.5), LatticeWindow((1024,)),
                    100, 200, seed=5)
    as_json = rep.as_json()
    assert as_json["level"] == 0.01
    assert isinstance(as_json["target"], list)
