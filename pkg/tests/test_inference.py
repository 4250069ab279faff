import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

import _oracles as O
from betagos import _kernels as K
from betagos.core import (Constant, DpDeterministic, Normal, PairingLabels, Partition, ThetaLinear,
                          partition_of, simulate_sequence)
from betagos.errors import DomainError, InputError
from betagos.generators import gen_betagos, gen_mixture
from betagos.inference import (GibbsState, ModelConfig, Trace, accuracy, gibbs_sweep, initial_state,
                               label_full_conditional, log_marginal_block, means_update,
                               point_partition, predict_next, run_chain, run_chains, summarize,
                               tau2_update, weight_full_conditional)
from betagos.rng import make_rng


def test_log_marginal_examples():
    cfg = ModelConfig(mu0=0.0, sigma0=1.0)
    assert log_marginal_block([0.0], cfg, 1.0) == pytest.approx(-0.5 * math.log(4 * math.pi), abs=1e-14)
    tight = ModelConfig(mu0=0.3, sigma0=1e-7)
    assert log_marginal_block([1.1], tight, 0.5) == pytest.approx(stats.norm(0.3, math.sqrt(0.5)).logpdf(1.1),
                                                                  abs=1e-9)
    with pytest.raises(DomainError):
        log_marginal_block([], cfg, 1.0)
    with pytest.raises(DomainError):
        log_marginal_block([1.0], cfg, 0.0)


@pytest.mark.parametrize("size", [1, 2, 3, 4])
def test_log_marginal_quadrature(size):
    rng = make_rng(30 + size)
    y = rng.normal(1.0, 1.5, size=size)
    cfg = ModelConfig(mu0=0.4, sigma0=2.0)
    tau2 = 0.7

    def integrand(mu):
        return np.prod(stats.norm.pdf(y, mu, math.sqrt(tau2))) * stats.norm.pdf(mu, cfg.mu0, cfg.sigma0)

    val, _ = integrate.quad(integrand, -30, 30, points=[y.mean()], epsabs=1e-14, epsrel=1e-12, limit=200)
    assert log_marginal_block(y, cfg, tau2) == pytest.approx(math.log(val), abs=1e-6)


def _direct_conditional(i, c, w, y, cfg, tau2):
    """P(C_i = j | rest) from the full joint, one candidate at a time."""
    logs = []
    for j in range(1, i + 1):
        lab = list(c)
        lab[i - 1] = j
        lp = O.log_label_prior(tuple(lab), w=w)
        ll = sum(O.log_block_marginal(y[np.asarray(b) - 1], cfg.mu0, cfg.s02, tau2)
                 for b in O.blocks_of(tuple(lab)))
        logs.append(lp + float(ll))
    logs = np.array(logs)
    p = np.exp(logs - logs.max())
    return p / p.sum()


def test_label_conditional_matches_joint():
    rng = make_rng(31)
    m = 7
    y = np.array([0.1, 0.3, 2.0, 0.2, 2.4, -1.0, 2.1])
    cfg = ModelConfig(mu0=0.0, sigma0=1.5, schedule=ThetaLinear(1.0))
    w = rng.uniform(0.2, 0.9, size=m)
    c = (1, 1, 3, 2, 3, 6, 5)
    state = GibbsState(np.array(c) - 1, w, 0.3)
    for i in range(1, m + 1):
        got = label_full_conditional(i, state, y, cfg)
        np.testing.assert_allclose(got, _direct_conditional(i, c, w, y, cfg, 0.3), rtol=1e-10, atol=1e-14)


def test_label_conditional_sampling_frequencies():
    rng = make_rng(32)
    y = np.array([0.0, 0.4, -0.3, 1.2, 0.9, 0.1])
    cfg = ModelConfig(mu0=0.0, sigma0=1.0)
    w = np.array([0.5, 0.6, 0.7, 0.4, 0.8, 0.5])
    c0 = np.array([0, 0, 2, 2, 3, 1], dtype=np.int64)
    i = 5  # 1-based
    probs = label_full_conditional(i, GibbsState(c0, w, 0.2), y, cfg)
    draws = 40_000
    u = rng.random(draws)
    order = np.array([i - 1], dtype=np.int64)
    counts = np.zeros(i)
    for d in range(draws):
        c = c0.copy()
        K.sweep_labels(c, y, np.log(w), np.log1p(-w), 0.2, 0.0, 1.0, order, u[d:d + 1])
        counts[c[i - 1]] += 1
    freq = counts / draws
    se = np.sqrt(probs * (1 - probs) / draws) + 1e-12
    assert np.all(np.abs(freq - probs) < 3 * se)


def test_label_conditional_far_group():
    y = np.array([0.0, 0.1, -0.1, 20.0, 20.1, 0.05])
    cfg = ModelConfig(mu0=0.0, sigma0=10.0)
    state = GibbsState(np.array([0, 0, 0, 3, 3, 0]), np.full(6, 0.5), 0.01)
    p = label_full_conditional(6, state, y, cfg)
    assert p[3] + p[4] < 1e-3
    assert label_full_conditional(1, state, y, cfg).tolist() == [1.0]


def test_label_conditional_flat_likelihood_is_prior():
    m = 6
    s = DpDeterministic(1.0)
    w = s.values(m)
    # sigma0 tiny: every block marginal is the same product of N(0, tau2) densities
    cfg = ModelConfig(mu0=0.0, sigma0=1e-9, schedule=s)
    y = np.zeros(m)
    state = GibbsState(np.array([0, 1, 1, 3, 2, 0]), None, 1.0)
    p = label_full_conditional(6, state, y, cfg)
    np.testing.assert_allclose(p, np.full(6, 1 / 6), rtol=1e-7)


def test_weight_conditional_examples():
    m = 6
    s = Constant(2.0, 3.0)
    allnew = PairingLabels(np.arange(1, m + 1))
    for i in range(1, m + 1):
        assert weight_full_conditional(i, allnew, s) == (2.0 + (m - i), 3.0)
    chain = PairingLabels(np.ones(m, dtype=int))
    assert weight_full_conditional(1, chain, s) == (2.0, 3.0 + (m - 1))
    lab = PairingLabels(np.array([1, 1, 3, 2]))
    t = ThetaLinear(1.0)
    assert weight_full_conditional(2, lab, t) == (2.0 + 1, 1.0 + 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(0, 2**32 - 1))
def test_weight_counts_match_explicit_product(m, seed):
    rng = make_rng(seed)
    lab = tuple(int(rng.integers(1, i + 1)) for i in range(1, m + 1))
    a_ref, b_ref = O.weight_exponents(lab)
    a, b = K.beta_posterior_counts(np.array(lab, dtype=np.int64) - 1)
    assert a.tolist() == a_ref and b.tolist() == b_ref


def test_means_update_moments():
    rng = make_rng(33)
    cfg = ModelConfig(mu0=0.0, sigma0=1.0)
    y = np.array([0.5, 1.5, 1.0, 1.0])
    state = GibbsState(np.zeros(4, dtype=np.int64), None, 1.0)
    draws = np.array([means_update(state, y, cfg, rng)[0] for _ in range(40_000)])
    assert abs(draws.mean() - 0.8) < 4 * math.sqrt(0.2 / draws.size)
    assert draws.var() == pytest.approx(0.2, rel=0.03)
    wide = ModelConfig(mu0=5.0, sigma0=1e6)
    sharp = GibbsState(state.c, None, 1e-6)
    assert means_update(sharp, y, wide, rng)[0] == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("mode", ["global_conjugate", "pooled_em"])
def test_tau2_update_one_block_conjugate(mode):
    rng = make_rng(34)
    cfg = ModelConfig(a0=3.0, b0=2.0)
    y = np.array([0.2, -0.4, 1.1, 0.3, 0.0])
    mu = np.full(5, 0.1)
    state = GibbsState(np.zeros(5, dtype=np.int64), None, 1.0, mu)
    draws = np.array([tau2_update(state, y, cfg, rng, mode) for _ in range(20_000)])
    a = cfg.a0 + 2.5
    b = cfg.b0 + 0.5 * np.sum((y - mu) ** 2)
    if mode == "global_conjugate":
        assert stats.kstest(draws, stats.invgamma(a, scale=b).cdf).pvalue > 0.001
    else:
        # one block of size n: the pooled estimate is that block's own draw
        assert stats.kstest(draws, stats.invgamma(a, scale=b).cdf).pvalue > 0.001


def test_tau2_pooled_falls_back_for_singletons():
    rng = make_rng(35)
    cfg = ModelConfig(a0=3.0, b0=2.0)
    y = np.array([0.2, -0.4, 1.1])
    state = GibbsState(np.arange(3, dtype=np.int64), None, 1.0, y.copy())
    draws = np.array([tau2_update(state, y, cfg, rng, "pooled_em") for _ in range(20_000)])
    assert stats.kstest(draws, stats.invgamma(cfg.a0 + 1.5, scale=cfg.b0).cdf).pvalue > 0.001


def test_prior_tau2_mean():
    cfg = ModelConfig()
    # InvGamma(2.004, 0.0063) has mean b0 / (a0 - 1)
    assert cfg.b0 / (cfg.a0 - 1) == pytest.approx(0.0063 / 1.004)


def test_sweep_preserves_support():
    rng = make_rng(36)
    y = gen_betagos(rng, 30).y
    for cfg in (ModelConfig(), ModelConfig(schedule=DpDeterministic(1.0)),
                ModelConfig(schedule=Constant(1, 1), tau2_mode="global_conjugate", scan="random")):
        state = initial_state(y, cfg, rng)
        for _ in range(20):
            state = gibbs_sweep(state, y, cfg, rng)
            PairingLabels(state.c + 1)
            assert state.tau2 > 0
            if state.w is not None:
                assert np.all((state.w > 0) & (state.w < 1))
        z = partition_of(state.c + 1).assignment()
        for b in range(z.max() + 1):
            assert np.unique(state.mu[z == b]).size == 1


def test_sweep_single_observation():
    rng = make_rng(37)
    cfg = ModelConfig()
    s = initial_state(np.array([0.3]), cfg, rng)
    s2 = gibbs_sweep(s, np.array([0.3]), cfg, rng)
    assert s2.c.tolist() == [0]


def test_run_chain_errors_and_determinism():
    y = np.array([0.0, 0.1, 3.0, 3.1])
    cfg = ModelConfig()
    with pytest.raises(DomainError):
        run_chain(y, cfg, iters=10, burnin=10)
    with pytest.raises(DomainError):
        run_chain(y, cfg, iters=10, burnin=5, thin=6)
    with pytest.raises(InputError):
        run_chain(np.array([0.0, np.nan]), cfg, iters=10)
    a = run_chain(y, cfg, 50, 10, 2, seed=5)
    b = run_chain(y, cfg, 50, 10, 2, seed=5)
    assert len(a) == 20
    np.testing.assert_array_equal(a.c, b.c)
    np.testing.assert_array_equal(a.tau2, b.tau2)


def test_run_chains_thread_independent():
    y = gen_betagos(make_rng(38), 20).y
    cfg = ModelConfig()
    one = run_chains(y, cfg, 60, 10, 1, seed=3, chains=3, threads=1)
    many = run_chains(y, cfg, 60, 10, 1, seed=3, chains=3, threads=3)
    np.testing.assert_array_equal(one.c, many.c)
    np.testing.assert_array_equal(one.tau2, many.tau2)
    assert one.chain.tolist() == [0] * 50 + [1] * 50 + [2] * 50


def test_dp_partition_posterior_matches_enumeration():
    y = np.array([0.0, 0.3, 2.0, 2.2, 0.1])
    s = DpDeterministic(1.0)
    cfg = ModelConfig(mu0=0.0, sigma0=2.0, a0=3.0, b0=0.5, schedule=s, tau2_mode="global_conjugate")
    exact = O.partition_posterior(O.label_posterior(y, 0.0, 4.0, 3.0, 0.5, w=s.values(5)))
    tr = run_chain(y, cfg, 60_000, 1000, 1, seed=39)
    emp = O.empirical([O.blocks_of(tuple(c)) for c in tr.labels.tolist()])
    assert O.total_variation(exact, emp) < 0.02


def _trace_from(z_rows):
    z = np.asarray(z_rows, dtype=np.int64)
    d, m = z.shape
    c = np.empty_like(z)
    for r in range(d):
        first = {}
        for i, v in enumerate(z[r]):
            first.setdefault(v, i)
            c[r, i] = first[v]
    k = np.array([len(set(row)) for row in z_rows])
    return Trace(c, k, np.ones(d), np.zeros((d, m)), None, np.zeros(d), 0, 1)


def test_point_partition_rules():
    tr = _trace_from([[0, 0, 1, 1]] * 5)
    assert point_partition(tr) == Partition(((1, 2), (3, 4)))
    tie = _trace_from([[0, 0, 1, 1], [0, 1, 1, 1]] * 3)
    assert point_partition(tie) == Partition(((1, 2), (3, 4)))
    tie2 = _trace_from([[0, 1, 1, 1], [0, 0, 1, 1]] * 3)
    assert point_partition(tie2) == Partition(((1,), (2, 3, 4)))


def test_accuracy_examples():
    t = Partition(((1, 2, 3), (4, 5)))
    assert accuracy(t, t) == (1.0, 1.0)
    single = Partition(((1,), (2,), (3,), (4,)))
    one = Partition(((1, 2, 3, 4),))
    assert accuracy(single, one) == (0.0, 0.25)
    with pytest.raises(DomainError):
        accuracy(t, one)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=30), st.integers(0, 2**32 - 1))
def test_accuracy_label_invariance(z, seed):
    rng = make_rng(seed)
    z = np.array(z)
    zt = rng.integers(0, 3, size=z.size)
    perm = rng.permutation(5)
    a = accuracy(Partition.from_assignment(z), Partition.from_assignment(zt))
    b = accuracy(Partition.from_assignment(perm[z]), Partition.from_assignment(zt))
    assert a == b
    assert 0 <= a[0] <= 1 and 0 < a[1] <= 1


def test_predict_next_degenerate():
    rng = make_rng(40)
    cfg = ModelConfig(mu0=3.0, sigma0=1e-8)
    y = np.full(5, 3.0)
    state = GibbsState(np.zeros(5, dtype=np.int64), np.full(5, 0.5), 1e-12, np.full(5, 3.0))
    assert predict_next(state, y, cfg, rng) == pytest.approx(3.0, abs=1e-4)


def test_predict_next_dp_new_block_rate():
    rng = make_rng(41)
    s = DpDeterministic(2.0)
    cfg = ModelConfig(mu0=1000.0, sigma0=1e-6, schedule=s)
    m = 6
    y = np.zeros(m)
    state = GibbsState(np.array([0, 0, 2, 2, 4, 4]), None, 1e-6, np.zeros(m))
    draws = np.array([predict_next(state, y, cfg, rng) for _ in range(20_000)])
    rate = np.mean(draws > 500)
    p = 2.0 / (2.0 + m)
    assert abs(rate - p) < 4 * math.sqrt(p * (1 - p) / draws.size)


def test_three_cluster_recovery():
    truth = Partition.from_assignment(np.repeat([0, 1, 2], 10))
    hits = 0
    for r in range(20):
        rng = make_rng(100 + r)
        y = np.repeat([-6.0, 0.0, 6.0], 10) + 0.25 * rng.normal(size=30)
        # prior on tau^2 centred at the generating noise variance 0.25^2
        tr = run_chain(y, ModelConfig(b0=0.0625 * 1.004), 600, 200, 2, rng=rng)
        hits += point_partition(tr) == truth
    assert hits >= 19


def test_tau_recovery_on_model_data():
    taus = []
    for r in range(10):
        rng = make_rng(200 + r)
        data = gen_betagos(rng, 100)
        tr = run_chain(data.y, ModelConfig(), 2000, 500, 2, rng=rng)
        taus.append(summarize(tr, data.y, ModelConfig()).tau_mean)
    assert 0.23 <= np.mean(taus) <= 0.27


def test_accuracy_monotone_in_separation():
    means = []
    for sigma0 in (1.0, 3.0, 10.0):
        acc = []
        for r in range(8):
            data = gen_mixture(make_rng(300 + r), 60, sigma0=sigma0)
            tr = run_chain(data.y, ModelConfig(sigma0=sigma0), 800, 300, 2, seed=r)
            acc.append(accuracy(point_partition(tr), data.truth)[1])
        means.append(np.mean(acc))
    assert means[0] <= means[1] + 0.02 and means[1] <= means[2] + 0.02
