"""Detector-memory chain: transition law, simulation, MLE, correction M."""

import math
import warnings

import numpy as np
import pytest

from spe_qrng.markov import (DetectorParams, TransitionCounts, chain_symbols,
                             effective_guessing, guess_correction,
                             mle_estimate, simulate_chain,
                             stationary_distribution, transition_matrix)

PAPER_DET = DetectorParams(t_dead=22e-9, p_after=0.005,
                           lambda_eff=0.0037 / 22e-9)
MEMORYLESS = DetectorParams(t_dead=22e-9, p_after=0.0, lambda_eff=0.0)
TABLE3_P = np.array([0.076, 0.447, 0.453, 0.024])


def transition_oracle(p, d):
    """Direct elementwise construction of P_ij for the test's own use."""
    p = np.asarray(p, float)
    lt = d.lambda_eff * d.t_dead
    out = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            q = p[i] ** 2 if i == j else (1 + p[i]) * p[j]
            out[i, j] = (d.p_after * (i == j)
                         + (1 - d.p_after) * ((1 - lt) * p[j] + lt * q))
    return out


class TestTransitionMatrix:
    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(30)
        for _ in range(100):
            p = rng.dirichlet(np.ones(4))
            assert np.allclose(transition_matrix(p, PAPER_DET),
                               transition_oracle(p, PAPER_DET), atol=1e-14)

    def test_memoryless_reduction(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        assert np.allclose(transition_matrix(p, MEMORYLESS), np.tile(p, (4, 1)),
                           atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(31)
        for _ in range(1000):
            p = rng.dirichlet(np.ones(4))
            d = DetectorParams(t_dead=22e-9, p_after=rng.uniform(0, 0.01),
                               lambda_eff=rng.uniform(0, 0.04) / 22e-9)
            assert np.allclose(transition_matrix(p, d).sum(axis=1), 1.0,
                               atol=1e-12)

    def test_uniform_probabilities_afterpulse_scale(self):
        p = np.full(4, 0.25)
        mat = transition_matrix(p, PAPER_DET)
        assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-12)
        gap = mat[0, 0] - mat[0, 1]
        assert gap == pytest.approx(PAPER_DET.p_after * 0.75, rel=0.2)

    def test_degenerate_distribution(self):
        mat = transition_matrix(np.array([1.0, 0, 0, 0]), PAPER_DET)
        assert mat[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_q_kernel_rows_are_stochastic(self):
        # p_i^2 + (1 + p_i)(1 - p_i) = 1
        rng = np.random.default_rng(32)
        for _ in range(100):
            p = rng.dirichlet(np.ones(4))
            q = (1 + p)[:, None] * p[None, :]
            np.fill_diagonal(q, p ** 2)
            assert np.allclose(q.sum(axis=1), 1.0, atol=1e-12)

    def test_rejects_invalid_probabilities(self):
        with pytest.raises(ValueError):
            transition_matrix(np.array([0.5, 0.5, 0.5, 0.5]), PAPER_DET)
        with pytest.raises(ValueError):
            transition_matrix(np.array([-0.1, 0.5, 0.3, 0.3]), PAPER_DET)


class TestDetectorParams:
    def test_warns_on_large_dead_time_load(self):
        with pytest.warns(RuntimeWarning):
            DetectorParams(t_dead=22e-9, p_after=0.005, lambda_eff=0.06 / 22e-9)

    def test_warns_on_large_afterpulse(self):
        with pytest.warns(RuntimeWarning):
            DetectorParams(t_dead=22e-9, p_after=0.02, lambda_eff=1000.0)


class TestSimulateChain:
    def test_two_channel_frequencies(self):
        p = np.array([0.5, 0.5, 0.0, 0.0])
        n = 100_000
        seq = simulate_chain(p, MEMORYLESS, n, seed=33)
        counts = np.bincount(seq.symbols, minlength=5)[1:]
        sigma = math.sqrt(n * 0.25)
        assert abs(counts[0] - n / 2) < 3 * sigma
        assert counts[2] == counts[3] == 0

    def test_minimum_length(self):
        seq = simulate_chain(TABLE3_P, PAPER_DET, 2, seed=34)
        assert len(seq) == 2

    def test_deterministic_for_fixed_seed(self):
        a = simulate_chain(TABLE3_P, PAPER_DET, 5000, seed=35)
        b = simulate_chain(TABLE3_P, PAPER_DET, 5000, seed=35)
        assert np.array_equal(a.symbols, b.symbols)

    def test_rejects_short_chains(self):
        with pytest.raises(ValueError):
            simulate_chain(TABLE3_P, PAPER_DET, 1, seed=0)

    def test_transition_frequencies_match_law(self):
        # empirical one-step transitions against the analytic matrix
        n = 400_000
        seq = simulate_chain(TABLE3_P, PAPER_DET, n, seed=36)
        tc = TransitionCounts.from_symbols(seq.symbols)
        mat = transition_matrix(TABLE3_P, PAPER_DET)
        row_totals = tc.n.sum(axis=1, keepdims=True)
        emp = tc.n / np.maximum(row_totals, 1)
        sigma = np.sqrt(mat * (1 - mat) / np.maximum(row_totals, 1))
        assert np.all(np.abs(emp - mat) < 5 * sigma + 1e-9)

    def test_stationary_distribution_fixed_point(self):
        mat = transition_matrix(TABLE3_P, PAPER_DET)
        pi = stationary_distribution(mat)
        assert np.allclose(pi @ mat, pi, atol=1e-12)
        assert pi.sum() == pytest.approx(1.0, abs=1e-12)


class TestMleEstimate:
    def test_memoryless_reduction_matches_analytic_mle(self):
        seq = simulate_chain(np.array([0.3, 0.3, 0.2, 0.2]), MEMORYLESS,
                             100_000, seed=37)
        tc = TransitionCounts.from_symbols(seq.symbols)
        est = mle_estimate(tc, MEMORYLESS)
        # exact optimum of log p_x1 + sum_j n_j log p_j
        n = len(seq)
        expected = tc.n.sum(axis=0).astype(float)
        expected[tc.first_symbol - 1] += 1
        expected /= n
        assert np.allclose(est.p_hat, expected, atol=1e-8)
        # and the classical column-marginal MLE up to the O(1/n) first term
        marginal = tc.n.sum(axis=0) / tc.total
        assert np.allclose(est.p_hat, marginal, atol=1e-4)

    def test_recovers_truth_within_intervals(self):
        seq = simulate_chain(TABLE3_P, PAPER_DET, 1_000_000, seed=38)
        est = mle_estimate(TransitionCounts.from_symbols(seq.symbols), PAPER_DET)
        assert np.all(est.ci_low <= TABLE3_P)
        assert np.all(TABLE3_P <= est.ci_high)
        assert np.all(est.ci_low <= est.p_hat)
        assert np.all(est.p_hat <= est.ci_high)
        assert est.p_hat.sum() == pytest.approx(1.0, abs=1e-10)

    def test_markov_correction_is_small(self):
        # corrected estimates coincide with raw frequencies at the 1e-3 level
        seq = simulate_chain(TABLE3_P, PAPER_DET, 1_000_000, seed=39)
        est = mle_estimate(TransitionCounts.from_symbols(seq.symbols), PAPER_DET)
        raw = np.bincount(seq.symbols, minlength=5)[1:] / len(seq)
        assert np.abs(est.p_hat - raw).max() < 1e-3

    def test_missing_channel_pins_boundary(self):
        seq = simulate_chain(np.array([0.6, 0.4, 0.0, 0.0]), PAPER_DET,
                             50_000, seed=40)
        with pytest.warns(RuntimeWarning):
            est = mle_estimate(TransitionCounts.from_symbols(seq.symbols),
                               PAPER_DET)
        assert est.degenerate == (3, 4)
        assert est.p_hat[2] == est.p_hat[3] == 0.0
        assert est.ci_high[2] > 0.0        # one-sided upper bound

    def test_short_sequences_warn(self):
        seq = simulate_chain(TABLE3_P, PAPER_DET, 200, seed=41)
        with pytest.warns(RuntimeWarning):
            mle_estimate(TransitionCounts.from_symbols(seq.symbols), PAPER_DET)


class TestGuessCorrection:
    def test_identity_without_memory(self):
        for p in np.linspace(0, 1, 50):
            assert guess_correction(p, MEMORYLESS) == pytest.approx(p, abs=1e-15)

    def test_branch_comparison_at_published_operating_point(self):
        # direct arithmetic of both branches at p_max = 0.7431
        p, pa, lt = 0.7431, 0.005, 0.0037
        repeat = pa + (1 - pa) * ((1 - lt) * p + lt * p * p)
        switch = (1 - pa) * (p + lt * p * (1 - p))
        assert repeat > switch
        got = guess_correction(p, PAPER_DET)
        assert got == pytest.approx(repeat, abs=1e-15)
        assert got == pytest.approx(0.7437, abs=2e-4)

    def test_certain_outcome_stays_certain(self):
        assert guess_correction(1.0, PAPER_DET) == pytest.approx(1.0, abs=1e-15)

    def test_lower_bound_and_monotonicity(self):
        grid = np.linspace(0, 1, 1000)
        vals = np.array([guess_correction(p, PAPER_DET) for p in grid])
        assert np.all(vals >= (1 - PAPER_DET.p_after) * grid - 1e-15)
        assert np.all(np.diff(vals) >= -1e-15)

    def test_dominates_all_transition_entries(self):
        # sup_ij P_ij <= M(max_j p_j) over an exhaustive simplex grid
        k = 50
        ii, jj, kk = np.meshgrid(np.arange(k + 1), np.arange(k + 1),
                                 np.arange(k + 1), indexing="ij")
        keep = ii + jj + kk <= k
        p = np.stack([ii[keep], jj[keep], kk[keep],
                      k - ii[keep] - jj[keep] - kk[keep]], axis=1) / k
        lt = PAPER_DET.lambda_td
        pa = PAPER_DET.p_after
        q = (1 + p)[:, :, None] * p[:, None, :]
        idx = np.arange(4)
        q[:, idx, idx] = p ** 2
        mat = pa * np.eye(4) + (1 - pa) * ((1 - lt) * p[:, None, :] + lt * q)
        sup_entry = mat.reshape(len(p), -1).max(axis=1)
        bound = np.array([guess_correction(pm, PAPER_DET) for pm in p.max(axis=1)])
        assert np.all(sup_entry <= bound + 1e-12)

    def test_alias(self):
        assert effective_guessing(0.9, PAPER_DET) == guess_correction(0.9, PAPER_DET)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            guess_correction(1.2, PAPER_DET)


class TestChainSymbolsHelper:
    def test_generator_reuse_matches_seeded_wrapper(self):
        rng = np.random.default_rng(42)
        a = chain_symbols(TABLE3_P, PAPER_DET, 1000, rng)
        b = simulate_chain(TABLE3_P, PAPER_DET, 1000, seed=42)
        assert np.array_equal(a, b.symbols)
