"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one ``ACCEPTANCE <id>: PASS/FAIL`` line (run with ``-s`` to
see them live). The slow tier (bound optimization at desk scale, the MLE
coverage study, the end-to-end simulation oracle) is marked ``slow``.

Criterion 3's bit-rate sub-check for the two most-trusted rows is expected
to fail: the reference rates were computed from rounded inputs (entropy
rounded to 0.1% and the symbol count rounded to 35e6), which is
arithmetically incompatible with the exact symbol count the criterion
prescribes together with the identity rate = n * H / T. The failure message
carries the reconciliation; the min-entropy half of the criterion passes.
"""

import json
import math
import time

import numpy as np
import pytest

import spe_qrng as q
from spe_qrng.bounds import OptimizerConfig, TrustLevel, _Problem
from spe_qrng.cli import main as cli_main
from spe_qrng.extractor import gf2_toeplitz_apply
from spe_qrng.markov import (DetectorParams, TransitionCounts, mle_estimate,
                             simulate_chain, transition_matrix)
from spe_qrng.optics import ComponentSet
from spe_qrng.simulate import ingest_run, simulate_run

TSIRELSON = 2 * math.sqrt(2)

TABLE4 = {
    # trust level -> (e_p, e_i, H*_min percent, rate kHz)
    "general_rho": (0.080, 0.332, 2.5, 4.4),
    "free_delta_pi_v": (0.080, 0.264, 6.3, 11.0),
    "free_delta_v": (0.078, 0.012, 26.9, 47.1),
    "free_v": (0.066, 0.0026, 30.1, 52.7),
}


def report(criterion: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def desk_bounds(reference):
    """Desk-scale bound optimization for all four trust levels (seeded)."""
    cfg = OptimizerConfig(seed=0)        # 200 / 400 starts
    results = {}
    t0 = time.perf_counter()
    for variant in ("general_rho", "free_v", "free_delta_pi_v", "free_delta_v"):
        trust = TrustLevel(variant)
        r = q.compute_e_p(trust, reference.components, cfg).merged_with(
            q.compute_e_i(trust, reference.components, cfg))
        results[variant] = q.propagate_errors(trust, reference.components, r)
    results["elapsed_s"] = time.perf_counter() - t0
    return results


class TestCriterion1ChshReproduction:
    def test_c1_bundled_counts(self, reference):
        t0 = time.perf_counter()
        est = q.estimate_chsh(reference.counts)
        dt = time.perf_counter() - t0
        ok = abs(abs(est.i_hat) - 2.656) <= 0.005 and dt < 1.0
        report("C1 CHSH reproduction", ok,
               f"|I| = {abs(est.i_hat):.6f} (target 2.656 +- 0.005), {dt:.3f}s")
        assert abs(est.i_hat) == pytest.approx(2.656, abs=0.005)
        assert dt < 1.0


class TestCriterion2IdealMinEntropy:
    def test_c2_ideal_entropy(self):
        h = -math.log2(q.guessing_bound(2.656, 0.0, 0.0))
        ok = abs(h - 0.428) <= 0.005
        report("C2 ideal min-entropy", ok, f"H = {h:.6f} bits (target 0.428 +- 0.005)")
        assert h == pytest.approx(0.428, abs=0.005)


class TestCriterion3TrustLevelTable:
    def _certs(self, reference):
        return {
            trust: q.certify(reference.counts, e_p=e_p, e_i=e_i,
                             det=reference.detector, trust=trust)
            for trust, (e_p, e_i, _, _) in TABLE4.items()
        }

    def test_c3_entropies(self, reference):
        certs = self._certs(reference)
        lines = []
        ok = True
        for trust, (_, _, h_pct, _) in TABLE4.items():
            got = 100 * certs[trust].h_min_star
            ok &= abs(got - h_pct) <= 0.3
            lines.append(f"{trust}: {got:.2f}% (target {h_pct} +- 0.3)")
        report("C3 trust-level min-entropies", ok, "; ".join(lines))
        for trust, (_, _, h_pct, _) in TABLE4.items():
            assert 100 * certs[trust].h_min_star == pytest.approx(h_pct, abs=0.3)

    def test_c3_rates(self, reference):
        # Expected red for the two most-trusted rows: the published rates are
        # round(H_published * 35e6 / 200), i.e. 4.375 -> 4.4, 11.025 -> 11.0,
        # 47.075 -> 47.1, 52.675 -> 52.7 kHz, computed with n = 35e6 and the
        # rounded entropy column. With the criterion's exact n = 35,483,419
        # and the identity rate = n*H/T, any H within the +-0.3% entropy band
        # implies rates of about {4.21-4.37, 10.96-11.14, 47.51-47.87,
        # 53.18-53.55} kHz, so 47.1 and 52.7 are out of reach by 0.4-0.85 kHz.
        certs = self._certs(reference)
        assert certs["general_rho"].n_raw == 35_483_419
        assert certs["general_rho"].duration_s == 200.0
        lines = []
        ok = True
        for trust, (_, _, _, rate_khz) in TABLE4.items():
            got = certs[trust].bits_per_second / 1e3
            ok &= abs(got - rate_khz) <= 0.2
            lines.append(f"{trust}: {got:.2f} kHz (target {rate_khz} +- 0.2)")
        report("C3 trust-level bit rates", ok, "; ".join(lines))
        for trust, (_, _, _, rate_khz) in TABLE4.items():
            assert certs[trust].bits_per_second / 1e3 == pytest.approx(
                rate_khz, abs=0.2), (
                f"{trust}: rate {certs[trust].bits_per_second / 1e3:.3f} kHz "
                f"vs published {rate_khz} kHz. The published value equals "
                f"round(H_rounded * 35e6 / 200); with the exact n = 35,483,419 "
                f"used here and rate = n*H/T it is unreachable for any H "
                f"consistent with the published e_P/e_I (rounding artifact in "
                f"the reference table; see README testing notes).")


@pytest.mark.slow
class TestCriterion4DeskScaleBounds:
    def test_c4_bands(self, desk_bounds):
        g = desk_bounds["general_rho"]
        f = desk_bounds["free_v"]
        dt = desk_bounds["elapsed_s"]
        checks = [
            ("general e_P", g.e_p, 0.06, 0.09),
            ("general e_I", g.e_i, 0.27, 0.34),
            ("free_v e_P", f.e_p, 0.05, 0.08),
            ("free_v e_I", f.e_i, 0.001, 0.006),
        ]
        ok = all(lo <= val <= hi for _, val, lo, hi in checks) and dt < 1800
        detail = "; ".join(f"{name} = {val:.4f} in [{lo}, {hi}]"
                           for name, val, lo, hi in checks)
        report("C4 desk-scale bounds", ok, f"{detail}; elapsed {dt:.0f}s")
        for name, val, lo, hi in checks:
            assert lo <= val <= hi, f"{name} = {val} outside [{lo}, {hi}]"
        assert dt < 1800

    def test_c4_trust_monotonicity_invariant(self, desk_bounds):
        # feasible-set nesting: e_I shrinks as more parameters are trusted
        chain = ["general_rho", "free_delta_pi_v", "free_delta_v", "free_v"]
        vals = [desk_bounds[t].e_i for t in chain]
        ok = all(vals[i] >= vals[i + 1] - 0.01 for i in range(3))
        report("C4+ e_I trust monotonicity", ok,
               " >= ".join(f"{v:.4f}" for v in vals))
        for i in range(3):
            assert vals[i] >= vals[i + 1] - 0.01

    def test_c4_published_value_proximity(self, desk_bounds):
        # informational cross-check against the published central values
        g = desk_bounds["general_rho"]
        f = desk_bounds["free_v"]
        report("C4+ published proximity", True,
               f"general (e_P, e_I) = ({g.e_p:.4f}, {g.e_i:.4f}) vs (0.080, 0.332); "
               f"free_v = ({f.e_p:.4f}, {f.e_i:.4f}) vs (0.066, 0.0026); "
               f"MC errors ({g.e_p_err:.4f}, {g.e_i_err:.4f}) vs (0.002, 0.008)")


class TestCriterion5IdealComponentNull:
    def test_c5_null_bounds(self):
        t0 = time.perf_counter()
        cfg = OptimizerConfig(n_starts_ep=48, n_starts_ei=48, grid_size=5,
                              screen_iters=30, final_iters=60,
                              refine_maxfev=10, seed=0)
        ideal = ComponentSet.ideal()
        trust = TrustLevel.general_rho()
        e_p = q.compute_e_p(trust, ideal, cfg).e_p
        e_i = q.compute_e_i(trust, ideal, cfg).e_i
        dt = time.perf_counter() - t0
        ok = e_p < 1e-6 and e_i < 1e-6 and dt < 60
        report("C5 ideal-component null", ok,
               f"e_P = {e_p:.2e}, e_I = {e_i:.2e}, {dt:.0f}s")
        assert e_p < 1e-6
        assert e_i < 1e-6
        assert dt < 60


class TestCriterion6MarkovProperties:
    def test_c6_property_suite(self):
        t0 = time.perf_counter()
        det = DetectorParams(t_dead=22e-9, p_after=0.005,
                             lambda_eff=0.0037 / 22e-9)
        rng = np.random.default_rng(600)

        # row-stochasticity of P and q at 1e-12 over random inputs
        rows_ok = True
        for _ in range(1000):
            p = rng.dirichlet(np.ones(4))
            mat = transition_matrix(p, det)
            rows_ok &= bool(np.all(np.abs(mat.sum(axis=1) - 1) < 1e-12))
            qk = (1 + p)[:, None] * p[None, :]
            np.fill_diagonal(qk, p ** 2)
            rows_ok &= bool(np.all(np.abs(qk.sum(axis=1) - 1) < 1e-12))

        # M dominates every transition entry on an exhaustive simplex grid
        k = 50
        ii, jj, kk = np.meshgrid(*(np.arange(k + 1),) * 3, indexing="ij")
        keep = ii + jj + kk <= k
        pgrid = np.stack([ii[keep], jj[keep], kk[keep],
                          k - ii[keep] - jj[keep] - kk[keep]], axis=1) / k
        lt, pa = det.lambda_td, det.p_after
        qb = (1 + pgrid)[:, :, None] * pgrid[:, None, :]
        idx = np.arange(4)
        qb[:, idx, idx] = pgrid ** 2
        mats = pa * np.eye(4) + (1 - pa) * ((1 - lt) * pgrid[:, None, :] + lt * qb)
        sup_entries = mats.reshape(len(pgrid), -1).max(axis=1)
        bounds = np.array([q.guess_correction(pm, det)
                           for pm in pgrid.max(axis=1)])
        dominance_ok = bool(np.all(sup_entries <= bounds + 1e-12))

        # M reduces to the identity without memory
        memless = DetectorParams(t_dead=22e-9, p_after=0.0, lambda_eff=0.0)
        ident_ok = all(abs(q.guess_correction(x, memless) - x) < 1e-15
                       for x in np.linspace(0, 1, 101))

        dt = time.perf_counter() - t0
        ok = rows_ok and dominance_ok and ident_ok and dt < 60
        report("C6 Markov property suite", ok,
               f"rows {rows_ok}, dominance {dominance_ok} "
               f"({len(pgrid)} grid points), identity {ident_ok}, {dt:.0f}s")
        assert rows_ok and dominance_ok and ident_ok
        assert dt < 60


@pytest.mark.slow
class TestCriterion7MleCoverage:
    def test_c7_coverage_and_scaling(self):
        t0 = time.perf_counter()
        det = DetectorParams(t_dead=22e-9, p_after=0.005,
                             lambda_eff=0.0037 / 22e-9)
        truth = np.array([0.076, 0.447, 0.453, 0.024])

        covered = 0
        joint = 0
        for rep in range(100):
            seq = simulate_chain(truth, det, 10 ** 6, seed=1000 + rep)
            est = mle_estimate(TransitionCounts.from_symbols(seq.symbols), det)
            hits = (est.ci_low <= truth) & (truth <= est.ci_high)
            covered += int(hits.sum())
            joint += int(hits.all())
        coverage = covered / 400.0

        sizes = [10 ** 4, 10 ** 5, 10 ** 6]
        errs = []
        for n in sizes:
            reps = []
            for rep in range(8):
                seq = simulate_chain(truth, det, n, seed=7700 + rep)
                est = mle_estimate(TransitionCounts.from_symbols(seq.symbols),
                                   det)
                reps.append(np.abs(est.p_hat - truth).max())
            errs.append(float(np.mean(reps)))
        slope = float(np.polyfit(np.log(sizes), np.log(errs), 1)[0])

        dt = time.perf_counter() - t0
        ok = coverage >= 0.90 and abs(slope + 0.5) <= 0.15 and dt < 600
        report("C7 MLE coverage", ok,
               f"coverage {covered}/400 = {coverage:.3f} (joint {joint}/100), "
               f"slope {slope:.3f} (target -0.5 +- 0.15), {dt:.0f}s")
        assert coverage >= 0.90
        assert slope == pytest.approx(-0.5, abs=0.15)
        assert dt < 600


@pytest.mark.slow
class TestCriterion8EndToEndSimulation:
    def test_c8_simulation_oracle(self, reference):
        t0 = time.perf_counter()
        det = reference.detector
        outcomes = {}
        for label, v, target in (("ideal", 1.0, TSIRELSON), ("v0", 0.0, 0.0)):
            state = q.StateParams(v=v)
            events, _ = simulate_run(state, reference.angles, ComponentSet.ideal(),
                                     det, 175_000.0, 8.0, seed=8)
            seqs = ingest_run(events, 1000, 8.0)
            counts = q.CountTable(
                np.array([seqs[xy].channel_counts()
                          for xy in ((0, 0), (1, 0), (0, 1), (1, 1))]),
                np.full(4, 8.0))
            est = q.estimate_chsh(counts, sequences=seqs, k=5, detector=det)
            outcomes[label] = (abs(est.i_hat), est.std_error,
                               (abs(est.i_hat) - target) / est.std_error)
        dt = time.perf_counter() - t0
        ok = (abs(outcomes["ideal"][2]) < 3 and abs(outcomes["v0"][2]) < 3
              and dt < 300)
        report("C8 end-to-end simulation", ok,
               f"ideal |I| = {outcomes['ideal'][0]:.5f} "
               f"({outcomes['ideal'][2]:+.2f} sigma of 2*sqrt(2)); "
               f"v=0 |I| = {outcomes['v0'][0]:.5f} "
               f"({outcomes['v0'][2]:+.2f} sigma of 0); {dt:.0f}s")
        assert abs(outcomes["ideal"][2]) < 3
        assert abs(outcomes["v0"][2]) < 3
        assert dt < 300


class TestCriterion9ExtractorProperties:
    def test_c9_extractor(self):
        t0 = time.perf_counter()
        n, m = 16, 8
        rng = np.random.default_rng(900)
        seed_bits = rng.integers(0, 2, n + m - 1, dtype=np.uint8)

        # dense oracle for the same seed
        i = np.arange(m)[:, None]
        j = np.arange(n)[None, :]
        dense = seed_bits[i - j + n - 1].astype(np.uint8)

        # exhaustive: every 16-bit input through the fast path
        all_x = ((np.arange(1 << n)[:, None] >> np.arange(n)[None, :]) & 1
                 ).astype(np.uint8)
        fast = np.array([gf2_toeplitz_apply(seed_bits, x, m) for x in all_x])
        oracle_ok = bool(np.array_equal(fast, all_x @ dense.T % 2))

        # exhaustive linearity: every input equals the XOR of its basis images
        basis = fast[1 << np.arange(n)]
        linear_ok = bool(np.array_equal(fast, all_x @ basis % 2))

        # output-length law and the published throughput identity
        law_ok = (q.output_length(35_000_000, 0.025, 2.0 ** -64) == 874_872
                  and q.output_length(1000, 0.5, 2.0 ** -64) == 500 - 128)
        rate = q.output_length(35_000_000, 0.025, 2.0 ** -64) / 200.0
        throughput_ok = abs(rate - 4400.0) < 50.0   # ~0.88e6 bits over 200 s

        dt = time.perf_counter() - t0
        ok = oracle_ok and linear_ok and law_ok and throughput_ok
        report("C9 extractor properties", ok,
               f"dense oracle {oracle_ok}, exhaustive linearity {linear_ok} "
               f"(65536 inputs), length law {law_ok}, "
               f"rate {rate:.1f} Hz ~ 4.4 kHz, {dt:.0f}s")
        assert oracle_ok and linear_ok and law_ok and throughput_ok


class TestCriterion10Determinism:
    def test_c10_seeded_reruns_are_identical(self, tmp_path):
        def result_of(path):
            return json.dumps(json.loads(path.read_text())["result"],
                              sort_keys=True)

        # certify twice
        certs = []
        for name in ("a", "b"):
            out = tmp_path / f"cert_{name}"
            assert cli_main(["certify", "--e-p", "0.08", "--e-i", "0.332",
                             "--seed", "11", "--out-dir", str(out)]) == 0
            certs.append(result_of(out / "certification.json"))
        cert_ok = certs[0] == certs[1]

        # bounds twice (tiny budget)
        caches = []
        for name in ("a", "b"):
            out = tmp_path / f"bounds_{name}"
            assert cli_main(["bounds", "--trust", "free_v", "--seed", "11",
                             "--n-starts-ep", "12", "--n-starts-ei", "12",
                             "--grid-size", "3", "--n-mc", "100",
                             "--out-dir", str(out)]) == 0
            caches.append((out / "bounds_free_v.json").read_text())
        bounds_ok = caches[0] == caches[1]

        # simulate twice
        sims = []
        for name in ("a", "b"):
            out = tmp_path / f"sim_{name}"
            assert cli_main(["simulate", "--rate-hz", "20000",
                             "--duration-s", "0.4", "--seed", "11",
                             "--out-dir", str(out)]) == 0
            sims.append(b"".join((out / f"events_{x}{y}.csv").read_bytes()
                                 for x, y in ((0, 0), (1, 0), (0, 1), (1, 1))))
        sim_ok = sims[0] == sims[1]

        # extract twice (generated seed file is itself seeded)
        from spe_qrng.ingest import SymbolSequence, write_symbols
        rng = np.random.default_rng(5)
        seq = SymbolSequence(symbols=rng.integers(1, 5, 3000).astype(np.int8),
                             bin_ns=0, n_bins_total=3000, n_empty=0, n_multi=0)
        qsym = tmp_path / "sym.qsym"
        write_symbols(qsym, seq)
        outs = []
        for name in ("a", "b"):
            out_bits = tmp_path / f"bits_{name}.bin"
            assert cli_main(["extract", "--from-symbols", str(qsym),
                             "--h-min", "0.5", "--seed", "11",
                             "--out", str(out_bits)]) == 0
            outs.append(out_bits.read_bytes())
        extract_ok = outs[0] == outs[1]

        ok = cert_ok and bounds_ok and sim_ok and extract_ok
        report("C10 determinism", ok,
               f"certify {cert_ok}, bounds {bounds_ok}, simulate {sim_ok}, "
               f"extract {extract_ok}")
        assert cert_ok and bounds_ok and sim_ok and extract_ok
