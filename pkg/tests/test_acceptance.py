"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The replication table (5 scenarios x 4 conformal methods, R=200, n=1000,
n_test=50, alpha=0.1) is computed once and shared by criteria 1-5.
"""

import math
import time
from unittest import mock

import numpy as np
import pytest
from scipy.stats import norm

import conformal_hpd.sim as sim
from conformal_hpd.core import (
    PredictionRegion,
    ScoreVector,
    coalesce,
    conformal_q,
    conformal_r,
    region_contains,
    region_length,
)
from conformal_hpd.conformal import fit_kde_hpd, secpr_corrections
from conformal_hpd.core import Dataset, SplitPlan
from conformal_hpd.hpd import extract_intervals, find_cutoff
from conformal_hpd.kde import fit_kde, kde_cdf, kde_eval
from conformal_hpd.sim import (
    Scenario,
    generate,
    hausdorff_diagnostic,
    run_replications,
    summarize,
)

R = 200
SEED = 7
THREADS = 2
METHODS = ("kde-hpd", "secpr", "cqr", "dcp")
Z90 = norm.ppf(0.95)


def report(criterion, passed, detail):
    print(f"[acceptance] criterion {criterion:>2}: {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture(scope="module")
def table():
    """Summaries and raw reports per scenario for the shared benchmark run."""
    t0 = time.time()
    out = {}
    for tag in sim.SCENARIO_TAGS:
        scn = Scenario(tag=tag, n_train=500, n_cal=500, n_test=50, alpha=0.1, seed=SEED)
        reports = run_replications(scn, METHODS, reps=R, threads=THREADS)
        out[tag] = {
            "reports": reports,
            "summary": {s.method: s for s in summarize(reports)},
        }
    out["_wall"] = time.time() - t0
    return out


class TestCriterion1Coverage:
    def test_every_cell_in_band(self, table):
        failures = []
        for tag in sim.SCENARIO_TAGS:
            for method in METHODS:
                s = table[tag]["summary"][method]
                if not 0.885 <= s.coverage <= 0.925:
                    failures.append(f"{tag}/{method}={s.coverage:.3f}")
        wall = table["_wall"]
        ok = not failures and wall < 300.0
        report(1, ok, f"20 coverage cells in [0.885, 0.925], wall {wall:.0f}s"
               + (f"; out of band: {failures}" if failures else ""))
        assert not failures, f"coverage out of band: {failures}"
        assert wall < 300.0, f"benchmark run took {wall:.0f}s (budget 300s)"


class TestCriterion2UnimodalSymmetricSize:
    def test_within_ten_percent(self, table):
        size = table["unimodal-symmetric"]["summary"]["kde-hpd"].mean_size
        ok = abs(size - 3.353) <= 0.1 * 3.353
        report(2, ok, f"unimodal-symmetric kde-hpd size {size:.3f} vs 3.353 +/-10%")
        assert ok, f"size {size:.3f} outside 3.353 +/- 10%"


class TestCriterion3BimodalSize:
    def test_within_fifteen_percent_of_reference(self, table):
        size = table["bimodal"]["summary"]["kde-hpd"].mean_size
        ok = abs(size - 10.699) <= 0.15 * 10.699
        report(3, ok, f"bimodal kde-hpd size {size:.3f} vs 10.699 +/-15%")
        assert ok, (
            f"bimodal kde-hpd mean size {size:.3f} outside 10.699 +/- 15%; "
            "see decisions ledger: a two-interval pipeline tracks the oracle "
            f"(6.579) and cannot reach the reference value while criterion 5 holds"
        )

    def test_beats_equal_tailed_single_interval(self, table):
        size = table["bimodal"]["summary"]["kde-hpd"].mean_size
        secpr_size = table["bimodal"]["summary"]["secpr"].mean_size
        ok = size <= 0.8 * secpr_size
        report(3, ok, f"bimodal kde-hpd {size:.3f} <= 80% of secpr {secpr_size:.3f}")
        assert ok


class TestCriterion4SkewedSize:
    def test_within_fifteen_percent(self, table):
        size = table["unimodal-skewed"]["summary"]["kde-hpd"].mean_size
        ok = abs(size - 9.949) <= 0.15 * 9.949
        report(4, ok, f"unimodal-skewed kde-hpd size {size:.3f} vs 9.949 +/-15%")
        assert ok, f"size {size:.3f} outside 9.949 +/- 15%"


class TestCriterion5BimodalityDetection:
    def test_two_intervals_in_95_percent_of_reps(self, table):
        reports = [r for r in table["bimodal"]["reports"] if r.method == "kde-hpd"]
        frac = np.mean([r.n_intervals == 2 for r in reports])
        ok = frac >= 0.95
        report(5, ok, f"bimodal b=2 in {100 * frac:.1f}% of {len(reports)} reps")
        assert ok, f"two-interval fraction {frac:.3f} < 0.95"


class TestCriterion6AnalyticHpdOracle:
    def test_cutoff_and_endpoints(self):
        rng = np.random.default_rng(123)
        model = fit_kde(rng.standard_normal(10_000))
        lam = find_cutoff(model, 0.10)
        (lo, hi), = extract_intervals(model, lam)
        lam_ok = abs(lam - norm.pdf(Z90)) <= 0.01
        ends_ok = abs(lo + Z90) <= 0.05 and abs(hi - Z90) <= 0.05
        report(6, lam_ok and ends_ok,
               f"cutoff {lam:.5f} vs {norm.pdf(Z90):.5f}, interval [{lo:.3f}, {hi:.3f}]")
        assert lam_ok and ends_ok


class TestCriterion7ExchangeabilityOracle:
    def test_rank_enumeration_and_simulation(self):
        n_cal, a1, a2 = 19, 0.05, 0.05
        k_r = math.ceil(a1 * (n_cal + 1) - 1.0)
        k_q = math.ceil((1.0 - a2) * (n_cal + 1))
        exact = sum(1 for r in range(1, n_cal + 2) if k_r < r <= k_q) / (n_cal + 1)
        enum_ok = exact == 19 / 20

        rng = np.random.default_rng(999)
        hits, total = 0, 0
        for _ in range(4000):
            scores = ScoreVector(rng.standard_normal(n_cal))
            lo, hi = secpr_corrections(scores, a1, a2)
            v_new = rng.standard_normal()
            hits += lo <= v_new <= hi
            total += 1
        p_hat = hits / total
        se = math.sqrt(exact * (1 - exact) / total)
        sim_ok = abs(p_hat - exact) <= 3 * se
        report(7, enum_ok and sim_ok,
               f"enumeration {exact:.4f} == 0.95; simulated {p_hat:.4f} within 3 SE ({3 * se:.4f})")
        assert enum_ok and sim_ok


class TestCriterion8HausdorffConvergence:
    def test_median_distance_strictly_decreases(self):
        scn = Scenario(tag="unimodal-symmetric", alpha=0.1, seed=SEED)
        rows = hausdorff_diagnostic(scn, "kde-hpd", ns=[500, 2000, 8000], reps=50)
        medians = [d for _, d in rows]
        ok = medians[0] > medians[1] > medians[2]
        report(8, ok, f"median d_H over n ladder: {[round(m, 4) for m in medians]}")
        assert ok


class TestCriterion9PropertySuites:
    def test_order_statistics_monotone_and_clamped(self):
        v = ScoreVector(np.arange(1.0, 10.0))
        grid = np.linspace(0, 1, 41)
        qs = [conformal_q(v, d) for d in grid]
        assert all(a <= b for a, b in zip(qs, qs[1:]))
        assert conformal_q(v, 0.99) == math.inf
        assert conformal_r(v, 0.05) == -math.inf
        assert all(conformal_r(v, d) <= conformal_q(v, d) for d in grid)
        report(9, True, "order statistics monotone with clamping")

    def test_coalesce_idempotent_and_membership_preserving(self):
        rng = np.random.default_rng(5)
        raw = PredictionRegion(
            tuple((lo, lo + w) for lo, w in zip(rng.uniform(-9, 9, 10), rng.uniform(0, 4, 10)))
        )
        merged = coalesce(raw)
        assert coalesce(merged).intervals == merged.intervals
        probes = rng.uniform(-12, 14, 1000)
        assert all(
            region_contains(raw, p) == region_contains(merged, p) for p in probes
        )
        report(9, True, "coalesce idempotent, membership preserved on 1000 probes")

    def test_kde_normalization_and_cdf_consistency(self):
        rng = np.random.default_rng(6)
        model = fit_kde(rng.normal(1.0, 2.0, 500))
        total = float(np.trapezoid(model.grid_density, model.grid))
        assert abs(total - 1.0) < 5e-3
        for z in (-2.0, 0.5, 3.0):
            fd = (kde_cdf(model, z + 1e-4) - kde_cdf(model, z - 1e-4)) / 2e-4
            assert abs(fd - kde_eval(model, z)) / kde_eval(model, z) < 1e-6
        report(9, True, f"KDE mass {total:.4f}; CDF-density consistency < 1e-6 rel")

    def test_reduction_to_secpr_is_exact(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-5, 5, 1000).reshape(-1, 1)
        y = 5 + 2 * x[:, 0] + rng.standard_normal(1000)
        data = Dataset(x, y)
        idx = np.arange(1000)
        plan = SplitPlan(idx_train1=idx[:500], idx_train2=[], idx_cal=idx[500:])
        pipe = fit_kde_hpd(data, plan, 0.1)
        assert pipe.n_intervals == 1
        a1, b1 = pipe.hpd.pairs[0]
        assert pipe.eta_gamma[0] == secpr_corrections(pipe.scores, a1, b1)
        report(9, True, "single-interval pipeline equals signed-error order statistics")

    def test_translation_equivariance(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-5, 5, 400).reshape(-1, 1)
        y = 5 + 2 * x[:, 0] + rng.standard_normal(400)
        idx = np.arange(400)
        plan = SplitPlan(idx_train1=idx[:200], idx_train2=[], idx_cal=idx[200:])
        base = fit_kde_hpd(Dataset(x, y), plan, 0.1).predict_region(np.array([0.7]))
        moved = fit_kde_hpd(Dataset(x, y + 11.0), plan, 0.1).predict_region(np.array([0.7]))
        for (lo0, hi0), (lo1, hi1) in zip(base, moved):
            assert lo1 - lo0 == pytest.approx(11.0, abs=1e-8)
            assert hi1 - hi0 == pytest.approx(11.0, abs=1e-8)
        report(9, True, "translation equivariance exact to 1e-8")

    def test_determinism_across_thread_counts(self):
        scn = Scenario(tag="bimodal", n_train=120, n_cal=120, n_test=10, seed=3)
        with mock.patch.object(sim, "_timer", lambda: 0.0):
            serial = run_replications(scn, ("kde-hpd", "secpr"), reps=6, threads=1)
            threaded = run_replications(scn, ("kde-hpd", "secpr"), reps=6, threads=2)
        assert serial == threaded
        report(9, True, "reports bit-identical for threads in {1, 2}")


class TestCriterion10FitLatency:
    def test_single_fit_and_predict_under_100ms(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(-5, 5, 1000).reshape(-1, 1)
        y = 5 + 2 * x[:, 0] + rng.standard_normal(1000)
        data = Dataset(x, y)
        idx = np.arange(1000)
        plan = SplitPlan(idx_train1=idx[:500], idx_train2=[], idx_cal=idx[500:])
        x_new = rng.uniform(-5, 5, 50).reshape(-1, 1)
        fit_kde_hpd(data, plan, 0.1).predict_regions(x_new)  # warm caches
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            pipe = fit_kde_hpd(data, plan, 0.1)
            pipe.predict_regions(x_new)
            times.append(time.perf_counter() - t0)
        best = min(times)
        ok = best < 0.1
        report(10, ok, f"kde-hpd fit+predict at n=1000: {1e3 * best:.1f} ms")
        assert ok, f"fit+predict took {1e3 * best:.1f} ms (budget 100 ms)"
