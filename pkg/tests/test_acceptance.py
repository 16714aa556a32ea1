"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``.  Criteria with stated
runtime budgets assert them; the scale benchmark (criterion 7) runs in a
subprocess so its peak memory is attributable.
"""

import json
import math
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from occsel import (
    ClassDistribution,
    CycleState,
    IndexConfig,
    PolicyConfig,
    PoolSpec,
    build_index,
    class_distribution,
    compare_policies,
    frequency_weighted_uncertainty,
    inter_sample_diversity,
    jsd,
    per_class_entropy_mass,
    robust_normalize,
    select_batch,
    apply_selection,
)
from occsel.baselines import k_center_greedy
from occsel.distributions import min_jsd_to_set
from occsel import poolio

from conftest import make_rng, random_grid, random_summary_batch
import reference


@contextmanager
def criterion(number, description):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number:02d} {description}: FAIL "
              f"({time.perf_counter() - started:.1f}s)")
        raise
    print(f"\nACCEPTANCE {number:02d} {description}: PASS "
          f"({time.perf_counter() - started:.1f}s)")


# ---------------------------------------------------------------------------


def test_c01_math_kernel_oracles():
    with criterion(1, "math kernels vs independent oracles (1000 cases each)"):
        started = time.perf_counter()
        rng = make_rng(11)

        for _ in range(1000):  # composition = per-row argmax tally
            n = int(rng.integers(1, 40))
            k = int(rng.integers(2, 18))
            grid = random_grid(rng, k=k, n=n)
            np.testing.assert_array_equal(
                class_distribution(grid).probs,
                reference.tally_distribution(grid.probs))

        for _ in range(1000):  # min divergence = exhaustive scan
            k = int(rng.integers(2, 18))
            pool = rng.dirichlet(np.ones(k), size=int(rng.integers(1, 40)))
            q = rng.dirichlet(np.ones(k))
            got = inter_sample_diversity(
                ClassDistribution(q),
                [ClassDistribution(row) for row in pool])
            want = reference.min_jsd_scan(q, pool)
            assert got == pytest.approx(want, rel=1e-9, abs=1e-12)

        for _ in range(1000):  # entropy mass + weighted uncertainty loops
            n = int(rng.integers(1, 40))
            k = int(rng.integers(2, 18))
            grid = random_grid(rng, k=k, n=n)
            mass = per_class_entropy_mass(grid)
            np.testing.assert_allclose(
                mass, reference.entropy_mass_loop(grid.probs),
                rtol=1e-9, atol=1e-15)
            q = class_distribution(grid)
            assert frequency_weighted_uncertainty(q, mass) == pytest.approx(
                reference.ufw_double_sum(grid.probs, q.probs),
                rel=1e-9, abs=1e-15)

        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"oracle suite took {elapsed:.1f}s"


def test_c02_jsd_property_suite():
    with criterion(2, "divergence properties on 10,000 random pairs"):
        rng = make_rng(22)
        for _ in range(10_000):
            k = int(rng.integers(2, 18))
            p = rng.dirichlet(np.full(k, float(rng.uniform(0.2, 2.0))))
            q = rng.dirichlet(np.full(k, float(rng.uniform(0.2, 2.0))))
            value = jsd(p, q)
            assert value == jsd(q, p)
            assert 0.0 <= value <= 1.0
            assert jsd(p, p) == 0.0
        for _ in range(2_000):  # disjoint supports saturate the bound
            k = int(rng.integers(4, 18))
            cut = int(rng.integers(1, k - 1))
            classes = rng.permutation(k)
            p = np.zeros(k)
            q = np.zeros(k)
            p[classes[:cut]] = rng.dirichlet(np.ones(cut))
            q[classes[cut:]] = rng.dirichlet(np.ones(k - cut))
            assert jsd(p, q) == pytest.approx(1.0, abs=1e-12)


def test_c03_normalization_properties():
    with criterion(3, "robust normalization on 1,000 random score vectors"):
        rng = make_rng(33)
        for _ in range(1000):
            n = int(rng.integers(1, 60))
            scale = float(10 ** rng.uniform(-3, 6))
            x = rng.normal(size=n) * scale
            y = robust_normalize(x)
            assert y.min() >= 0.0 and y.max() <= 1.0
            order = np.argsort(x, kind="stable")
            assert (np.diff(y[order]) >= 0).all()
            q1, q3 = np.percentile(x, (25, 75))
            if q3 > q1 and n > 1 and x.max() > x.min():
                minmax = (x - x.min()) / (x.max() - x.min())
                np.testing.assert_array_equal(
                    np.argsort(y, kind="stable"),
                    np.argsort(minmax, kind="stable"))
        np.testing.assert_array_equal(
            robust_normalize(np.full(17, 3.25)), np.zeros(17))


def test_c04_greedy_selection_vs_from_scratch_reference():
    with criterion(4, "greedy batches equal from-scratch reference "
                      "(200 small instances)"):
        for seed in range(200):
            rng = make_rng(1000 + seed)
            n = int(rng.integers(1, 13))
            budget = int(rng.integers(1, min(3, n) + 1))
            k = int(rng.integers(2, 8))
            n_labeled = int(rng.integers(0, 9))
            batch = random_summary_batch(rng, k=k, n=n)
            labeled_rows = [rng.dirichlet(np.ones(k))
                            for _ in range(n_labeled)]
            labeled = {f"lab{i:02d}": ClassDistribution(r)
                       for i, r in enumerate(labeled_rows)}
            state = CycleState(labeled=labeled, unlabeled_ids=set(batch.ids))
            got = select_batch(state, batch, budget).sample_ids
            want = reference.reference_select_small(
                batch.ids, batch.q, batch.entropy_mass,
                [labeled[i].probs for i in sorted(labeled)], budget)
            assert got == want, f"instance {seed}: {got} != {want}"


def test_c05_incremental_equals_full_recomputation():
    with criterion(5, "incremental intra updates equal full recomputation "
                      "(100 pools of 1,000, budget 20)"):
        for seed in range(100):
            rng = make_rng(5000 + seed)
            k = int(rng.integers(4, 12))
            batch = random_summary_batch(rng, k=k, n=1000)
            n_labeled = int(rng.integers(0, 31))
            labeled_rows = rng.dirichlet(np.ones(k), size=n_labeled) \
                if n_labeled else []
            labeled = {f"lab{i:03d}": ClassDistribution(r)
                       for i, r in enumerate(labeled_rows)}
            state = CycleState(labeled=labeled, unlabeled_ids=set(batch.ids))
            got = select_batch(state, batch, budget=20).sample_ids
            want = reference.reference_select_vectorized(
                batch.ids, batch.q, batch.entropy_mass,
                [labeled[i].probs for i in sorted(labeled)], budget=20)
            assert got == want, f"pool {seed}"


def test_c06_retrieval_contract():
    with criterion(6, "retrieval: exact at full width, recall >= 0.99 at "
                      "10k/64, never below the true minimum"):
        started = time.perf_counter()
        rng = make_rng(66)

        for _ in range(100):  # full width == exhaustive scan, bit-identical
            n = int(rng.integers(2, 200))
            k = int(rng.integers(2, 12))
            rows = rng.dirichlet(np.ones(k), size=n)
            ids = [f"p{i:05d}" for i in range(n)]
            index = build_index(
                (ids, rows), IndexConfig(rerank_width=n, mode="ivf", seed=1))
            for _ in range(3):
                q = rng.dirichlet(np.ones(k))
                got_id, got_value = index.min_jsd(q)
                values = [jsd(rows[i], q) for i in range(n)]
                best = int(np.argmin(values))
                assert got_value == values[best]
                assert got_id == ids[best]

        k = 17
        n = 10_000
        rows = rng.dirichlet(np.ones(k), size=n)
        ids = [f"p{i:05d}" for i in range(n)]
        queries = rng.dirichlet(np.ones(k), size=1000)
        exact_values, _ = min_jsd_to_set(queries, rows)

        # spec-default configuration: a 10k pool scans exhaustively
        auto_index = build_index((ids, rows), IndexConfig(rerank_width=64))
        _, auto_values = auto_index.min_jsd_batch(queries)
        assert (auto_values >= exact_values).all()
        auto_recall = float((auto_values == exact_values).mean())
        assert auto_recall >= 0.99

        # forced partitioned retrieval must hold the same bound
        ivf_index = build_index(
            (ids, rows), IndexConfig(rerank_width=64, mode="ivf", seed=2))
        ivf_values = np.array(
            [ivf_index.min_jsd(queries[i])[1] for i in range(len(queries))])
        assert (ivf_values >= exact_values).all(), "reported min below true min"
        ivf_recall = float((ivf_values == exact_values).mean())
        print(f"\n  recall: auto(exact-mode)={auto_recall:.4f} "
              f"forced-ivf={ivf_recall:.4f}")
        assert ivf_recall >= 0.99

        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"retrieval suite took {elapsed:.1f}s"


def test_c07_million_pool_scale_benchmark():
    with criterion(7, "one 1M-candidate cycle (budget 100) within 10 min "
                      "and 4x payload memory"):
        proc = subprocess.run(
            [sys.executable, "-m", "occsel.cli", "bench",
             "--pool-size", "1000000", "--k", "17", "--budget", "100",
             "--labeled", "1000", "--queries", "200"],
            capture_output=True, text=True, timeout=660,
        )
        print("\n" + proc.stdout.strip())
        assert proc.returncode == 0, proc.stderr
        fields = dict(line.split("=", 1)
                      for line in proc.stdout.strip().splitlines()
                      if "=" in line and " " not in line.split("=", 1)[0])
        total = float(fields["total_s"])
        payload = int(fields["payload_bytes"])
        peak = int(fields["peak_rss_bytes"])
        assert total <= 600.0, f"benchmark took {total:.0f}s"
        assert peak <= 4 * payload, (
            f"peak rss {peak / 1e6:.0f}MB exceeds 4x payload "
            f"{4 * payload / 1e6:.0f}MB")
        assert fields["ann_one_sided_ok"] == "true"


def test_c08_long_tail_simulation_study():
    with criterion(8, "long-tail study: rare-class exposure and coverage "
                      "trends over 20 seeds"):
        started = time.perf_counter()
        spec = PoolSpec(pool_size=5000, num_classes=17, voxels_per_sample=400)
        report = compare_policies(
            spec, ["cas", "random", "entropy"], cycles=5, budget=100,
            seeds=list(range(20)), workers=2)

        for cycle in (2, 3, 4, 5):
            t = report.test("rare_class_exposure", "cas", "random", cycle)
            print(f"\n  rare exposure C{cycle}: cas={t.mean_a:.4f} "
                  f"random={t.mean_b:.4f} p={t.p_greater:.2e}")
            assert t.mean_diff > 0.0
            assert t.p_greater < 0.05
        t = report.test("coverage", "cas", "entropy", 5)
        print(f"  coverage C5: cas={t.mean_a:.4f} entropy={t.mean_b:.4f}")
        assert t.mean_a < t.mean_b

        elapsed = time.perf_counter() - started
        assert elapsed < 900.0, f"study took {elapsed:.0f}s"


def test_c09_coreset_two_approximation():
    with criterion(9, "k-center greedy within 2x the optimal covering "
                      "radius (200 exhaustive instances)"):
        for seed in range(200):
            rng = make_rng(9000 + seed)
            n = int(rng.integers(3, 11))
            m = int(rng.integers(1, 4))
            d = int(rng.integers(1, 5))
            pool = rng.normal(size=(n, d)) * float(10 ** rng.uniform(-1, 2))
            labeled = rng.normal(size=(int(rng.integers(0, 4)), d))
            labeled_arg = labeled if len(labeled) else None
            picks, _ = k_center_greedy(pool, labeled_arg, budget=m)
            centers = pool[picks]
            if len(labeled):
                centers = np.vstack([centers, labeled])
            greedy_radius = reference.euclidean_covering_radius(pool, centers)
            optimal = reference.optimal_covering_radius(pool, labeled, m)
            assert greedy_radius <= 2.0 * optimal + 1e-9, (
                f"instance {seed}: {greedy_radius} > 2x {optimal}")


def test_c10_round_trips_and_resume_determinism(tmp_path):
    with criterion(10, "lossless round trips and byte-identical resume "
                       "from a mid-run snapshot"):
        rng = make_rng(1010)

        grid = random_grid(rng, k=7, n=60, sample_id="rt")
        poolio.write_grid(grid, tmp_path / "g.ocgp")
        back = poolio.read_grid(tmp_path / "g.ocgp", sample_id="rt")
        np.testing.assert_array_equal(back.probs,
                                      grid.probs.astype(np.float32))

        batch = random_summary_batch(rng, k=6, n=60)
        summaries = {batch.ids[i]: batch.summary(i)
                     for i in range(len(batch))}
        poolio.write_summaries(summaries, tmp_path / "s.jsonl")
        s_back = poolio.read_summaries(tmp_path / "s.jsonl")
        assert set(s_back) == set(summaries)
        for sample_id in summaries:
            np.testing.assert_array_equal(
                s_back[sample_id].q.probs, summaries[sample_id].q.probs)
            np.testing.assert_array_equal(
                s_back[sample_id].entropy_mass,
                summaries[sample_id].entropy_mass)

        def run_cycles(state_path, first, last, tag):
            selections = []
            for t in range(first, last + 1):
                state = poolio.load_state(state_path)
                result = select_batch(state, s_back, budget=6)
                sel_path = tmp_path / f"sel{t}_{tag}.jsonl"
                poolio.write_selection(result, sel_path)
                assert poolio.read_selection(sel_path) == result
                state = apply_selection(state, result, s_back)
                state_path = tmp_path / f"state{t}_{tag}.json"
                poolio.save_state(state, state_path)
                selections.append(sel_path)
            return selections, state_path

        start = tmp_path / "state0.json"
        poolio.save_state(CycleState(labeled={}, unlabeled_ids=set(s_back)),
                          start)
        full, full_final = run_cycles(start, 1, 5, "full")
        resumed, resumed_final = run_cycles(
            tmp_path / "state3_full.json", 4, 5, "resume")
        for a, b in zip(full[3:], resumed):
            assert a.read_bytes() == b.read_bytes()
        assert full_final.read_bytes() == resumed_final.read_bytes()
