import csv
import json
import math

import numpy as np
import pytest

from gwlab import ParameterOutOfRange
from gwlab.series_engine import (
    mrca_cdf_given_survival,
    reduced_profile,
    small_deviation_prob,
    survival_probability,
    threshold,
)
from gwlab.simulator import (
    Extinct,
    Overflow,
    TreeRun,
    mc_conditional_reduced,
    mc_small_dev,
    mc_zubkov,
    mrca_distance,
    naive_reduced_counts,
    screen,
    simulate_tree,
    write_replicate_log,
)


def surviving_runs(law, n, count, start=0, max_total=None):
    runs, seed = [], start
    while len(runs) < count:
        run = simulate_tree(law, n, seed)
        seed += 1
        if isinstance(run, TreeRun) and (max_total is None or run.sizes.sum() <= max_total):
            runs.append(run)
    return runs


# --- single trees ----------------------------------------------------------

def test_extinct_run(heavy_law):
    seed = 0
    while True:
        run = simulate_tree(heavy_law, 20, seed)
        if isinstance(run, Extinct):
            break
        seed += 1
    assert run.status == "extinct"
    assert not hasattr(run, "reduced_counts")
    assert 1 <= run.generation <= 20


@pytest.mark.parametrize("name", ["heavy_law", "geo_law"])
def test_tree_invariants(name, request):
    law = request.getfixturevalue(name)
    n = 25
    for run in surviving_runs(law, n, 30):
        z = run.reduced_counts
        assert z[n] == run.z_final
        assert z[0] == 1
        assert np.all(np.diff(z) >= 0)
        assert run.mrca_distance == n - max(m for m in range(n) if z[m] == 1)
        for m in range(n - 1):
            assert run.generations[m].sum() == len(run.generations[m + 1])
        assert run.generations[n - 1].sum() == run.z_final
        for m in range(n + 1):
            assert run.survivor_marks[m].sum() == z[m]


def test_backward_marking_matches_naive(geo_law, heavy_law):
    for law in (geo_law, heavy_law):
        for n in (2, 3, 5):
            for run in surviving_runs(law, n, 15, max_total=12):
                assert np.array_equal(run.reduced_counts, naive_reduced_counts(run.generations, n))
    # larger trees as well, still exhaustively checked
    for run in surviving_runs(geo_law, 30, 10):
        assert np.array_equal(run.reduced_counts, naive_reduced_counts(run.generations, 30))


def test_seed_determinism(heavy_law):
    a = simulate_tree(heavy_law, 40, 123, replicate=4)
    b = simulate_tree(heavy_law, 40, 123, replicate=4)
    assert type(a) is type(b)
    if isinstance(a, TreeRun):
        assert all(np.array_equal(x, y) for x, y in zip(a.generations, b.generations))
        assert np.array_equal(a.reduced_counts, b.reduced_counts)
    sa = screen(heavy_law, 40, 5000, 9)
    sb = screen(heavy_law, 40, 5000, 9, jobs=3)
    assert np.array_equal(sa.z_final, sb.z_final)


def test_screen_agrees_with_tree(heavy_law):
    sc = screen(heavy_law, 30, 200, 77)
    for r in range(200):
        run = simulate_tree(heavy_law, 30, 77, replicate=r)
        expect = run.z_final if isinstance(run, TreeRun) else 0
        assert sc.z_final[r] == expect


def test_overflow_and_retry(heavy_law):
    # find a replicate whose population gets large, then squeeze the cap
    sc = screen(heavy_law, 60, 4000, 5)
    r = int(np.argmax(sc.z_final))
    big = int(sc.z_final[r])
    assert big > 40
    run = simulate_tree(heavy_law, 60, 5, population_cap=big // 8, replicate=r)
    assert isinstance(run, Overflow)
    assert run.status == "overflow"
    tiny = screen(heavy_law, 60, 4000, 5, population_cap=big // 8)
    assert tiny.indeterminate >= 1
    assert np.array_equal(tiny.z_final[tiny.z_final >= 0], sc.z_final[tiny.z_final >= 0])
    cap_ok = screen(heavy_law, 60, 4000, 5, population_cap=big // 2)
    assert cap_ok.z_final[r] == big
    assert cap_ok.caps[r] >= big // 2


def test_mrca_distance_helper():
    assert mrca_distance(np.array([1, 1, 2, 2, 3])) == 3
    assert mrca_distance(np.array([1, 1, 1, 1])) == 1


# --- frequencies against exact values --------------------------------------

def test_survival_frequency(heavy_law):
    n, reps = 32, 10**6
    sc = screen(heavy_law, n, reps, 2024)
    q = survival_probability(heavy_law, n)
    freq = np.mean(sc.z_final > 0)
    assert abs(freq - q) < 4 * math.sqrt(q * (1 - q) / reps)


def test_criticality_geometric(geo_law):
    n, reps = 20, 200_000
    sc = screen(geo_law, n, reps, 31)
    assert sc.indeterminate == 0
    z = sc.z_final.astype(float)
    assert abs(z.mean() - 1) < 5 * z.std(ddof=1) / math.sqrt(reps)


def test_mc_small_dev_vs_exact(heavy_law):
    n, phi = 64, 8
    res = mc_small_dev(heavy_law, n, phi, 400_000, 17)
    exact = small_deviation_prob(heavy_law, n, phi).probability
    assert abs(res.estimate - exact) < 4 * res.stderr
    assert res.accepted <= res.replicates
    hits = round(res.estimate * res.accepted)
    p = hits / res.accepted
    assert res.stderr == pytest.approx(math.sqrt(p * (1 - p) * res.accepted / (res.accepted - 1) / res.accepted))


def test_mc_small_dev_phi_n_bounded_by_survival(heavy_law):
    n = 40
    res = mc_small_dev(heavy_law, n, n, 100_000, 3)
    surv = np.mean(screen(heavy_law, n, 100_000, 3).z_final > 0)
    assert res.estimate <= surv


def test_mc_small_dev_two_seeds(heavy_law):
    a = mc_small_dev(heavy_law, 64, 8, 200_000, 1)
    b = mc_small_dev(heavy_law, 64, 8, 200_000, 2)
    assert abs(a.estimate - b.estimate) < 6 * math.hypot(a.stderr, b.stderr)


def test_mc_small_dev_outputs(heavy_law, tmp_path):
    res = mc_small_dev(heavy_law, 16, 4, 2000, 8, log_path=tmp_path / "log.csv")
    summary = json.loads(res.to_json(tmp_path / "s.json"))
    assert set(summary) == {"estimate", "stderr", "replicates", "accepted", "seed", "indeterminate_count"}
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["replicate", "z_final", "d_n", "accepted"]
    assert len(rows) == 2001
    with pytest.raises(ParameterOutOfRange):
        mc_small_dev(heavy_law, 16, 20, 10, 1)


def test_replicate_log(tmp_path):
    write_replicate_log(tmp_path / "r.csv", [0, 3], [-1, 2], [False, True])
    assert open(tmp_path / "r.csv").read().splitlines() == [
        "replicate,z_final,d_n,accepted", "0,0,,0", "1,3,2,1"]


def test_mc_conditional_reduced_vs_exact(heavy_law):
    n, phi, x = 64, 8, 1.0
    res = mc_conditional_reduced(heavy_law, n, phi, x, 4, 400_000, 23)
    assert not res.too_few_accepted
    T = threshold(heavy_law, phi)
    prof = reduced_profile(heavy_law, n, n - math.ceil(x * phi), T, j_max=4)
    exact = prof.cond_j_given_H[1:5]
    se = np.sqrt(exact * (1 - exact) / res.accepted)
    assert np.all(np.abs(res.estimates - exact) < 4 * se)
    assert res.estimates.sum() <= 1 + 1e-12
    tv = 0.5 * np.abs(res.estimates - exact).sum()
    assert tv <= 3 * res.stderr.sum()


def test_mc_conditional_reduced_large_x(heavy_law):
    n, phi = 64, 8
    x = 3.5  # x phi = 28, close to n / 2
    res = mc_conditional_reduced(heavy_law, n, phi, x, 3, 200_000, 4)
    assert res.estimates[0] > 0.5
    assert res.estimates[0] > res.estimates[1] > res.estimates[2]


def test_mc_conditional_flags_too_few(heavy_law):
    res = mc_conditional_reduced(heavy_law, 64, 8, 1.0, 2, 500, 4)
    assert res.too_few_accepted


# --- MRCA -------------------------------------------------------------------

def test_zubkov_cdf_properties(heavy_law):
    n = 64
    y = np.linspace(0.05, 1.0, 20)
    res = mc_zubkov(heavy_law, n, 200_000, 6, y_grid=y)
    assert res.cdf[-1] == 1.0
    assert np.all(np.diff(res.cdf) >= 0)
    for yy, emp in zip(y, res.cdf):
        exact = mrca_cdf_given_survival(heavy_law, n, math.floor(yy * n))
        se = math.sqrt(max(exact * (1 - exact), 1e-12) / res.accepted)
        assert abs(emp - exact) < 4.5 * se + 1e-12


def test_zubkov_needs_replicates(heavy_law):
    with pytest.raises(ParameterOutOfRange):
        mc_zubkov(heavy_law, 10, 100, 1)


def test_exact_mrca_tends_to_uniform(heavy_law):
    devs = []
    for n in (64, 512, 2048):
        devs.append(max(abs(mrca_cdf_given_survival(heavy_law, n, math.floor(y * n)) - y)
                        for y in np.arange(1, 10) / 10))
    assert devs[0] > devs[1] > devs[2]
    assert devs[-1] < 0.01


def test_shared_screening_matches(heavy_law):
    sc = screen(heavy_law, 64, 50_000, 12)
    a = mc_small_dev(heavy_law, 64, 8, 50_000, 12)
    b = mc_small_dev(heavy_law, 64, 8, 50_000, 12, screening=sc)
    assert a.estimate == b.estimate
    c = mc_conditional_reduced(heavy_law, 64, 8, 1.0, 3, 50_000, 12, screening=sc)
    d = mc_conditional_reduced(heavy_law, 64, 8, 1.0, 3, 50_000, 12)
    assert np.array_equal(c.estimates, d.estimates)
    with pytest.raises(ParameterOutOfRange):
        mc_small_dev(heavy_law, 64, 8, 10, 12, screening=sc)
