"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import time
import warnings
from dataclasses import replace

import numpy as np
import pytest
from oracles import central_difference, rel_err
from scipy.stats import spearmanr

from fairot.bicausal import (
    BcdConfig,
    LeveledDistribution,
    bcd_nested_sinkhorn,
    cdd_wass_direct,
    min_level_gap,
    output_diameter,
)
from fairot.data import split
from fairot.dcfr import DiscreteJoint, dcfr_closed_form, dcfr_sup_bruteforce, ratio_identity
from fairot.disparity import audit
from fairot.errors import DegenerateCondition
from fairot.fairtrain import KINDS, Regularizer, TrainConfig, predict, regularizer_value_and_grad, train
from fairot.fairtrain.mlp import flatten_grads, get_params, init_mlp, set_params
from fairot.fairtrain.train import objective_and_grad
from fairot.otcore import Empirical1D, SinkhornConfig, brute_force_ot, exact_wasserstein_1d, sinkhorn
from fairot.synth import BiasedConfig, generate_biased, income_table_dataset, loan_sweep, sweep_slopes

LEAP_GRID = np.logspace(-4, 1, 10)


def test_01_sinkhorn_matches_exact_ot(acceptance):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    factors = (0.1, 0.01, 0.001)
    errs = np.zeros((500, 3))
    for k in range(500):
        m, n = rng.integers(2, 51, 2)
        p = 1 + k % 2
        # two genuinely different clouds keep the optimal cost away from zero
        x = rng.normal(size=(m, 2))
        y = rng.uniform(0.5, 2.0) * rng.normal(size=(2,)) / np.sqrt(2) + rng.uniform(0.5, 1.5) * rng.normal(size=(n, 2))
        C = np.linalg.norm(x[:, None] - y[None], axis=2) ** p
        a, b = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(n))
        exact = brute_force_ot(C, a, b)
        for j, f in enumerate(factors):
            res = sinkhorn(C, a, b, SinkhornConfig(epsilon=f * C.mean()))
            errs[k, j] = abs(res.transport_cost - exact) / exact
    elapsed = time.perf_counter() - t0
    mean = errs.mean(axis=0)
    ok = errs[:, 2].max() < 0.02 and mean[0] > mean[1] > mean[2] and elapsed < 30
    detail = (
        f"max rel err {errs[:, 2].max():.2e} at 1e-3; mean errs {mean[0]:.2e} > {mean[1]:.2e} > {mean[2]:.2e}; "
        f"per-instance strict decrease {np.mean((errs[:, 0] > errs[:, 1]) & (errs[:, 1] > errs[:, 2])):.0%}; {elapsed:.1f}s"
    )
    acceptance(1, "Sinkhorn vs exact OT", ok, detail)
    assert ok, detail


def test_02_exact_1d(acceptance):
    rng = np.random.default_rng(202)
    worst = 0.0
    for k in range(500):
        m, n = rng.integers(1, 13, 2)
        if k % 3 == 0:
            n = m = min(m, 8)
        p = 1 + k % 2
        x, y = rng.normal(size=m), rng.normal(size=n) + rng.normal()
        a = Empirical1D.from_samples(x)
        b = Empirical1D.from_samples(y)
        C = np.abs(x[:, None] - y[None]) ** p
        oracle = brute_force_ot(C, np.full(m, 1 / m), np.full(n, 1 / n))
        worst = max(worst, abs(exact_wasserstein_1d(p, a, b) - oracle))
    ok = worst < 1e-9
    acceptance(2, "1-D exact transport", ok, f"max abs diff {worst:.2e}")
    assert ok


def equal_marginal_instance(rng):
    K = int(rng.integers(2, 5))
    coords = np.sort(rng.choice(np.arange(0.0, 6.0, 0.5), K, replace=False))
    w = rng.dirichlet(np.ones(K))
    # per-level output clouds far apart so cheap level mixing pays off
    def side():
        outs = [Empirical1D.from_samples(rng.uniform(0, 10) + rng.normal(size=rng.integers(1, 6))) for _ in range(K)]
        return LeveledDistribution(tuple(range(K)), coords, w, outs)
    return side(), side()


def test_03_bicausal_equals_direct(acceptance):
    rng = np.random.default_rng(303)
    worst_gap = worst_off = 0.0
    mixed = 0
    for _ in range(100):
        d0, d1 = equal_marginal_instance(rng)
        p = int(rng.integers(1, 3))
        ratio = output_diameter(d0, d1, p) / min_level_gap(d0, d1, p)
        res = bcd_nested_sinkhorn(d0, d1, BcdConfig(C=1.01 * ratio + 1, p=p, use_exact_oracles=True))
        worst_gap = max(worst_gap, abs(res.value - cdd_wass_direct(d0, d1, p)))
        worst_off = max(worst_off, res.outer_plan.off_diagonal_mass())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            low = bcd_nested_sinkhorn(d0, d1, BcdConfig(C=0.01 * ratio, p=p, use_exact_oracles=True))
        mixed += low.outer_plan.off_diagonal_mass() > 1e-8
    ok = worst_gap < 1e-6 and worst_off < 1e-8 and mixed >= 1
    acceptance(3, "bi-causal distance = level-wise Wasserstein", ok,
               f"max |bcd-direct| {worst_gap:.1e}; max off-diag {worst_off:.1e}; low-C mixing in {mixed}/100")
    assert ok


def random_joint(rng, max_cells=12):
    nz = int(rng.integers(1, 5))
    nl = int(rng.integers(1, max_cells // nz + 1))
    m = rng.dirichlet(np.ones(nz * nl * 2)).reshape(nz, nl, 2)
    return DiscreteJoint(tuple(range(nz)), tuple(range(nl)), m)


def test_04_dcfr_sup_closed_form(acceptance):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        j = random_joint(rng)
        assert j.n_cells <= 12
        worst = max(worst, abs(dcfr_sup_bruteforce(j) - dcfr_closed_form(j)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and elapsed < 10
    acceptance(4, "DCFR sup over indicators = closed form", ok, f"max diff {worst:.1e}; {elapsed:.2f}s")
    assert ok


def test_05_ratio_identity(acceptance):
    rng = np.random.default_rng(505)
    worst = 0.0
    done = 0
    while done < 200:
        j = random_joint(rng)
        z = j.z_values[int(rng.integers(len(j.z_values)))]
        l = j.l_values[int(rng.integers(len(j.l_values)))]
        try:
            lhs, rhs = ratio_identity(j, z, l)
        except DegenerateCondition:
            continue
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
        done += 1
    ok = worst < 1e-10
    acceptance(5, "DCFR-CDD ratio identity", ok, f"max rel diff {worst:.1e} over {done} triples")
    assert ok


def test_06_loan_sweep(acceptance):
    t0 = time.perf_counter()
    rows = loan_sweep((0.5, 0.7, 0.9), tuple(round(0.05 * k, 2) for k in range(1, 9)), n=10_000, seed=0)
    elapsed = time.perf_counter() - t0
    diag = max(abs(r["cdd_empirical"] - r["r_dcfr_empirical"]) for r in rows if r["r_m"] == 0.5)
    slopes = sweep_slopes(rows)
    fb = sweep_slopes(rows, "cdd_empirical", "fairbit_reg_value")
    ok = diag < 0.02 and slopes[0.5] < slopes[0.7] < slopes[0.9] and all(abs(v - 1) < 0.05 for v in fb.values())
    ok = ok and elapsed < 60
    detail = (
        f"r_m=0.5 max |cdd-r_dcfr| {diag:.3f}; slopes "
        + ", ".join(f"{k}: {v:.3f}" for k, v in slopes.items())
        + "; fairbit slopes " + ", ".join(f"{v:.4f}" for v in fb.values())
        + f"; {elapsed:.1f}s"
    )
    acceptance(6, "loan sweep", ok, detail)
    assert ok, detail


def test_07_income_table(acceptance):
    ds = income_table_dataset()
    rep = audit(ds, ds.target)
    ok = abs(rep.dd) < 1e-9 and abs(rep.cdd_lp_uniform - 0.2) < 1e-9
    acceptance(7, "income table audit", ok, f"dd {rep.dd:.2e}; cdd_lp_uniform {rep.cdd_lp_uniform:.12f}")
    assert ok


def test_08_gradients(acceptance):
    rng = np.random.default_rng(808)
    reg_worst = {}
    for kind in KINDS[1:]:
        reg = Regularizer(kind, epsilon=0.05)
        worst = 0.0
        for _ in range(3):
            out = rng.random(24)
            L = np.repeat(np.arange(3), 8)
            A = rng.permutation(np.tile([0, 1], 12))
            res = regularizer_value_and_grad(reg, out, L, A)
            fd = central_difference(lambda y: regularizer_value_and_grad(reg, y, L, A).objective, out, h=1e-5)
            worst = max(worst, rel_err(res.grad, fd))
        reg_worst[kind] = worst
    n = 30
    X = rng.normal(size=(n, 3))
    L = np.repeat(np.arange(3), 10)
    A = np.tile([0, 1], 15)
    y = (rng.random(n) < 0.5).astype(float)
    full_worst = {}
    for kind in KINDS:
        model = init_mlp([3, 8, 4, 1], np.random.default_rng(9))
        cfg = TrainConfig(regularizer=Regularizer(kind, epsilon=0.05), lam=0.5)
        _, _, _, gW, gb = objective_and_grad(model, X, y, L, A, np.arange(3.0)[:, None], cfg)
        theta = get_params(model)

        def total(t):
            set_params(model, t)
            return objective_and_grad(model, X, y, L, A, np.arange(3.0)[:, None], cfg)[2]

        full_worst[kind] = rel_err(flatten_grads(gW, gb), central_difference(total, theta, h=1e-5))
    ok = max(reg_worst.values()) < 1e-4 and max(full_worst.values()) < 1e-3
    acceptance(8, "gradient suite", ok,
               f"max regularizer rel err {max(reg_worst.values()):.1e}; max objective rel err {max(full_worst.values()):.1e}")
    assert ok


@pytest.fixture(scope="module")
def biased_splits():
    return split(generate_biased(BiasedConfig(n=2000, seed=0)), (0.6, 0.2, 0.2), seed=0)


def test_09_training_trend(acceptance, biased_splits):
    tr, va, te = biased_splits
    t0 = time.perf_counter()
    base = dict(batch_size=128, seed=0)
    ref, href = train(tr, TrainConfig(**base), va, te)
    zero, hzero = train(tr, TrainConfig(regularizer=Regularizer("fairleap-uniform"), lam=0.0, **base), va, te)
    identical = all(np.array_equal(u, v) for u, v in zip(ref.weights + ref.biases, zero.weights + zero.biases))
    cdd0 = hzero.report.cdd_lp_uniform
    cdds = []
    for lam in LEAP_GRID:
        _, h = train(tr, TrainConfig(regularizer=Regularizer("fairleap-uniform"), lam=float(lam), **base), va, te)
        cdds.append(h.report.cdd_lp_uniform)
    elapsed = time.perf_counter() - t0
    rho = spearmanr(LEAP_GRID, cdds).statistic
    ok = identical and rho < 0 and cdds[-1] < 0.5 * cdd0 and elapsed < 300
    acceptance(9, "training trend over the penalty grid", ok,
               f"lambda=0 identical {identical}; spearman {rho:.3f}; cdd {cdd0:.3f} -> {cdds[-1]:.3f}; {elapsed:.0f}s")
    assert ok


def test_10_legit_only(acceptance, biased_splits):
    tr, va, te = biased_splits
    full, _ = train(tr, TrainConfig(batch_size=128, seed=0), va, te)
    legit, h = train(tr, TrainConfig(batch_size=128, seed=0, features="legit"), va, te)
    rep = h.report
    # noise floor: the same audit on the full model's held-out scores after
    # shuffling A inside every level, which makes the scores fair by design
    scores = predict(full, te)
    rng = np.random.default_rng(10)
    fields = ("cdd_lp_uniform", "cdd_lp_pl", "cdd_lp_avg", "cdd_wass_normalized", "dcfr")
    floors = {f: [] for f in fields}
    for _ in range(20):
        A = te.sensitive.copy()
        for k in range(te.n_levels):
            idx = np.flatnonzero(te.levels == k)
            A[idx] = A[idx][rng.permutation(idx.size)]
        r = audit(replace(te, sensitive=A), scores)
        for f in fields:
            floors[f].append(getattr(r, f))
    floor = {f: float(np.mean(v)) for f, v in floors.items()}
    ok = all(abs(getattr(rep, f)) < 2 * floor[f] for f in fields)
    acceptance(10, "legit-only model is conditionally fair", ok,
               "; ".join(f"{f} {getattr(rep, f):.1e}/{floor[f]:.1e}" for f in fields))
    assert ok


def test_11_fairbit_scaling(acceptance):
    rng = np.random.default_rng(111)
    times = {}
    for n in (256, 512, 1024):
        out = rng.random(n)
        L = rng.integers(0, 4, n)
        A = rng.integers(0, 2, n)
        reg = Regularizer("fairbit")
        regularizer_value_and_grad(reg, out, L, A)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            regularizer_value_and_grad(reg, out, L, A)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
    r1, r2 = times[512] / times[256], times[1024] / times[512]
    ok = r1 <= 5 and r2 <= 5
    acceptance(11, "FairBiT cost growth per doubling", ok,
               f"times {times[256]*1e3:.1f}/{times[512]*1e3:.1f}/{times[1024]*1e3:.1f} ms; ratios {r1:.2f}, {r2:.2f}")
    assert ok
