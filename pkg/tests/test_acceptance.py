"""Acceptance suite: one test per criterion, each printing a single verdict line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
also gathered in the terminal summary.
"""

import hashlib
import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from opfix import bounds as B
from opfix.cli import main
from opfix.config import example_path, load_config
from opfix.engine import IterationConfig, UpdateModel, run, simulate_batch
from opfix.montecarlo import (
    ALPHA_TEST,
    check_coverage,
    closure_audit,
    family_audit,
    hoeffding_slack,
    run_ensemble,
    standard_curves,
)
from opfix.operators import affine_contraction
from opfix.subweibull import zero_noise


def experiment(name):
    return load_config(example_path(name))


def curves_named(curves, name, delta="any"):
    return [c for c in curves if c.proposition == name and (delta == "any" or c.delta == delta)]


def all_pass(report, curves):
    recs = [check_coverage(report, c) for c in curves]
    return all(r.passed for r in recs), min(r.margin for r in recs), recs


@pytest.fixture(scope="module")
def static():
    exp = experiment("static_contractive.cfg")
    assert exp.trials == 5000 and exp.iteration.horizon == 500
    curves = standard_curves(exp.iteration, deltas=(0.1, 0.01))
    report = run_ensemble(exp.iteration, exp.trials, exp.base_seed)
    return exp, curves, report


def test_criterion_01_deterministic_rate(criterion):
    op = affine_contraction([[0.5]], [1.0])
    cfg = IterationConfig(op, UpdateModel((1.0,)), (zero_noise(1),), 50, [0.0])
    dist = run(cfg).dist[:, 0]
    expect = 2.0 * 0.5 ** np.arange(51)
    err = float(np.max(np.abs(dist - expect) / expect))
    criterion(1, err <= 1e-12, f"max relative error {err:.3g} over l <= 50")


def _binomial_knorm(zeta, p, ell, k):
    mpmath.mp.dps = 50
    z, q = mpmath.mpf(zeta) ** mpmath.mpf(k), mpmath.mpf(p)
    s = mpmath.fsum(mpmath.binomial(ell, j) * q**j * (1 - q) ** (ell - j) * z**j for j in range(ell + 1))
    return float(s ** (1 / mpmath.mpf(k)))


def test_criterion_02_knorm_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        zeta = float(rng.uniform(0.01, 0.99))
        p = float(rng.uniform(0.01, 1.0))
        ell = int(rng.integers(0, 61))
        k = float(rng.uniform(1.0, 8.0))
        got = float(B.knorm_zeta_beta(zeta, p, ell, k))
        exact = _binomial_knorm(zeta, p, ell, k)
        worst = max(worst, abs(got - exact) / exact)
    criterion(2, worst <= 1e-12, f"max relative error {worst:.3g} over 100 random tuples")


def test_criterion_03_eta(criterion):
    ks = np.geomspace(1.0, 1e4, 10**6)
    ok, worst_gap, notes = True, 0.0, []
    for zeta in (0.5, 0.9):
        for p in (0.25, 0.5, 1.0):
            e = B.eta_curve(zeta, p, np.arange(501))
            mono = bool(np.all(np.diff(e) <= 0.0))
            ok &= mono and e[0] == 1.0 and bool(np.all(e[1:] < 1.0))
            for ell in (1, 100, 500):
                brute = float(np.max(B.knorm_zeta_beta(zeta, p, ell, ks) / np.sqrt(ks)))
                gap = abs(float(e[ell]) - brute)
                worst_gap = max(worst_gap, gap)
            if not mono:
                notes.append(f"not monotone for zeta={zeta}, p={p}")
    ok &= worst_gap <= 1e-6
    criterion(3, ok, f"monotone, eta(0)=1, eta<1; max |search - brute force| {worst_gap:.2g}" + "; ".join(notes))


def test_criterion_04_mean_coverage(static, criterion):
    exp, curves, report = static
    mean_ok, mean_margin, _ = all_pass(report, curves_named(curves, "mean-contractive"))
    nb = curves_named(curves, "neighborhood-limsup")
    nb_ok, nb_margin, _ = all_pass(report, nb) if nb else (False, float("nan"), [])
    # every one of the last 100 iterations, Bonferroni over 101 points
    d = report.ensemble.dist[:, -101:, :]
    z = stats.norm.ppf(1 - ALPHA_TEST / 101)
    tail_ok = True
    for c in nb:
        x = d[:, :, c.block]
        slack = z * x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
        tail_ok &= bool(np.all(x.mean(axis=0) <= c.values + slack))
    ok = mean_ok and nb_ok and tail_ok and len(nb) == 2
    criterion(4, ok, f"mean bound margin {mean_margin:.3g}; radius check margin {nb_margin:.3g} "
                     f"on the last 100 iterations")


def test_criterion_05_hp_coverage(static, criterion):
    exp, curves, report = static
    hp = curves_named(curves, "hp-contractive")
    ok, margin, _ = all_pass(report, hp)
    neg = [check_coverage(report, c.scaled(0.1)).passed for c in hp]
    ok = ok and len(hp) == 4 and not any(neg)
    criterion(5, ok, f"delta in (0.1, 0.01) min margin {margin:.3g}; 0.1-scaled curves fail: {not any(neg)}")


def test_criterion_06_alt_bound(static, criterion):
    exp, curves, report = static
    alt = curves_named(curves, "hp-contractive-alt")
    ok, margin, _ = all_pass(report, alt)
    below = True
    for a in alt:
        (main_c,) = [c for c in curves_named(curves, "hp-contractive", a.delta) if c.block == a.block]
        below &= bool(np.all(main_c.values[200:] < a.values[200:]))
    criterion(6, ok and below, f"alt coverage margin {margin:.3g}; main < alt for all l >= 200: {below}")


def test_criterion_07_markov(static, criterion):
    exp, curves, report = static
    mk = curves_named(curves, "markov-contractive", 0.01)
    hp = curves_named(curves, "hp-contractive", 0.01)
    ok, margin, _ = all_pass(report, mk + hp)
    below = all(bool(np.all(h.values[10:] < m.values[10:])) for h, m in zip(hp, mk))
    ratio = float(np.max([h.values[10:] / m.values[10:] for h, m in zip(hp, mk)]))
    criterion(7, ok and below, f"hp/markov max ratio for l >= 10: {ratio:.3g}; coverage margin {margin:.3g}")


def test_criterion_08_averaged_fpr(criterion):
    exp = experiment("averaged_box.cfg")
    it = exp.iteration
    curves = standard_curves(it, deltas=(0.1, 0.01))
    rep = run_ensemble(it, exp.trials, exp.base_seed)
    mean_ok, margin, _ = all_pass(rep, curves_named(curves, "mean-averaged-fpr"))
    hp_ok, hp_margin, _ = all_pass(rep, curves_named(curves, "hp-averaged-fpr"))
    quiet = IterationConfig(it.operator, it.update, tuple(zero_noise(d) for d in it.base.partition.dims),
                            it.horizon, it.initial_point)
    cum = simulate_batch(quiet, range(1000)).cum_fpr.mean(axis=0)
    # cum_fpr is recorded for l = 0..L-1
    ell = np.arange(50, it.horizon)
    slopes = [np.polyfit(np.log(ell + 1.0), np.log(cum[ell, i]), 1)[0] for i in range(cum.shape[1])]
    slope_ok = all(-1.1 <= s <= -0.9 for s in slopes)
    criterion(8, mean_ok and hp_ok and slope_ok,
              f"mean margin {margin:.3g}, hp margin {hp_margin:.3g}; zero-noise slopes "
              + ", ".join(f"{s:.4f}" for s in slopes))


def test_criterion_09_sanov(criterion):
    ok_tail = True
    for p in (0.1, 0.25, 0.5, 0.75, 0.9):
        for frac in (0.1, 0.3, 0.6, 1.0):
            eps = frac * p
            ell = np.arange(0, 1001)
            d = B.sanov_delta(p, eps, ell)
            # exact P(beta <= l (p - eps)) by direct summation of the pmf
            tail = np.array([stats.binom.pmf(np.arange(int(math.floor(l * (p - eps) + 1e-9)) + 1), l, p).sum()
                             for l in ell])
            ok_tail &= bool(np.all(d >= tail * (1 - 1e-9)))
    exact_half = bool(np.array_equal(B.sanov_delta(0.5, 0.5, np.arange(200)), 0.5 ** np.arange(200)))

    exp = experiment("noiseless_sanov.cfg")
    it = exp.iteration
    assert exp.trials == 10_000
    rep = run_ensemble(it, exp.trials, exp.base_seed)
    dist = rep.ensemble.dist[:, :, 0]
    slack = hoeffding_slack(exp.trials, 2)
    cov_ok, worst = True, float("inf")
    for eps in exp.eps:
        bound, conf = B.no_noise_hp_rate(0.9, 0.5, eps, np.arange(it.horizon + 1), float(dist[0, 0]))
        for ell in (50, 200):
            cover = float(np.mean(dist[:, ell] <= bound[ell] * (1 + 1e-9)))
            worst = min(worst, cover - (conf[ell] - slack))
            cov_ok &= cover >= conf[ell] - slack
    criterion(9, ok_tail and exact_half and cov_ok,
              f"delta >= exact tail on grid: {ok_tail}; 2^-l exact: {exact_half}; coverage margin {worst:.3g}")


def test_criterion_10_vanishing_noise(criterion):
    exp = experiment("vanishing_noise.cfg")
    it = exp.iteration
    assert exp.trials == 1000 and it.horizon == 500
    curves = curves_named(standard_curves(it, deltas=exp.deltas), "hp-contractive-convolved")
    rep = run_ensemble(it, exp.trials, exp.base_seed)
    final = float(rep.ensemble.dist[:, -1, :].max())
    ok, margin, _ = all_pass(rep, curves)
    criterion(10, ok and final < 1e-3 and len(curves) == 4,
              f"max final distance {final:.3g}; convolved curve margin {margin:.3g}")


def test_criterion_11_online_tracking(criterion, tmp_path):
    exp = experiment("online_contractive.cfg")
    it = exp.iteration
    assert exp.trials == 5000 and it.horizon == 500
    curves = standard_curves(it, deltas=(0.05,))
    rep = run_ensemble(it, exp.trials, exp.base_seed)
    ok, margin, _ = all_pass(rep, curves)
    names = {c.proposition for c in curves}

    zexp = experiment("online_zero_drift.cfg")
    zit = zexp.iteration
    static = IterationConfig(zit.operator.base, zit.update, zit.noise, zit.horizon, zit.initial_point)
    online_c = standard_curves(zit, deltas=zexp.deltas)
    static_c = standard_curves(static, deltas=zexp.deltas,
                               propositions=["mean-contractive", "hp-contractive"])
    pairs = {"mean-online-contractive": "mean-contractive", "hp-online-contractive": "hp-contractive"}
    same = len(online_c) == len(static_c) and all(
        pairs[a.proposition] == b.proposition and a.block == b.block and a.delta == b.delta
        and np.array_equal(a.values, b.values)
        for a, b in zip(online_c, static_c)
    )
    ok = ok and same and names == {"mean-online-contractive", "hp-online-contractive"}
    criterion(11, ok, f"mean and hp (delta=0.05) margin {margin:.3g}; zero drift bit-identical to static: {same}")


def test_criterion_12_online_averaged(criterion):
    exp = experiment("online_averaged.cfg")
    it = exp.iteration
    curves = standard_curves(it, deltas=exp.deltas, which=("minimal", "maximal"))
    rep = run_ensemble(it, exp.trials, exp.base_seed)
    ok, margin, _ = all_pass(rep, curves)
    ordered = True
    for c in curves:
        if c.meta.get("which_sigma") != "minimal":
            continue
        twin = [d for d in curves if d.proposition == c.proposition and d.block == c.block
                and d.delta == c.delta and d.meta.get("which_sigma") == "maximal"]
        ordered &= len(twin) == 1 and bool(np.all(c.values <= twin[0].values))
    realized = bool(np.all(rep.ensemble.sigma_min <= rep.ensemble.sigma_max))
    kinds = {c.proposition for c in curves}
    ok = ok and ordered and realized and kinds == {"mean-online-fpr", "hp-online-fpr"}
    criterion(12, ok, f"mean and hp online FPR margin {margin:.3g}; minimal <= maximal: {ordered and realized}")


def test_criterion_13_closure_audit(criterion):
    good = family_audit(10**6) + closure_audit(10**6)
    bad = family_audit(10**6, nu_factor=0.5) + closure_audit(10**6, nu_factor=0.5)
    worst = max(r.max_ratio for r in good)
    ok = all(r.passed for r in good) and not all(r.passed for r in bad)
    criterion(13, ok, f"{len(good)} audits pass (max ratio {worst:.4f}); halved nu rejected: "
                      f"{sum(not r.passed for r in bad)} failures")


def _hashes(directory):
    return {f: hashlib.sha256((directory / f).read_bytes()).hexdigest()
            for f in ("trajectories.csv", "report.json", "bounds.csv")}


def test_criterion_14_reproducibility(criterion, tmp_path, capsys):
    cfg = "examples/static_contractive.cfg"
    codes = [main(["simulate", cfg, "--out", str(tmp_path / d)] + extra)
             for d, extra in (("a", []), ("b", []), ("c", ["--seed", "9001"]))]
    capsys.readouterr()
    ha, hb, hc = (_hashes(tmp_path / d) for d in "abc")
    ok = codes == [0, 0, 0] and ha == hb and hc["trajectories.csv"] != ha["trajectories.csv"]
    criterion(14, ok, f"exit codes {codes}; reruns hash-identical: {ha == hb}; "
                      f"new base_seed changes trajectories and still passes: {codes[2] == 0}")
