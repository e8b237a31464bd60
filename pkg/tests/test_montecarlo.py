import math
from dataclasses import replace

import numpy as np
import pytest

from opfix import bounds as B
from opfix.engine import IterationConfig, UpdateModel
from opfix.montecarlo import (
    check_coverage,
    check_grid,
    closure_audit,
    family_audit,
    hoeffding_slack,
    markov_comparison,
    run_ensemble,
    standard_curves,
)
from opfix.operators import BlockPartition, affine_contraction
from opfix.subweibull import gaussian_noise, weibull_noise, zero_noise


def contractive(noise=None, p=0.5, horizon=100):
    op = affine_contraction(np.diag([0.8, -0.8]), [0.2, 1.0], partition=BlockPartition((1, 1)))
    x0 = op.fixed_point + np.array([1.0, -1.0])
    ns = noise or (gaussian_noise(0.05), gaussian_noise(0.05))
    return IterationConfig(op, UpdateModel((p, p)), ns, horizon, x0)


class TestGrid:
    def test_grid(self):
        assert check_grid(np.arange(0, 35)).tolist() == [1, 10, 20, 30, 34]
        assert check_grid(np.arange(0, 31)).tolist() == [1, 10, 20, 30]

    def test_slack_scaling(self):
        assert hoeffding_slack(5000, 52) == pytest.approx(math.sqrt(math.log(2 * 52 / 0.01) / 10000))
        assert hoeffding_slack(1000, 20) / hoeffding_slack(2000, 20) == pytest.approx(math.sqrt(2))


class TestEnsemble:
    def test_deterministic_quantiles(self):
        cfg = contractive((zero_noise(1), zero_noise(1)), p=1.0, horizon=30)
        rep = run_ensemble(cfg, 100)
        summ = rep.summary("dist")
        assert np.all(rep.ensemble.dist == rep.ensemble.dist[:1])
        expect = 0.8 ** np.arange(31)
        for key in ("mean", "q0.5", "q0.9", "q0.99"):
            assert summ[key][:, 0] == pytest.approx(expect, rel=1e-12)

    @pytest.mark.slow
    def test_noiseless_mean_between_floor_and_bound(self):
        cfg = contractive((zero_noise(1), zero_noise(1)), p=0.5, horizon=60)
        curves = standard_curves(cfg, propositions=["mean-contractive"])
        rep = run_ensemble(cfg, 10_000, curves=curves)
        assert rep.passed
        mean = rep.summary("dist")["mean"][:, 0]
        assert np.all(mean >= 0.8 ** np.arange(61) * (1 - 1e-12))

    def test_min_trials(self):
        with pytest.raises(ValueError):
            run_ensemble(contractive(), 50)

    def test_report_determinism(self):
        cfg = contractive(horizon=40)
        curves = standard_curves(cfg)
        a = run_ensemble(cfg, 200, 3, curves).to_json()
        b = run_ensemble(cfg, 200, 3, curves, workers=3).to_json()
        assert a == b
        c = run_ensemble(cfg, 200, 4, curves).to_json()
        assert a != c

    def test_seeds(self):
        rep = run_ensemble(contractive(horizon=10), 100, base_seed=40)
        assert rep.ensemble.seeds.tolist() == list(range(40, 140))


@pytest.fixture(scope="module")
def report():
    cfg = contractive(horizon=150)
    return cfg, run_ensemble(cfg, 2000, 0)


class TestCoverage:
    def test_all_curves_pass(self, report):
        cfg, rep = report
        for c in standard_curves(cfg, deltas=(0.5, 0.1, 0.01)):
            rec = check_coverage(rep, c)
            assert rec.passed, (c.proposition, c.delta, rec.margin)
            if c.kind == "hp":
                assert all(0.0 <= v <= 1.0 for v in rec.empirical)

    def test_loose_curve_margin(self, report):
        cfg, rep = report
        c = standard_curves(cfg, deltas=(0.5,), propositions=["hp-contractive"])[0]
        rec = check_coverage(rep, c)
        assert rec.margin > 0.4

    def test_shrunk_curve_fails(self, report):
        cfg, rep = report
        for c in standard_curves(cfg, deltas=(0.1,), propositions=["hp-contractive", "mean-contractive"]):
            assert not check_coverage(rep, c.scaled(0.1)).passed

    def test_mean_as_hp_negative_control(self):
        # heavy tails: the mean curve sits close to the empirical mean, well below the 99% level
        op = affine_contraction([[0.5]], [0.0])
        cfg = IterationConfig(op, UpdateModel((1.0,)), (weibull_noise(2.0, 0.1),), 50, [0.0])
        rep = run_ensemble(cfg, 2000)
        mean = standard_curves(cfg, propositions=["mean-contractive"])[0]
        assert check_coverage(rep, mean).passed
        as_hp = replace(mean, kind="hp")
        assert not check_coverage(rep, as_hp, delta=0.01).passed

    def test_errors(self, report):
        cfg, rep = report
        c = standard_curves(cfg, propositions=["mean-contractive"])[0]
        with pytest.raises(ValueError):
            check_coverage(rep, replace(c, block=5))
        longer = contractive(horizon=300)
        with pytest.raises(ValueError):
            check_coverage(rep, standard_curves(longer, propositions=["mean-contractive"])[0])
        with pytest.raises(ValueError):
            check_coverage(rep, replace(standard_curves(cfg, propositions=["hp-contractive"])[0], delta=None))


class TestCurves:
    def test_filter_and_names(self):
        cfg = contractive(horizon=50)
        curves = standard_curves(cfg, deltas=(0.1,))
        names = {c.proposition for c in curves}
        assert names == {"mean-contractive", "hp-contractive", "hp-contractive-alt", "markov-contractive"}
        only = standard_curves(cfg, propositions=["hp-contractive"])
        assert {c.proposition for c in only} == {"hp-contractive"}

    def test_neighborhood_requires_settling(self):
        assert not any(c.proposition == "neighborhood-limsup" for c in standard_curves(contractive(horizon=150)))
        long = standard_curves(contractive(horizon=500))
        nb = [c for c in long if c.proposition == "neighborhood-limsup"]
        assert len(nb) == 2
        assert nb[0].values[0] == pytest.approx(0.05 * math.sqrt(2 / math.pi) / 0.2)

    def test_markov_comparison(self):
        prm = B.BoundParams(d0=1.0, p=0.5, zeta=0.8, theta=0.5, sup_nu=0.05, sup_mu=0.04)
        out = markov_comparison(prm, 0.01, np.arange(100))
        assert out["hp_below_from"] is not None
        assert np.all(out["hp"][out["hp_below_from"]:] < out["markov"][out["hp_below_from"]:])


class TestAudit:
    def test_families_pass(self):
        recs = family_audit(2 * 10**5, seed=1)
        assert all(r.passed for r in recs), [(r.name, r.max_ratio) for r in recs if not r.passed]

    def test_closure_pass(self):
        recs = closure_audit(2 * 10**5, seed=1)
        assert len(recs) == 17
        assert all(r.passed for r in recs), [(r.name, r.max_ratio) for r in recs if not r.passed]
        named = {r.name: r for r in recs}
        assert named["sum: uniform + uniform"].max_ratio <= 1.0
        assert named["power: gaussian^2"].max_ratio <= 1.0

    def test_shrunk_nu_fails(self):
        recs = family_audit(2 * 10**5, seed=1, nu_factor=0.5) + closure_audit(2 * 10**5, seed=1, nu_factor=0.5)
        assert not all(r.passed for r in recs)
        assert sum(not r.passed for r in recs) >= 10
