"""Trial ensembles, empirical summaries and bound-coverage certification.

A high-probability curve passes when, at every checked iteration, the
fraction of trials below it is at least ``1 - delta - slack`` with the
Hoeffding slack ``sqrt(log(2 |grid| / alpha_test) / (2 M))``.  Mean curves
are compared with the empirical mean plus a normal-approximation margin,
Bonferroni-corrected over the same grid.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import halfnorm, norm

from . import bounds as B
from .engine import Ensemble, IterationConfig, simulate_batch
from .subweibull import (
    SubWeibullParams,
    _draw,
    gaussian_noise,
    moment_ratio,
    sw_bounded,
    sw_center,
    sw_power,
    sw_product,
    sw_scale,
    sw_sum,
    sw_vector_norm,
    uniform_noise,
    verify_moment_bound,
    weibull_noise,
)

__all__ = [
    "ALPHA_TEST",
    "QUANTILES",
    "CoverageRecord",
    "ExperimentReport",
    "AuditRecord",
    "block_params",
    "standard_curves",
    "run_ensemble",
    "check_coverage",
    "check_grid",
    "hoeffding_slack",
    "closure_audit",
    "family_audit",
    "config_digest",
]

ALPHA_TEST = 0.01
QUANTILES = (0.5, 0.9, 0.99)
AUDIT_SLACK = 0.05


# ---------------------------------------------------------------------------
# curves from a configuration


def block_params(config: IterationConfig, block: int, which: str = "maximal") -> B.BoundParams:
    """Bound constants for ``block``; noise suprema are taken over the horizon."""
    base = config.base
    noise = config.noise[block]
    p = config.update.probabilities[block]
    d0 = float(base.distance_to_fixed_set(config.initial_point)[block])
    kw = {}
    if not noise.is_zero:
        kw.update(
            theta=noise.declared.theta,
            sup_nu=noise.declared.nu,
            sup_mu=noise.mean_norm,
            sup_mean_sq=noise.mean_sq_norm,
        )
        if noise.schedule == "geometric":
            kw["nu_seq"] = tuple(noise.declared.nu * noise.multiplier(np.arange(config.horizon)))
    if base.cls == "contractive":
        kw["zeta"] = base.constant
    else:
        kw["alpha"] = base.constant
        kw["diam"] = float(base.domain_diameter_per_block[block])
    if config.online:
        mom = config.operator.moments(block, which)
        if not mom.params.exact_zero:
            kw.update(
                phi=mom.params.theta,
                sup_gamma=mom.params.nu,
                sup_sigma_mean=mom.mean,
                sup_sigma_sq=mom.mean_sq,
            )
    return B.BoundParams(d0=d0, p=p, **kw)


def _curve(prop, block, delta, prm, ell, values, *, kind, metric="dist", tp=None, conf=None, **meta):
    return B.BoundCurve(
        proposition=prop,
        block=block,
        delta=delta,
        params=prm.as_dict(),
        ell=np.asarray(ell),
        values=np.asarray(values, dtype=float),
        theta_prime=tp,
        confidence=conf,
        metric=metric,
        kind=kind,
        meta=meta,
    )


def standard_curves(
    config: IterationConfig,
    deltas=(0.1, 0.01),
    propositions=None,
    eps=None,
    which=("maximal",),
) -> list:
    """Every curve that applies to ``config``, optionally filtered by name.

    ``eps`` enables the noiseless rate curves (one per value); they are
    emitted only when every block's noise is zero.
    """
    L = int(config.horizon)
    out = []
    want = set(propositions) if propositions is not None else None

    def keep(name):
        return want is None or name in want

    dist_ell = np.arange(L + 1)
    fpr_ell = np.arange(L)
    base = config.base
    for i in range(base.partition.n):
        noiseless = config.noise[i].is_zero
        if base.cls == "contractive" and not config.online:
            prm = block_params(config, i)
            tp = B.theta_prime_contractive(prm)
            if keep("mean-contractive"):
                out.append(_curve("mean-contractive", i, None, prm, dist_ell,
                                  B.mean_bound_contractive(prm, dist_ell), kind="mean"))
            for dl in deltas:
                if keep("hp-contractive"):
                    out.append(_curve("hp-contractive", i, dl, prm, dist_ell,
                                      B.hp_bound_contractive(prm, dl, dist_ell), kind="hp", tp=tp))
                if keep("hp-contractive-alt"):
                    out.append(_curve("hp-contractive-alt", i, dl, prm, dist_ell,
                                      B.hp_bound_contractive_alt(prm, dl, dist_ell), kind="hp", tp=tp))
                if keep("markov-contractive"):
                    out.append(_curve("markov-contractive", i, dl, prm, dist_ell,
                                      B.markov_bound_contractive(prm, dl, dist_ell), kind="hp"))
                if keep("hp-contractive-convolved") and prm.nu_seq is not None and prm.p == 1.0:
                    out.append(_curve("hp-contractive-convolved", i, dl, prm, dist_ell,
                                      B.hp_bound_contractive_convolved(prm, dl, dist_ell),
                                      kind="hp", tp=tp))
            r = B.neighborhood_radius(prm.zeta, prm.sup_mu)
            # a limsup statement: testable only once the transient has died out
            settled = L > 100 and prm.chi ** (L - 100) * prm.d0 <= 1e-3 * r
            if keep("neighborhood-limsup") and settled:
                tail = np.arange(L - 100, L + 1)
                out.append(_curve("neighborhood-limsup", i, None, prm, tail,
                                  np.full(tail.size, r), kind="mean"))
            if noiseless and eps is not None and keep("sanov-no-noise"):
                for e in eps:
                    b, conf = B.no_noise_hp_rate(prm.zeta, prm.p, e, dist_ell, prm.d0)
                    out.append(_curve("sanov-no-noise", i, None, prm, dist_ell, b, kind="hp",
                                      conf=conf, eps=e))
        elif base.cls == "averaged" and not config.online:
            prm = block_params(config, i)
            if keep("mean-averaged-fpr"):
                out.append(_curve("mean-averaged-fpr", i, None, prm, fpr_ell,
                                  B.mean_fpr_bound(prm, fpr_ell), kind="mean", metric="cum_fpr"))
            for dl in deltas:
                if keep("hp-averaged-fpr"):
                    out.append(_curve("hp-averaged-fpr", i, dl, prm, fpr_ell,
                                      B.hp_fpr_bound(prm, dl, fpr_ell), kind="hp",
                                      metric="cum_fpr", tp=2.0 * prm.theta))
            if noiseless and eps is not None and keep("sanov-averaged-no-noise"):
                for e in eps:
                    if e >= prm.p:
                        continue
                    b, conf = B.no_noise_averaged_rate(prm.alpha, prm.p, e, fpr_ell, prm.d0)
                    out.append(_curve("sanov-averaged-no-noise", i, None, prm, fpr_ell, b,
                                      kind="hp", metric="cum_fpr", conf=conf, eps=e))
        elif base.cls == "contractive":
            prm = block_params(config, i)
            tp = B.theta_prime_contractive(prm, online=True)
            if keep("mean-online-contractive"):
                out.append(_curve("mean-online-contractive", i, None, prm, dist_ell,
                                  B.online_mean_bound(prm, dist_ell), kind="mean"))
            for dl in deltas:
                if keep("hp-online-contractive"):
                    out.append(_curve("hp-online-contractive", i, dl, prm, dist_ell,
                                      B.online_hp_bound(prm, dl, dist_ell), kind="hp", tp=tp))
        else:
            for w in which:
                prm = block_params(config, i, w)
                tp = 2.0 * max(prm.theta, prm.phi)
                if keep("mean-online-fpr"):
                    out.append(_curve("mean-online-fpr", i, None, prm, fpr_ell,
                                      B.online_fpr_bounds(prm, None, fpr_ell, "mean"),
                                      kind="mean", metric="cum_fpr", which_sigma=w))
                for dl in deltas:
                    if keep("hp-online-fpr"):
                        out.append(_curve("hp-online-fpr", i, dl, prm, fpr_ell,
                                          B.online_fpr_bounds(prm, dl, fpr_ell, "hp"),
                                          kind="hp", metric="cum_fpr", tp=tp, which_sigma=w))
    return out


# ---------------------------------------------------------------------------
# reports


def hoeffding_slack(num_trials: int, grid_size: int, alpha_test: float = ALPHA_TEST) -> float:
    return math.sqrt(math.log(2.0 * grid_size / alpha_test) / (2.0 * num_trials))


def check_grid(ell) -> np.ndarray:
    """Every 10th iteration of ``ell`` plus l = 1 and the last one (l = 0 excluded)."""
    ell = np.asarray(ell)
    last = ell.max()
    sel = (ell > 0) & ((ell % 10 == 0) | (ell == 1) | (ell == last))
    return ell[sel]


@dataclass(frozen=True)
class CoverageRecord:
    proposition: str
    block: int
    delta: float | None
    kind: str
    metric: str
    ell: tuple
    empirical: tuple
    required: tuple
    slack: float
    margin: float
    passed: bool
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "proposition": self.proposition,
            "block": self.block,
            "delta": self.delta,
            "kind": self.kind,
            "metric": self.metric,
            "ell": list(self.ell),
            "empirical": list(self.empirical),
            "required": list(self.required),
            "slack": self.slack,
            "margin": self.margin,
            "passed": self.passed,
            "meta": {k: v for k, v in self.meta.items()},
        }


@dataclass(eq=False)
class ExperimentReport:
    digest: str
    num_trials: int
    horizon: int
    base_seed: int
    ensemble: Ensemble
    coverage: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.coverage)

    def metric(self, name: str) -> np.ndarray:
        if name == "dist":
            return self.ensemble.dist
        if name == "cum_fpr":
            return self.ensemble.cum_fpr
        raise ValueError(f"unknown metric {name!r}")

    def summary(self, name: str) -> dict:
        """Per-l mean and quantiles, arrays of shape ``(L', n)``."""
        x = self.metric(name)
        q = np.quantile(x, QUANTILES, axis=0)
        out = {"mean": x.mean(axis=0)}
        for level, v in zip(QUANTILES, q):
            out[f"q{level}"] = v
        return out

    def to_dict(self) -> dict:
        def arr(a):
            return np.asarray(a).tolist()

        summ = {}
        for name in ("dist", "cum_fpr"):
            summ[name] = {k: arr(v) for k, v in self.summary(name).items()}
        return {
            "digest": self.digest,
            "num_trials": self.num_trials,
            "horizon": self.horizon,
            "base_seed": self.base_seed,
            "passed": self.passed,
            "clamp_events": {
                "total": int(self.ensemble.clamp_count.sum()),
                "trials_affected": int(np.count_nonzero(self.ensemble.clamp_count)),
            },
            "coverage": [r.to_dict() for r in self.coverage],
            "metadata": self.metadata,
            "summary": summ,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def config_digest(config: IterationConfig, extra: str = "") -> str:
    h = hashlib.sha256()
    base = config.base
    for a in (base.matrix, base.offset, config.initial_point):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    for box in (base.clip, base.domain, base.fixed_set):
        if box is not None:
            h.update(box.lo.tobytes() + box.hi.tobytes())
    h.update(repr((base.kind, base.cls, base.constant, base.mix, base.partition.dims)).encode())
    h.update(repr((config.update, config.noise, config.horizon, config.stride)).encode())
    if config.online:
        o = config.operator
        h.update(repr((o.drift, o.increments, o.omega)).encode())
        for a in (o.velocity, o.amplitude):
            if a is not None:
                h.update(np.asarray(a, dtype=float).tobytes())
    h.update(extra.encode())
    return h.hexdigest()


def run_ensemble(
    config: IterationConfig,
    num_trials: int,
    base_seed: int = 0,
    curves=(),
    *,
    workers: int = 1,
    min_trials: int = 100,
) -> ExperimentReport:
    """Simulate trials with seeds ``base_seed + m`` and check ``curves``."""
    if num_trials < min_trials:
        raise ValueError(f"need at least {min_trials} trials")
    seeds = base_seed + np.arange(num_trials, dtype=np.int64)
    ens = simulate_batch(config, seeds, workers=workers)
    report = ExperimentReport(
        digest=config_digest(config),
        num_trials=num_trials,
        horizon=int(config.horizon),
        base_seed=int(base_seed),
        ensemble=ens,
        metadata={
            "alpha_test": ALPHA_TEST,
            "suprema": "noise and drift suprema taken over the simulated horizon",
        },
    )
    for c in curves:
        report.coverage.append(check_coverage(report, c))
    return report


def check_coverage(report: ExperimentReport, curve: B.BoundCurve, delta=None) -> CoverageRecord:
    """Certify ``curve`` against the trials in ``report``.

    High-probability curves need a per-l coverage of ``1 - delta - slack``
    (``confidence - slack`` for curves carrying their own confidence); mean
    curves need ``mean <= curve + z * sd / sqrt(M)``.
    """
    x = report.metric(curve.metric)
    n_ell = x.shape[1]
    if curve.block >= x.shape[2]:
        raise ValueError(f"block {curve.block} not present in the report")
    if curve.ell.max() >= n_ell:
        raise ValueError("curve extends beyond the simulated horizon")
    delta = curve.delta if delta is None else delta
    grid = check_grid(curve.ell)
    idx = np.searchsorted(curve.ell, grid)
    bound = curve.values[idx]
    m = x.shape[0]
    data = x[:, grid, curve.block]
    # equality cases (e.g. noiseless runs) must not fail on rounding
    tol = 1e-9 * np.maximum(np.abs(bound), 1e-300)
    if curve.kind == "hp":
        slack = hoeffding_slack(m, grid.size)
        cover = np.mean(data <= bound + tol, axis=0)
        if curve.confidence is not None:
            target = np.asarray(curve.confidence)[idx]
        else:
            if delta is None:
                raise ValueError("high-probability check needs delta")
            target = np.full(grid.size, 1.0 - delta)
        required = target - slack
        margin = float(np.min(cover - required))
        emp = cover
    else:
        z = float(norm.ppf(1.0 - ALPHA_TEST / grid.size))
        mean = data.mean(axis=0)
        sd = data.std(axis=0, ddof=1) if m > 1 else np.zeros(grid.size)
        slack_v = z * sd / math.sqrt(m)
        slack = float(slack_v.max())
        required = bound + slack_v
        margin = float(np.min(required + tol - mean))
        emp = mean
    meta = dict(curve.meta)
    return CoverageRecord(
        proposition=curve.proposition,
        block=curve.block,
        delta=delta,
        kind=curve.kind,
        metric=curve.metric,
        ell=tuple(int(e) for e in grid),
        empirical=tuple(float(v) for v in emp),
        required=tuple(float(v) for v in required),
        slack=float(slack),
        margin=margin,
        passed=bool(margin >= 0.0),
        meta=meta,
    )


# ---------------------------------------------------------------------------
# sub-Weibull audits


@dataclass(frozen=True)
class AuditRecord:
    name: str
    params: SubWeibullParams
    max_ratio: float
    worst_k: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "theta": self.params.theta,
            "nu": self.params.nu,
            "max_ratio": self.max_ratio,
            "worst_k": self.worst_k,
            "passed": self.passed,
        }


def _record(name, samples, params, k_max, slack):
    r = moment_ratio(samples, params, np.arange(1.0, k_max + 0.25, 0.5))
    return AuditRecord(name, params, r.max_ratio, r.worst_k, r.max_ratio <= 1.0 + slack)


def _shrink(p: SubWeibullParams, factor: float) -> SubWeibullParams:
    return p if p.exact_zero else SubWeibullParams(p.theta, p.nu * factor)


def family_audit(num_samples: int = 10**6, k_max: float = 8.0, seed: int = 0, nu_factor=1.0,
                 slack: float = AUDIT_SLACK) -> list:
    """verify_moment_bound for every built-in sampler family."""
    rng = np.random.default_rng(seed)
    specs = {
        "gaussian(s=1,d=1)": gaussian_noise(1.0, 1),
        "gaussian(s=0.05,d=4)": gaussian_noise(0.05, 4),
        "weibull(theta=1,scale=1)": weibull_noise(1.0, 1.0, 1),
        "weibull(theta=2,scale=0.5,d=3)": weibull_noise(2.0, 0.5, 3),
        "bounded-uniform(b=1)": uniform_noise(1.0, 1),
        "bounded-uniform(b=0.02,d=2)": uniform_noise(0.02, 2),
    }
    out = []
    for name, spec in specs.items():
        spec = spec.with_declared(_shrink(spec.declared, nu_factor))
        r = verify_moment_bound(spec, num_samples, k_max, rng)
        out.append(AuditRecord(name, spec.declared, r.max_ratio, r.worst_k, r.max_ratio <= 1.0 + slack))
    return out


def closure_audit(num_samples: int = 10**6, k_max: float = 8.0, seed: int = 0, nu_factor=1.0,
                  slack: float = AUDIT_SLACK) -> list:
    """Compose certified samplers and check each closure rule's parameters.

    ``nu_factor < 1`` shrinks every declared scale: a negative control that a
    sound audit must reject.
    """
    rng = np.random.default_rng(seed)
    n = num_samples
    g = gaussian_noise(1.0, 1)
    w = weibull_noise(1.0, 0.5, 1)
    u = uniform_noise(1.0, 1)
    pg, pw, pu = g.declared, w.declared, u.declared
    xg = _draw(g, n, rng)[:, 0]
    xw = np.abs(_draw(w, n, rng)[:, 0])
    xu = _draw(u, n, rng)[:, 0]
    xu2 = _draw(u, n, rng)[:, 0]
    # comonotone pair: gaussian and weibull magnitudes driven by one uniform
    v = rng.random(n)
    dep_g = halfnorm.ppf(v)
    dep_w = w.scale * (-np.log1p(-v)) ** (1.0 / w.shape)

    cases = [
        ("scale: -3 * gaussian", -3.0 * xg, sw_scale(pg, -3.0)),
        ("scale: 0.1 * weibull", 0.1 * xw, sw_scale(pw, 0.1)),
        ("sum: uniform + uniform", xu + xu2, sw_sum(pu, pu)),
        ("sum: gaussian + weibull", xg + xw, sw_sum(pg, pw)),
        ("product (independent): gaussian * weibull", xg * xw, sw_product(pg, pw, True)),
        ("product (independent): gaussian * uniform", xg * xu, sw_product(pg, pu, True)),
        ("product (dependent): gaussian * weibull", dep_g * dep_w, sw_product(pg, pw, False)),
        ("product (dependent): gaussian * gaussian", xg * xg, sw_product(pg, pg, False)),
        ("power: gaussian^2", xg**2, sw_power(pg, 2.0)),
        ("power: weibull^0.5", np.sqrt(xw), sw_power(pw, 0.5)),
        ("power: weibull^1.5", xw**1.5, sw_power(pw, 1.5)),
        ("centered: weibull - mean", xw - w.mean_norm, sw_center(pw)),
        ("centered: |gaussian| - mean", np.abs(xg) - g.mean_norm, sw_center(pg)),
        ("bounded: uniform[0,2] - 1", 2.0 * rng.random(n) - 1.0, sw_bounded(0.0, 2.0)),
        ("bounded: beta(2,5) on [0,1] centred", rng.beta(2.0, 5.0, n) - 2.0 / 7.0,
         sw_bounded(0.0, 1.0)),
        ("vector norm: 4 gaussian components", np.linalg.norm(rng.standard_normal((n, 4)), axis=1),
         sw_vector_norm(pg, 4)),
        ("vector norm: 3 weibull components",
         np.linalg.norm(0.5 * rng.exponential(1.0, (n, 3)), axis=1), sw_vector_norm(pw, 3)),
    ]
    return [_record(name, x, _shrink(p, nu_factor), k_max, slack) for name, x, p in cases]


def markov_comparison(prm: B.BoundParams, delta: float, ell) -> dict:
    """hp and Markov curves side by side, with the first l where hp wins."""
    ell = np.asarray(ell)
    hp = B.hp_bound_contractive(prm, delta, ell)
    mk = B.markov_bound_contractive(prm, delta, ell)
    below = hp < mk
    first = int(ell[np.argmax(below)]) if below.any() else None
    return {"ell": ell, "hp": hp, "markov": mk, "hp_below_from": first}
