"""Evaluators for the convergence bounds of stochastic Banach-Picard iterations.

Every public evaluator accepts ``ell`` as a scalar or an integer array and
returns values of the same shape.  Powers with large exponents go through
``exp(ell * log(.))`` so nothing underflows before the true value does.

Static and online variants share helpers; with zero drift the online curves
therefore agree with the static ones bit for bit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .subweibull import c_of_theta

__all__ = [
    "PROPOSITIONS",
    "BoundParams",
    "BoundCurve",
    "knorm_zeta_beta",
    "eta",
    "eta_curve",
    "mean_bound_contractive",
    "hp_bound_contractive",
    "hp_bound_contractive_alt",
    "hp_bound_contractive_convolved",
    "markov_bound_contractive",
    "mean_fpr_bound",
    "hp_fpr_bound",
    "sanov_delta",
    "kl_bernoulli",
    "no_noise_hp_rate",
    "no_noise_averaged_rate",
    "neighborhood_radius",
    "online_mean_bound",
    "online_hp_bound",
    "online_fpr_bounds",
    "curves_to_csv",
]

PROPOSITIONS = (
    "mean-contractive",
    "hp-contractive",
    "hp-contractive-alt",
    "hp-contractive-convolved",
    "markov-contractive",
    "mean-averaged-fpr",
    "hp-averaged-fpr",
    "sanov-no-noise",
    "sanov-averaged-no-noise",
    "neighborhood-limsup",
    "mean-online-contractive",
    "hp-online-contractive",
    "mean-online-fpr",
    "hp-online-fpr",
)


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the bounds for one block.

    Noise and drift quantities are suprema over the simulated horizon.  A
    zero noise (or drift) model is encoded by ``sup_nu == 0`` (``sup_gamma ==
    0``) together with vanishing moments.
    """

    d0: float
    p: float = 1.0
    zeta: float | None = None
    alpha: float | None = None
    theta: float = 0.0
    sup_nu: float = 0.0
    sup_mu: float = 0.0
    sup_mean_sq: float = 0.0
    diam: float = 0.0
    phi: float = 0.0
    sup_gamma: float = 0.0
    sup_sigma_mean: float = 0.0
    sup_sigma_sq: float = 0.0
    nu_seq: tuple | None = None

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError("update probability must lie in (0, 1]")
        if self.zeta is not None and not 0.0 < self.zeta < 1.0:
            raise ValueError("zeta must lie in (0, 1)")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("d0", "theta", "sup_nu", "sup_mu", "sup_mean_sq", "diam", "phi",
                     "sup_gamma", "sup_sigma_mean", "sup_sigma_sq"):
            if not getattr(self, name) >= 0.0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def chi(self) -> float:
        return 1.0 - self.p + self.p * self._zeta()

    def _zeta(self) -> float:
        if self.zeta is None:
            raise ValueError("bound needs a contractive operator")
        return self.zeta

    def _alpha(self) -> float:
        if self.alpha is None:
            raise ValueError("bound needs an averaged operator")
        return self.alpha

    def as_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "nu_seq" and v is not None}
        if self.zeta is not None:
            out["chi"] = self.chi
        return out


@dataclass(frozen=True, eq=False)
class BoundCurve:
    proposition: str
    block: int
    delta: float | None
    params: dict
    ell: np.ndarray
    values: np.ndarray
    theta_prime: float | None = None
    confidence: np.ndarray | None = None
    metric: str = "dist"
    kind: str = "hp"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.proposition not in PROPOSITIONS:
            raise ValueError(f"unknown proposition {self.proposition!r}")
        if self.metric not in ("dist", "cum_fpr"):
            raise ValueError("metric must be 'dist' or 'cum_fpr'")
        if self.kind not in ("hp", "mean"):
            raise ValueError("kind must be 'hp' or 'mean'")
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError(f"{self.proposition}: bound values must be finite and nonnegative")

    def at(self, ell) -> np.ndarray:
        idx = np.searchsorted(self.ell, ell)
        return self.values[idx]

    def scaled(self, factor: float) -> "BoundCurve":
        return replace(self, values=self.values * factor, meta={**self.meta, "scaled": factor})


def _ell(ell):
    a = np.asarray(ell)
    if np.any(a < 0):
        raise ValueError("iteration index must be nonnegative")
    return a.astype(float)


def _pow(base: float, ell):
    """``base ** ell`` through the log domain; ``0 ** 0 == 1``."""
    ell = _ell(ell)
    if base == 0.0:
        return np.where(ell == 0, 1.0, 0.0)
    return np.exp(ell * math.log(base))


def _geom(rate: float, ell):
    """``(1 - rate**ell) / (1 - rate)``."""
    return -np.expm1(_ell(ell) * math.log(rate)) / (1.0 - rate)


def _log_factor(theta: float, delta: float) -> float:
    """``log(2/delta)**theta * c(theta)``, the moment-to-tail conversion."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return math.log(2.0 / delta) ** theta * c_of_theta(theta)


# ---------------------------------------------------------------------------
# eta


def _log_knorm(zeta, p, ell, k):
    k = np.asarray(k, dtype=float)
    if p == 1.0:
        inner = k * math.log(zeta)
    else:
        inner = np.logaddexp(math.log1p(-p), math.log(p) + k * math.log(zeta))
    return (ell / k) * inner


def knorm_zeta_beta(zeta: float, p: float, ell: int, k) -> np.ndarray:
    """k-norm of ``zeta**beta`` with ``beta ~ Binomial(ell, p)``."""
    if not 0.0 < zeta < 1.0 or not 0.0 < p <= 1.0:
        raise ValueError("need zeta in (0, 1) and p in (0, 1]")
    if np.any(np.asarray(k) < 1.0):
        raise ValueError("k must be at least 1")
    return np.exp(_log_knorm(zeta, p, float(ell), k))


def _golden_max(f, a: float, b: float, tol: float = 1e-8):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    k = 0.5 * (a + b)
    return k, f(k)


def eta(zeta: float, p: float, ell: int, *, grid: int = 400, tol: float = 1e-8) -> float:
    """``max_{k >= 1} ||zeta**beta(ell)||_k / sqrt(k)``.

    A log-spaced grid on ``[1, max(1000, 10 ell)]`` locates the maximiser,
    then golden-section search refines it between the neighbouring nodes.
    """
    if not 0.0 < zeta < 1.0 or not 0.0 < p <= 1.0:
        raise ValueError("need zeta in (0, 1) and p in (0, 1]")
    ell = int(ell)
    if ell < 0:
        raise ValueError("iteration index must be nonnegative")
    if ell == 0:
        return 1.0

    def f(k):
        return float(_log_knorm(zeta, p, ell, k) - 0.5 * math.log(k))

    ks = np.geomspace(1.0, max(1000.0, 10.0 * ell), grid)
    vals = _log_knorm(zeta, p, ell, ks) - 0.5 * np.log(ks)
    j = int(np.argmax(vals))
    lo, hi = ks[max(j - 1, 0)], ks[min(j + 1, grid - 1)]
    _, fk = _golden_max(f, lo, hi, tol)
    return math.exp(max(fk, float(vals[j])))


def eta_curve(zeta: float, p: float, ell) -> np.ndarray:
    ell = np.asarray(ell)
    return np.array([eta(zeta, p, int(e)) for e in ell.ravel()]).reshape(ell.shape)


# ---------------------------------------------------------------------------
# static contractive


def _mean_contractive(chi, d0, forcing, ell):
    return _pow(chi, ell) * d0 + _geom(chi, ell) * forcing


def _hp_contractive(prm, theta_p, scale_nu, delta, ell):
    z = prm._zeta()
    eta_v = eta_curve(z, prm.p, ell)
    return _log_factor(theta_p, delta) * (eta_v * prm.d0 + _geom(z, ell) * scale_nu)


def mean_bound_contractive(prm: BoundParams, ell) -> np.ndarray:
    """Bound on ``E||x^l - x*||`` for a quasi-contractive operator."""
    return _mean_contractive(prm.chi, prm.d0, prm.p * prm.sup_mu, ell)


def theta_prime_contractive(prm: BoundParams, online: bool = False) -> float:
    t = max(0.5, prm.theta)
    return max(t, prm.phi) if online else t


def hp_bound_contractive(prm: BoundParams, delta: float, ell) -> np.ndarray:
    """Distance bound holding with probability ``1 - delta`` at each l."""
    return _hp_contractive(prm, theta_prime_contractive(prm), prm.sup_nu, delta, ell)


def hp_bound_contractive_alt(prm: BoundParams, delta: float, ell) -> np.ndarray:
    """Variant that bounds the mean and the centred deviation separately."""
    z, chi = prm._zeta(), prm.chi
    tp = theta_prime_contractive(prm)
    one_minus = -np.expm1(_ell(ell) * math.log(z))
    mean_part = _pow(chi, ell) * prm.d0 + _geom(chi, ell) * prm.sup_mu
    dev = one_minus / math.sqrt(2.0) * prm.d0 + 2.0 * _geom(z, ell) * prm.sup_nu
    return mean_part + _log_factor(tp, delta) * dev


def hp_bound_contractive_convolved(prm: BoundParams, delta: float, ell) -> np.ndarray:
    """High-probability bound for a noise scale sequence ``nu_seq``.

    The noise term is ``sum_{h<l} zeta**(l-h-1) nu^h`` instead of
    ``sup nu / (1 - zeta)``, so a vanishing schedule gives a vanishing bound.
    Only valid when every iteration updates the block (``p == 1``).
    """
    if prm.p != 1.0:
        raise ValueError("the convolved noise bound needs p == 1")
    if prm.nu_seq is None:
        raise ValueError("the convolved noise bound needs nu_seq")
    z = prm._zeta()
    ell = np.asarray(ell)
    nu = np.asarray(prm.nu_seq, dtype=float)
    top = int(ell.max())
    if nu.size < top:
        raise ValueError("nu_seq shorter than the requested horizon")
    conv = np.zeros(top + 1)
    for h in range(top):
        conv[h + 1] = z * conv[h] + nu[h]
    tp = theta_prime_contractive(prm)
    eta_v = eta_curve(z, 1.0, ell)
    return _log_factor(tp, delta) * (eta_v * prm.d0 + conv[ell])


def markov_bound_contractive(prm: BoundParams, delta: float, ell) -> np.ndarray:
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    return mean_bound_contractive(prm, ell) / delta


def neighborhood_radius(zeta: float, sup_mu: float) -> float:
    """Asymptotic radius of the mean distance, ``sup mu / (1 - zeta)``."""
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    return sup_mu / (1.0 - zeta)


# ---------------------------------------------------------------------------
# static averaged


def _fpr(alpha, d0, floor, ell):
    ell = _ell(ell)
    return alpha / (1.0 - alpha) * (d0 * d0 / (ell + 1.0) + floor)


def _hp_fpr_floor(theta_p, nu, gamma, diam, delta):
    return _log_factor(theta_p, delta) * (
        2.0**theta_p * (nu * nu + gamma * gamma) + 2.0 * diam * (nu + gamma)
    )


def mean_fpr_bound(prm: BoundParams, ell) -> np.ndarray:
    """Bound on the mean cumulative fixed-point residual."""
    floor = prm.p * (prm.sup_mean_sq + 2.0 * prm.diam * prm.sup_mu)
    return _fpr(prm._alpha(), prm.d0, floor, ell)


def hp_fpr_bound(prm: BoundParams, delta: float, ell) -> np.ndarray:
    floor = _hp_fpr_floor(2.0 * prm.theta, prm.sup_nu, 0.0, prm.diam, delta)
    return _fpr(prm._alpha(), prm.d0, floor, ell)


# ---------------------------------------------------------------------------
# noiseless case


def kl_bernoulli(q: float, p: float) -> float:
    """``D(q || p)`` with ``0 log 0 = 0``."""

    def term(a, b):
        return 0.0 if a == 0.0 else a * math.log(a / b)

    return term(q, p) + term(1.0 - q, 1.0 - p)


def sanov_delta(p: float, eps: float, ell) -> np.ndarray:
    """``exp(-l D(p - eps || p))``, a bound on ``P(beta(l) <= l (p - eps))``."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if not 0.0 < eps <= p:
        raise ValueError("eps must lie in (0, p]")
    ell = _ell(ell)
    if p == 1.0:
        if eps != 1.0:
            raise ValueError("p == 1 needs eps == 1")
        return np.where(ell == 0, 1.0, 0.0)
    # exp(-D(q || p)) as a product of powers keeps e.g. p = eps = 1/2 exact
    q = p - eps
    base = ((p / q) ** q if q > 0.0 else 1.0) * ((1.0 - p) / (1.0 - q)) ** (1.0 - q)
    return np.power(base, ell)


def no_noise_hp_rate(zeta: float, p: float, eps: float, ell, d0: float = 1.0):
    """``(zeta**(l (p - eps)) d0, 1 - delta(eps, l))``."""
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    delta = sanov_delta(p, eps, ell)
    bound = np.exp(_ell(ell) * (p - eps) * math.log(zeta)) * d0
    return bound, 1.0 - delta


def no_noise_averaged_rate(alpha: float, p: float, eps: float, ell, d0: float = 1.0):
    """Averaged counterpart: cumulative FPR bound and its confidence."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    delta = sanov_delta(p, eps, _ell(ell) + 1.0)
    if p - eps <= 0.0:
        raise ValueError("need eps < p")
    bound = alpha / (1.0 - alpha) * d0 * d0 / ((_ell(ell) + 1.0) * (p - eps))
    return bound, 1.0 - delta


# ---------------------------------------------------------------------------
# online


def online_mean_bound(prm: BoundParams, ell) -> np.ndarray:
    """Mean tracking-error bound under fixed-point drift."""
    return _mean_contractive(prm.chi, prm.d0, prm.p * prm.sup_mu + prm.sup_sigma_mean, ell)


def online_hp_bound(prm: BoundParams, delta: float, ell) -> np.ndarray:
    tp = theta_prime_contractive(prm, online=True)
    return _hp_contractive(prm, tp, prm.sup_nu + prm.sup_gamma / prm.p, delta, ell)


def online_fpr_bounds(prm: BoundParams, delta: float | None, ell, kind: str = "mean"):
    """Cumulative-FPR bound under drift of the fixed set.

    Pass the drift moments of the minimal or the Hausdorff distance between
    consecutive fixed sets through ``prm``; the bound is monotone in them.
    """
    if kind == "mean":
        floor = prm.p * (prm.sup_mean_sq + 2.0 * prm.diam * prm.sup_mu) + (
            prm.sup_sigma_sq + 2.0 * prm.diam * prm.sup_sigma_mean
        )
        return _fpr(prm._alpha(), prm.d0, floor, ell)
    if kind != "hp":
        raise ValueError("kind must be 'mean' or 'hp'")
    tp = 2.0 * max(prm.theta, prm.phi)
    floor = _hp_fpr_floor(tp, prm.sup_nu, prm.sup_gamma, prm.diam, delta)
    return _fpr(prm._alpha(), prm.d0, floor, ell)


# ---------------------------------------------------------------------------
# serialisation


def fmt(x) -> str:
    """Shortest round-trip float text (at most 17 significant digits)."""
    if x is None:
        return ""
    return repr(float(x))


def curves_to_csv(curves) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ell", "bound", "proposition", "block", "delta", "theta_prime"])
    for c in curves:
        for e, v in zip(c.ell, c.values):
            w.writerow([int(e), fmt(v), c.proposition, c.block, fmt(c.delta), fmt(c.theta_prime)])
    return buf.getvalue()
