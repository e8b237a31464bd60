"""Sub-Weibull parameter algebra, certified noise samplers and moment checks.

A nonnegative random variable ``x`` is ``subW(theta, nu)`` when its k-norms
satisfy ``||x||_k <= nu * k**theta`` for every real ``k >= 1``.  The helpers
here propagate ``(theta, nu)`` pairs through scaling, sums, products and
powers, turn them into high-probability bounds, and provide samplers whose
norm parameters are certified analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "SubWeibullParams",
    "NoiseSpec",
    "MomentReport",
    "c_of_theta",
    "c_product",
    "hp_bound",
    "sw_scale",
    "sw_sum",
    "sw_product",
    "sw_power",
    "sw_center",
    "sw_bounded",
    "sw_vector_norm",
    "zero_noise",
    "gaussian_noise",
    "weibull_noise",
    "uniform_noise",
    "make_noise",
    "sample_noise",
    "sample_noise_path",
    "k_grid",
    "empirical_knorms",
    "moment_ratio",
    "verify_moment_bound",
]

FAMILIES = ("zero", "gaussian", "weibull", "bounded-uniform")
SCHEDULES = ("constant", "geometric")


@dataclass(frozen=True)
class SubWeibullParams:
    """Tail exponent ``theta`` and scale ``nu`` of a sub-Weibull variable.

    ``SubWeibullParams.zero()`` is the exact-zero variable; it is kept apart
    from ``nu = 0`` so that ordinary instances always have ``nu > 0``.
    """

    theta: float
    nu: float
    exact_zero: bool = field(default=False, repr=False)

    def __post_init__(self):
        if not math.isfinite(self.theta) or self.theta < 0:
            raise ValueError(f"theta must be a finite nonnegative number, got {self.theta}")
        if self.exact_zero:
            if self.nu != 0.0 or self.theta != 0.0:
                raise ValueError("the zero sentinel has theta = nu = 0")
        elif not (math.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"nu must be a finite positive number, got {self.nu}")

    @classmethod
    def zero(cls) -> "SubWeibullParams":
        return cls(0.0, 0.0, exact_zero=True)

    def covers(self, other: "SubWeibullParams") -> bool:
        """True when ``other`` is implied by ``self`` via the inclusion rule."""
        if other.exact_zero:
            return True
        if self.exact_zero:
            return False
        return self.theta <= other.theta and self.nu <= other.nu


def c_of_theta(theta: float) -> float:
    """Moment-to-tail conversion constant ``(2e/theta)**theta``; 1 at 0."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if theta == 0:
        return 1.0
    return math.exp(theta * (math.log(2.0) + 1.0 - math.log(theta)))


def _xlogx(t: float) -> float:
    return 0.0 if t == 0 else t * math.log(t)


def c_product(theta1: float, theta2: float) -> float:
    """Constant for the product of two possibly dependent sub-Weibulls."""
    s = theta1 + theta2
    return math.exp(_xlogx(s) - _xlogx(theta1) - _xlogx(theta2))


def hp_bound(p: SubWeibullParams, delta: float) -> float:
    """Level exceeded by ``|x|`` with probability at most ``delta``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if p.exact_zero:
        return 0.0
    return p.nu * math.log(2.0 / delta) ** p.theta * c_of_theta(p.theta)


def sw_scale(p: SubWeibullParams, a: float) -> SubWeibullParams:
    if not math.isfinite(a):
        raise ValueError("scale factor must be finite")
    if a == 0 or p.exact_zero:
        return SubWeibullParams.zero()
    return SubWeibullParams(p.theta, abs(a) * p.nu)


def sw_sum(p1: SubWeibullParams, p2: SubWeibullParams) -> SubWeibullParams:
    # valid without independence (triangle inequality on k-norms)
    if p1.exact_zero:
        return p2
    if p2.exact_zero:
        return p1
    return SubWeibullParams(max(p1.theta, p2.theta), p1.nu + p2.nu)


def sw_product(
    p1: SubWeibullParams, p2: SubWeibullParams, independent: bool
) -> SubWeibullParams:
    if p1.exact_zero or p2.exact_zero:
        return SubWeibullParams.zero()
    nu = p1.nu * p2.nu
    if not independent:
        nu *= c_product(p1.theta, p2.theta)
    return SubWeibullParams(p1.theta + p2.theta, nu)


def sw_power(p: SubWeibullParams, a: float) -> SubWeibullParams:
    if not a > 0:
        raise ValueError("exponent must be positive")
    if p.exact_zero:
        return p
    return SubWeibullParams(a * p.theta, p.nu**a * max(1.0, a ** (a * p.theta)))


def sw_center(p: SubWeibullParams) -> SubWeibullParams:
    """Parameters of ``x - E[x]``."""
    if p.exact_zero:
        return p
    return SubWeibullParams(p.theta, 2.0 * p.nu)


def sw_bounded(a: float, b: float) -> SubWeibullParams:
    """Sub-Gaussian parameters of a centered variable supported on ``[a, b]``."""
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    return SubWeibullParams(0.5, (b - a) / math.sqrt(2.0))


def sw_vector_norm(component: SubWeibullParams, d: int) -> SubWeibullParams:
    """Parameters of the Euclidean norm of a d-vector of subW components."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if component.exact_zero:
        return component
    return SubWeibullParams(component.theta, 2.0**component.theta * math.sqrt(d) * component.nu)


# ---------------------------------------------------------------------------
# noise samplers


@dataclass(frozen=True)
class NoiseSpec:
    """Additive-noise model for one block.

    ``declared``, ``mean_norm`` and ``mean_sq_norm`` describe the Euclidean
    norm of one draw at iteration 0.  Under the geometric schedule iteration
    ``l`` is scaled by ``ratio**l``, and so are ``declared.nu`` and
    ``mean_norm`` (``mean_sq_norm`` by ``ratio**(2l)``).
    """

    family: str
    dim: int
    scale: float = 0.0
    shape: float = 0.0
    schedule: str = "constant"
    ratio: float = 1.0
    declared: SubWeibullParams = field(default_factory=SubWeibullParams.zero)
    mean_norm: float = 0.0
    mean_sq_norm: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}; expected one of {FAMILIES}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")
        if self.schedule == "geometric" and not 0 < self.ratio < 1:
            raise ValueError("geometric schedule needs ratio in (0, 1)")
        if self.dim < 1:
            raise ValueError("noise dimension must be at least 1")

    @property
    def is_zero(self) -> bool:
        return self.family == "zero"

    def multiplier(self, ell):
        """Schedule multiplier at iteration(s) ``ell``."""
        ell = np.asarray(ell, dtype=float)
        if self.schedule == "constant":
            return np.ones_like(ell)
        return self.ratio**ell

    def declared_at(self, ell: int) -> SubWeibullParams:
        return sw_scale(self.declared, float(self.multiplier(ell)))

    def with_declared(self, declared: SubWeibullParams) -> "NoiseSpec":
        return replace(self, declared=declared)


def _chi_log_moment(d: int, k):
    # log E[|chi_d|^k]
    return 0.5 * k * math.log(2.0) + gammaln((d + k) / 2.0) - gammaln(d / 2.0)


def _certified_nu(log_moment, theta: float) -> float:
    """max over k >= 1 of ||x||_k / k**theta, evaluated on a dense log grid."""
    k = np.concatenate([np.linspace(1.0, 20.0, 4000), np.geomspace(20.0, 1e5, 4000)])
    ratio = np.exp(log_moment(k) / k - theta * np.log(k))
    # grid spacing is fine enough that 1e-6 relative headroom absorbs
    # the between-node curvature of these smooth ratios
    return float(ratio.max()) * (1.0 + 1e-6)


def zero_noise(dim: int = 1) -> NoiseSpec:
    return NoiseSpec("zero", dim)


def gaussian_noise(
    std: float, dim: int = 1, schedule: str = "constant", ratio: float = 1.0
) -> NoiseSpec:
    """i.i.d. ``N(0, std**2)`` components; the norm is ``std`` times chi_dim.

    The declared norm parameters are ``(1/2, std * kappa)`` with
    ``kappa = max(1, max_k ||chi_dim||_k / sqrt(k))``; ``kappa == 1`` for
    ``dim == 1``.
    """
    if not std > 0:
        raise ValueError("gaussian std must be positive")
    kappa = max(1.0, _certified_nu(lambda k: _chi_log_moment(dim, k), 0.5))
    mean = std * math.exp(_chi_log_moment(dim, 1.0))
    return NoiseSpec(
        "gaussian",
        dim,
        scale=std,
        schedule=schedule,
        ratio=ratio,
        declared=SubWeibullParams(0.5, std * kappa),
        mean_norm=mean,
        mean_sq_norm=dim * std**2,
    )


def weibull_noise(
    theta_w: float, scale: float, dim: int = 1, schedule: str = "constant", ratio: float = 1.0
) -> NoiseSpec:
    """Weibull-distributed norm (shape ``1/theta_w``) with a uniform direction."""
    if not (theta_w > 0 and scale > 0):
        raise ValueError("weibull needs theta_w > 0 and scale > 0")
    factor = _certified_nu(lambda k: gammaln(1.0 + k * theta_w), theta_w)
    return NoiseSpec(
        "weibull",
        dim,
        scale=scale,
        shape=1.0 / theta_w,
        schedule=schedule,
        ratio=ratio,
        declared=SubWeibullParams(theta_w, scale * factor),
        mean_norm=scale * math.gamma(1.0 + theta_w),
        mean_sq_norm=scale**2 * math.gamma(1.0 + 2.0 * theta_w),
    )


def uniform_noise(
    half_width: float, dim: int = 1, schedule: str = "constant", ratio: float = 1.0
) -> NoiseSpec:
    """Uniform on the ball of radius ``half_width`` (the interval when dim=1)."""
    if not half_width > 0:
        raise ValueError("half width must be positive")
    return NoiseSpec(
        "bounded-uniform",
        dim,
        scale=half_width,
        schedule=schedule,
        ratio=ratio,
        declared=SubWeibullParams(0.0, half_width),
        mean_norm=half_width * dim / (dim + 1.0),
        mean_sq_norm=half_width**2 * dim / (dim + 2.0),
    )


def make_noise(family: str, dim: int = 1, **params) -> NoiseSpec:
    if family == "zero":
        return zero_noise(dim)
    if family == "gaussian":
        return gaussian_noise(params.pop("std"), dim, **params)
    if family == "weibull":
        return weibull_noise(params.pop("theta_w"), params.pop("scale"), dim, **params)
    if family == "bounded-uniform":
        return uniform_noise(params.pop("half_width"), dim, **params)
    raise ValueError(f"unknown noise family {family!r}")


def _unit_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    if dim == 1:
        return np.where(rng.random((n, 1)) < 0.5, -1.0, 1.0)
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _draw(spec: NoiseSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    d = spec.dim
    if spec.family == "zero":
        return np.zeros((n, d))
    if spec.family == "gaussian":
        return spec.scale * rng.standard_normal((n, d))
    if spec.family == "weibull":
        r = spec.scale * rng.weibull(spec.shape, n)
        return r[:, None] * _unit_directions(rng, n, d)
    if spec.family == "bounded-uniform":
        if d == 1:
            return rng.uniform(-spec.scale, spec.scale, (n, 1))
        r = spec.scale * rng.random(n) ** (1.0 / d)
        return r[:, None] * _unit_directions(rng, n, d)
    raise ValueError(f"unknown noise family {spec.family!r}")


def sample_noise(
    spec: NoiseSpec, dim: int, iteration: int, rng: np.random.Generator
) -> np.ndarray:
    """One noise vector for ``iteration``, schedule applied."""
    if dim != spec.dim:
        raise ValueError(f"noise spec has dim {spec.dim}, requested {dim}")
    return _draw(spec, 1, rng)[0] * float(spec.multiplier(iteration))


def sample_noise_path(spec: NoiseSpec, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Noise for iterations ``0..horizon-1`` as a ``(horizon, dim)`` array."""
    e = _draw(spec, horizon, rng)
    if spec.schedule != "constant":
        e *= spec.multiplier(np.arange(horizon))[:, None]
    return e


# ---------------------------------------------------------------------------
# empirical moment checks


@dataclass(frozen=True)
class MomentReport:
    max_ratio: float
    worst_k: float
    ratios: tuple = ()


def k_grid(k_max: float = 8.0, step: float = 0.5) -> np.ndarray:
    return np.arange(1.0, k_max + step / 2, step)


def empirical_knorms(samples, ks) -> np.ndarray:
    """``(mean |x|**k)**(1/k)`` for each k, evaluated in log space."""
    a = np.abs(np.asarray(samples, dtype=float).ravel())
    if not np.any(a > 0):
        return np.zeros(len(ks))
    a = a[a > 0]
    la = np.log(a)
    n_total = np.asarray(samples).size
    out = np.empty(len(ks))
    for j, k in enumerate(ks):
        out[j] = math.exp((logsumexp(k * la) - math.log(n_total)) / k)
    return out


def moment_ratio(samples, params: SubWeibullParams, ks=None) -> MomentReport:
    """Largest ``||x||_k / (nu k**theta)`` over the grid."""
    ks = k_grid() if ks is None else np.asarray(ks, dtype=float)
    norms = empirical_knorms(samples, ks)
    if params.exact_zero:
        bad = norms > 0
        ratios = np.where(bad, np.inf, 0.0)
    else:
        ratios = norms / (params.nu * ks**params.theta)
    j = int(np.argmax(ratios))
    return MomentReport(float(ratios[j]), float(ks[j]), tuple(float(r) for r in ratios))


def verify_moment_bound(
    spec: NoiseSpec,
    num_samples: int = 10**5,
    k_max: float = 8.0,
    rng: np.random.Generator | None = None,
) -> MomentReport:
    """Check the declared parameters of a sampler against its empirical k-norms."""
    if num_samples < 10**4:
        raise ValueError("need at least 1e4 samples")
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    rng = np.random.default_rng(0) if rng is None else rng
    norms = np.linalg.norm(_draw(spec, num_samples, rng), axis=1)
    return moment_ratio(norms, spec.declared, k_grid(k_max))
