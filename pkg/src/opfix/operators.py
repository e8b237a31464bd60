"""Block-separable operators with declared contraction or averagedness class.

Every library operator has the form

    T x = (1 - mix) * x + mix * clip(M x + c, clip_lo, clip_hi)

with ``M`` block diagonal, which covers affine contractions, gradient steps on
quadratics (``M = I - gamma Q``), projected gradient steps and
Krasnosel'skii-Mann averaging of a box projection (``M = I``, ``c = 0``).
The fixed set is stored as an axis-aligned box ``[fix_lo, fix_hi]``; a
singleton has ``fix_lo == fix_hi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .subweibull import SubWeibullParams, sample_noise_path

__all__ = [
    "Box",
    "BlockPartition",
    "OperatorSpec",
    "OnlineOperatorSpec",
    "FixedSetPath",
    "DriftMoments",
    "affine_contraction",
    "gradient_step",
    "projected_gradient_step",
    "km_averaged_projection",
    "random_spd",
    "block_diag",
    "apply",
    "fixed_point_residual",
    "set_distance",
    "verify_class",
    "advance_online",
    "fixed_set_path",
]

KINDS = ("affine-contraction", "gradient-step", "projected-gradient-step", "km-averaged-projection")
DRIFTS = ("none", "random-walk", "linear", "sinusoid")


@dataclass(frozen=True)
class BlockPartition:
    dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError("a partition needs at least one block, each of positive dimension")
        object.__setattr__(self, "dims", dims)

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def total(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.dims)]))

    def slices(self) -> list:
        o = self.offsets
        return [slice(o[i], o[i + 1]) for i in range(self.n)]

    def block_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=np.int32), self.dims)

    def block_norms(self, v) -> np.ndarray:
        """Per-block Euclidean norms along the last axis."""
        v = np.asarray(v, dtype=float)
        return np.stack([np.linalg.norm(v[..., s], axis=-1) for s in self.slices()], axis=-1)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in shape")
        if np.any(lo > hi) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("empty or unbounded box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


def set_distance(box_a: Box, box_b: Box, mode: str = "hausdorff") -> float:
    """Minimal or Pompeiu-Hausdorff distance between two axis-aligned boxes."""
    if box_a.lo.shape != box_b.lo.shape:
        raise ValueError("boxes live in different dimensions")
    if mode == "minimal":
        gap = np.maximum(0.0, np.maximum(box_a.lo - box_b.hi, box_b.lo - box_a.hi))
        return float(np.linalg.norm(gap))
    if mode == "hausdorff":
        return max(_directed(box_a, box_b), _directed(box_b, box_a))
    raise ValueError(f"unknown mode {mode!r}")


def _directed(a: Box, b: Box) -> float:
    # sup over x in a of dist(x, b); separable across axes for boxes
    h = np.maximum(0.0, np.maximum(b.lo - a.lo, a.hi - b.hi))
    return float(np.linalg.norm(h))


def _box_distances(lo_a, hi_a, lo_b, hi_b, partition):
    """Vectorised per-block minimal and Hausdorff distances for box arrays."""
    gap = np.maximum(0.0, np.maximum(lo_a - hi_b, lo_b - hi_a))
    h_ab = np.maximum(0.0, np.maximum(lo_b - lo_a, hi_a - hi_b))
    h_ba = np.maximum(0.0, np.maximum(lo_a - lo_b, hi_b - hi_a))
    minimal = partition.block_norms(gap)
    hausdorff = np.maximum(partition.block_norms(h_ab), partition.block_norms(h_ba))
    return minimal, hausdorff


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    kind: str
    partition: BlockPartition
    matrix: np.ndarray
    offset: np.ndarray
    cls: str
    constant: float
    mix: float = 1.0
    clip: Box | None = None
    domain: Box | None = None
    fixed_set: Box | None = None
    block_constants: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.cls not in ("contractive", "averaged"):
            raise ValueError(f"unknown class {self.cls!r}")
        if not 0 < self.constant < 1:
            raise ValueError(f"class constant must lie in (0, 1), got {self.constant}")
        d = self.partition.total
        if self.matrix.shape != (d, d) or self.offset.shape != (d,):
            raise ValueError("matrix/offset do not match the partition")
        if self.cls == "averaged" and self.domain is None:
            raise ValueError("averaged operators need a bounded box domain")

    @property
    def dim(self) -> int:
        return self.partition.total

    @property
    def zeta(self) -> float:
        if self.cls != "contractive":
            raise AttributeError("not a contractive operator")
        return self.constant

    @property
    def alpha(self) -> float:
        if self.cls != "averaged":
            raise AttributeError("not an averaged operator")
        return self.constant

    @property
    def fixed_point(self) -> np.ndarray | None:
        if self.fixed_set is None or np.any(self.fixed_set.lo != self.fixed_set.hi):
            return None
        return self.fixed_set.lo

    @property
    def domain_diameter_per_block(self) -> np.ndarray | None:
        if self.domain is None:
            return None
        return self.partition.block_norms(self.domain.hi - self.domain.lo)

    def distance_to_fixed_set(self, x) -> np.ndarray:
        """Per-block distance from ``x`` to the fixed set (Euclidean in each block)."""
        if self.fixed_set is None:
            raise ValueError("fixed set unknown")
        x = np.asarray(x, dtype=float)
        return self.partition.block_norms(x - np.clip(x, self.fixed_set.lo, self.fixed_set.hi))

    def __call__(self, x):
        return apply(self, x)


def apply(spec: OperatorSpec, x) -> np.ndarray:
    """Evaluate ``T x`` for a point or a stack of points (last axis = state)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.dim:
        raise ValueError(f"expected state of dimension {spec.dim}, got {x.shape[-1]}")
    if spec.domain is not None and not spec.domain.contains(x, tol=1e-12):
        raise ValueError("point lies outside the operator domain")
    y = x @ spec.matrix.T + spec.offset
    if spec.clip is not None:
        y = np.clip(y, spec.clip.lo, spec.clip.hi)
    if spec.mix != 1.0:
        y = (1.0 - spec.mix) * x + spec.mix * y
    return y


def fixed_point_residual(spec: OperatorSpec, x) -> np.ndarray:
    """Per-block ``||x_i - T_i x||``."""
    x = np.asarray(x, dtype=float)
    return spec.partition.block_norms(x - apply(spec, x))


# ---------------------------------------------------------------------------
# constructors


def block_diag(blocks) -> np.ndarray:
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    d = sum(b.shape[0] for b in blocks)
    out = np.zeros((d, d))
    o = 0
    for b in blocks:
        if b.shape[0] != b.shape[1]:
            raise ValueError("diagonal blocks must be square")
        k = b.shape[0]
        out[o : o + k, o : o + k] = b
        o += k
    return out


def random_spd(dim: int, cond: float, top: float, rng: np.random.Generator) -> np.ndarray:
    """Random symmetric matrix with spectrum log-spaced in ``[top/cond, top]``."""
    if cond < 1:
        raise ValueError("condition number must be >= 1")
    eig = top * np.geomspace(1.0 / cond, 1.0, dim) if dim > 1 else np.array([top])
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    return (q * eig) @ q.T


def _check_block_diagonal(m: np.ndarray, partition: BlockPartition):
    mask = np.ones_like(m, dtype=bool)
    for s in partition.slices():
        mask[s, s] = False
    if np.any(m[mask] != 0):
        raise ValueError(
            "off-block coupling is not supported: library operators must be block diagonal"
        )


def _blocks(m: np.ndarray, partition: BlockPartition):
    return [m[s, s] for s in partition.slices()]


def _check_constant(declared, computed, name):
    value = max(computed) if declared is None else float(declared)
    if not 0 < value < 1:
        raise ValueError(f"{name} = {value} is not in (0, 1)")
    return value


def affine_contraction(
    A, b=None, *, fixed_point=None, partition: BlockPartition | None = None, zeta=None
) -> OperatorSpec:
    """``T x = A x + b`` with block-diagonal ``A``.

    Exactly one of ``b`` and ``fixed_point`` is given.  ``zeta`` defaults to
    the largest per-block spectral norm; an explicit value is kept as the
    declared constant even if it is wrong (``verify_class`` detects that).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    partition = partition or BlockPartition((A.shape[0],))
    _check_block_diagonal(A, partition)
    norms = tuple(float(np.linalg.norm(blk, 2)) for blk in _blocks(A, partition))
    zeta = _check_constant(zeta, norms, "zeta")
    eye = np.eye(A.shape[0])
    if (b is None) == (fixed_point is None):
        raise ValueError("give exactly one of offset b and fixed_point")
    if fixed_point is not None:
        xstar = np.asarray(fixed_point, dtype=float).reshape(-1)
        b = (eye - A) @ xstar
    else:
        b = np.asarray(b, dtype=float).reshape(-1)
        xstar = np.linalg.solve(eye - A, b)
    return OperatorSpec(
        "affine-contraction",
        partition,
        A,
        b,
        "contractive",
        zeta,
        fixed_set=Box(xstar, xstar),
        block_constants=norms,
        meta={"A": A, "b": b},
    )


def _gradient_data(Q, gamma, partition):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    partition = partition or BlockPartition((Q.shape[0],))
    _check_block_diagonal(Q, partition)
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12):
        raise ValueError("Q must be symmetric")
    zetas = []
    for blk in _blocks(Q, partition):
        lam = np.linalg.eigvalsh(blk)
        if lam[0] <= 0:
            raise ValueError("Q must be positive definite")
        if not 0 < gamma < 2.0 / lam[-1]:
            raise ValueError(f"step size must lie in (0, 2/lambda_max) = (0, {2.0 / lam[-1]})")
        zetas.append(float(max(abs(1 - gamma * lam[0]), abs(1 - gamma * lam[-1]))))
    return Q, partition, tuple(zetas)


def gradient_step(
    Q, q=None, *, gamma: float, fixed_point=None, partition=None, zeta=None
) -> OperatorSpec:
    """Gradient step ``x - gamma (Q x - q)`` on ``f(x) = x'Qx/2 - q'x``."""
    Q, partition, zetas = _gradient_data(Q, gamma, partition)
    zeta = _check_constant(zeta, zetas, "zeta")
    if (q is None) == (fixed_point is None):
        raise ValueError("give exactly one of q and fixed_point")
    if fixed_point is not None:
        xstar = np.asarray(fixed_point, dtype=float).reshape(-1)
        q = Q @ xstar
    else:
        q = np.asarray(q, dtype=float).reshape(-1)
        xstar = np.linalg.solve(Q, q)
    M = np.eye(Q.shape[0]) - gamma * Q
    return OperatorSpec(
        "gradient-step",
        partition,
        M,
        gamma * q,
        "contractive",
        zeta,
        fixed_set=Box(xstar, xstar),
        block_constants=zetas,
        meta={"Q": Q, "q": q, "gamma": gamma},
    )


def projected_gradient_step(
    Q, q, *, gamma: float, lo, hi, partition=None, zeta=None, tol: float = 1e-15
) -> OperatorSpec:
    """Gradient step followed by projection onto the box ``[lo, hi]``."""
    Q, partition, zetas = _gradient_data(Q, gamma, partition)
    zeta = _check_constant(zeta, zetas, "zeta")
    q = np.asarray(q, dtype=float).reshape(-1)
    box = Box(np.broadcast_to(lo, q.shape), np.broadcast_to(hi, q.shape))
    M = np.eye(Q.shape[0]) - gamma * Q
    c = gamma * q
    # fixed point by Banach-Picard; max(zetas) < 1 guarantees convergence
    x = np.clip(np.zeros_like(q), box.lo, box.hi)
    for _ in range(100_000):
        x_new = np.clip(M @ x + c, box.lo, box.hi)
        if np.max(np.abs(x_new - x)) <= tol * max(1.0, np.max(np.abs(x))):
            x = x_new
            break
        x = x_new
    return OperatorSpec(
        "projected-gradient-step",
        partition,
        M,
        c,
        "contractive",
        zeta,
        clip=box,
        fixed_set=Box(x, x),
        block_constants=zetas,
        meta={"Q": Q, "q": q, "gamma": gamma},
    )


def km_averaged_projection(
    target_lo, target_hi, *, alpha: float, domain_lo, domain_hi, partition=None
) -> OperatorSpec:
    """``(1 - alpha) x + alpha P_C x`` on the box domain D, with C a box inside D.

    C is the fixed set; it degenerates to a single point when
    ``target_lo == target_hi``.
    """
    target = Box(target_lo, target_hi)
    d = target.lo.size
    domain = Box(np.broadcast_to(domain_lo, (d,)), np.broadcast_to(domain_hi, (d,)))
    if not (domain.contains(target.lo) and domain.contains(target.hi)):
        raise ValueError("target box must lie inside the domain")
    partition = partition or BlockPartition((d,))
    if partition.total != d:
        raise ValueError("partition does not match the target dimension")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return OperatorSpec(
        "km-averaged-projection",
        partition,
        np.eye(d),
        np.zeros(d),
        "averaged",
        float(alpha),
        mix=float(alpha),
        clip=target,
        domain=domain,
        fixed_set=target,
        block_constants=(float(alpha),) * partition.n,
    )


# ---------------------------------------------------------------------------
# class verification


def _ball(rng, n, d):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((n, 1)) ** (1.0 / d)


def verify_class(
    spec: OperatorSpec, num_samples: int = 10_000, rng=None, radius: float = 10.0
) -> float:
    """Largest observed violation of the declared class inequality.

    Contractive operators are probed in the ball of ``radius`` around the
    fixed point, averaged ones uniformly on their domain against fixed points
    drawn from the fixed set (box corners included).
    """
    if spec.fixed_set is None:
        raise NotImplementedError("class verification needs a known fixed set")
    if num_samples < 1000:
        raise ValueError("need at least 1e3 samples")
    rng = np.random.default_rng(0) if rng is None else rng
    part = spec.partition
    d = spec.dim
    fs = spec.fixed_set
    if spec.cls == "contractive":
        xstar = spec.fixed_point
        x = xstar + radius * _ball(rng, num_samples, d)
        lhs = part.block_norms(apply(spec, x) - xstar)
        rhs = spec.constant * part.block_norms(x - xstar)
        return float(np.max(lhs - rhs))
    dom = spec.domain
    x = dom.lo + (dom.hi - dom.lo) * rng.random((num_samples, d))
    y = fs.lo + (fs.hi - fs.lo) * rng.random((num_samples, d))
    corners = rng.random((num_samples // 4, d)) < 0.5
    y[: len(corners)] = np.where(corners, fs.lo, fs.hi)
    tx = apply(spec, x)
    a = spec.constant
    viol = (
        part.block_norms(tx - y) ** 2
        - part.block_norms(x - y) ** 2
        + (1 - a) / a * part.block_norms(x - tx) ** 2
    )
    return float(np.max(viol))


# ---------------------------------------------------------------------------
# online operators


@dataclass(frozen=True)
class DriftMoments:
    """Declared drift statistics for one block, horizon-scoped suprema."""

    params: SubWeibullParams
    mean: float
    mean_sq: float


@dataclass(frozen=True, eq=False)
class OnlineOperatorSpec:
    """Operator template whose fixed set moves over time.

    ``random-walk`` adds one draw of ``increments[i]`` to block i per step,
    ``linear`` moves by ``velocity`` per step and ``sinusoid`` follows
    ``center0 + amplitude * sin(omega * l)``.  For averaged templates the
    fixed box is clamped so that it stays inside the domain.
    """

    base: OperatorSpec
    drift: str = "none"
    increments: tuple = ()
    velocity: np.ndarray | None = None
    amplitude: np.ndarray | None = None
    omega: float = 0.0

    def __post_init__(self):
        if self.drift not in DRIFTS:
            raise ValueError(f"unknown drift {self.drift!r}")
        if self.base.fixed_set is None:
            raise ValueError("online operators need a tracked fixed set")
        part = self.base.partition
        if self.drift == "random-walk":
            if len(self.increments) != part.n:
                raise ValueError("need one increment spec per block")
            for inc, dim in zip(self.increments, part.dims):
                if inc.dim != dim:
                    raise ValueError("increment dimension does not match its block")
                if inc.schedule != "constant":
                    raise ValueError("drift increments use a constant schedule")
        if self.drift == "linear" and (self.velocity is None or len(self.velocity) != part.total):
            raise ValueError("linear drift needs a velocity per coordinate")
        if self.drift == "sinusoid" and (self.amplitude is None or len(self.amplitude) != part.total):
            raise ValueError("sinusoid drift needs an amplitude per coordinate")

    @property
    def half_width(self) -> np.ndarray:
        fs = self.base.fixed_set
        return 0.5 * (fs.hi - fs.lo)

    @property
    def center0(self) -> np.ndarray:
        fs = self.base.fixed_set
        return 0.5 * (fs.hi + fs.lo)

    def _center_bounds(self):
        if self.base.domain is None:
            return None
        w = self.half_width
        return self.base.domain.lo + w, self.base.domain.hi - w

    def moments(self, block: int, which: str = "maximal") -> DriftMoments:
        """Declared sub-Weibull parameters and moments of the fixed-set drift.

        The per-step displacement of the box center bounds both the minimal
        and the Hausdorff distance between consecutive boxes (clamping to the
        domain only shrinks it), so the same upper bounds serve either choice
        unless the drift is deterministic.
        """
        if which not in ("minimal", "maximal"):
            raise ValueError("which must be 'minimal' or 'maximal'")
        s = self.base.partition.slices()[block]
        if self.drift == "none":
            return DriftMoments(SubWeibullParams.zero(), 0.0, 0.0)
        if self.drift == "random-walk":
            inc = self.increments[block]
            return DriftMoments(inc.declared, inc.mean_norm, inc.mean_sq_norm)
        if self.drift == "linear":
            step = np.abs(self.velocity[s])
        else:
            step = np.abs(self.amplitude[s]) * 2.0 * abs(math.sin(self.omega / 2.0))
        if which == "minimal":
            step = np.maximum(0.0, step - 2.0 * self.half_width[s])
        sigma = float(np.linalg.norm(step))
        if sigma == 0.0:
            return DriftMoments(SubWeibullParams.zero(), 0.0, 0.0)
        return DriftMoments(SubWeibullParams(0.0, sigma), sigma, sigma**2)

    def instantiate(self, center) -> OperatorSpec:
        """The operator whose fixed set is centered at ``center``."""
        return _instantiate(self.base, np.asarray(center, dtype=float), self.half_width)


def _instantiate(base: OperatorSpec, center, w) -> OperatorSpec:
    fixed = Box(center - w, center + w)
    if base.kind == "km-averaged-projection":
        return replace(base, clip=fixed, fixed_set=fixed)
    if base.kind in ("affine-contraction", "gradient-step"):
        c = center - base.matrix @ center
        return replace(base, offset=c, fixed_set=fixed)
    raise ValueError(f"online drift is not supported for {base.kind}")


def _center_steps(online: OnlineOperatorSpec, horizon: int, rng) -> np.ndarray:
    """Unclamped centers for l = 0..horizon as a ``(horizon+1, d)`` array."""
    d = online.base.dim
    c0 = online.center0
    ell = np.arange(horizon + 1, dtype=float)[:, None]
    if online.drift == "none":
        return np.broadcast_to(c0, (horizon + 1, d)).copy()
    if online.drift == "linear":
        return c0 + ell * online.velocity
    if online.drift == "sinusoid":
        return c0 + online.amplitude * np.sin(online.omega * ell)
    inc = np.concatenate(
        [sample_noise_path(spec, horizon, rng) for spec in online.increments], axis=1
    )
    return np.concatenate([c0[None, :], c0 + np.cumsum(inc, axis=0)], axis=0)


@dataclass(frozen=True)
class FixedSetPath:
    """Fixed boxes for l = 0..L and the per-step drift distances (L, n)."""

    lo: np.ndarray
    hi: np.ndarray
    sigma_min: np.ndarray
    sigma_max: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


def fixed_set_path(online: OnlineOperatorSpec, horizon: int, rng=None) -> FixedSetPath:
    """Fixed-set trajectory over ``horizon`` steps, drawing from ``rng``."""
    part = online.base.partition
    w = online.half_width
    if online.drift == "random-walk":
        if rng is None:
            raise ValueError("random-walk drift needs a generator")
        centers = _random_walk(online, horizon, rng)
    else:
        centers = _center_steps(online, horizon, rng)
        bounds = online._center_bounds()
        if bounds is not None:
            centers = np.clip(centers, *bounds)
    lo, hi = centers - w, centers + w
    smin, smax = _box_distances(lo[1:], hi[1:], lo[:-1], hi[:-1], part)
    return FixedSetPath(lo, hi, smin, smax)


def _random_walk(online, horizon, rng):
    steps = _center_steps(online, horizon, rng)
    bounds = online._center_bounds()
    if bounds is None:
        return steps
    # clamped walk: each step is the increment applied to the clamped center
    inc = np.diff(steps, axis=0)
    out = np.empty_like(steps)
    out[0] = np.clip(steps[0], *bounds)
    for ell in range(horizon):
        out[ell + 1] = np.clip(out[ell] + inc[ell], *bounds)
    return out


class OnlineState:
    """Mutable stepping state for one online trajectory."""

    def __init__(self, online: OnlineOperatorSpec):
        self.online = online
        self.center = online.center0.copy()
        self.ell = 0

    def advance(self, rng=None):
        """Move to ``T^{l+1}``; returns it with per-block (minimal, Hausdorff) drift."""
        online = self.online
        part = online.base.partition
        if online.drift == "random-walk":
            inc = np.concatenate([sample_noise_path(s, 1, rng)[0] for s in online.increments])
            new = self.center + inc
        elif online.drift == "linear":
            new = self.center + online.velocity
        elif online.drift == "sinusoid":
            new = online.center0 + online.amplitude * math.sin(online.omega * (self.ell + 1))
        else:
            new = self.center.copy()
        bounds = online._center_bounds()
        if bounds is not None:
            new = np.clip(new, *bounds)
        w = online.half_width
        smin, smax = _box_distances(new - w, new + w, self.center - w, self.center + w, part)
        self.center = new
        self.ell += 1
        return online.instantiate(new), smin, smax


def advance_online(state: OnlineState, ell: int, rng=None):
    """Advance ``state`` (currently at ``ell``) to ``T^{ell+1}``."""
    if ell != state.ell:
        raise ValueError(f"online state is at step {state.ell}, not {ell}")
    return state.advance(rng)
