"""Stochastic Banach-Picard iterations with Bernoulli block masks and noise.

One step of the static iteration is

    x_i <- x_i                  if block i is not drawn,
    x_i <- T_i x + e_i          otherwise,

where every ``T_i`` reads the full pre-update state.  The online variant uses
``T^{l+1}`` at step ``l``.  Trials are simulated in batches by a compiled
kernel; ``OPFIX_PURE_PYTHON=1`` forces the numpy implementation, which
produces bit-identical results.

Each trial with seed ``s`` draws masks, noise and fixed-set drift from three
independent substreams of ``SeedSequence(s)``, so results do not depend on
batching or thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels_py
from .operators import OnlineOperatorSpec, OperatorSpec, fixed_set_path
from .subweibull import NoiseSpec, sample_noise_path

__all__ = [
    "BACKEND",
    "UpdateModel",
    "IterationConfig",
    "Trajectory",
    "Ensemble",
    "run",
    "simulate_batch",
    "trial_streams",
    "weighted_path_length",
]


def _select_backend():
    if os.environ.get("OPFIX_PURE_PYTHON", "") not in ("", "0"):
        return "python", _kernels_py.run_batch
    try:
        from ._kernels import run_batch
    except ImportError:
        return "python", _kernels_py.run_batch
    return "cython", run_batch


BACKEND, _run_batch = _select_backend()

KERNELS = {"python": _kernels_py.run_batch}
if BACKEND == "cython":
    KERNELS["cython"] = _run_batch


class ConfigError(ValueError):
    """Invalid iteration setup."""


@dataclass(frozen=True)
class UpdateModel:
    """Per-block update probabilities.

    ``independent`` draws one coin per block; ``fully-coupled`` draws a single
    uniform per iteration and updates block i when it falls below ``p_i``, so
    blocks with equal probabilities always move together.
    """

    probabilities: tuple
    correlation: str = "independent"

    def __post_init__(self):
        p = tuple(float(v) for v in self.probabilities)
        object.__setattr__(self, "probabilities", p)
        if not p:
            raise ConfigError("need at least one update probability")
        for i, v in enumerate(p):
            if not 0.0 < v <= 1.0:
                raise ConfigError(
                    f"update probability for block {i} is {v}; every block must be "
                    "updated with positive probability p in (0, 1]"
                )
        if self.correlation not in ("independent", "fully-coupled"):
            raise ConfigError(f"unknown correlation {self.correlation!r}")

    def draw(self, horizon: int, rng: np.random.Generator) -> np.ndarray:
        p = np.asarray(self.probabilities)
        if self.correlation == "independent":
            u = rng.random((horizon, p.size))
        else:
            u = np.repeat(rng.random((horizon, 1)), p.size, axis=1)
        return (u < p).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class IterationConfig:
    operator: OperatorSpec | OnlineOperatorSpec
    update: UpdateModel
    noise: tuple
    horizon: int
    initial_point: np.ndarray
    seed: int = 0
    stride: int | None = None

    def __post_init__(self):
        base = self.base
        part = base.partition
        x0 = np.asarray(self.initial_point, dtype=float).reshape(-1)
        object.__setattr__(self, "initial_point", x0)
        object.__setattr__(self, "noise", tuple(self.noise))
        if x0.size != part.total:
            raise ConfigError(f"initial point has dimension {x0.size}, expected {part.total}")
        if base.domain is not None and not base.domain.contains(x0):
            raise ConfigError("initial point lies outside the operator domain")
        if base.fixed_set is None:
            raise ConfigError("the operator's fixed set is unknown")
        if len(self.update.probabilities) != part.n:
            raise ConfigError(
                f"{len(self.update.probabilities)} update probabilities for {part.n} blocks"
            )
        if len(self.noise) != part.n:
            raise ConfigError(f"{len(self.noise)} noise specs for {part.n} blocks")
        for i, (spec, dim) in enumerate(zip(self.noise, part.dims)):
            if not isinstance(spec, NoiseSpec) or spec.dim != dim:
                raise ConfigError(f"noise for block {i} must be a NoiseSpec of dimension {dim}")
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be a positive integer")
        if self.stride is not None and int(self.stride) < 1:
            raise ConfigError("stride must be positive")

    @property
    def online(self) -> bool:
        return isinstance(self.operator, OnlineOperatorSpec)

    @property
    def base(self) -> OperatorSpec:
        return self.operator.base if self.online else self.operator

    @property
    def effective_stride(self) -> int:
        if self.stride is not None:
            return int(self.stride)
        return 1 if self.horizon <= 1000 else 10


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Batch of trajectories; the leading axis indexes trials.

    ``dist`` is ``(m, L+1, n)``, ``res_sq``/``mask``/``sigma_*`` are
    ``(m, L, n)``.  ``res_sq[:, l]`` is ``||x_i^l - T_i x^l||^2`` for the
    operator applied at step l, whether or not block i was drawn.
    """

    seeds: np.ndarray
    dist: np.ndarray
    res_sq: np.ndarray
    mask: np.ndarray
    clamp_count: np.ndarray
    iterates: np.ndarray | None
    stride: int
    sigma_min: np.ndarray | None = None
    sigma_max: np.ndarray | None = None

    @property
    def num_trials(self) -> int:
        return self.dist.shape[0]

    @property
    def horizon(self) -> int:
        return self.res_sq.shape[1]

    @property
    def fpr_summand(self) -> np.ndarray:
        return self.mask * self.res_sq

    @property
    def cum_fpr(self) -> np.ndarray:
        """``(1/(l+1)) * sum_{h<=l} u^h ||(I - T) x^h||^2`` for l = 0..L-1."""
        s = np.cumsum(self.fpr_summand, axis=1)
        return s / np.arange(1, self.horizon + 1)[None, :, None]

    @property
    def beta(self) -> np.ndarray:
        """Update counts before each iteration, ``(m, L+1, n)``."""
        m, L, n = self.mask.shape
        out = np.zeros((m, L + 1, n), dtype=np.int64)
        np.cumsum(self.mask, axis=1, out=out[:, 1:])
        return out

    def trial(self, t: int) -> "Trajectory":
        return Trajectory(
            seed=int(self.seeds[t]),
            dist=self.dist[t],
            res_sq=self.res_sq[t],
            mask=self.mask[t],
            clamp_count=int(self.clamp_count[t]),
            iterates=None if self.iterates is None else self.iterates[t],
            stride=self.stride,
            sigma_min=None if self.sigma_min is None else self.sigma_min[t],
            sigma_max=None if self.sigma_max is None else self.sigma_max[t],
        )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Record of one run; see :class:`Ensemble` for the array conventions."""

    seed: int
    dist: np.ndarray
    res_sq: np.ndarray
    mask: np.ndarray
    clamp_count: int
    iterates: np.ndarray | None
    stride: int
    sigma_min: np.ndarray | None = None
    sigma_max: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.res_sq.shape[0]

    @property
    def fpr_summand(self) -> np.ndarray:
        return self.mask * self.res_sq

    @property
    def cum_fpr(self) -> np.ndarray:
        return np.cumsum(self.fpr_summand, axis=0) / np.arange(1, self.horizon + 1)[:, None]

    @property
    def beta(self) -> np.ndarray:
        out = np.zeros((self.horizon + 1, self.mask.shape[1]), dtype=np.int64)
        np.cumsum(self.mask, axis=0, out=out[1:])
        return out

    @property
    def sigma(self) -> np.ndarray | None:
        return self.sigma_max


def trial_streams(seed: int):
    """Mask, noise and drift generators for one trial."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def _trial_inputs(config: IterationConfig, seed: int):
    rng_mask, rng_noise, rng_drift = trial_streams(seed)
    L = int(config.horizon)
    mask = config.update.draw(L, rng_mask)
    noise = np.concatenate([sample_noise_path(s, L, rng_noise) for s in config.noise], axis=1)
    path = None
    if config.online:
        path = fixed_set_path(config.operator, L, rng_drift)
    return mask, noise, path


def _chunk(config: IterationConfig, seeds, keep_iterates: bool, kernel):
    base = config.base
    part = base.partition
    L, d, n, m = int(config.horizon), part.total, part.n, len(seeds)
    stride = config.effective_stride if keep_iterates else L + 1

    masks = np.empty((m, L, n), dtype=np.uint8)
    noise = np.empty((m, L, d))
    paths = []
    for t, s in enumerate(seeds):
        masks[t], noise[t], path = _trial_inputs(config, s)
        paths.append(path)

    M = np.ascontiguousarray(base.matrix, dtype=float)
    has_clip = base.clip is not None
    if config.online:
        lo = np.stack([p.lo for p in paths])
        hi = np.stack([p.hi for p in paths])
        fix_lo, fix_hi = lo, hi
        if base.kind == "km-averaged-projection":
            c_seq = base.offset[None, None, :].copy()
            clip_lo, clip_hi = lo[:, 1:].copy(), hi[:, 1:].copy()
        else:
            centers = 0.5 * (lo[:, 1:] + hi[:, 1:])
            # same arithmetic as OnlineOperatorSpec.instantiate: c = x* - M x*
            c_seq = centers - np.einsum("rj,tlj->tlr", M, centers)
            clip_lo = clip_hi = np.zeros((1, 1, d))
            if has_clip:
                clip_lo = base.clip.lo[None, None, :].copy()
                clip_hi = base.clip.hi[None, None, :].copy()
        sigma_min = np.stack([p.sigma_min for p in paths])
        sigma_max = np.stack([p.sigma_max for p in paths])
    else:
        c_seq = base.offset[None, None, :].copy()
        fix_lo = base.fixed_set.lo[None, None, :].copy()
        fix_hi = base.fixed_set.hi[None, None, :].copy()
        if has_clip:
            clip_lo = base.clip.lo[None, None, :].copy()
            clip_hi = base.clip.hi[None, None, :].copy()
        else:
            clip_lo = clip_hi = np.zeros((1, 1, d))
        sigma_min = sigma_max = None

    has_dom = base.domain is not None
    dom_lo = base.domain.lo.copy() if has_dom else np.zeros(d)
    dom_hi = base.domain.hi.copy() if has_dom else np.zeros(d)

    dist = np.empty((m, L + 1, n))
    res_sq = np.empty((m, L, n))
    clamps = np.zeros(m, dtype=np.int64)
    iterates = np.empty((m, L // stride + 1, d))
    kernel(
        M,
        np.ascontiguousarray(c_seq),
        np.ascontiguousarray(clip_lo),
        np.ascontiguousarray(clip_hi),
        has_clip,
        float(base.mix),
        np.ascontiguousarray(fix_lo),
        np.ascontiguousarray(fix_hi),
        dom_lo,
        dom_hi,
        has_dom,
        part.block_ids().astype(np.int32),
        n,
        masks,
        noise,
        config.initial_point.copy(),
        stride,
        dist,
        res_sq,
        clamps,
        iterates,
    )
    return dist, res_sq, masks, clamps, (iterates if keep_iterates else None), sigma_min, sigma_max


def simulate_batch(
    config: IterationConfig,
    seeds,
    *,
    keep_iterates: bool = False,
    chunk_size: int = 256,
    workers: int = 1,
    backend: str | None = None,
) -> Ensemble:
    """Run one trajectory per seed.

    Chunks of trials are independent and may run on ``workers`` threads (the
    compiled kernel releases the GIL); the result is identical for every
    chunk size and worker count.
    """
    kernel = _run_batch if backend is None else KERNELS[backend]
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    if seeds.size == 0:
        raise ConfigError("need at least one seed")
    chunks = [seeds[i : i + chunk_size] for i in range(0, seeds.size, chunk_size)]

    def work(ch):
        return _chunk(config, ch, keep_iterates, kernel)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(ch) for ch in chunks]

    def cat(j):
        if parts[0][j] is None:
            return None
        return np.concatenate([p[j] for p in parts], axis=0)

    return Ensemble(
        seeds=seeds,
        dist=cat(0),
        res_sq=cat(1),
        mask=cat(2),
        clamp_count=cat(3),
        iterates=cat(4),
        stride=config.effective_stride if keep_iterates else int(config.horizon) + 1,
        sigma_min=cat(5),
        sigma_max=cat(6),
    )


def run(config: IterationConfig, *, backend: str | None = None) -> Trajectory:
    """Single trajectory for ``config.seed``, iterates kept every stride."""
    return simulate_batch(config, [config.seed], keep_iterates=True, backend=backend).trial(0)


def weighted_path_length(traj: Trajectory, chi, which: str = "maximal"):
    """Per-block ``sum_{h<L} chi^(L-h-1) sigma^h`` and the plain ``sum_h sigma^h``.

    ``chi`` may be a scalar or one value per block.  Static trajectories give
    zeros.
    """
    sigma = traj.sigma_max if which == "maximal" else traj.sigma_min
    n = traj.mask.shape[1]
    if sigma is None:
        return np.zeros(n), np.zeros(n)
    chi = np.broadcast_to(np.asarray(chi, dtype=float), (n,))
    if np.any((chi <= 0) | (chi >= 1)):
        raise ValueError("chi must lie in (0, 1)")
    L = sigma.shape[0]
    weights = np.exp(np.arange(L - 1, -1, -1)[:, None] * np.log(chi)[None, :])
    return np.sum(weights * sigma, axis=0), np.sum(sigma, axis=0)

