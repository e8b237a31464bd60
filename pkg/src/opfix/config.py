"""Experiment configuration files.

Configurations are YAML documents with the sections ``operator``,
``update``, ``noise``, ``drift``, ``run``, ``bounds`` and ``output``.
Unknown keys are rejected and every error names the offending key and line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .engine import ConfigError, IterationConfig, UpdateModel
from .operators import (
    BlockPartition,
    OnlineOperatorSpec,
    affine_contraction,
    block_diag,
    gradient_step,
    km_averaged_projection,
    projected_gradient_step,
    random_spd,
)
from .subweibull import SubWeibullParams, make_noise

__all__ = ["ConfigError", "Experiment", "load_config", "parse_config", "example_path", "EXAMPLES"]

EXAMPLES = Path(__file__).with_name("examples")


SCHEMA = {
    "operator": {
        "kind", "blocks", "matrix", "offset", "fixed_point", "zeta", "gamma", "q",
        "lo", "hi", "alpha", "target_lo", "target_hi", "domain_lo", "domain_hi",
    },
    "update": {"p", "correlation"},
    "noise": None,  # mapping or list of mappings, checked separately
    "drift": {"kind", "increments", "velocity", "amplitude", "omega"},
    "run": {"horizon", "trials", "base_seed", "initial_point", "initial_offset", "workers"},
    "bounds": {"propositions", "deltas", "eps", "which_sigma"},
    "output": {"directory", "stride", "trajectory_trials"},
}
NOISE_KEYS = {"family", "std", "theta_w", "scale", "half_width", "schedule", "ratio", "declared"}
MATRIX_KEYS = {"recipe", "values", "rows", "cond", "top", "seed"}
REQUIRED = ("operator", "update", "noise", "run")


@dataclass
class Experiment:
    iteration: IterationConfig
    trials: int = 1000
    base_seed: int = 0
    workers: int = 1
    propositions: tuple | None = None
    deltas: tuple = (0.1, 0.01)
    eps: tuple | None = None
    which_sigma: tuple = ("maximal",)
    directory: str = "opfix-out"
    trajectory_trials: int = 10
    source: str = ""
    raw: dict = field(default_factory=dict)


def _line_map(node, path=(), out=None):
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (str(k.value),)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


class _Ctx:
    def __init__(self, source, lines):
        self.source = source
        self.lines = lines

    def error(self, path, msg) -> ConfigError:
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p, 1)
        dotted = ".".join(str(x) for x in path) or "<root>"
        return ConfigError(f"{self.source}:{line}: {dotted}: {msg}")


def _mapping(ctx, obj, path, allowed):
    if not isinstance(obj, dict):
        raise ctx.error(path, "expected a mapping")
    if allowed is not None:
        for k in obj:
            if k not in allowed:
                raise ctx.error(path + (k,), f"unknown key {k!r}; allowed: {sorted(allowed)}")
    return obj


def _num(ctx, obj, path, *, lo=None, hi=None, integer=False):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ctx.error(path, f"expected a number, got {obj!r}")
    if integer and int(obj) != obj:
        raise ctx.error(path, f"expected an integer, got {obj!r}")
    if lo is not None and obj < lo:
        raise ctx.error(path, f"must be at least {lo}, got {obj}")
    if hi is not None and obj > hi:
        raise ctx.error(path, f"must be at most {hi}, got {obj}")
    return int(obj) if integer else float(obj)


def _vec(ctx, obj, path, size=None):
    if isinstance(obj, (int, float)) and not isinstance(obj, bool) and size is not None:
        return np.full(size, float(obj))
    if not isinstance(obj, list):
        raise ctx.error(path, "expected a list of numbers")
    v = np.array([_num(ctx, x, path + (i,)) for i, x in enumerate(obj)])
    if size is not None and v.size != size:
        raise ctx.error(path, f"expected {size} entries, got {v.size}")
    return v


def _matrix(ctx, obj, path, part: BlockPartition):
    obj = _mapping(ctx, obj, path, MATRIX_KEYS)
    recipe = obj.get("recipe")
    d = part.total
    if recipe == "diagonal":
        return np.diag(_vec(ctx, obj.get("values"), path + ("values",), d))
    if recipe == "inline":
        rows = obj.get("rows")
        if not isinstance(rows, list) or len(rows) != d:
            raise ctx.error(path + ("rows",), f"expected {d} rows")
        return np.array([_vec(ctx, r, path + ("rows", i), d) for i, r in enumerate(rows)])
    if recipe == "random-spd":
        rng = np.random.default_rng(_num(ctx, obj.get("seed", 0), path + ("seed",), integer=True))
        cond = _num(ctx, obj.get("cond", 10.0), path + ("cond",), lo=1.0)
        top = _num(ctx, obj.get("top", 1.0), path + ("top",))
        return block_diag([random_spd(n, cond, top, rng) for n in part.dims])
    raise ctx.error(path + ("recipe",), f"unknown recipe {recipe!r}; use diagonal, inline or random-spd")


def _operator(ctx, sec):
    path = ("operator",)
    sec = _mapping(ctx, sec, path, SCHEMA["operator"])
    blocks = sec.get("blocks", [1])
    if not isinstance(blocks, list) or not blocks:
        raise ctx.error(path + ("blocks",), "expected a nonempty list of block dimensions")
    dims = tuple(_num(ctx, b, path + ("blocks", i), lo=1, integer=True) for i, b in enumerate(blocks))
    part = BlockPartition(dims)
    d = part.total
    kind = sec.get("kind")

    def opt_vec(key):
        return None if key not in sec else _vec(ctx, sec[key], path + (key,), d)

    def need(key):
        if key not in sec:
            raise ctx.error(path, f"operator kind {kind!r} needs {key!r}")
        return sec[key]

    zeta = None if "zeta" not in sec else _num(ctx, sec["zeta"], path + ("zeta",))
    try:
        if kind == "affine-contraction":
            A = _matrix(ctx, need("matrix"), path + ("matrix",), part)
            return affine_contraction(A, opt_vec("offset"), fixed_point=opt_vec("fixed_point"),
                                      partition=part, zeta=zeta)
        if kind == "gradient-step":
            Q = _matrix(ctx, need("matrix"), path + ("matrix",), part)
            gamma = _num(ctx, need("gamma"), path + ("gamma",))
            return gradient_step(Q, opt_vec("q"), gamma=gamma, fixed_point=opt_vec("fixed_point"),
                                 partition=part, zeta=zeta)
        if kind == "projected-gradient-step":
            Q = _matrix(ctx, need("matrix"), path + ("matrix",), part)
            gamma = _num(ctx, need("gamma"), path + ("gamma",))
            q = opt_vec("q")
            return projected_gradient_step(Q, np.zeros(d) if q is None else q, gamma=gamma,
                                           lo=_vec(ctx, need("lo"), path + ("lo",), d),
                                           hi=_vec(ctx, need("hi"), path + ("hi",), d),
                                           partition=part, zeta=zeta)
        if kind == "km-averaged-projection":
            return km_averaged_projection(
                _vec(ctx, need("target_lo"), path + ("target_lo",), d),
                _vec(ctx, need("target_hi"), path + ("target_hi",), d),
                alpha=_num(ctx, need("alpha"), path + ("alpha",)),
                domain_lo=_vec(ctx, need("domain_lo"), path + ("domain_lo",), d),
                domain_hi=_vec(ctx, need("domain_hi"), path + ("domain_hi",), d),
                partition=part,
            )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ctx.error(path, str(exc)) from None
    raise ctx.error(path + ("kind",), f"unknown operator kind {kind!r}")


def _noise_one(ctx, obj, path, dim):
    obj = _mapping(ctx, obj, path, NOISE_KEYS)
    family = obj.get("family")
    kw = {}
    for key in ("std", "theta_w", "scale", "half_width", "ratio"):
        if key in obj:
            kw[key] = _num(ctx, obj[key], path + (key,))
    if "schedule" in obj:
        kw["schedule"] = obj["schedule"]
    try:
        spec = make_noise(family, dim, **kw)
    except KeyError as exc:
        raise ctx.error(path, f"noise family {family!r} needs {exc.args[0]!r}") from None
    except (ValueError, TypeError) as exc:
        raise ctx.error(path, str(exc)) from None
    if "declared" in obj:
        dp = path + ("declared",)
        dec = _mapping(ctx, obj["declared"], dp, {"theta", "nu"})
        try:
            spec = spec.with_declared(SubWeibullParams(
                _num(ctx, dec.get("theta"), dp + ("theta",), lo=0.0),
                _num(ctx, dec.get("nu"), dp + ("nu",)),
            ))
        except ValueError as exc:
            raise ctx.error(dp, str(exc)) from None
    return spec


def _noise(ctx, sec, part):
    if isinstance(sec, list):
        if len(sec) != part.n:
            raise ctx.error(("noise",), f"expected {part.n} per-block entries, got {len(sec)}")
        return tuple(_noise_one(ctx, s, ("noise", i), d) for i, (s, d) in enumerate(zip(sec, part.dims)))
    return tuple(_noise_one(ctx, sec, ("noise",), d) for d in part.dims)


def _update(ctx, sec, part):
    path = ("update",)
    sec = _mapping(ctx, sec, path, SCHEMA["update"])
    if "p" not in sec:
        raise ctx.error(path, "missing 'p'")
    raw = sec["p"]
    p = raw if isinstance(raw, list) else [raw] * part.n
    if len(p) != part.n:
        raise ctx.error(path + ("p",), f"expected {part.n} probabilities, got {len(p)}")
    vals = []
    for i, v in enumerate(p):
        pp = path + ("p",) if not isinstance(raw, list) else path + ("p", i)
        v = _num(ctx, v, pp)
        if not 0.0 < v <= 1.0:
            raise ctx.error(
                pp,
                f"update probability {v} for block {i} is invalid: every "
                "block needs a positive probability, p in (0, 1]",
            )
        vals.append(v)
    corr = sec.get("correlation", "independent")
    if corr not in ("independent", "fully-coupled"):
        raise ctx.error(path + ("correlation",), f"unknown correlation {corr!r}")
    return UpdateModel(tuple(vals), corr)


def _drift(ctx, sec, op):
    path = ("drift",)
    sec = _mapping(ctx, sec, path, SCHEMA["drift"])
    kind = sec.get("kind", "none")
    part = op.partition
    kw = {}
    if kind == "random-walk":
        inc = sec.get("increments")
        if inc is None:
            raise ctx.error(path, "random-walk drift needs 'increments'")
        kw["increments"] = _noise(ctx, inc, part) if not isinstance(inc, list) else tuple(
            _noise_one(ctx, s, path + ("increments", i), d)
            for i, (s, d) in enumerate(zip(inc, part.dims))
        )
    elif kind == "linear":
        kw["velocity"] = _vec(ctx, sec.get("velocity"), path + ("velocity",), part.total)
    elif kind == "sinusoid":
        kw["amplitude"] = _vec(ctx, sec.get("amplitude"), path + ("amplitude",), part.total)
        kw["omega"] = _num(ctx, sec.get("omega"), path + ("omega",))
    elif kind != "none":
        raise ctx.error(path + ("kind",), f"unknown drift kind {kind!r}")
    try:
        return OnlineOperatorSpec(op, kind, **kw)
    except ValueError as exc:
        raise ctx.error(path, str(exc)) from None


def parse_config(text: str, source: str = "<config>", overrides: dict | None = None) -> Experiment:
    """Build an :class:`Experiment`; ``overrides`` may set trials, base_seed, horizon."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigError(f"{source}:{line}: malformed configuration: {exc}") from None
    ctx = _Ctx(source, _line_map(node) if node is not None else {})
    raw = _mapping(ctx, raw if raw is not None else {}, (), set(SCHEMA))
    for key in REQUIRED:
        if key not in raw:
            raise ctx.error((), f"missing required section {key!r}")
    overrides = overrides or {}

    op = _operator(ctx, raw["operator"])
    part = op.partition
    update = _update(ctx, raw["update"], part)
    noise = _noise(ctx, raw["noise"], part)
    operator = op
    if "drift" in raw:
        operator = _drift(ctx, raw["drift"], op)

    rp = ("run",)
    run = _mapping(ctx, raw["run"], rp, SCHEMA["run"])
    horizon = overrides.get("horizon") or _num(ctx, run.get("horizon"), rp + ("horizon",), lo=1, integer=True)
    trials = overrides.get("trials") or _num(ctx, run.get("trials", 1000), rp + ("trials",), lo=1, integer=True)
    seed = overrides.get("base_seed")
    if seed is None:
        seed = _num(ctx, run.get("base_seed", 0), rp + ("base_seed",), lo=0, integer=True)
    workers = _num(ctx, run.get("workers", 1), rp + ("workers",), lo=1, integer=True)
    if "initial_point" in run and "initial_offset" in run:
        raise ctx.error(rp, "give either initial_point or initial_offset, not both")
    if "initial_point" in run:
        x0 = _vec(ctx, run["initial_point"], rp + ("initial_point",), part.total)
    elif "initial_offset" in run:
        fs = op.fixed_set
        x0 = 0.5 * (fs.lo + fs.hi) + _vec(ctx, run["initial_offset"], rp + ("initial_offset",), part.total)
    else:
        raise ctx.error(rp, "missing 'initial_point' or 'initial_offset'")

    out = _mapping(ctx, raw.get("output", {}), ("output",), SCHEMA["output"])
    stride = None
    if "stride" in out:
        stride = _num(ctx, out["stride"], ("output", "stride"), lo=1, integer=True)
    try:
        it = IterationConfig(operator, update, noise, horizon, x0, seed=seed, stride=stride)
    except ValueError as exc:
        raise ctx.error(rp, str(exc)) from None

    bp = ("bounds",)
    bsec = _mapping(ctx, raw.get("bounds", {}), bp, SCHEMA["bounds"])
    props = None
    if "propositions" in bsec:
        from .bounds import PROPOSITIONS

        props = tuple(bsec["propositions"])
        for i, name in enumerate(props):
            if name not in PROPOSITIONS:
                raise ctx.error(bp + ("propositions", i), f"unknown proposition {name!r}")
    deltas = tuple(
        _num(ctx, v, bp + ("deltas", i), lo=0.0, hi=1.0)
        for i, v in enumerate(bsec.get("deltas", [0.1, 0.01]))
    )
    for i, v in enumerate(deltas):
        if not 0.0 < v < 1.0:
            raise ctx.error(bp + ("deltas", i), "delta must lie in (0, 1)")
    eps = None
    if "eps" in bsec:
        eps = tuple(_num(ctx, v, bp + ("eps", i), lo=0.0) for i, v in enumerate(bsec["eps"]))
        for i, e in enumerate(eps):
            if not 0.0 < e <= min(update.probabilities):
                raise ctx.error(bp + ("eps", i), "eps must lie in (0, p]")
    which = tuple(bsec.get("which_sigma", ["maximal"]))
    for i, w in enumerate(which):
        if w not in ("minimal", "maximal"):
            raise ctx.error(bp + ("which_sigma", i), "use 'minimal' or 'maximal'")

    return Experiment(
        iteration=it,
        trials=int(trials),
        base_seed=int(seed),
        workers=int(workers),
        propositions=props,
        deltas=deltas,
        eps=eps,
        which_sigma=which,
        directory=str(out.get("directory", "opfix-out")),
        trajectory_trials=_num(ctx, out.get("trajectory_trials", 10), ("output", "trajectory_trials"),
                               lo=0, integer=True),
        source=source,
        raw=raw,
    )


def example_path(name: str) -> Path:
    """Resolve a shipped example by file name (``static_contractive.cfg``)."""
    return EXAMPLES / Path(name).name


def load_config(path, overrides: dict | None = None) -> Experiment:
    p = Path(path)
    if not p.exists():
        alt = example_path(p.name)
        if p.parent.name == "examples" and alt.exists():
            p = alt
        else:
            raise ConfigError(f"{path}: no such configuration file")
    return parse_config(p.read_text(), str(path), overrides)
