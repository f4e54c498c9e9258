"""Line-oriented ``key = value`` experiment config.

Example::

    experiment = coverage
    num_groups = 2
    group_probs = [0.5, 0.5]
    group1.kind = gaussian
    group1.mean = [0, 0]
    group1.cov = [[1, 0.3], [0.3, 1]]
    group2.kind = uniform
    group2.lo = [0, 0]
    group2.hi = [1, 2]
    membership = iid              # or schedule / incentivized
    weights = empirical           # or known / perturbed
    n_grid = [500, 2000]
    replications = 2000
    alpha = 0.05
    base_seed = 12345

Values are JSON numbers or arrays, or bare words.  ``#`` starts a comment.
Matrices may be nested row lists or a flat row-major list.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from pathlib import Path

import numpy as np

from .estimation import EstimationError, WeightScheme
from .membership import MembershipError, MembershipProcess
from .montecarlo import ConfigError, ExperimentConfig
from .population import DISTRIBUTIONS, PROB_TOL, PopulationError, PopulationSpec, build_distribution

DIST_KEYS = {
    "gaussian": ("mean", "cov"),
    "uniform": ("lo", "hi"),
    "exponential": ("rate", "offset"),
}
OPTIONAL_DIST_KEYS = {"exponential": {"offset": 0.0}}
MEMBERSHIP_KEYS = {
    "iid": ("probs",),
    "schedule": ("pattern",),
    "incentivized": ("base_probs", "boost_group", "boost_factor", "phase_start"),
}
TOP_KEYS = (
    "experiment",
    "num_groups",
    "group_probs",
    "membership",
    "weights",
    "n_grid",
    "replications",
    "alpha",
    "base_seed",
)
DEFAULTS = {"alpha": 0.05, "base_seed": 0, "weights": "empirical"}

_GROUP_KEY = re.compile(r"group(\d+)\.(\w+)$")
_MEMBER_KEY = re.compile(r"membership\.(\w+)$")


class ConfigParseError(ConfigError):
    """Config diagnostic; ``code`` names the failure class, ``line`` its location."""

    def __init__(self, code: str, message: str, source: str = "<config>", line: int | None = None):
        self.code = code
        self.line = line
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _read_pairs(text: str, source: str) -> dict[str, tuple[object, int]]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError("syntax", f"expected 'key = value', got {raw.strip()!r}", source, lineno)
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not key or not val:
            raise ConfigParseError("syntax", f"empty key or value in {raw.strip()!r}", source, lineno)
        if key in pairs:
            raise ConfigParseError("duplicate_key", f"key {key!r} repeated (first on line {pairs[key][1]})", source, lineno)
        pairs[key] = (_value(val), lineno)
    return pairs


def _matrix(value, d):
    m = np.asarray(value, dtype=float)
    if m.ndim == 1 and m.size == d * d:
        m = m.reshape(d, d)
    return m


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    pairs = _read_pairs(text, source)
    used = set()

    def get(key, default=...):
        if key in pairs:
            used.add(key)
            return pairs[key]
        if default is not ...:
            return default, None
        raise ConfigParseError("missing_key", f"missing required key {key!r}", source)

    def fail(code, message, line):
        raise ConfigParseError(code, message, source, line)

    xi, line = get("num_groups")
    if not isinstance(xi, int) or xi < 1:
        fail("bad_value", "num_groups must be a positive integer", line)

    probs, pline = get("group_probs")
    probs = _numeric_vector(probs, "group_probs", fail, pline)
    if probs.size != xi:
        fail("bad_probabilities", f"group_probs has {probs.size} entries, expected {xi}", pline)
    if np.any(probs <= 0):
        fail("bad_probabilities", "group_probs must be strictly positive", pline)
    if abs(probs.sum() - 1.0) > PROB_TOL:
        fail("bad_probabilities", "group_probs must sum to 1", pline)

    groups = []
    for s in range(1, xi + 1):
        kind, kline = get(f"group{s}.kind")
        if kind not in DISTRIBUTIONS:
            fail("unknown_distribution", f"unknown distribution kind {kind!r}; known: {sorted(DISTRIBUTIONS)}", kline)
        params = {}
        for name in DIST_KEYS.get(kind, ()):
            default = OPTIONAL_DIST_KEYS.get(kind, {}).get(name, ...)
            val, _ = get(f"group{s}.{name}", default)
            params[name] = val
        if kind == "gaussian":
            mean = np.atleast_1d(np.asarray(params["mean"], dtype=float))
            params["cov"] = _matrix(params["cov"], mean.size)
        try:
            groups.append(build_distribution(kind, **params))
        except (PopulationError, ValueError, TypeError) as exc:
            fail("bad_distribution", f"group {s}: {exc}", kline)

    try:
        spec = PopulationSpec(probs, groups)
    except PopulationError as exc:
        fail("bad_population", str(exc), pline)

    mkind, mline = get("membership")
    if mkind not in MEMBERSHIP_KEYS:
        fail("unknown_membership", f"unknown membership kind {mkind!r}; known: {sorted(MEMBERSHIP_KEYS)}", mline)
    mparams = {}
    for name in MEMBERSHIP_KEYS[mkind]:
        default = probs.tolist() if (mkind, name) == ("iid", "probs") else ...
        mparams[name], _ = get(f"membership.{name}", default)
    try:
        process = MembershipProcess(mkind, xi, **_membership_args(mkind, mparams))
    except (MembershipError, ValueError, TypeError) as exc:
        fail("bad_membership", str(exc), mline)

    wkind, wline = get("weights", DEFAULTS["weights"])
    try:
        scheme = WeightScheme(wkind)
    except EstimationError as exc:
        fail("unknown_weights", str(exc), wline)

    grid, gline = get("n_grid")
    if isinstance(grid, int):
        grid = [grid]
    if not isinstance(grid, list) or not grid or not all(isinstance(n, int) and n >= 1 for n in grid):
        fail("bad_n_grid", "n_grid must be a non-empty list of positive integers", gline)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        fail("n_grid_not_increasing", "n_grid must be strictly increasing", gline)

    reps, rline = get("replications")
    if not isinstance(reps, int) or reps < 1:
        fail("bad_value", "replications must be a positive integer", rline)
    alpha, aline = get("alpha", DEFAULTS["alpha"])
    if not isinstance(alpha, (int, float)) or not 0 < alpha < 1:
        fail("bad_value", "alpha must lie in (0, 1)", aline)
    seed, sline = get("base_seed", DEFAULTS["base_seed"])
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        fail("bad_value", "base_seed must be an integer in [0, 2**64)", sline)
    experiment, eline = get("experiment")

    unknown = sorted(set(pairs) - used, key=lambda k: pairs[k][1])
    if unknown:
        fail("unknown_key", f"unknown key {unknown[0]!r}", pairs[unknown[0]][1])

    try:
        return ExperimentConfig(
            spec=spec,
            process=process,
            weight_scheme=scheme,
            n_grid=tuple(grid),
            replications=reps,
            alpha=float(alpha),
            base_seed=seed,
            experiment=experiment,
        )
    except ConfigError as exc:
        fail("bad_experiment", str(exc), eline)


def _numeric_vector(value, name, fail, line):
    if isinstance(value, (int, float)):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
        fail("bad_value", f"{name} must be a list of numbers", line)
    return np.asarray(value, dtype=float)


def _membership_args(kind, params):
    if kind == "iid":
        return {"probs": np.asarray(params["probs"], dtype=float)}
    if kind == "schedule":
        pattern = params["pattern"]
        if not isinstance(pattern, list) or not all(isinstance(s, int) for s in pattern):
            raise MembershipError("schedule pattern must be a list of integer labels")
        return {"pattern": tuple(pattern)}
    return {
        "base_probs": np.asarray(params["base_probs"], dtype=float),
        "boost_group": params["boost_group"],
        "boost_factor": params["boost_factor"],
        "phase_start": params["phase_start"],
    }


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError("io", f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config_text(text, str(path))


def _fmt(value) -> str:
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ConfigError("non-finite value in config")
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config_text(serialize_config(c))`` reproduces ``c``."""
    spec = config.spec
    lines = [
        f"experiment = {config.experiment}",
        f"num_groups = {spec.num_groups}",
        f"group_probs = {_fmt(spec.group_probs.tolist())}",
    ]
    for s, group in enumerate(spec.groups, start=1):
        lines.append(f"group{s}.kind = {group.kind}")
        for name, val in group.params().items():
            lines.append(f"group{s}.{name} = {_fmt(val)}")
    lines.append(f"membership = {config.process.kind}")
    for name, val in config.process.params().items():
        lines.append(f"membership.{name} = {_fmt(val)}")
    lines += [
        f"weights = {config.weight_scheme.kind}",
        f"n_grid = {_fmt(list(config.n_grid))}",
        f"replications = {config.replications}",
        f"alpha = {_fmt(config.alpha)}",
        f"base_seed = {config.base_seed}",
    ]
    return "\n".join(lines) + "\n"


def config_checksum(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()
