"""Scenario files: TOML schema, validation, defaults and overrides.

A scenario has the blocks ``process``, ``power``, ``gains``, ``sweep``,
``mc`` and ``numerics``. ``process`` and ``power`` are required; the others
take defaults. Unknown keys are rejected. See README.md for the schema.
"""

from __future__ import annotations

import copy
import math
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .channel import FAMILIES, GAIN_MODELS
from .errors import ConfigError

U64 = 2**64

DEFAULTS = {
    "process": {"kind": "gauss-markov", "sigma2": 1.0, "eta": 1.0, "T0": 1.0},
    "gains": {"model": "constant", "h_lower": 1.0, "h_upper": 1.0, "seed": 0},
    "sweep": {"N": [10, 100, 1000], "workers": 1},
    "mc": {"enabled": False, "trials": 10000, "seed": 0, "quad_per_gap": 20, "max_N": 200,
           "af_trials": 100000},
    "numerics": {"kappa": 0.99, "quad_panels": 8, "exact_max_N": 4000,
                 "lipschitz_grid": 10000, "rate_rtol": 1e-9, "n_ref": 4000},
}

# block -> key -> value kind
SCHEMA = {
    "process": {"kind": "str", "sigma2": "float", "eta": "float", "T0": "float",
                "kernel_csv": "path", "class_a": "table"},
    "power": {"family": "str", "value": "float", "epsilon": "float"},
    "gains": {"model": "str", "h_lower": "float", "h_upper": "float", "h_value": "float",
              "seed": "int", "csv": "path"},
    "sweep": {"N": "intlist", "workers": "int"},
    "mc": {"enabled": "bool", "trials": "int", "sigma_D2": "float", "seed": "int",
           "quad_per_gap": "int", "max_N": "int", "af_trials": "int"},
    "numerics": {"kappa": "float", "K_max": "int", "quad_panels": "int", "exact_max_N": "int",
                 "lipschitz_grid": "int", "rate_rtol": "float", "n_ref": "int"},
}
CLASS_A_KEYS = {"x": "float", "d": "float", "c_l": "int", "c_u": "int", "K0": "int",
                "alpha": "float", "beta": "float", "gamma": "float", "tau": "float",
                "head_eigenvalues": "floatlist", "n_ref": "int"}
REQUIRED_CLASS_A = ("x", "d", "c_l", "c_u", "K0", "alpha", "beta", "gamma", "tau")


def load_toml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None


def _type_ok(kind: str, v) -> bool:
    if kind == "str" or kind == "path":
        return isinstance(v, str)
    if kind == "bool":
        return isinstance(v, bool)
    if kind == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if kind == "float":
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if kind == "table":
        return isinstance(v, dict)
    if kind == "intlist":
        return isinstance(v, list) and all(_type_ok("int", x) for x in v)
    if kind == "floatlist":
        return isinstance(v, list) and all(_type_ok("float", x) for x in v)
    return False


def _describe(kind: str) -> str:
    return {"str": "a string", "path": "a file path", "bool": "true or false",
            "int": "an integer", "float": "a number", "table": "a table",
            "intlist": "a list of integers", "floatlist": "a list of numbers"}[kind]


def _check_keys(block: dict, schema: dict, prefix: str, out: list) -> dict:
    """Report unknown or mistyped keys; returns the block without them."""
    kept = {}
    for k, v in block.items():
        if k not in schema:
            out.append(f"{prefix}.{k}: unknown key")
        elif not _type_ok(schema[k], v):
            out.append(f"{prefix}.{k}: expected {_describe(schema[k])}, got {v!r}")
        else:
            kept[k] = v
    return kept


def _range(out, name, v, ok, allowed):
    if v is not None and not ok(v):
        out.append(f"{name}: {v!r} outside allowed range {allowed}")


def _check_process(pr: dict, base_dir: Path, out: list) -> None:
    if pr["kind"] not in ("gauss-markov", "user-tabulated"):
        out.append(f"process.kind: {pr['kind']!r} not one of gauss-markov, user-tabulated")
    elif pr["kind"] == "gauss-markov":
        for k in ("sigma2", "eta", "T0"):
            _range(out, f"process.{k}", pr.get(k), lambda v: v > 0 and math.isfinite(v), "(0, inf)")
    else:
        path = pr.get("kernel_csv")
        if path is None:
            out.append("process.kernel_csv: required for user-tabulated kernels")
        elif not (base_dir / path).is_file():
            out.append(f"process.kernel_csv: file {path!r} does not exist")
        for k in ("sigma2", "eta", "T0"):
            if k in pr:
                out.append(f"process.{k}: not used for user-tabulated kernels")
        ca = pr.get("class_a")
        if ca is None:
            out.append("process.class_a: required for user-tabulated kernels")
        else:
            ca = _check_keys(ca, CLASS_A_KEYS, "process.class_a", out)
            for k in REQUIRED_CLASS_A:
                if k not in ca:
                    out.append(f"process.class_a.{k}: missing")
            _range(out, "process.class_a.x", ca.get("x"), lambda v: v > 1, "(1, inf)")
            _range(out, "process.class_a.alpha", ca.get("alpha"), lambda v: 0.5 < v <= 1, "(0.5, 1]")
            _range(out, "process.class_a.d", ca.get("d"), lambda v: v > 0, "(0, inf)")


def _check_power(pw: dict, out: list) -> None:
    if "family" not in pw:
        out.append("power.family: missing")
    elif pw["family"] not in FAMILIES:
        out.append(f"power.family: {pw['family']!r} not one of {', '.join(FAMILIES)}")
    if "value" not in pw:
        out.append("power.value: missing")
    elif pw.get("family") in ("constant", "linear", "near-exponential"):
        _range(out, "power.value", pw["value"], lambda v: v > 0 and math.isfinite(v), "(0, inf)")
    _range(out, "power.epsilon", pw.get("epsilon"), lambda v: 0 < v <= 0.5, "(0, 0.5]")


def validate_dict(cfg: dict, base_dir: Path | None = None) -> list[str]:
    """Every schema violation in ``cfg`` as a human-readable line."""
    out: list[str] = []
    base_dir = Path(base_dir or ".")
    for block in cfg:
        if block not in SCHEMA:
            out.append(f"{block}: unknown block")
        elif not isinstance(cfg[block], dict):
            out.append(f"{block}: expected a table")
    for block in ("process", "power"):
        if block not in cfg:
            out.append(f"{block}: missing block")
    # range checks run on the well-typed part so that every problem is listed
    clean = {b: _check_keys(cfg[b], schema, b, out)
             for b, schema in SCHEMA.items() if isinstance(cfg.get(b), dict)}
    r = resolve_defaults(clean)
    if "process" in clean:
        _check_process(r["process"], base_dir, out)
    if "power" in clean:
        _check_power(r["power"], out)
    g = r["gains"]
    if g["model"] not in GAIN_MODELS:
        out.append(f"gains.model: {g['model']!r} not one of {', '.join(GAIN_MODELS)}")
    _range(out, "gains.h_lower", g["h_lower"], lambda v: 0 < v <= 1, "(0, 1]")
    _range(out, "gains.h_upper", g["h_upper"], lambda v: 0 < v <= 1, "(0, 1]")
    if g["h_lower"] > g["h_upper"]:
        out.append(f"gains.h_lower: {g['h_lower']} exceeds gains.h_upper {g['h_upper']}")
    _range(out, "gains.h_value", g.get("h_value"),
           lambda v: g["h_lower"] <= v <= g["h_upper"], "[h_lower, h_upper]")
    _range(out, "gains.seed", g["seed"], lambda v: 0 <= v < U64, "[0, 2^64)")
    if g["model"] == "table":
        if "csv" not in g:
            out.append("gains.csv: required for the table gain model")
        elif not (base_dir / g["csv"]).is_file():
            out.append(f"gains.csv: file {g['csv']!r} does not exist")
    sw = r["sweep"]
    if not sw["N"]:
        out.append("sweep.N: must be a nonempty list")
    for n in sw["N"]:
        if n < 2:
            out.append(f"sweep.N: {n} outside allowed range [2, inf)")
    _range(out, "sweep.workers", sw["workers"], lambda v: v >= 1, "[1, inf)")
    if g["model"] == "table" and len(set(sw["N"])) > 1:
        out.append("sweep.N: a gain table fixes N; give exactly one N")
    mc = r["mc"]
    _range(out, "mc.trials", mc["trials"], lambda v: v >= 100, "[100, inf)")
    _range(out, "mc.af_trials", mc["af_trials"], lambda v: v >= 100, "[100, inf)")
    _range(out, "mc.sigma_D2", mc.get("sigma_D2"), lambda v: v > 0, "(0, inf)")
    _range(out, "mc.seed", mc["seed"], lambda v: 0 <= v < U64, "[0, 2^64)")
    _range(out, "mc.quad_per_gap", mc["quad_per_gap"], lambda v: v >= 1, "[1, inf)")
    _range(out, "mc.max_N", mc["max_N"], lambda v: v >= 2, "[2, inf)")
    nm = r["numerics"]
    _range(out, "numerics.kappa", nm["kappa"], lambda v: 0 < v < 1, "(0, 1)")
    _range(out, "numerics.K_max", nm.get("K_max"), lambda v: v >= 1, "[1, inf)")
    _range(out, "numerics.quad_panels", nm["quad_panels"], lambda v: v >= 1, "[1, inf)")
    _range(out, "numerics.exact_max_N", nm["exact_max_N"], lambda v: 2 <= v <= 4000, "[2, 4000]")
    _range(out, "numerics.lipschitz_grid", nm["lipschitz_grid"], lambda v: v >= 100, "[100, inf)")
    _range(out, "numerics.rate_rtol", nm["rate_rtol"], lambda v: 0 < v <= 1e-3, "(0, 1e-3]")
    _range(out, "numerics.n_ref", nm["n_ref"], lambda v: 100 <= v <= 8000, "[100, 8000]")
    return out


def resolve_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for block, vals in cfg.items():
        if isinstance(vals, dict):
            out.setdefault(block, {}).update(copy.deepcopy(vals))
    if out["process"].get("kind") == "user-tabulated":
        # the table fixes T0; sigma2 and eta do not apply
        for k in ("sigma2", "eta", "T0"):
            if k not in cfg.get("process", {}):
                out["process"].pop(k, None)
    return {b: out[b] for b in SCHEMA if b in out}


def parse_override(text: str) -> tuple[list[str], object]:
    """``block.key=value`` with a TOML literal value (bare words become strings)."""
    if "=" not in text:
        raise ConfigError(f"--set {text!r}: expected key=value")
    key, raw = text.split("=", 1)
    parts = [p.strip() for p in key.strip().split(".")]
    if len(parts) < 2 or not all(parts):
        raise ConfigError(f"--set {text!r}: key must be block.field")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return parts, value


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for text in overrides or ():
        parts, value = parse_override(text)
        node = cfg
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"--set {text!r}: {p} is not a block")
            node = nxt
        node[parts[-1]] = value
    return cfg


def apply_seed(cfg: dict, seed: int | None) -> dict:
    if seed is None:
        return cfg
    if not 0 <= seed < U64:
        raise ConfigError(f"--seed: {seed} outside allowed range [0, 2^64)")
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("gains", {})["seed"] = int(seed)
    cfg.setdefault("mc", {})["seed"] = int(seed)
    return cfg


def load_scenario(path, overrides=(), seed: int | None = None) -> tuple[dict, Path]:
    """Read, override and validate a scenario; returns (resolved dict, base dir)."""
    path = Path(path)
    cfg = apply_seed(apply_overrides(load_toml(path), overrides), seed)
    base = path.resolve().parent
    diags = validate_dict(cfg, base)
    if diags:
        raise ConfigError(f"{path}: {len(diags)} problem(s): " + "; ".join(diags), diags)
    resolved = resolve_defaults(cfg)
    for block, key in (("process", "kernel_csv"), ("gains", "csv")):
        if key in resolved[block]:
            resolved[block][key] = str((base / resolved[block][key]).resolve())
    return resolved, base


def validate(config_path) -> list[str]:
    """Schema diagnostics for a scenario file, without computing anything."""
    path = Path(config_path)
    try:
        cfg = load_toml(path)
    except ConfigError as exc:
        return [str(exc)]
    return validate_dict(cfg, path.resolve().parent)


def dumps(resolved: dict) -> str:
    return tomli_w.dumps(resolved)
