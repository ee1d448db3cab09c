"""Command-line front end: ``gsnbounds --config scenario.toml --out DIR``.

Writes ``sweep.csv``, ``report.txt`` and ``scenario.resolved`` into DIR.
Exit status: 0 on success, 2 on configuration errors, 3 on numerical errors.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds as bd
from . import channel as ch
from .config import apply_overrides, apply_seed, dumps, load_scenario, load_toml, validate_dict
from .errors import ConfigError, GsnError
from .mc import simulate_af_sinr
from .process import (
    class_a_params,
    gauss_markov,
    gm_class_a_params,
    load_kernel_csv,
    mean_energy,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# Largest N at which the report audits the relay rate and bound ordering per row.
AF_AUDIT_MAX_N = 2000


def build_model(cfg: dict):
    pr = cfg["process"]
    if pr["kind"] == "gauss-markov":
        return gauss_markov(pr["sigma2"], pr["eta"], pr["T0"])
    return load_kernel_csv(pr["kernel_csv"])


def build_params(cfg: dict, model):
    pr = cfg["process"]
    if pr["kind"] == "gauss-markov":
        return gm_class_a_params(pr["sigma2"], pr["eta"], pr["T0"], cfg["numerics"]["n_ref"])
    ca = dict(pr["class_a"])
    n_ref = ca.pop("n_ref", 2000)
    return class_a_params(model, n_ref=n_ref, **ca)


def build_scenario(cfg: dict) -> ch.ChannelScenario:
    pw, g = cfg["power"], cfg["gains"]
    schedule = ch.PowerSchedule(pw["family"], float(pw["value"]))
    table = ch.read_gains_csv(g["csv"]) if g["model"] == "table" else None
    return ch.ChannelScenario(schedule, g["h_lower"], g["h_upper"], g["model"],
                              g.get("h_value"), g["seed"], table)


def _settings(cfg: dict) -> tuple[bd.SweepSettings, bd.McOptions]:
    nm, mc = cfg["numerics"], cfg["mc"]
    settings = bd.SweepSettings(
        epsilon=cfg["power"].get("epsilon"), kappa=nm["kappa"], quad_panels=nm["quad_panels"],
        exact_max_N=nm["exact_max_N"], K_max=nm.get("K_max"),
        lipschitz_grid=nm["lipschitz_grid"], workers=cfg["sweep"]["workers"],
        rate_rtol=nm["rate_rtol"])
    mco = bd.McOptions(enabled=mc["enabled"], trials=mc["trials"], sigma_D2=mc.get("sigma_D2"),
                       seed=mc["seed"], quad_per_gap=mc["quad_per_gap"], max_N=mc["max_N"])
    return settings, mco


def _g(v: float) -> str:
    return "NA" if not math.isfinite(v) else f"{v:.6g}"


def _check(lines: list, name: str, results: list[bool]) -> None:
    if not results:
        lines.append(f"  {name}: not applicable")
        return
    n_ok = sum(results)
    status = "pass" if n_ok == len(results) else "FAIL"
    lines.append(f"  {name}: {status} ({n_ok}/{len(results)})")


def build_report(cfg, model, params, scenario, rows, settings, mc) -> str:
    sched = scenario.power
    regime = ch.classify_power_regime(sched, params, settings.epsilon)
    energy = mean_energy(model)
    L = ["gsnbounds report", ""]
    pr = cfg["process"]
    if pr["kind"] == "gauss-markov":
        L.append(f"process: gauss-markov sigma2={pr['sigma2']:g} eta={pr['eta']:g} T0={pr['T0']:g}")
    else:
        L.append(f"process: user-tabulated ({Path(pr['kernel_csv']).name}), T0={model.T0:g}")
    L.append(f"class-A: x={params.x:g} d={params.d:.6g} c_l={params.c_l} c_u={params.c_u} "
             f"K0={params.K0} alpha={params.alpha:g} beta={params.beta:g} "
             f"gamma={params.gamma:g} tau={params.tau:g}")
    L.append(f"mean energy: {energy:.6g}")
    L.append(f"power: {sched.family}({sched.value:g})")
    L.append(f"regime: {regime}")
    kappa = settings.kappa
    try:
        scaling = ch.c_a_scaling(sched, settings.epsilon, kappa)
        nu = scaling.nu
        L.append(f"epsilon: {scaling.epsilon:g}  nu: {nu:g}  kappa: {kappa:g}")
        L.append(f"constant ratio pi(x, nu): {bd.constant_ratio(params.x, nu):.6g}")
        L.append(f"lower-bound constant on (log NP)^(1-x): kappa={kappa:g}: "
                 f"{bd.dl_limit_const(params, kappa):.6g}  limit kappa->1: "
                 f"{bd.dl_limit_const(params, 1.0):.6g}")
        L.append(f"upper-bound constant on (log NP)^(1-x): kappa={kappa:g}: "
                 f"{bd.du_limit_const(params, kappa, nu):.6g}  limit kappa->1: "
                 f"{bd.du_limit_const(params, 1.0, nu):.6g}")
    except ch.RegimeError as exc:
        L.append(f"achievable sum rate: none ({exc})")
    if regime == "very-small":
        L.append("distortion is Theta(1): the trivial estimate S = 0 is order-optimal")
    elif regime == "small":
        L.append("bounds do not meet in this regime; the sweep reports the gap")
    elif regime == "large":
        L.append("upper bound not available in this regime (D_u = NA)")
    L.append("")
    lnp = [sched.log_np(r.N) for r in rows]
    L.append("scaling fits (slope of log D vs log log NP; the rate law predicts "
             f"{-(params.x - 1):g}):")
    L.append(f"  D_l: {_g(bd.scaling_slope(rows, 'D_l', lnp))}")
    L.append(f"  D_u: {_g(bd.scaling_slope(rows, 'D_u', lnp))}")
    L.append("")
    L.append("invariant checks:")
    medium = [r for r in rows if r.regime == "medium" and math.isfinite(r.D_u)]
    _check(L, "D_l <= D_u + error bars (medium rows)",
           [r.D_l <= r.D_u + r.D_u_err + r.D_l_err for r in medium])
    _check(L, "0 <= D_l <= mean energy", [0 <= r.D_l <= energy + r.D_l_err for r in rows])
    _check(L, "0 <= D_u <= mean energy",
           [0 <= r.D_u <= energy * (1 + 1e-12) for r in rows if math.isfinite(r.D_u)])
    af = []
    for r in rows:
        if r.N <= AF_AUDIT_MAX_N and math.isfinite(sched.total(r.N)):
            d = ch.af_design(scenario, r.N)
            af.append(ch.af_rate(scenario, d, r.N).rate <= r.C_u)
    _check(L, f"AF rate <= C_u (N <= {AF_AUDIT_MAX_N})", af)
    mc_rows = [r for r in rows if math.isfinite(r.D_mc)]
    matched = [r for r in mc_rows if r.mode == "exact" and mc.sigma_D2 is None]
    _check(L, "Monte Carlo distortion within 3 stderr of D_u (exact rows)",
           [abs(r.D_mc - r.D_u) <= 3 * r.D_mc_err for r in matched])
    _check(L, "Monte Carlo distortion >= D_l - 3 stderr",
           [r.D_mc >= r.D_l - 3 * r.D_mc_err for r in mc_rows])
    if mc.enabled:
        n_af = min(rows[0].N, mc.max_N)
        if n_af >= 2 and math.isfinite(sched.total(n_af)):
            d = ch.af_design(scenario, n_af)
            res = simulate_af_sinr(scenario, d, n_af, cfg["mc"]["af_trials"], seed=mc.seed)
            ok = abs(res.estimate - res.analytic) <= 3 * res.stderr
            L.append(f"  AF Monte Carlo SINR at N={n_af}: {res.estimate:.6g} +- {res.stderr:.3g} "
                     f"vs analytic {res.analytic:.6g}: {'pass' if ok else 'FAIL'}")
    L.append("")
    L.append("row flags:")
    for r in rows:
        L.append(f"  N={r.N}: mode={r.mode} {' '.join(r.flags) if r.flags else '-'}")
    return "\n".join(L) + "\n"


def run(config_path, out_dir, overrides=(), seed=None) -> int:
    """Run a scenario; writes all artifacts only after everything succeeded."""
    try:
        cfg, _ = load_scenario(config_path, overrides, seed)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        model = build_model(cfg)
        params = build_params(cfg, model)
        scenario = build_scenario(cfg)
        settings, mco = _settings(cfg)
        rows = bd.sweep(model, params, scenario, cfg["sweep"]["N"], mco, settings)
        csv_text = bd.rows_to_csv(rows)
        report = build_report(cfg, model, params, scenario, rows, settings, mco)
        resolved = dumps(cfg)
    except (GsnError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in (("sweep.csv", csv_text), ("report.txt", report),
                           ("scenario.resolved", resolved)):
            tmp = out / (name + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            tmp.replace(out / name)
    except OSError as exc:
        print(f"cannot write outputs to {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gsnbounds",
        description="Distortion bounds and Monte Carlo checks for dense Gaussian sensor networks.")
    p.add_argument("--config", required=True, metavar="PATH", help="scenario file (TOML)")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario field, e.g. --set power.value=2 (repeatable)")
    p.add_argument("--seed", type=_u64, metavar="U64", help="seed for random gains and Monte Carlo")
    p.add_argument("--validate", action="store_true", help="check the scenario and exit")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.validate:
        try:
            cfg = apply_seed(apply_overrides(load_toml(args.config), args.overrides), args.seed)
            diags = validate_dict(cfg, Path(args.config).resolve().parent)
        except ConfigError as exc:
            diags = exc.diagnostics
        for d in diags:
            print(d)
        if not diags:
            print("ok")
        return EXIT_CONFIG if diags else EXIT_OK
    return run(args.config, args.out, args.overrides, args.seed)


if __name__ == "__main__":
    sys.exit(main())
