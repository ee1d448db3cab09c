"""Lower and upper distortion bounds, the constant ratio, and N-sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from .errors import RegimeError, WindowError
from .process import ClassAParams, KernelModel, lipschitz_audit, mean_energy
from .rd import DistortionEstimate, dp_of_rate, q_poly
from .sampled import (
    build_sampled_covariance,
    d_a_of_rate,
    distortion_b,
    grid_error_bounds,
    theta_for_rate,
    theta_window,
)

CSV_HEADER = ("N", "P", "C_u", "C_a", "D_l", "D_u", "D_u_err", "D_mc", "D_mc_err",
              "regime", "theta_prime", "mode")

MODES = ("exact", "surrogate", "trivial", "unavailable")

# Largest N for which the sampled covariance is built and diagonalised.
EXACT_MAX_N = 4000


@dataclass(frozen=True)
class UpperBound:
    value: float
    err: float
    theta_prime: float
    mode: str
    C_a: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class BoundRow:
    N: int
    P: float
    C_u: float
    C_a: float
    D_l: float
    D_l_err: float
    D_u: float
    D_u_err: float
    D_mc: float
    D_mc_err: float
    regime: str
    theta_prime: float
    mode: str
    flags: tuple[str, ...] = ()

    def csv_fields(self) -> list[str]:
        return [str(self.N), _fmt(self.P), _fmt(self.C_u), _fmt(self.C_a), _fmt(self.D_l),
                _fmt(self.D_u), _fmt(self.D_u_err), _fmt(self.D_mc), _fmt(self.D_mc_err),
                self.regime, _fmt(self.theta_prime), self.mode]


@dataclass(frozen=True)
class McOptions:
    """Monte Carlo settings for sweeps.

    ``sigma_D2=None`` simulates the test channel matched to each row's
    upper-bound level theta'; rows with N above ``max_N`` are skipped.
    """

    enabled: bool = False
    trials: int = 10000
    sigma_D2: float | None = None
    seed: int = 0
    quad_per_gap: int = 20
    max_N: int = 200


@dataclass(frozen=True)
class SweepSettings:
    epsilon: float | None = None
    kappa: float = 0.99
    quad_panels: int = 8
    exact_max_N: int = EXACT_MAX_N
    K_max: int | None = None
    lipschitz_grid: int = 10000
    workers: int = 1
    rate_rtol: float = 1e-9


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return repr(float(v))


def constant_ratio(x: float, nu: float) -> float:
    """(2 nu)^(x-1) ((x^2 - x) / (x^2 - (1 - log 2) x + (1 - log 2)))^(x-1)."""
    if not x > 1:
        raise ValueError("x must exceed 1")
    if not 0 < nu <= 0.25:
        raise ValueError("nu must lie in (0, 1/4]")
    return (2 * nu) ** (x - 1) * ((x * x - x) / q_poly(x)) ** (x - 1)


def du_limit_const(params: ClassAParams, kappa: float, nu: float) -> float:
    """Coefficient of (log NP)^(1-x) in the upper bound on D_u."""
    x = params.x
    return (params.d * (1 + kappa**2 * (x - 1)) * q_poly(x) ** (x - 1)
            / (params.T0 * kappa ** (3 * x + 1) * 2 ** (x - 1) * (x - 1) ** x * nu ** (x - 1)))


def dl_limit_const(params: ClassAParams, kappa: float) -> float:
    """Coefficient of (log NP)^(1-x) in the lower bound on D_l (C_u ~ log(NP)/2)."""
    x = params.x
    c = kappa * (1 + kappa / (x - 1)) * (kappa * x / 2) ** (x - 1) * params.d / params.T0
    return c * 2 ** (x - 1)


def lower_distortion(params: ClassAParams, scenario: ch.ChannelScenario, N: int,
                     K_max: int | None = None) -> DistortionEstimate:
    """D_l = D_p(C_u(N))."""
    return dp_of_rate(params, ch.c_upper(scenario, N).value, K_max)


def _surrogate(params, model, Ca, N, lip_B):
    lam = params.reference_eigenvalues(N)
    theta = theta_for_rate(lam, Ca)
    T0 = model.T0
    db = distortion_b(lam, theta, T0)
    k = np.arange(params.spectrum_estimate.size, N)
    if k.size:
        lo = distortion_b(params.lambda_lo(k), theta, T0)
        hi = distortion_b(params.lambda_hi(k), theta, T0)
        err = 0.5 * (hi - lo)
    else:
        err = 0.0
    g = grid_error_bounds(lip_B, params.alpha, N, T0)
    return db + 2 * g.a_term + g.b_term, err, theta


def upper_distortion(model: KernelModel, params: ClassAParams, scenario: ch.ChannelScenario,
                     N: int, quad_panels: int = 8, *, epsilon: float | None = None,
                     kappa: float = 0.99, exact_max_N: int = EXACT_MAX_N,
                     lipschitz_B: float | None = None) -> UpperBound:
    """D_u = D_a(C_a(N)) in the medium regime.

    Exact mode diagonalises Sigma'_N (N <= exact_max_N). Surrogate mode uses
    the reference spectrum in place of the sampled one and adds the analytic
    grid-error bounds 2|A| + B with Lipschitz constant ``lipschitz_B``
    (audited when omitted). Small and very-small power give the trivial
    estimate S = 0 (mode "trivial"); large power gives NaN ("unavailable").
    """
    regime = ch.classify_power_regime(scenario.power, params, epsilon)
    energy = mean_energy(model)
    try:
        scaling = ch.c_a_scaling(scenario.power, epsilon, kappa)
        Ca = scaling(N)
    except RegimeError:
        scaling, Ca = None, math.nan
    if regime in ("small", "very-small"):
        return UpperBound(energy, 0.0, math.nan, "trivial", Ca, ("constant-distortion",))
    if regime == "large":
        return UpperBound(math.nan, math.nan, math.nan, "unavailable", Ca, ("large-power",))
    flags = []
    if not Ca > 0:
        return UpperBound(energy, 0.0, math.nan, "trivial", Ca, ("nonpositive-rate",))
    if N <= exact_max_N:
        cov = build_sampled_covariance(model, N)
        value, theta = d_a_of_rate(model, cov, Ca, quad_panels)
        err, mode = 0.0, "exact"
    else:
        if lipschitz_B is None:
            lipschitz_B = lipschitz_audit(model).constant_at(params.alpha)
        value, err, theta = _surrogate(params, model, Ca, N, lipschitz_B)
        mode = "surrogate"
    if value > energy:
        value = energy
        flags.append("capped-at-energy")
    try:
        win = theta_window(params, N, Ca, log_np=scenario.power.log_np(N), nu=scaling.nu,
                           kappa=kappa)
        if not win.contains(theta):
            flags.append("theta-outside-window")
        if not win.target_ok:
            flags.append("rate-outside-interval")
    except WindowError:
        flags.append("window-empty")
    return UpperBound(float(value), float(err), float(theta), mode, Ca, tuple(flags))


def _row(model, params, scenario, N, settings: SweepSettings, mc: McOptions | None,
         lipschitz_B) -> BoundRow:
    from .mc import simulate_separation_scheme

    regime = ch.classify_power_regime(scenario.power, params, settings.epsilon)
    cu = ch.c_upper(scenario, N).value
    dl = dp_of_rate(params, cu, settings.K_max, settings.rate_rtol)
    up = upper_distortion(model, params, scenario, N, settings.quad_panels,
                          epsilon=settings.epsilon, kappa=settings.kappa,
                          exact_max_N=settings.exact_max_N, lipschitz_B=lipschitz_B)
    flags = list(up.flags)
    if regime == "very-small":
        flags.append("D_l=Theta(1)")
    d_mc = d_mc_err = math.nan
    if mc is not None and mc.enabled and N <= mc.max_N and N >= 2:
        s2 = mc.sigma_D2
        if s2 is None and math.isfinite(up.theta_prime):
            s2 = up.theta_prime * (N - 1) / model.T0
        if s2 is not None:
            res = simulate_separation_scheme(model, N, s2, mc.trials,
                                             quad_grid=max(100, mc.quad_per_gap * (N - 1)),
                                             seed=(mc.seed, N))
            d_mc, d_mc_err = res.estimate, res.stderr
    return BoundRow(int(N), scenario.power.total(N), cu, up.C_a, dl.value, dl.err,
                    up.value, up.err, d_mc, d_mc_err, regime, up.theta_prime, up.mode,
                    tuple(flags))


def sweep(model: KernelModel, params: ClassAParams, scenario: ch.ChannelScenario, N_list,
          mc_options: McOptions | None = None,
          settings: SweepSettings | None = None) -> list[BoundRow]:
    """One :class:`BoundRow` per N, sorted by N."""
    Ns = sorted({int(n) for n in N_list})
    if not Ns:
        raise ValueError("N_list must be nonempty")
    settings = settings or SweepSettings()
    lip_B = None
    if any(n > settings.exact_max_N for n in Ns):
        lip_B = lipschitz_audit(model, settings.lipschitz_grid).constant_at(params.alpha)

    def one(n):
        return _row(model, params, scenario, n, settings, mc_options, lip_B)

    if settings.workers > 1:
        with ThreadPoolExecutor(settings.workers) as pool:
            rows = list(pool.map(one, Ns))
    else:
        rows = [one(n) for n in Ns]
    return rows


def rows_to_csv(rows) -> str:
    lines = [",".join(CSV_HEADER)]
    lines += [",".join(r.csv_fields()) for r in rows]
    return "\n".join(lines) + "\n"


def scaling_slope(rows, column: str = "D_l", log_np=None) -> float:
    """Slope of log(column) against log(log(N P(N))) over finite positive rows."""
    xs, ys = [], []
    for r, lnp in zip(rows, log_np):
        v = getattr(r, column)
        if math.isfinite(v) and v > 0 and lnp > 1:
            xs.append(math.log(lnp))
            ys.append(math.log(v))
    if len(xs) < 2:
        return math.nan
    return float(np.polyfit(xs, ys, 1)[0])
