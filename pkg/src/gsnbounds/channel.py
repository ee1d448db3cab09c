"""Channel side: gains, power schedules, capacity bound, amplify-and-forward
relaying and power-regime classification.

Noise is unit variance everywhere. Node indices are 1-based in CSV files and
0-based in arrays; index 0 in the ``j`` column of a gains file is the
collector.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClassificationError, DomainError, InvariantError, ModelError, RegimeError
from .process import ClassAParams

FAMILIES = ("constant", "linear", "power-law", "near-exponential")
REGIMES = ("very-small", "small", "medium", "large")
GAIN_MODELS = ("constant", "uniform", "table")

_AUDIT_RTOL = 1e-12


@dataclass(frozen=True)
class PowerSchedule:
    """Total power P(N) from a symbolic family.

    constant: P = value; linear: P = N * value; power-law: P = N^-value;
    near-exponential: P = exp(N^value) / N.
    """

    family: str
    value: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ClassificationError(
                f"unknown power schedule family {self.family!r}; expected one of {FAMILIES}")
        if not math.isfinite(self.value):
            raise DomainError("power schedule value must be finite")
        if self.family in ("constant", "linear") and not self.value > 0:
            raise DomainError(f"{self.family} power must be positive, got {self.value}")
        if self.family == "near-exponential" and not self.value > 0:
            raise DomainError("near-exponential exponent c must be positive")

    def log_total(self, N) -> float:
        """log P(N), finite even when P(N) overflows."""
        N = float(N)
        if self.family == "constant":
            return math.log(self.value)
        if self.family == "linear":
            return math.log(N) + math.log(self.value)
        if self.family == "power-law":
            return -self.value * math.log(N)
        return N**self.value - math.log(N)

    def total(self, N) -> float:
        lt = self.log_total(N)
        return math.exp(lt) if lt < 709 else math.inf

    def log_np(self, N) -> float:
        return math.log(float(N)) + self.log_total(N)

    def per_node(self, N) -> float:
        return math.exp(self.log_total(N) - math.log(float(N)))

    def default_epsilon(self) -> float:
        """Supremum of the admissible epsilon (1/2 for non-vanishing schedules)."""
        if self.family == "power-law":
            return 0.5 - self.value
        return 0.5


@dataclass(frozen=True, eq=False)
class GainRealization:
    """Gains at a fixed N: ``to_collector[i] = h_{i0}``, ``relay_row(i)[j] = h_{ij}``."""

    N: int
    to_collector: np.ndarray = field(repr=False)
    _rows: object = field(repr=False)

    def relay_row(self, i: int) -> np.ndarray:
        row = np.array(self._rows(i), dtype=float)
        row[i] = 0.0
        return row

    def relay_matrix(self) -> np.ndarray:
        return np.array([self.relay_row(i) for i in range(self.N)])


@dataclass(frozen=True, eq=False)
class ChannelScenario:
    """Gain bounds, gain model and power schedule.

    ``gain_model`` is ``constant`` (every gain equals ``h_value``, default
    ``h_upper``), ``uniform`` (i.i.d. uniform on ``[h_lower, h_upper]`` drawn
    from ``seed``) or ``table`` (explicit gains at one N, see
    :func:`read_gains_csv`).
    """

    power: PowerSchedule
    h_lower: float = 1.0
    h_upper: float = 1.0
    gain_model: str = "constant"
    h_value: float | None = None
    seed: int = 0
    table: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (0 < self.h_lower <= self.h_upper <= 1):
            raise DomainError(
                f"need 0 < h_lower <= h_upper <= 1, got [{self.h_lower}, {self.h_upper}]")
        if self.gain_model not in GAIN_MODELS:
            raise ModelError(f"unknown gain model {self.gain_model!r}")
        if self.gain_model == "constant":
            h = self.h_upper if self.h_value is None else self.h_value
            if not (self.h_lower <= h <= self.h_upper):
                raise DomainError(f"constant gain {h} outside [h_lower, h_upper]")
        if self.gain_model == "table":
            if self.table is None:
                raise ModelError("table gain model needs explicit gains")
            to_c, rel = self.table
            gains = np.concatenate([np.ravel(to_c), _offdiag(rel)])
            tol = 1e-12
            if np.any(gains < self.h_lower - tol) or np.any(gains > self.h_upper + tol):
                raise DomainError("tabulated gains outside [h_lower, h_upper]")

    def gains(self, N: int) -> GainRealization:
        N = int(N)
        if N < 1:
            raise DomainError("N must be at least 1")
        if self.gain_model == "constant":
            h = self.h_upper if self.h_value is None else float(self.h_value)
            return GainRealization(N, np.full(N, h), lambda i: np.full(N, h))
        if self.gain_model == "uniform":
            lo, hi = self.h_lower, self.h_upper
            rng = np.random.default_rng([self.seed, N, 0])
            to_c = rng.uniform(lo, hi, N)
            seed = self.seed

            def rows(i):
                return np.random.default_rng([seed, N, 1, i]).uniform(lo, hi, N)

            return GainRealization(N, to_c, rows)
        to_c, rel = self.table
        if len(to_c) != N:
            raise DomainError(f"gain table is for N={len(to_c)}, not N={N}")
        rel = np.asarray(rel, dtype=float)
        return GainRealization(N, np.asarray(to_c, dtype=float), lambda i: rel[i])


def _offdiag(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return m[~np.eye(m.shape[0], dtype=bool)]


def write_gains_csv(realization: GainRealization, path, seed: int | None = None) -> None:
    """Rows ``i,j,h``; j = 0 is the collector, nodes are 1-based."""
    with Path(path).open("w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["i", "j", "h"])
        for i in range(realization.N):
            w.writerow([i + 1, 0, repr(float(realization.to_collector[i]))])
            row = realization.relay_row(i)
            for j in range(realization.N):
                if j != i:
                    w.writerow([i + 1, j + 1, repr(float(row[j]))])


def read_gains_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``i,j,h`` gains; returns (to_collector, relay matrix)."""
    path = Path(path)
    entries = []
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader, [])]
    if header != ["i", "j", "h"]:
        raise ModelError(f"{path}: expected header i,j,h")
    for n, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            entries.append((int(row[0]), int(row[1]), float(row[2])))
        except (ValueError, IndexError):
            raise ModelError(f"{path}: malformed row {n}: {row}") from None
    if not entries:
        raise ModelError(f"{path}: no gains")
    N = max(max(i, j) for i, j, _ in entries)
    to_c = np.full(N, np.nan)
    rel = np.full((N, N), np.nan)
    np.fill_diagonal(rel, 0.0)
    for i, j, h in entries:
        if i < 1 or j < 0 or i == j:
            raise ModelError(f"{path}: invalid pair ({i}, {j})")
        if j == 0:
            to_c[i - 1] = h
        else:
            rel[i - 1, j - 1] = h
    if np.isnan(to_c).any() or np.isnan(rel).any():
        raise ModelError(f"{path}: incomplete gain table for N={N}")
    return to_c, rel


# --------------------------------------------------------------------------
# capacity bound


@dataclass(frozen=True)
class CapacityBound:
    value: float
    bracket: tuple[float, float]


def _half_log1p_exp(log_x: float) -> float:
    return 0.5 * float(np.logaddexp(0.0, log_x))


def c_upper(scenario: ChannelScenario, N: int) -> CapacityBound:
    """Point-to-point bound 1/2 log(1 + sum_i h_i0^2 P(N)) and its gain bracket."""
    g = scenario.gains(N)
    lp = scenario.power.log_total(N)
    s = float(np.sum(g.to_collector**2))
    value = _half_log1p_exp(math.log(s) + lp)
    lo = _half_log1p_exp(2 * math.log(scenario.h_lower) + math.log(N) + lp)
    hi = _half_log1p_exp(2 * math.log(scenario.h_upper) + math.log(N) + lp)
    tol = 1e-12 * max(1.0, hi)
    if not (lo - tol <= value <= hi + tol):
        raise InvariantError(f"C_u={value} outside its gain bracket [{lo}, {hi}]")
    return CapacityBound(value, (lo, hi))


# --------------------------------------------------------------------------
# amplify-and-forward


@dataclass(frozen=True, eq=False)
class AfDesign:
    """Relay scaling: beta_ij = zeta h_ij h_j0 for relay j forwarding node i."""

    N: int
    zeta: float
    P: float
    gains: GainRealization = field(repr=False)
    feasible: bool = True
    margin: float = 0.0

    def beta_row(self, i: int) -> np.ndarray:
        return self.zeta * self.gains.relay_row(i) * self.gains.to_collector

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.beta_row(i) for i in range(self.N)])


def af_design(scenario: ChannelScenario, N: int, full_audit_max: int = 2000) -> AfDesign:
    """zeta^2 = P / (h_u^6 N P + h_u^4 N) and the per-relay power audit.

    Every pair is audited for ``N <= full_audit_max``; above that the audit
    uses the largest collector gain and h_u for the relay gains, which bounds
    every pair.
    """
    if N < 2:
        raise DomainError("N must be at least 2")
    P = scenario.power.total(N)
    if not math.isfinite(P):
        raise DomainError(f"P(N) overflows at N={N}")
    hu = scenario.h_upper
    zeta = math.sqrt(P / (hu**6 * N * P + hu**4 * N))
    g = scenario.gains(N)
    budget = P / N
    if N <= full_audit_max:
        worst = 0.0
        for i in range(N):
            hij = g.relay_row(i)
            b = zeta * hij * g.to_collector
            use = b**2 * (hij**2 * P + 1)
            use[i] = 0.0
            worst = max(worst, float(use.max()))
    else:
        # relay gains are bounded by h_u; collector gains are realised
        hc = float(g.to_collector.max())
        worst = zeta**2 * hu**2 * hc**2 * (hu**2 * P + 1)
    margin = (budget - worst) / budget
    if margin < -_AUDIT_RTOL:
        raise InvariantError(f"AF design exceeds the per-node power ({worst} > {budget})")
    return AfDesign(int(N), zeta, P, g, True, max(margin, 0.0))


@dataclass(frozen=True)
class AfRate:
    rate: float
    sinr: float
    bound: float
    beamforming_gain: float
    noise_power: float


def af_components(design: AfDesign, node: int) -> tuple[float, np.ndarray, float]:
    """(signal coefficient sum_j beta_ij h_ij h_j0, noise weights beta_ij h_j0, P)."""
    g = design.gains
    hij = g.relay_row(node)
    w = design.beta_row(node) * g.to_collector
    w[node] = 0.0
    coef = float(np.sum(w * hij))
    return coef, w, design.P


def c_b_bound(scenario: ChannelScenario, N: int) -> float:
    """1/4 log(1 + h_l^8 P^2 (N-1)^2 / N / (2 h_u^6 P + h_u^4))."""
    P = scenario.power.total(N)
    hl, hu = scenario.h_lower, scenario.h_upper
    return 0.25 * math.log1p(hl**8 * P**2 * (N - 1) ** 2 / N / (2 * hu**6 * P + hu**4))


def af_rate(scenario: ChannelScenario, design: AfDesign, N: int, node: int = 0) -> AfRate:
    """Exact per-node two-slot relaying rate and its closed-form lower bound."""
    if not 0 <= node < N:
        raise DomainError(f"node index {node} outside [0, {N})")
    coef, w, P = af_components(design, node)
    noise = float(np.sum(w**2)) + 1.0
    gain = coef**2 * P
    sinr = gain / noise
    rate = 0.25 * math.log1p(sinr)
    bound = c_b_bound(scenario, N)
    if rate < bound * (1 - 1e-12) - 1e-15:
        raise InvariantError(f"AF rate {rate} below its lower bound {bound}")
    return AfRate(rate, sinr, bound, gain, noise)


# --------------------------------------------------------------------------
# regimes and achievable sum-rate scaling


def large_power_exponent(params: ClassAParams) -> float:
    """min(gamma / (2 tau), (2 alpha - 1) / (2 (x - 1)), beta / (x + tau + 1))."""
    first = math.inf if params.tau == 0 else params.gamma / (2 * params.tau)
    return min(first, (2 * params.alpha - 1) / (2 * (params.x - 1)),
               params.beta / (params.x + params.tau + 1))


def _check_epsilon(epsilon: float) -> None:
    if not (0 < epsilon <= 0.5):
        raise DomainError(f"epsilon must lie in (0, 0.5], got {epsilon}")


def medium_power_holds(schedule: PowerSchedule, epsilon: float) -> bool:
    """Whether P(N) N^(1/2 - epsilon) stays above 1 (limit form)."""
    _check_epsilon(epsilon)
    if schedule.family == "power-law":
        return schedule.value <= 0.5 - epsilon + 1e-12
    return True


def classify_power_regime(schedule: PowerSchedule, params: ClassAParams,
                          epsilon: float | None = None) -> str:
    """very-small, small, medium or large, from the schedule family in closed form."""
    if not isinstance(schedule, PowerSchedule) or schedule.family not in FAMILIES:
        raise ClassificationError(f"unknown power schedule {schedule!r}")
    fam, v = schedule.family, schedule.value
    if fam == "power-law":
        if v >= 1:
            return "very-small"
        if epsilon is None:
            if v >= 0.5:
                return "small"
            return "medium"
        return "medium" if medium_power_holds(schedule, epsilon) else "small"
    if epsilon is not None:
        _check_epsilon(epsilon)
    if fam == "near-exponential" and v >= large_power_exponent(params):
        return "large"
    return "medium"


@dataclass(frozen=True)
class RateScaling:
    """C_a(N) = kappa nu log(N P(N))."""

    nu: float
    kappa: float
    epsilon: float
    schedule: PowerSchedule

    def __call__(self, N) -> float:
        return self.kappa * self.nu * self.schedule.log_np(N)


def nu_of_epsilon(epsilon: float) -> float:
    return min(epsilon / (1 + 2 * epsilon), 0.25)


def c_a_scaling(schedule: PowerSchedule, epsilon: float | None = None,
                kappa: float = 0.99) -> RateScaling:
    """nu = min(epsilon / (1 + 2 epsilon), 1/4) and C_a(N) = kappa nu log(N P(N))."""
    if not 0 < kappa <= 1:
        raise DomainError("kappa must lie in (0, 1]")
    if epsilon is None:
        epsilon = schedule.default_epsilon()
        if epsilon <= 0:
            raise RegimeError(
                f"{schedule.family} schedule N^-{schedule.value} admits no epsilon > 0: "
                "the achievable sum rate approaches a positive constant or zero")
    if not medium_power_holds(schedule, epsilon):
        raise RegimeError(
            f"schedule {schedule.family}({schedule.value}) fails the power condition at "
            f"epsilon={epsilon}: the achievable sum rate approaches a positive constant or zero")
    return RateScaling(nu_of_epsilon(epsilon), float(kappa), float(epsilon), schedule)
