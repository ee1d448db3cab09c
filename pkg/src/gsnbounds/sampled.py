"""Sampled covariance, grid-approximation errors and the achievable
rate-distortion pair of the distributed (test-channel) coding scheme.

Sensors sit at t_i = (i-1) T0 / (N-1), i = 1..N. The scaled covariance is
Sigma'_N = h Sigma_N with h = T0 / (N-1), so its eigenvalues approximate the
Karhunen-Loeve eigenvalues of the process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DomainError, InvariantError, ModelError, RangeError, WindowError
from .process import ClassAParams, KernelModel, kernel_eval
from .rd import q_poly

PSD_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class SampledCovariance:
    """Sigma'_N with its spectrum sorted nonincreasing.

    ``vectors[:, k]`` is the eigenvector of ``mu[k]`` (None when built without
    eigenvectors). ``cache`` memoises Gram matrices per quadrature order.
    """

    N: int
    T0: float
    t: np.ndarray = field(repr=False)
    sigma_prime: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    vectors: np.ndarray | None = field(default=None, repr=False)
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def h(self) -> float:
        return self.T0 / (self.N - 1)


@dataclass(frozen=True)
class GridErrorTerms:
    a_term: float
    b_term: float

    @property
    def a_abs(self) -> float:
        return abs(self.a_term)


@dataclass(frozen=True)
class ThetaWindow:
    """Admissible water levels for the achievable scheme at one N.

    ``rate_interval`` is the interval of rates on which the achievable
    distortion-rate upper bound holds; ``target_ok`` says whether the
    requested rate lies in it (None if no rate was given).
    """

    lower: float
    upper: float
    lower_loose: float
    rate_interval: tuple[float, float]
    target_rate: float | None = None
    target_ok: bool | None = None

    def contains(self, theta: float) -> bool:
        return self.lower <= theta <= self.upper


@dataclass(frozen=True)
class AchievablePoint:
    R_a: float
    D_a_exact: float
    D_b: float
    decomposition_check: bool
    grid_terms: GridErrorTerms | None = None


@dataclass(frozen=True)
class ConvergenceReport:
    """Residuals |mu_k^(N) - lambda_k|; ``residuals[n, k]`` is for ``N_list[n]``."""

    N_list: tuple[int, ...]
    k_max: int
    residuals: np.ndarray = field(repr=False)
    reference: np.ndarray = field(repr=False)
    mu: tuple = field(repr=False)

    @property
    def decreasing(self) -> np.ndarray:
        """Per k, whether residuals strictly decrease as N increases."""
        return np.all(np.diff(self.residuals, axis=0) < 0, axis=0)


def sensor_positions(N: int, T0: float) -> np.ndarray:
    return np.arange(N) * (T0 / (N - 1))


def _clamp_spectrum(mu: np.ndarray) -> np.ndarray:
    top = max(float(np.max(mu)), 0.0)
    if np.any(mu < -PSD_RTOL * max(top, 1e-300)):
        raise ModelError(
            f"sampled covariance is not positive semidefinite (min eigenvalue {mu.min():.3e})")
    return np.maximum(mu, 0.0)


def build_sampled_covariance(model: KernelModel, N: int, vectors: bool = True) -> SampledCovariance:
    """Sigma'_N = (T0/(N-1)) [K(t_i, t_j)] and its eigen-decomposition."""
    if int(N) != N or N < 2:
        raise DomainError(f"N must be an integer >= 2, got {N}")
    N = int(N)
    t = sensor_positions(N, model.T0)
    S = (model.T0 / (N - 1)) * kernel_eval(model, t[:, None], t[None, :])
    S = 0.5 * (S + S.T)
    if vectors:
        w, V = np.linalg.eigh(S)
        w, V = w[::-1], V[:, ::-1]
    else:
        w, V = np.linalg.eigvalsh(S)[::-1], None
    mu = _clamp_spectrum(np.ascontiguousarray(w))
    for a in (t, S, mu):
        a.setflags(write=False)
    if V is not None:
        V = np.ascontiguousarray(V)
        V.setflags(write=False)
    return SampledCovariance(N, float(model.T0), t, S, mu, V)


def cov_trace_identity_gap(model: KernelModel, cov: SampledCovariance) -> float:
    """Relative gap between sum(mu) and h * sum_i K(t_i, t_i)."""
    ref = cov.h * float(np.sum(model.diag(cov.t)))
    return abs(float(np.sum(cov.mu)) - ref) / max(abs(ref), 1e-300)


def eigen_convergence_report(model: KernelModel, params: ClassAParams, N_list,
                             k_max: int) -> ConvergenceReport:
    """Residuals of the sorted sampled eigenvalues against the reference spectrum."""
    N_list = tuple(sorted(int(n) for n in N_list))
    if any(n < 2 * k_max for n in N_list):
        raise DomainError("every N must be at least 2 * k_max")
    ref = params.reference_eigenvalues(k_max + 1)
    mus, res = [], []
    for n in N_list:
        mu = build_sampled_covariance(model, n, vectors=False).mu
        mus.append(mu)
        res.append(np.abs(mu[: k_max + 1] - ref))
    return ConvergenceReport(N_list, int(k_max), np.array(res), ref, tuple(mus))


# --------------------------------------------------------------------------
# quadrature on the sensor intervals


def interval_nodes(N: int, T0: float, panels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes per sensor interval.

    Returns (nodes, weights, left) flattened over intervals, where ``left`` is
    the index of each node's left sensor.
    """
    x, w = np.polynomial.legendre.leggauss(int(panels))
    h = T0 / (N - 1)
    left = np.repeat(np.arange(N - 1), panels)
    nodes = (np.arange(N - 1)[:, None] + 0.5 * (x[None, :] + 1.0)) * h
    weights = np.broadcast_to(0.5 * h * w, (N - 1, panels))
    nodes = np.minimum(nodes.ravel(), T0)
    return nodes, np.ascontiguousarray(weights).ravel(), left


def _rho(model: KernelModel, nodes: np.ndarray, t: np.ndarray) -> np.ndarray:
    """rho_N(t) columns: shape (N, len(nodes))."""
    return kernel_eval(model, t[:, None], nodes[None, :])


def grid_error_terms(model: KernelModel, N: int, quad_panels: int = 10) -> GridErrorTerms:
    """A^(N) (signed) and B^(N) by per-interval Gauss-Legendre quadrature."""
    if N < 2:
        raise DomainError("N must be at least 2")
    if quad_panels < 10:
        raise DomainError("quad_panels must be at least 10")
    T0 = model.T0
    t = sensor_positions(N, T0)
    nodes, w, left = interval_nodes(N, T0, quad_panels)
    tl = t[left]
    diag_now = model.diag(nodes)
    diag_left = model.diag(tl)
    cross = kernel_eval(model, nodes, tl)
    a = (np.sum(w * (diag_now - diag_left)) + 2.0 * np.sum(w * (diag_left - cross))) / T0
    # ||rho(t_i) - rho(t)|| in node blocks to bound memory
    b = 0.0
    block = max(1, 4_000_000 // N)
    for s in range(0, nodes.size, block):
        sl = slice(s, s + block)
        diff = _rho(model, tl[sl], t) - _rho(model, nodes[sl], t)
        b += float(np.sum(w[sl] * np.linalg.norm(diff, axis=0)))
    return GridErrorTerms(float(a), 2.0 * b / T0)


def grid_error_bounds(B: float, alpha: float, N: int, T0: float) -> GridErrorTerms:
    """Analytic rate bounds on |A^(N)| and B^(N) from a Lipschitz constant."""
    a = B * (2 ** (alpha / 2) + 2) * T0**alpha / (N - 1) ** alpha
    b = 2 * B * T0**alpha * math.sqrt(N) / (N - 1) ** alpha
    return GridErrorTerms(a, b)


# --------------------------------------------------------------------------
# achievable rate and distortion


def rate_a(mu: np.ndarray, theta_prime: float) -> float:
    """R_a(theta') = sum_k log(1 + mu_k / theta') / 2."""
    return float(0.5 * np.sum(np.log1p(np.asarray(mu) / theta_prime)))


def distortion_b(mu: np.ndarray, theta_prime: float, T0: float) -> float:
    """D_b(theta') = (1/T0) sum_k (1/theta' + 1/mu_k)^-1, zero modes contribute 0."""
    mu = np.asarray(mu)
    pos = mu[mu > 0]
    return float(np.sum(pos * theta_prime / (pos + theta_prime)) / T0)


def _gm_gram(model: KernelModel, t: np.ndarray) -> np.ndarray:
    c = model.sigma2 / (2 * model.eta)
    eta, T0 = model.eta, model.T0
    a, b = t[:, None], t[None, :]
    delta = np.abs(a - b)
    edge = np.exp(-eta * (a + b)) + np.exp(-eta * (2 * T0 - a - b))
    return c * c * (np.exp(-eta * delta) * (1.0 / eta + delta) - edge / (2 * eta))


def gram_matrix(model: KernelModel, cov: SampledCovariance, quad_panels: int = 8) -> np.ndarray:
    """M = integral of rho_N(t) rho_N(t)^T over [0, T0].

    Closed form for Gauss-Markov kernels; Gauss-Legendre otherwise.
    """
    key = ("gram", int(quad_panels))
    if key in cov.cache:
        return cov.cache[key]
    if model.is_gauss_markov:
        M = _gm_gram(model, cov.t)
    else:
        nodes, w, _ = interval_nodes(cov.N, cov.T0, quad_panels)
        M = np.zeros((cov.N, cov.N))
        block = max(1, 4_000_000 // cov.N)
        for s in range(0, nodes.size, block):
            R = _rho(model, nodes[s:s + block], cov.t)
            M += (R * w[s:s + block]) @ R.T
    M = 0.5 * (M + M.T)
    cov.cache[key] = M
    return M


def diag_integral(model: KernelModel, N: int, quad_panels: int = 8) -> float:
    """Integral of K(t, t) over [0, T0] on the per-interval rule."""
    if model.is_gauss_markov:
        return model.T0 * model.sigma2 / (2 * model.eta)
    nodes, w, _ = interval_nodes(N, model.T0, quad_panels)
    return float(np.sum(w * model.diag(nodes)))


def _projected_gram(model, cov, quad_panels) -> np.ndarray:
    key = ("pgram", int(quad_panels))
    if key not in cov.cache:
        if cov.vectors is None:
            raise ModelError("covariance was built without eigenvectors")
        M = gram_matrix(model, cov, quad_panels)
        g = np.einsum("ik,ij,jk->k", cov.vectors, M, cov.vectors)
        cov.cache[key] = g
    return cov.cache[key]


def distortion_a(model: KernelModel, cov: SampledCovariance, theta_prime: float,
                 quad_panels: int = 8) -> float:
    """D_a(theta') through the spectral form (1/T0)[int K - h sum_k g_k/(mu_k+theta')]."""
    if not theta_prime > 0:
        raise DomainError("theta_prime must be positive")
    g = _projected_gram(model, cov, quad_panels)
    total = diag_integral(model, cov.N, quad_panels)
    return float((total - cov.h * np.sum(g / (cov.mu + theta_prime))) / cov.T0)


def distortion_a_cholesky(model: KernelModel, cov: SampledCovariance, theta_prime: float,
                          quad_panels: int = 8) -> float:
    """D_a(theta') by quadrature with one solve per node against chol(Sigma' + theta' I)."""
    if not theta_prime > 0:
        raise DomainError("theta_prime must be positive")
    A = np.array(cov.sigma_prime)
    A[np.diag_indices_from(A)] += theta_prime
    try:
        factor = cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise InvariantError(f"Cholesky failed at theta'={theta_prime:g}: {exc}") from None
    nodes, w, _ = interval_nodes(cov.N, cov.T0, quad_panels)
    acc = 0.0
    block = max(1, 2_000_000 // cov.N)
    for s in range(0, nodes.size, block):
        sl = slice(s, s + block)
        R = _rho(model, nodes[sl], cov.t)
        X = cho_solve(factor, R)
        q = np.einsum("ij,ij->j", R, X)
        acc += float(np.sum(w[sl] * (model.diag(nodes[sl]) - cov.h * q)))
    return acc / cov.T0


def mil_split(model: KernelModel, cov: SampledCovariance, theta_prime: float,
              quad_panels: int = 8) -> tuple[float, float]:
    """Matrix-inversion-lemma split (D_s, D^(N)(theta')) of D_a.

    D_s = (1/T0) int (K(t,t) - h rho^T Sigma'^-1 rho) dt and
    D^(N) = (1/(N-1)) int rho^T Sigma'^-1 (I/theta' + Sigma'^-1)^-1 Sigma'^-1 rho dt.
    """
    S = np.array(cov.sigma_prime)
    try:
        fS = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"Sigma'_N is singular: {exc}") from None
    S_inv = cho_solve(fS, np.eye(cov.N))
    S_inv = 0.5 * (S_inv + S_inv.T)
    inner = S_inv + np.eye(cov.N) / theta_prime
    f_in = cho_factor(inner, lower=True)
    nodes, w, _ = interval_nodes(cov.N, cov.T0, quad_panels)
    R = _rho(model, nodes, cov.t)
    V = cho_solve(fS, R)
    d_s = float(np.sum(w * (model.diag(nodes) - cov.h * np.einsum("ij,ij->j", R, V)))) / cov.T0
    Wm = cho_solve(f_in, V)
    d_n = float(np.sum(w * np.einsum("ij,ij->j", V, Wm))) / (cov.N - 1)
    return d_s, d_n


def achievable_rd_point(model: KernelModel, cov: SampledCovariance, theta_prime: float,
                        quad_panels: int = 8,
                        grid_terms: GridErrorTerms | None = None) -> AchievablePoint:
    """(R_a, D_a, D_b) at test-channel level theta' plus the three-term check.

    ``decomposition_check`` tests D_a <= 2|A| + B + D_b; ``grid_terms`` are
    computed at ``max(quad_panels, 10)`` nodes per interval when not given.
    """
    if not theta_prime > 0:
        raise DomainError("theta_prime must be positive")
    if grid_terms is None:
        grid_terms = grid_error_terms(model, cov.N, max(int(quad_panels), 10))
    r = rate_a(cov.mu, theta_prime)
    da = distortion_a_cholesky(model, cov, theta_prime, quad_panels)
    db = distortion_b(cov.mu, theta_prime, cov.T0)
    ok = da <= 2 * grid_terms.a_abs + grid_terms.b_term + db
    return AchievablePoint(r, da, db, bool(ok), grid_terms)


# Supported test-channel levels, relative to the largest sampled eigenvalue.
THETA_SPAN = (1e-12, 1e12)


def theta_for_rate(mu: np.ndarray, R: float, rtol: float = 1e-9) -> float:
    """Invert R_a(theta') = R by bisection on log(theta')."""
    top = float(np.max(mu))
    lo, hi = top * THETA_SPAN[0], top * THETA_SPAN[1]
    r_max, r_min = rate_a(mu, lo), rate_a(mu, hi)
    if not (R > 0 and r_min <= R <= r_max):
        raise RangeError(
            f"rate {R:g} outside the achievable interval [{r_min:.3g}, {r_max:.3g}]",
            (r_min, r_max))
    a, b = math.log(lo), math.log(hi)
    theta = math.exp(0.5 * (a + b))
    for _ in range(400):
        m = 0.5 * (a + b)
        theta = math.exp(m)
        r = rate_a(mu, theta)
        if abs(r - R) <= rtol * R:
            break
        if r > R:
            a = m
        else:
            b = m
        if b - a < 1e-15:
            break
    return theta


def d_a_of_rate(model: KernelModel, cov: SampledCovariance, R: float, quad_panels: int = 8,
                method: str = "spectral") -> tuple[float, float]:
    """D_a at the level theta' with R_a(theta') = R; returns (distortion, theta')."""
    theta = theta_for_rate(cov.mu, R)
    if method == "spectral":
        return distortion_a(model, cov, theta, quad_panels), theta
    if method == "cholesky":
        return distortion_a_cholesky(model, cov, theta, quad_panels), theta
    raise DomainError(f"unknown method {method!r}")


def window_exponent(params: ClassAParams) -> float:
    """min(x gamma / (2 tau), (alpha - 1/2) x / (x - 1), beta x / (x + tau + 1))."""
    x = params.x
    first = math.inf if params.tau == 0 else x * params.gamma / (2 * params.tau)
    return min(first, (params.alpha - 0.5) * x / (x - 1), params.beta * x / (x + params.tau + 1))


def theta_window(params: ClassAParams, N: int, target_rate: float | None = None, *,
                 log_np: float, nu: float, kappa: float = 0.99,
                 lower: float | None = None, upper: float | None = None) -> ThetaWindow:
    """Water-level window built from the sequences used for the upper bound.

    theta_LL = (nu log(NP) / (x d^(1/x) / 8))^(-x) and
    theta_U = (nu log(NP) / c_U)^(-x/2), c_U = d^(1/x) Q(x) / (2 (x-1) kappa^2).
    The lower edge defaults to theta_LL; ``lower``/``upper`` override the edges.
    """
    if not log_np > 0:
        raise WindowError(f"log(N P(N)) = {log_np:g} must be positive at N={N}")
    x, d = params.x, params.d
    d1x = d ** (1.0 / x)
    c_U = d1x * q_poly(x) / (2 * (x - 1) * kappa**2)
    c_L = kappa * x * d1x / 4
    t_ll = (nu * log_np / (x * d1x / 8)) ** (-x)
    t_u = (nu * log_np / c_U) ** (-x / 2)
    lo = t_ll if lower is None else float(lower)
    up = t_u if upper is None else float(upper)
    if not 0 < lo < up:
        raise WindowError(f"theta window empty at N={N}: lower={lo:.3g}, upper={up:.3g}")
    interval = (c_U * up ** (-1 / x), c_L * t_ll ** (-1 / x))
    ok = None
    if target_rate is not None:
        ok = bool(interval[0] <= target_rate <= interval[1])
    return ThetaWindow(lo, up, t_ll, interval, target_rate, ok)


def unconverged_tail(params: ClassAParams, cov: SampledCovariance, theta_prime: float,
                kappa: float = 0.9) -> tuple[float, float]:
    """(sum of mu_k beyond floor((d/theta')^(1/x) + c_u), bound d^(1/x) theta'^(1-1/x) / ((x-1) kappa^2))."""
    x, d = params.x, params.d
    k = int(math.floor((d / theta_prime) ** (1 / x) + params.c_u))
    lhs = float(np.sum(cov.mu[k + 1:]))
    rhs = d ** (1 / x) / ((x - 1) * kappa**2) * theta_prime ** (1 - 1 / x)
    return lhs, rhs
