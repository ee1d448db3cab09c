"""Gaussian-process kernels, class-A spectral parameters and smoothness audits.

Two kernel kinds are supported: the Gauss-Markov (Ornstein-Uhlenbeck) kernel
``K(t, s) = sigma2 / (2 eta) * exp(-eta |t - s|)`` and a user-tabulated kernel
on a rectangular grid with bilinear interpolation.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, ModelError

GAUSS_MARKOV = "gauss-markov"
TABULATED = "user-tabulated"

_DOMAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class KernelModel:
    """An autocorrelation kernel on ``[0, T0]^2``.

    Use :func:`gauss_markov` or :func:`tabulated_kernel` to construct one.
    """

    kind: str
    T0: float
    sigma2: float | None = None
    eta: float | None = None
    grid: np.ndarray | None = field(default=None, repr=False)
    values: np.ndarray | None = field(default=None, repr=False)
    source: str | None = None
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (self.T0 > 0 and math.isfinite(self.T0)):
            raise DomainError(f"T0 must be positive and finite, got {self.T0}")
        if self.kind == GAUSS_MARKOV:
            if not (self.sigma2 is not None and self.sigma2 > 0):
                raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
            if not (self.eta is not None and self.eta > 0):
                raise DomainError(f"eta must be positive, got {self.eta}")
        elif self.kind == TABULATED:
            if self.grid is None or self.values is None:
                raise ModelError("tabulated kernel needs a grid and values")
            interp = RegularGridInterpolator(
                (self.grid, self.grid), self.values, method="linear"
            )
            object.__setattr__(self, "_interp", interp)
        else:
            raise ModelError(f"unknown kernel kind {self.kind!r}")

    @property
    def is_gauss_markov(self) -> bool:
        return self.kind == GAUSS_MARKOV

    def __call__(self, t, s):
        return kernel_eval(self, t, s)

    def diag(self, t):
        """K(t, t), vectorised."""
        return kernel_eval(self, t, t)


def gauss_markov(sigma2: float = 1.0, eta: float = 1.0, T0: float = 1.0) -> KernelModel:
    return KernelModel(GAUSS_MARKOV, float(T0), sigma2=float(sigma2), eta=float(eta))


def tabulated_kernel(grid, values, source: str | None = None) -> KernelModel:
    """Kernel from samples ``values[i, j] = K(grid[i], grid[j])``.

    The grid must start at 0 and be strictly increasing; its last point is T0.
    The table is symmetrised by averaging with its transpose, then checked for
    ``K(t,t) >= 0`` and ``|K(t,s)| <= sqrt(K(t,t) K(s,s))`` at the grid points.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ModelError("kernel grid needs at least two points")
    if values.shape != (grid.size, grid.size):
        raise ModelError(
            f"kernel table shape {values.shape} does not match grid of {grid.size}"
        )
    if not np.all(np.isfinite(values)):
        raise ModelError("kernel table contains non-finite values")
    if abs(grid[0]) > _DOMAIN_TOL or np.any(np.diff(grid) <= 0):
        raise ModelError("kernel grid must start at 0 and be strictly increasing")
    sym = 0.5 * (values + values.T)
    dg = np.diag(sym)
    scale = max(np.max(np.abs(sym)), 1e-300)
    tol = 1e-12 * scale
    if np.any(dg < -tol):
        raise ModelError("kernel table has negative variance on the diagonal")
    bound = np.sqrt(np.outer(np.maximum(dg, 0.0), np.maximum(dg, 0.0)))
    if np.any(np.abs(sym) > bound + tol):
        raise ModelError("kernel table violates |K(t,s)| <= sqrt(K(t,t) K(s,s))")
    grid = grid.copy()
    grid[0] = 0.0
    grid.setflags(write=False)
    sym.setflags(write=False)
    return KernelModel(TABULATED, float(grid[-1]), grid=grid, values=sym, source=source)


def constant_kernel(c: float, T0: float = 1.0) -> KernelModel:
    """The degenerate kernel K(t, s) = c, stored as a 2x2 table."""
    return tabulated_kernel([0.0, T0], np.full((2, 2), float(c)), source="constant")


def load_kernel_csv(path) -> KernelModel:
    """Read a tabulated kernel from a CSV file with header ``t,s,K``."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["t", "s", "K"]:
            raise ModelError(f"{path}: expected header t,s,K, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ModelError(f"{path}:{lineno}: expected 3 fields")
            try:
                rows.append(tuple(float(c) for c in row))
            except ValueError as exc:
                raise ModelError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ModelError(f"{path}: no kernel samples")
    data = np.array(rows)
    grid = np.unique(data[:, 0])
    if not np.array_equal(grid, np.unique(data[:, 1])):
        raise ModelError(f"{path}: t and s columns must use the same grid")
    n = grid.size
    values = np.full((n, n), np.nan)
    i = np.searchsorted(grid, data[:, 0])
    j = np.searchsorted(grid, data[:, 1])
    values[i, j] = data[:, 2]
    if np.isnan(values).any():
        raise ModelError(f"{path}: table is missing {int(np.isnan(values).sum())} (t,s) pairs")
    return tabulated_kernel(grid, values, source=str(path))


def write_kernel_csv(model: KernelModel, path, grid=None) -> None:
    """Write ``model`` sampled on ``grid`` (default: its own grid) as ``t,s,K``."""
    if grid is None:
        if model.grid is None:
            raise ModelError("grid required for non-tabulated kernels")
        grid = model.grid
    grid = np.asarray(grid, dtype=float)
    T, S = np.meshgrid(grid, grid, indexing="ij")
    K = kernel_eval(model, T, S)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "s", "K"])
        for a, b, k in zip(T.ravel(), S.ravel(), K.ravel()):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(k))])


def _check_domain(model: KernelModel, x: np.ndarray, name: str) -> np.ndarray:
    tol = _DOMAIN_TOL * model.T0
    if np.any(~np.isfinite(x)) or np.any(x < -tol) or np.any(x > model.T0 + tol):
        raise DomainError(f"{name} outside [0, {model.T0}]")
    return np.clip(x, 0.0, model.T0)


def kernel_eval(model: KernelModel, t, s):
    """Evaluate K(t, s); broadcasts over array inputs."""
    t = _check_domain(model, np.asarray(t, dtype=float), "t")
    s = _check_domain(model, np.asarray(s, dtype=float), "s")
    if model.kind == GAUSS_MARKOV:
        out = (model.sigma2 / (2.0 * model.eta)) * np.exp(-model.eta * np.abs(t - s))
    else:
        t, s = np.broadcast_arrays(t, s)
        # average both orders so interpolation is symmetric bit-for-bit
        a = model._interp(np.stack([t.ravel(), s.ravel()], axis=-1))
        b = model._interp(np.stack([s.ravel(), t.ravel()], axis=-1))
        out = (0.5 * (a + b)).reshape(t.shape)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------------
# class-A parameters


@dataclass(frozen=True, eq=False)
class ClassAParams:
    """Class-A constants and the spectral sandwich.

    ``head_eigenvalues`` holds lambda_0..lambda_K0. ``spectrum_estimate``
    extends it with numerically reliable eigenvalues beyond K0 (it always
    starts with the head); indices past its end fall back to the midpoint of
    the sandwich ``[lambda'_k, lambda''_k]``.
    """

    x: float
    d: float
    c_l: int
    c_u: int
    K0: int
    alpha: float
    beta: float
    gamma: float
    tau: float
    T0: float
    head_eigenvalues: np.ndarray = field(repr=False)
    spectrum_estimate: np.ndarray | None = field(default=None, repr=False)
    audit: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.x > 1:
            raise ModelError(f"x must exceed 1, got {self.x}")
        if not (0.5 < self.alpha <= 1):
            raise ModelError(f"alpha must lie in (1/2, 1], got {self.alpha}")
        if self.beta > 1 or self.gamma > 1:
            raise ModelError("beta and gamma must not exceed 1")
        if self.tau < 0:
            raise ModelError("tau must be nonnegative")
        if self.c_l < 0 or self.c_u < 0:
            raise ModelError("c_l and c_u must be nonnegative")
        if self.K0 < self.c_u + 1:
            raise ModelError(f"K0={self.K0} must be at least c_u+1={self.c_u + 1}")
        if self.d <= 0 or self.T0 <= 0:
            raise ModelError("d and T0 must be positive")
        head = np.asarray(self.head_eigenvalues, dtype=float)
        if head.shape != (self.K0 + 1,):
            raise ModelError(f"need {self.K0 + 1} head eigenvalues, got {head.size}")
        if np.any(head <= 0) or np.any(np.diff(head) > 0):
            raise ModelError("head eigenvalues must be positive and nonincreasing")
        est = head if self.spectrum_estimate is None else np.asarray(self.spectrum_estimate, float)
        if est.size < head.size or not np.array_equal(est[: head.size], head):
            raise ModelError("spectrum_estimate must start with the head eigenvalues")
        head = head.copy()
        est = est.copy()
        head.setflags(write=False)
        est.setflags(write=False)
        object.__setattr__(self, "head_eigenvalues", head)
        object.__setattr__(self, "spectrum_estimate", est)

    def lambda_lo(self, k):
        """lambda'_k = d / (k + c_l)^x (valid for k > K0)."""
        k = np.asarray(k, dtype=float)
        return self.d / (k + self.c_l) ** self.x

    def lambda_hi(self, k):
        """lambda''_k = d / (k - c_u)^x (valid for k > K0)."""
        k = np.asarray(k, dtype=float)
        with np.errstate(divide="ignore"):
            return self.d / np.maximum(k - self.c_u, 0.0) ** self.x

    def reference_eigenvalues(self, n: int) -> np.ndarray:
        """Best estimate of lambda_0..lambda_{n-1}."""
        n = int(n)
        est = self.spectrum_estimate
        if n <= est.size:
            return est[:n].copy()
        k = np.arange(est.size, n)
        mid = 0.5 * (self.lambda_lo(k) + self.lambda_hi(k))
        return np.concatenate([est, mid])

    def hi_index_below(self, theta: float) -> int:
        """Smallest K >= K0 with lambda''_K < theta."""
        k = self.c_u + (self.d / theta) ** (1.0 / self.x)
        K = max(self.K0, int(math.floor(k)) + 1)
        while self.lambda_hi(K) >= theta:
            K += 1
        return K


def spectrum_bounds(params: ClassAParams, k: int) -> tuple[float, float]:
    """Sandwich (lambda'_k, lambda''_k); collapses to the head value for k <= K0."""
    k = int(k)
    if k < 0:
        raise DomainError("k must be nonnegative")
    if k <= params.K0:
        v = float(params.head_eigenvalues[k])
        return v, v
    return float(params.lambda_lo(k)), float(params.lambda_hi(k))


def gm_K0(eta: float, T0: float) -> int:
    return max(2, math.floor(eta**2 * T0**2 / math.pi**2 - 0.75))


# Reference resolution and head-acceptance threshold for GM spectra.
N_REF = 4000
HEAD_RTOL = 1e-3


def _unit_gm_matrix(a: float, N: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, N)
    return np.exp(-a * np.abs(u[:, None] - u[None, :])) / (N - 1)


def _extrapolated_spectrum(fine_matrix: np.ndarray, coarse_matrix: np.ndarray) -> tuple[np.ndarray, int]:
    """Richardson estimate from two resolutions and the length of its reliable prefix.

    The eigenvalue error is linear in the grid step. The prefix is the set of
    leading indices whose raw relative change between the resolutions is
    below HEAD_RTOL (and which stay positive and nonincreasing).
    """
    n_ref, n_half = fine_matrix.shape[0], coarse_matrix.shape[0]
    fine = np.linalg.eigvalsh(fine_matrix)[::-1][:n_half]
    coarse = np.linalg.eigvalsh(coarse_matrix)[::-1]
    h1, h2 = 1.0 / (n_half - 1), 1.0 / (n_ref - 1)
    rich = fine + (fine - coarse) * h2 / (h1 - h2)
    change = np.abs(fine - coarse) / np.abs(fine)
    bad = np.nonzero(change >= HEAD_RTOL)[0]
    n_ok = int(bad[0]) if bad.size else fine.size
    # keep the reliable prefix monotone and positive
    head = rich[:n_ok]
    broken = np.nonzero((head <= 0) | (np.diff(head, prepend=np.inf) > 0))[0]
    if broken.size:
        n_ok = int(broken[0])
    rich.setflags(write=False)
    return rich, n_ok


@functools.lru_cache(maxsize=16)
def _gm_unit_spectrum(a: float, n_ref: int) -> tuple[np.ndarray, int]:
    """Extrapolated eigenvalues of exp(-a|u-v|) / (N-1) on [0, 1]."""
    return _extrapolated_spectrum(_unit_gm_matrix(a, n_ref), _unit_gm_matrix(a, n_ref // 2))


def sampled_spectrum_estimate(model: KernelModel, n_ref: int = 2000) -> tuple[np.ndarray, int]:
    """Extrapolated spectrum of a kernel from its sampled covariance at n_ref and n_ref // 2."""
    def scaled(n):
        t = np.arange(n) * (model.T0 / (n - 1))
        S = kernel_eval(model, t[:, None], t[None, :]) * (model.T0 / (n - 1))
        return 0.5 * (S + S.T)

    return _extrapolated_spectrum(scaled(int(n_ref)), scaled(int(n_ref) // 2))


def class_a_params(model: KernelModel, *, x: float, d: float, c_l: int, c_u: int, K0: int,
                   alpha: float, beta: float, gamma: float, tau: float,
                   head_eigenvalues=None, n_ref: int = 2000) -> ClassAParams:
    """Class-A parameters for a user kernel.

    Without ``head_eigenvalues`` the head is computed numerically as for the
    Gauss-Markov case and must pass the same convergence check.
    """
    if head_eigenvalues is not None:
        head = np.asarray(head_eigenvalues, dtype=float)
        return ClassAParams(x, d, c_l, c_u, K0, alpha, beta, gamma, tau, model.T0, head)
    est, n_ok = sampled_spectrum_estimate(model, n_ref)
    if n_ok < K0 + 1:
        raise ModelError(
            f"head eigenvalues not converged at n_ref={n_ref}: only {n_ok} of "
            f"{K0 + 1} pass the {HEAD_RTOL:g} relative-change check")
    est = est[:n_ok]
    return ClassAParams(x, d, c_l, c_u, K0, alpha, beta, gamma, tau, model.T0,
                        est[: K0 + 1], est, {"n_ref": int(n_ref), "n_reliable": n_ok})


def gm_class_a_params(sigma2: float = 1.0, eta: float = 1.0, T0: float = 1.0,
                      n_ref: int = N_REF) -> ClassAParams:
    """Class-A parameters of the Gauss-Markov kernel.

    x = 2, alpha = beta = gamma = tau = 1, c_l = c_u = 1, d = sigma2 T0^2 / pi^2.
    The head lambda_0..lambda_K0 is computed from the scaled sampled covariance
    at ``n_ref`` sensors, extrapolated against ``n_ref // 2``; every head value
    must change by less than 1e-3 (relative) between the two resolutions.
    """
    if not (sigma2 > 0 and eta > 0 and T0 > 0):
        raise DomainError("sigma2, eta and T0 must be positive")
    K0 = gm_K0(eta, T0)
    a = float(eta * T0)
    rich, n_ok = _gm_unit_spectrum(a, int(n_ref))
    if n_ok < K0 + 1:
        raise ModelError(
            f"head eigenvalues not converged at n_ref={n_ref}: only {n_ok} of "
            f"{K0 + 1} pass the {HEAD_RTOL:g} relative-change check"
        )
    scale = T0 * sigma2 / (2.0 * eta)
    est = scale * rich[:n_ok]
    d = sigma2 * T0**2 / math.pi**2
    params = ClassAParams(
        x=2.0, d=d, c_l=1, c_u=1, K0=K0, alpha=1.0, beta=1.0, gamma=1.0, tau=1.0,
        T0=float(T0), head_eigenvalues=est[: K0 + 1], spectrum_estimate=est,
        audit={"n_ref": int(n_ref), "n_reliable": n_ok},
    )
    k = np.arange(K0 + 1, n_ok)
    lo, hi = params.lambda_lo(k), params.lambda_hi(k)
    slack = HEAD_RTOL * est[k]
    if np.any(est[k] < lo - slack) or np.any(est[k] > hi + slack):
        raise ModelError("computed Gauss-Markov spectrum leaves the class-A sandwich")
    return params


# --------------------------------------------------------------------------
# energy and smoothness


def mean_energy(model: KernelModel, panels: int = 20000) -> float:
    """(1/T0) * integral of K(t, t), composite midpoint rule."""
    t = (np.arange(panels) + 0.5) * (model.T0 / panels)
    return float(np.mean(model.diag(t)))


@dataclass(frozen=True)
class LipschitzAudit:
    """Empirical Lipschitz order and constant of a kernel.

    ``separations`` and ``increments`` are the fitted points: for each
    separation r, the supremum of |K(p + r u) - K(p)| over the base points p
    and the unit directions u.
    """

    alpha_hat: float
    B_hat: float
    degenerate: bool
    valid: bool
    separations: np.ndarray = field(repr=False)
    increments: np.ndarray = field(repr=False)

    def constant_at(self, alpha: float) -> float:
        """Smallest B with sup|dK| <= B r^alpha over the fitted separations."""
        if self.degenerate:
            return 0.0
        return float(np.max(self.increments / self.separations**alpha))


_DIRECTIONS = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]])
_DIRECTIONS = _DIRECTIONS / np.linalg.norm(_DIRECTIONS, axis=1, keepdims=True)


def lipschitz_audit(model: KernelModel, grid_points: int = 10000,
                    base_points: int = 120, n_separations: int = 40) -> LipschitzAudit:
    """Fit sup|K(p + r u) - K(p)| ~ B r^alpha over small separations.

    Separations are multiples of the grid step up to the smallest 10% of the
    pairwise separations of ``grid_points`` equispaced points. The supremum is
    taken over a ``base_points`` x ``base_points`` grid of base pairs and four
    unit directions; ``alpha_hat`` is the log-log regression slope.
    """
    if grid_points < 100:
        raise DomainError("grid_points must be at least 100")
    T0 = model.T0
    step = T0 / (grid_points - 1)
    jmax = max(2, int(0.1 * (grid_points - 1)))
    js = np.unique(np.round(np.geomspace(1, jmax, n_separations)).astype(int))
    r = js * step
    base = np.linspace(0.0, T0, min(base_points, grid_points))
    P, Q = np.meshgrid(base, base, indexing="ij")
    K0 = kernel_eval(model, P, Q)
    sup = np.zeros(r.size)
    for i, ri in enumerate(r):
        best = 0.0
        for u in _DIRECTIONS:
            p2, q2 = P + ri * u[0], Q + ri * u[1]
            ok = (p2 >= 0) & (p2 <= T0) & (q2 >= 0) & (q2 <= T0)
            if not ok.any():
                continue
            dk = np.abs(kernel_eval(model, p2[ok], q2[ok]) - K0[ok])
            best = max(best, float(dk.max()))
        sup[i] = best
    scale = max(float(np.max(np.abs(K0))), 1e-300)
    if np.all(sup <= 1e-13 * scale):
        return LipschitzAudit(math.nan, 0.0, True, False, r, sup)
    pos = sup > 1e-13 * scale
    slope, intercept = np.polyfit(np.log(r[pos]), np.log(sup[pos]), 1)
    B_hat = float(np.max(sup[pos] / r[pos] ** slope))
    return LipschitzAudit(float(slope), B_hat, False, bool(slope > 0.5), r, sup)
