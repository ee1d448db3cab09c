"""Monte Carlo checks of the source-coding and relaying halves of the scheme.

Trials are grouped in fixed blocks of ``BLOCK`` draws. Block ``b`` uses the
generator seeded by ``SeedSequence(seed, spawn_key=(b,))``, so a seed plus a
trial index fixes every draw regardless of how blocks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import AfDesign, ChannelScenario, af_components
from .errors import DomainError, InvariantError, ModelError
from .process import KernelModel, kernel_eval
from .sampled import (
    build_sampled_covariance,
    distortion_a_cholesky,
    interval_nodes,
    sensor_positions,
)

BLOCK = 1000
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class McResult:
    estimate: float
    stderr: float
    trials: int
    seed: object
    analytic: float | None = None
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict, repr=False)


def _entropy(seed):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return int(seed)


def block_rng(seed, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed), spawn_key=(int(b),)))


def _blocks(trials: int):
    for b, start in enumerate(range(0, trials, BLOCK)):
        yield b, min(BLOCK, trials - start)


def _summary(values: np.ndarray) -> tuple[float, float]:
    est = math.fsum(values) / values.size
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return est, sd / math.sqrt(values.size)


def _check_trials(trials: int) -> int:
    if int(trials) != trials or trials < 100:
        raise DomainError("trials must be an integer >= 100")
    return int(trials)


def psd_factor(C: np.ndarray) -> np.ndarray:
    """F with F F^T = C; eigenvalues below -1e-10 * max are rejected, the rest clamped."""
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    top = max(float(w.max()), 0.0)
    if np.any(w < -PSD_RTOL * max(top, 1e-300)):
        raise ModelError(f"kernel covariance is not positive semidefinite (eigenvalue {w.min():.3e})")
    return V * np.sqrt(np.maximum(w, 0.0))


def distortion_measure(S: np.ndarray, S_hat: np.ndarray, weights: np.ndarray, T0: float) -> np.ndarray:
    """(1/T0) * integral of (S - S_hat)^2 per row, with quadrature weights."""
    e = np.asarray(S) - np.asarray(S_hat)
    return (e * e) @ np.asarray(weights) / T0


def simulate_separation_scheme(model: KernelModel, N: int, sigma_D2: float, trials: int = 10000,
                               quad_grid: int | None = None, seed=0) -> McResult:
    """Empirical distortion of the test channel T = S_N + W with MMSE reconstruction.

    The process is drawn jointly on the sensors and on Gauss-Legendre nodes in
    each sensor gap (``quad_grid`` nodes in total, default 20 per gap and at
    least 100). The analytic target is D_a at theta' = T0 sigma_D2 / (N - 1)
    on the same rule.
    """
    trials = _check_trials(trials)
    if N < 2:
        raise DomainError("N must be at least 2")
    if not sigma_D2 > 0:
        raise DomainError("sigma_D2 must be positive")
    if quad_grid is None:
        quad_grid = max(100, 20 * (N - 1))
    if quad_grid < 100:
        raise DomainError("quad_grid must be at least 100")
    per_gap = max(1, math.ceil(quad_grid / (N - 1)))
    T0 = model.T0
    t = sensor_positions(N, T0)
    nodes, w, _ = interval_nodes(N, T0, per_gap)
    pts = np.concatenate([t, nodes])
    C = kernel_eval(model, pts[:, None], pts[None, :])
    F = psd_factor(C)
    Sigma = C[:N, :N] + sigma_D2 * np.eye(N)
    G = cho_solve(cho_factor(Sigma, lower=True), C[:N, N:]).T
    sd = math.sqrt(sigma_D2)
    out = np.empty(trials)
    pos = 0
    for b, n in _blocks(trials):
        rng = block_rng(seed, b)
        S = rng.standard_normal((n, pts.size)) @ F.T
        Wn = sd * rng.standard_normal((n, N))
        S_hat = (S[:, :N] + Wn) @ G.T
        out[pos:pos + n] = distortion_measure(S[:, N:], S_hat, w, T0)
        pos += n
    est, se = _summary(out)
    theta = T0 * sigma_D2 / (N - 1)
    target = distortion_a_cholesky(model, build_sampled_covariance(model, N, vectors=False),
                                   theta, per_gap)
    return McResult(est, se, trials, seed, target, (), {"theta_prime": theta,
                                                       "nodes_per_gap": per_gap})


def simulate_af_sinr(scenario: ChannelScenario, design: AfDesign, N: int, trials: int = 100000,
                     seed=0, node: int = 0, noise_scale: float = 1.0) -> McResult:
    """Empirical SINR of the two-slot relay chain for source ``node``.

    Slot 1: relay j hears Y_j = h_ij X + Z_j. Slot 2: the collector hears
    Y_0 = sum_j h_j0 beta_ij Y_j + Z_0. The estimate is
    c^2 mean(X^2) / mean(V^2) with c = sum_j beta_ij h_ij h_j0 and V the
    aggregate noise; ``stderr`` comes from the per-trial linearisation of that
    ratio. With ``noise_scale=0`` the SINR is infinite and the beamforming
    gain c^2 P is reported in ``extra``.
    """
    trials = _check_trials(trials)
    if not design.feasible:
        raise DomainError("design is not feasible")
    coef, wts, P = af_components(design, node)
    h_in = design.gains.relay_row(node)
    h_out = design.gains.to_collector
    beta = design.beta_row(node)
    relays = np.flatnonzero(np.arange(N) != node)
    xs = np.empty(trials)
    vs = np.empty(trials)
    pos = 0
    for b, n in _blocks(trials):
        rng = block_rng(seed, b)
        X = math.sqrt(P) * rng.standard_normal(n)
        Z = noise_scale * rng.standard_normal((n, relays.size))
        Z0 = noise_scale * rng.standard_normal(n)
        Yj = h_in[relays] * X[:, None] + Z
        g = h_out[relays] * beta[relays]
        Y0 = Yj @ g + Z0
        V = Z @ g + Z0
        # the noise path must reproduce the received signal up to rounding
        if np.max(np.abs(Y0 - coef * X - V)) > 1e-9 * (1.0 + np.max(np.abs(Y0))):
            raise InvariantError("relay chain and its noise aggregate disagree")
        xs[pos:pos + n] = X
        vs[pos:pos + n] = V
        pos += n
    gain = coef**2 * P
    analytic = gain / (float(np.sum(wts**2)) + 1.0)
    mv2 = math.fsum(vs * vs) / trials
    if mv2 == 0.0:
        return McResult(math.inf, 0.0, trials, seed, math.inf, ("infinite-sinr",),
                        {"beamforming_gain": gain})
    mx2 = math.fsum(xs * xs) / trials
    est = coef**2 * mx2 / mv2
    psi = est + (coef**2 * xs * xs - est * vs * vs) / mv2
    _, se = _summary(psi)
    return McResult(est, se, trials, seed, analytic, (), {"beamforming_gain": gain})
