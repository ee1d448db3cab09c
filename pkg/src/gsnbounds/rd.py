"""Reverse water-filling for the continuous process and lower-bound constants.

All rates are in nats. For a water level theta,

    R(theta) = sum_k max(0, log(lambda_k / theta) / 2)
    D(theta) = (1/T0) sum_k min(theta, lambda_k)

The spectrum is taken from :class:`~gsnbounds.process.ClassAParams`; the part
beyond the truncation index is bracketed by the class-A sandwich using exact
Hurwitz zeta sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .errors import DomainError, TruncationError
from .process import ClassAParams

# Largest spectral truncation dp_of_rate will build automatically.
K_CAP = 4_000_000


@dataclass(frozen=True)
class WaterfillPoint:
    theta: float
    rate: float
    distortion: float
    distortion_err: float
    K_max: int


@dataclass(frozen=True)
class DistortionEstimate:
    """A distortion value with a certified half-width from the spectral tail."""

    value: float
    err: float
    theta: float
    rate: float


def tail_bracket(params: ClassAParams, K_max: int) -> tuple[float, float]:
    """(sum_{k>K_max} lambda'_k, sum_{k>K_max} lambda''_k), requires K_max >= K0."""
    if K_max < params.K0:
        raise TruncationError(f"K_max={K_max} below K0={params.K0}", params.K0)
    lo = params.d * float(zeta(params.x, K_max + 1 + params.c_l))
    hi = params.d * float(zeta(params.x, K_max + 1 - params.c_u))
    return lo, hi


def _check_truncation(params: ClassAParams, theta: float, K_max: int) -> None:
    if K_max < params.K0 or not params.lambda_hi(K_max) < theta:
        need = params.hi_index_below(theta)
        raise TruncationError(
            f"K_max={K_max} too small for theta={theta:g}: need lambda''_K < theta; "
            f"use K_max >= {need}", need)


def _auto_K(params: ClassAParams, theta: float) -> int:
    return max(params.hi_index_below(theta), params.spectrum_estimate.size - 1)


def _rate(lam: np.ndarray, theta: float) -> float:
    return float(0.5 * np.sum(np.log(np.maximum(lam / theta, 1.0))))


def waterfill_point(params: ClassAParams, theta: float, K_max: int | None = None) -> WaterfillPoint:
    """Rate and distortion at water level ``theta``.

    With ``K_max=None`` the truncation is chosen so that lambda''_{K_max} < theta;
    an explicit ``K_max`` that violates this raises :class:`TruncationError`.
    """
    if not theta > 0:
        raise DomainError("theta must be positive")
    if K_max is None:
        K_max = _auto_K(params, theta)
    _check_truncation(params, theta, int(K_max))
    lam = params.reference_eigenvalues(int(K_max) + 1)
    lo, hi = tail_bracket(params, int(K_max))
    body = float(np.sum(np.minimum(theta, lam)))
    dist = (body + 0.5 * (lo + hi)) / params.T0
    err = 0.5 * (hi - lo) / params.T0
    return WaterfillPoint(float(theta), _rate(lam, theta), dist, err, int(K_max))


def dp_of_rate(params: ClassAParams, R: float, K_max: int | None = None,
               rtol: float = 1e-9) -> DistortionEstimate:
    """Distortion-rate function D_p(R) by bisection on log(theta).

    Iterates until ``|rate(theta) - R| < rtol * max(1, R)``. The bracket is
    ``[lambda''_{K_max}, lambda_0 (1 + 1e-12)]``; without ``K_max`` the lower end
    is pushed down until it covers ``R`` (at most ``K_CAP`` modes).
    """
    if not R >= 0:
        raise DomainError("R must be nonnegative")
    lam0 = float(params.head_eigenvalues[0])
    hi = lam0 * (1.0 + 1e-12)
    if K_max is not None:
        K_max = int(K_max)
        if K_max < params.K0:
            raise TruncationError(f"K_max={K_max} below K0={params.K0}", params.K0)
        lo = float(params.lambda_hi(K_max)) * (1.0 + 1e-12)
        lam = params.reference_eigenvalues(K_max + 1)
        if _rate(lam, lo) < R:
            raise TruncationError(
                f"R={R:g} exceeds the resolvable rate {_rate(lam, lo):g} at K_max={K_max}",
                2 * K_max)
    else:
        lo = lam0 * 1e-2
        while True:
            K_max = _auto_K(params, lo)
            if K_max > K_CAP:
                raise TruncationError(
                    f"R={R:g} needs more than {K_CAP} spectral modes", K_max)
            lam = params.reference_eigenvalues(K_max + 1)
            if _rate(lam, lo) >= R:
                break
            lo *= 1e-2
    tol = rtol * max(1.0, R)
    a, b = math.log(lo), math.log(hi)
    theta = hi
    for _ in range(400):
        m = 0.5 * (a + b)
        theta = math.exp(m)
        r = _rate(lam, theta)
        if abs(r - R) < tol:
            break
        if r > R:
            a = m
        else:
            b = m
        if b - a < 1e-15:
            break
    pt = waterfill_point(params, theta, K_max)
    return DistortionEstimate(pt.distortion, pt.distortion_err, theta, pt.rate)


def dp_lower_const(params: ClassAParams, kappa: float) -> float:
    """Coefficient of R^(1-x) in the distortion-rate lower bound.

    kappa (1 + kappa/(x-1)) (kappa x / 2)^(x-1) d / T0. ``kappa=1`` gives the
    limiting constant.
    """
    if not 0 < kappa <= 1:
        raise DomainError("kappa must lie in (0, 1]")
    x = params.x
    return kappa * (1 + kappa / (x - 1)) * (kappa * x / 2) ** (x - 1) * params.d / params.T0


def q_poly(x: float) -> float:
    """x^2 - (1 - log 2) x + (1 - log 2)."""
    c = 1.0 - math.log(2.0)
    return x * x - c * x + c


def da_upper_const(params: ClassAParams, kappa: float) -> float:
    """Coefficient of R^(1-x) in the achievable distortion-rate upper bound.

    d (1 + kappa^2 (x-1)) Q(x)^(x-1) / (T0 kappa^(2x+2) 2^(x-1) (x-1)^x).
    """
    if not 0 < kappa <= 1:
        raise DomainError("kappa must lie in (0, 1]")
    x = params.x
    return (params.d * (1 + kappa**2 * (x - 1)) * q_poly(x) ** (x - 1)
            / (params.T0 * kappa ** (2 * x + 2) * 2 ** (x - 1) * (x - 1) ** x))
