"""Bezier curves over a normalized phase.

A curve is a matrix of control points (``degree + 1`` rows, one column per
output channel) together with a duration ``T``. Evaluation at time ``t``
happens at the normalized phase ``tau = t / T``; the basis rows returned by
:func:`bernstein_row` and :func:`bernstein_derivative_row` are what the
planner uses to write Bezier constraints linearly in the control points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import comb

from .errors import OutOfDomain, RankDeficientBasis

# Slack on the time domain check, so that t = k * dt rounding does not trip it.
_DOMAIN_EPS = 1e-12


@dataclass(frozen=True)
class BezierCurve:
    """Control points ``alpha`` (shape ``(degree + 1, dim)``) and duration ``T``."""

    coefficients: np.ndarray
    duration: float = 1.0

    def __post_init__(self):
        alpha = np.array(self.coefficients, dtype=float)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        if alpha.ndim != 2 or alpha.shape[0] < 2:
            raise ValueError("a Bezier curve needs degree >= 1 (at least two control points)")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        alpha.flags.writeable = False
        object.__setattr__(self, "coefficients", alpha)
        object.__setattr__(self, "duration", float(self.duration))

    @property
    def degree(self) -> int:
        return self.coefficients.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.coefficients.shape[1]

    def phase(self, t: float) -> float:
        if t < -_DOMAIN_EPS * self.duration or t > self.duration * (1 + _DOMAIN_EPS):
            raise OutOfDomain(f"t={t} outside [0, {self.duration}]")
        return min(max(t / self.duration, 0.0), 1.0)


def de_casteljau(alpha: np.ndarray, tau: float) -> np.ndarray:
    """Evaluate control points ``alpha`` at phase ``tau`` by repeated lerps."""
    pts = np.array(alpha, dtype=float)
    n = pts.shape[0]
    for r in range(1, n):
        pts[: n - r] = (1.0 - tau) * pts[: n - r] + tau * pts[1 : n - r + 1]
    return pts[0]


def bez(t: float, curve: BezierCurve) -> np.ndarray:
    """Curve value at time ``t``; exact control points at both endpoints."""
    tau = curve.phase(t)
    if tau == 0.0:
        return curve.coefficients[0].copy()
    if tau == 1.0:
        return curve.coefficients[-1].copy()
    return de_casteljau(curve.coefficients, tau)


def dbez(t: float, curve: BezierCurve) -> np.ndarray:
    """Time derivative of the curve at ``t`` (units of alpha per second)."""
    tau = curve.phase(t)
    hodograph = curve.degree * np.diff(curve.coefficients, axis=0)
    if hodograph.shape[0] == 1:
        return hodograph[0] / curve.duration
    return de_casteljau(hodograph, tau) / curve.duration


def ddbez(t: float, curve: BezierCurve) -> np.ndarray:
    """Second time derivative at ``t``; zero for degree-1 curves."""
    tau = curve.phase(t)
    n = curve.degree
    if n < 2:
        return np.zeros(curve.dim)
    second = n * (n - 1) * np.diff(curve.coefficients, n=2, axis=0)
    if second.shape[0] == 1:
        return second[0] / curve.duration**2
    return de_casteljau(second, tau) / curve.duration**2


def bernstein_row(tau: float, degree: int) -> np.ndarray:
    """Bernstein basis values ``b_i(tau)``; ``bez = row @ alpha``."""
    i = np.arange(degree + 1)
    return comb(degree, i) * tau**i * (1.0 - tau) ** (degree - i)


def bernstein_matrix(taus: Sequence[float], degree: int) -> np.ndarray:
    return np.vstack([bernstein_row(float(t), degree) for t in taus])


def bernstein_derivative_row(tau: float, degree: int) -> np.ndarray:
    """Row ``d`` with ``d @ alpha = d/dtau bez``; divide by ``T`` for time rates."""
    if degree == 0:
        return np.zeros(1)
    inner = degree * bernstein_row(tau, degree - 1)
    row = np.zeros(degree + 1)
    # d/dtau sum_i a_i b_i = n * sum_i (a_{i+1} - a_i) b_{i,n-1}
    row[1:] += inner
    row[:-1] -= inner
    return row


def bernstein_derivative_matrix(taus: Sequence[float], degree: int) -> np.ndarray:
    return np.vstack([bernstein_derivative_row(float(t), degree) for t in taus])


def fit(samples, degree: int) -> tuple[np.ndarray, float]:
    """Least-squares Bernstein fit of ``(tau, value)`` samples.

    Args:
        samples: Iterable of ``(tau, value)`` pairs, ``tau`` in ``[0, 1]`` and
            ``value`` a scalar or vector.
        degree: Polynomial degree of the fitted curve.

    Returns:
        ``(alpha, residual)``: control points of shape ``(degree + 1, dim)``
        and the root-sum-square of the fit residuals.

    Raises:
        RankDeficientBasis: Fewer distinct phases than control points.
    """
    samples = list(samples)
    taus = np.array([float(s[0]) for s in samples])
    values = np.array([np.atleast_1d(np.asarray(s[1], dtype=float)) for s in samples])
    if np.any(taus < 0.0) or np.any(taus > 1.0):
        raise OutOfDomain("fit phases must lie in [0, 1]")
    basis = bernstein_matrix(taus, degree) if len(taus) else np.zeros((0, degree + 1))
    if np.linalg.matrix_rank(basis) < degree + 1:
        raise RankDeficientBasis(
            f"{len(np.unique(taus))} distinct phases cannot determine {degree + 1} control points"
        )
    alpha, *_ = np.linalg.lstsq(basis, values, rcond=None)
    residual = float(np.linalg.norm(basis @ alpha - values))
    return alpha, residual
