"""Potential function, decoding thresholds, and the receiver capacity bound.

The scalar steady state of the density evolution is governed by the map
x -> poly(overload_prob(x, zeta, k)) with zeta = arrival_rate * mean_degree.
``potential`` and ``potential_derivative`` give the closed-form potential whose
derivative sign is (x - eval_edge(overload_prob(x))); an arrival rate is
certified feasible when the fixed-point margin stays positive on (0, 1), and
the threshold is the supremum of feasible rates, located by bisection.

Two readings of the user-side polynomial coexist in the analysis: the edge
perspective (consistent with the derivative identity and with the per-slot
recursion's steady state) and the node perspective (the packet-loss
self-consistency, which the published threshold values follow).  Threshold
search defaults to the node reading; both are available via
``fixed_point_map``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .degree_dist import DegreeDistribution
from .errors import DomainError, NoUpperBound, RootNotFound, ZetaZero

_DOMAIN_SLACK = 1e-12


def _poisson_tail(values: np.ndarray, k: int) -> np.ndarray:
    """1 - P(Poisson(v) <= k-1), elementwise, by the running-product recurrence."""
    v = np.asarray(values, dtype=float)
    term = np.exp(-v)
    total = term.copy()
    for m in range(1, k):
        term = term * v / m
        total = total + term
    return np.maximum(0.0, 1.0 - total)


def _check_unit_interval(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < -_DOMAIN_SLACK) or np.any(x > 1.0 + _DOMAIN_SLACK):
        raise DomainError(f"argument outside [0, 1]: {x!r}")
    return np.clip(x, 0.0, 1.0)


def overload_prob(x, zeta: float, k: int):
    """Probability that a slot overflows a k-MUD receiver when a fraction x of
    the effective load zeta is still unresolved.

    Increasing in x, decreasing in k; 0 at x = 0.
    """
    if zeta < 0:
        raise DomainError(f"zeta must be >= 0, got {zeta}")
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    x = _check_unit_interval(x)
    out = _poisson_tail(zeta * x, k)
    return float(out) if out.ndim == 0 else out


def potential(x, zeta: float, k: int, dist: DegreeDistribution):
    """Closed-form potential of the decoding fixed point.

    U(x) = k - (1/zeta) e^{-zeta x} sum_{j<k} (zeta x)^j/j! (zeta x + k - j)
           - eval_node(overload_prob(x)) / mean_degree

    Carries the conventional additive constant U(0) = k - k/zeta; differences
    U(x) - U(0) equal the defining integral x g(x) - int_0^x g - node/mean.
    """
    if zeta == 0:
        raise ZetaZero("potential undefined at zeta = 0")
    if zeta < 0:
        raise DomainError(f"zeta must be >= 0, got {zeta}")
    x = _check_unit_interval(x)
    v = zeta * x
    term = np.ones_like(v)
    acc = term * (v + k)  # j = 0
    for j in range(1, k):
        term = term * v / j
        acc = acc + term * (v + k - j)
    g = _poisson_tail(v, k)
    out = k - np.exp(-v) * acc / zeta - dist.eval_node(g) / dist.mean_degree
    return float(out) if out.ndim == 0 else out


def potential_derivative(x, zeta: float, k: int, dist: DegreeDistribution):
    """Closed-form U'(x) = e^{-zeta x} zeta (zeta x)^{k-1}/(k-1)! (x - eval_edge(overload_prob(x))).

    The sign equals the sign of the fixed-point margin x - eval_edge(.) for x > 0.
    """
    if zeta < 0:
        raise DomainError(f"zeta must be >= 0, got {zeta}")
    x = _check_unit_interval(x)
    v = zeta * x
    weight = np.exp(-v) * zeta
    for j in range(1, k):
        weight = weight * v / j
    g = _poisson_tail(v, k)
    out = weight * (x - dist.eval_edge(g))
    return float(out) if out.ndim == 0 else out


def fixed_point_margin(x, zeta: float, k: int, dist: DegreeDistribution, fixed_point_map: str = "node"):
    """x - poly(overload_prob(x, zeta, k)); positive everywhere on (0,1) means feasible."""
    if fixed_point_map not in ("node", "edge"):
        raise DomainError(f"unknown fixed_point_map {fixed_point_map!r}")
    x = _check_unit_interval(x)
    g = _poisson_tail(zeta * x, k)
    poly = dist.eval_node if fixed_point_map == "node" else dist.eval_edge
    out = x - poly(g)
    return float(out) if out.ndim == 0 else out


def stationary_points(zeta: float, k: int, dist: DegreeDistribution, tol: float = 1e-12) -> list[float]:
    """All roots of x - eval_edge(overload_prob(x)) on (0, 1): the stationary points of U.

    Sign-change scan on a fine grid followed by bisection; an empty list means
    U is monotone on the interval.
    """
    if zeta <= 0:
        raise DomainError(f"zeta must be > 0, got {zeta}")
    xs = np.linspace(0.0, 1.0, 4097)[1:]
    margin = fixed_point_margin(xs, zeta, k, dist, fixed_point_map="edge")
    roots = []
    for i in range(len(xs) - 1):
        a, b = margin[i], margin[i + 1]
        if a == 0.0:
            roots.append(float(xs[i]))
        elif a * b < 0:
            f = lambda x: fixed_point_margin(x, zeta, k, dist, fixed_point_map="edge")
            roots.append(float(brentq(f, xs[i], xs[i + 1], xtol=tol)))
    return roots


@dataclass(frozen=True)
class ThresholdResult:
    """Certified bracket around the largest feasible arrival rate."""

    threshold: float          # certified-feasible endpoint of the bracket
    bracket: tuple[float, float]
    grid_points: int
    worst_margin: float       # min fixed-point margin at the feasible endpoint
    fixed_point_map: str
    mud_degree: int
    distribution: str


def _certified_margin(dist, k, arrival_rate, fixed_point_map, grid_points):
    """Minimum fixed-point margin over a refined grid on (0, 1)."""
    zeta = arrival_rate * dist.mean_degree
    xs = np.arange(1, grid_points) / grid_points
    margin = fixed_point_margin(xs, zeta, k, dist, fixed_point_map)
    i = int(np.argmin(margin))
    worst = float(margin[i])
    # local refinement: the margin can dip sharply close to the threshold,
    # and a uniform grid alone overestimates the feasible range.
    lo = max(0.0, xs[i] - 2.0 / grid_points)
    hi = min(1.0, xs[i] + 2.0 / grid_points)
    fine = np.linspace(lo, hi, 401)
    fine = fine[(fine > 0.0) & (fine < 1.0)]
    if fine.size:
        worst = min(worst, float(np.min(fixed_point_margin(fine, zeta, k, dist, fixed_point_map))))
    return worst


def find_threshold(
    dist: DegreeDistribution,
    k: int,
    tol_lambda: float = 1e-3,
    fixed_point_map: str = "node",
    grid_points: int = 10_000,
) -> ThresholdResult:
    """Bisect the arrival rate for the supremum with positive margin on (0, 1)."""
    if tol_lambda <= 0:
        raise DomainError(f"tol_lambda must be > 0, got {tol_lambda}")
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")

    def feasible(rate):
        return _certified_margin(dist, k, rate, fixed_point_map, grid_points) > 0.0

    lo, hi = 0.0, float(k)
    while feasible(hi):
        if hi >= 10.0 * k:
            raise NoUpperBound(f"still feasible at arrival rate {hi} (k={k})")
        hi = min(2.0 * hi, 10.0 * k)
    while hi - lo > tol_lambda:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return ThresholdResult(
        threshold=lo,
        bracket=(lo, hi),
        grid_points=grid_points,
        worst_margin=_certified_margin(dist, k, lo, fixed_point_map, grid_points),
        fixed_point_map=fixed_point_map,
        mud_degree=k,
        distribution=dist.as_text(),
    )


@dataclass(frozen=True)
class PotentialProfile:
    """(x, U, U') samples of the potential at one operating point."""

    zeta: float
    xs: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray


def potential_profile(
    dist: DegreeDistribution, k: int, arrival_rate: float, points: int = 1001
) -> PotentialProfile:
    zeta = arrival_rate * dist.mean_degree
    xs = np.linspace(0.0, 1.0, points)
    return PotentialProfile(
        zeta=zeta,
        xs=xs,
        values=potential(xs, zeta, k, dist),
        derivatives=potential_derivative(xs, zeta, k, dist),
    )


# -- capacity bound ----------------------------------------------------------


def _erlang_cdf(y, k: int):
    """F_k(y) = 1 - e^{-y} sum_{i<k} y^i/i!: monotone CDF of a unit-rate Erlang-k."""
    return _poisson_tail(y, k)


def _erlang_pdf(y: float, k: int) -> float:
    term = math.exp(-y)
    for j in range(1, k):
        term *= y / j
    return term


def capacity_root(k: int, search_max: float = 50.0) -> float:
    """Positive root of y F_k'(y) = F_k(y): the origin-tangency point of F_k^{-1}.

    k = 1 admits only the degenerate root y = 0 (e^y = 1 + y), returned as the
    analytic limit.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if k == 1:
        return 0.0

    def h(y):
        return y * _erlang_pdf(y, k) - float(_erlang_cdf(y, k))

    ys = np.linspace(1e-6, search_max, 2001)
    hv = np.array([h(y) for y in ys])
    sign_change = np.nonzero(hv[:-1] * hv[1:] < 0)[0]
    if sign_change.size == 0:
        raise RootNotFound(f"tangency equation has no root in (0, {search_max}] for k={k}")
    i = int(sign_change[0])
    return float(brentq(h, ys[i], ys[i + 1], xtol=1e-13))


def capacity_bound(k: int) -> float:
    """Closed-form loss bound E: the threshold satisfies (reportedly) rate* >= k - E.

    E = e^{-y} sum_{i<k} (k-i) y^i/i! + (y/2) F_k(y), evaluated at the
    tangency root y = capacity_root(k).
    """
    y = capacity_root(k)
    term = math.exp(-y)
    acc = k * term  # i = 0
    for i in range(1, k):
        term *= y / i
        acc += (k - i) * term
    return acc + 0.5 * y * float(_erlang_cdf(y, k))


def capacity_bound_quadrature(k: int) -> float:
    """Numeric-integration route to the same bound.

    Integrates the Erlang survival function above the tangency point and adds
    the chord triangle: E = int_y^inf (1 - F_k(t)) dt + (y/2) F_k(y).
    """
    y = capacity_root(k)
    survival = lambda t: math.exp(-t) if k == 1 else float(1.0 - _erlang_cdf(t, k))
    integral, _ = quad(survival, y, np.inf, limit=200)
    return integral + 0.5 * y * float(_erlang_cdf(y, k))
