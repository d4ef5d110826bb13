"""Finite-length density evolution for k-MUD IRSA, both replica-placement variants.

The recursion tracks, slot by slot, the failure probabilities of the messages
exchanged between user nodes and slot (receiver) nodes of the access graph:

uniform-replicas variant, at slot i
    q_bar_i = trailing average of the last n slot failure probs
    p_i     = dist.eval_edge(q_bar_i)
    p_bar_i = average of p over the last min(i, n) slots
    eta_i   = arrival_mass(i) * p_bar_i * mean_degree / n
    q_i     = slot_failure_prob(eta_i, k)
    loss_i  = dist.eval_node(q_bar_i)

first-slot-fixed variant, at slot i
    q_bar_i = trailing average of the last n-1 slot failure probs
    p_own_i = dist.eval_node_shifted(q_bar_i)        (edge pinned to the arrival slot)
    p_bar_i = average of forward-edge p over the previous min(i-1, n-1) slots
    nu_i    = arrival_rate * p_own_i + z * replica_mass(i) * p_bar_i
    q_i     = slot_failure_prob(nu_i, k)
    p_fwd_i = q_i * dist.eval_edge_forward(q_bar_i)
    loss_i  = q_i * p_own_i

with z = (mean_degree - 1)/(n - 1) (derivation version; a config switch restores
the statement version mean_degree/(n - 1) for comparison).

All sequences start from 1 (every edge assumed failed); trailing windows are the
causal stand-in for the window averages of the underlying fixed-point system, and
converge to the same steady state.  ``startup=True`` ramps the arrival masses of
a system that begins empty; it only shapes the transient, and slightly above
threshold it can seed the zero fixed point, so packet-loss figures use the
steady-state default ``startup=False``.
"""

from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .degree_dist import DegreeDistribution
from .errors import DomainError

_PROB_SLACK = 1e-12
_SUM_REFRESH = 4096  # steps between exact recomputations of window sums


class Variant(Enum):
    FIRST_SLOT_FIXED = "first_slot_fixed"
    UNIFORM_REPLICAS = "uniform_replicas"


@dataclass(frozen=True)
class SystemConfig:
    """Arrival and receiver parameters of one k-MUD IRSA system."""

    arrival_rate: float
    frame_length: int
    mud_degree: int
    variant: Variant = Variant.UNIFORM_REPLICAS
    startup: bool = False
    z_convention: str = "appendix"  # "appendix" | "theorem"

    def __post_init__(self):
        if self.arrival_rate < 0:
            raise DomainError(f"arrival_rate must be >= 0, got {self.arrival_rate}")
        if self.frame_length < 2:
            raise DomainError(f"frame_length must be >= 2, got {self.frame_length}")
        if self.mud_degree < 1:
            raise DomainError(f"mud_degree must be >= 1, got {self.mud_degree}")
        if self.z_convention not in ("appendix", "theorem"):
            raise DomainError(f"unknown z_convention {self.z_convention!r}")

    @property
    def load(self) -> float:
        """Normalized load: arrivals per slot per unit of decoding capability."""
        return self.arrival_rate / self.mud_degree


def slot_failure_prob(nu: float, k: int) -> float:
    """Probability that a slot carrying Poisson(nu) interfering packets overflows a k-MUD receiver.

    Equals 1 - P(Poisson(nu) <= k-1).  The partial sums use the running-product
    recurrence t_{m} = t_{m-1} * nu / m, so no factorial is ever formed and the
    evaluation stays accurate for any k representable in double precision.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if nu < 0:
        if nu < -_PROB_SLACK:
            raise DomainError(f"nu must be >= 0, got {nu}")
        nu = 0.0
    if nu == 0.0:
        return 0.0
    term = math.exp(-nu)
    total = term
    for m in range(1, k):
        term *= nu / m
        total += term
        if term == 0.0 and m > nu:
            break  # remaining tail mass is below double-precision resolution
    return max(0.0, 1.0 - total)


def arrival_mass(slot: int, cfg: SystemConfig) -> float:
    """Cumulative arrival intensity feeding slot ``slot`` (uniform variant).

    Ramps as slot * rate while a system that starts empty fills its first
    frame, and saturates at frame_length * rate.
    """
    if cfg.startup:
        return cfg.arrival_rate * min(slot, cfg.frame_length)
    return cfg.arrival_rate * cfg.frame_length


def replica_mass(slot: int, cfg: SystemConfig) -> float:
    """Intensity of past arrivals whose follow-up replicas can land in ``slot``.

    Zero at the first slot of an initially empty system; constant
    rate * (frame_length - 1) in the steady state.
    """
    if cfg.startup:
        return cfg.arrival_rate * min(slot - 1, cfg.frame_length - 1)
    return cfg.arrival_rate * (cfg.frame_length - 1)


def _check_prob(value: float, what: str) -> float:
    if not (-_PROB_SLACK <= value <= 1.0 + _PROB_SLACK):
        raise AssertionError(f"{what} left [0, 1]: {value!r}")
    return min(1.0, max(0.0, value))


@dataclass
class DEState:
    """Rolling state of one density-evolution run (windows over the last frame)."""

    slot: int
    q_window: deque
    q_sum: float
    p_window: deque
    p_sum: float
    q_bar: float = 1.0
    p_bar: float = 1.0
    p_own: float = 1.0  # first-slot variant: failure prob on the pinned edge
    loss: float = 1.0   # node-view packet loss prob at the latest slot

    def _refresh_sums(self):
        self.q_sum = float(sum(self.q_window))
        self.p_sum = float(sum(self.p_window))


def initial_state(cfg: SystemConfig) -> DEState:
    """All edge probabilities start at 1; pre-history windows are padded with 1."""
    n = cfg.frame_length
    if cfg.variant is Variant.UNIFORM_REPLICAS:
        q_window = deque([1.0] * n, maxlen=n)
        p_window = deque(maxlen=n)  # grows to min(i, n); includes the current slot
        p_sum = 0.0
    else:
        q_window = deque([1.0] * (n - 1), maxlen=n - 1)
        # forward-edge probs of the previous min(i-1, n-1) slots; an initially
        # empty system has no past, a steady-state one has an all-failed one.
        if cfg.startup:
            p_window = deque(maxlen=n - 1)
            p_sum = 0.0
        else:
            p_window = deque([1.0] * (n - 1), maxlen=n - 1)
            p_sum = float(n - 1)
    return DEState(slot=0, q_window=q_window, q_sum=float(sum(q_window)), p_window=p_window, p_sum=p_sum)


def de_step_uniform(state: DEState, cfg: SystemConfig, dist: DegreeDistribution) -> DEState:
    """Advance the uniform-replicas recursion by one slot."""
    n = cfg.frame_length
    i = state.slot + 1
    q_bar = _check_prob(state.q_sum / n, "q_bar")
    p = _check_prob(dist.eval_edge(q_bar), "p")
    if len(state.p_window) == state.p_window.maxlen:
        state.p_sum -= state.p_window[0]
    state.p_window.append(p)
    state.p_sum += p
    p_bar = _check_prob(state.p_sum / len(state.p_window), "p_bar")
    eta = arrival_mass(i, cfg) * p_bar * dist.mean_degree / n
    q = slot_failure_prob(eta, cfg.mud_degree)
    state.q_sum += q - state.q_window[0]
    state.q_window.append(q)
    state.slot = i
    state.q_bar, state.p_bar = q_bar, p_bar
    state.loss = _check_prob(dist.eval_node(q_bar), "loss")
    if i % _SUM_REFRESH == 0:
        state._refresh_sums()
    return state


def de_step_first_slot(state: DEState, cfg: SystemConfig, dist: DegreeDistribution) -> DEState:
    """Advance the first-slot-fixed recursion by one slot."""
    n = cfg.frame_length
    i = state.slot + 1
    q_bar = _check_prob(state.q_sum / (n - 1), "q_bar")
    p_own = _check_prob(dist.eval_node_shifted(q_bar), "p_own")
    p_bar = _check_prob(state.p_sum / len(state.p_window), "p_bar") if state.p_window else 0.0
    excess = dist.mean_degree - 1.0 if cfg.z_convention == "appendix" else dist.mean_degree
    z = excess / (n - 1)
    nu = cfg.arrival_rate * p_own + z * replica_mass(i, cfg) * p_bar
    q = slot_failure_prob(nu, cfg.mud_degree)
    p_fwd = _check_prob(q * dist.eval_edge_forward(q_bar), "p_fwd")
    if len(state.p_window) == state.p_window.maxlen:
        state.p_sum -= state.p_window[0]
    state.p_window.append(p_fwd)
    state.p_sum += p_fwd
    state.q_sum += q - state.q_window[0]
    state.q_window.append(q)
    state.slot = i
    state.q_bar, state.p_bar, state.p_own = q_bar, p_bar, p_own
    state.loss = _check_prob(q * p_own, "loss")
    if i % _SUM_REFRESH == 0:
        state._refresh_sums()
    return state


@dataclass
class DEResult:
    """Per-slot traces and the converged packet loss ratio of one DE run."""

    cfg: SystemConfig
    plr: float
    converged: bool
    slots: int
    plr_trace: np.ndarray
    q_trace: np.ndarray
    p_bar_trace: np.ndarray

    def trace_csv(self) -> str:
        """Deterministic CSV of the run: columns slot,q,p_bar,plr."""
        buf = io.StringIO()
        buf.write("slot,q,p_bar,plr\n")
        for i in range(self.slots):
            buf.write(
                f"{i + 1},{self.q_trace[i]:.17g},{self.p_bar_trace[i]:.17g},{self.plr_trace[i]:.17g}\n"
            )
        return buf.getvalue()


def run_de(
    cfg: SystemConfig,
    dist: DegreeDistribution,
    horizon: int | None = None,
    tol: float = 1e-10,
) -> DEResult:
    """Iterate the variant's recursion until the loss trace settles.

    Convergence is declared when the node-view loss changes by less than
    ``tol`` across a lag of one frame; otherwise the result carries
    ``converged=False`` after ``horizon`` slots (default 200 frames).
    """
    n = cfg.frame_length
    if horizon is None:
        horizon = 200 * n
    if horizon < 2 * n:
        raise DomainError(f"horizon must be >= 2*frame_length, got {horizon}")
    if tol <= 0:
        raise DomainError(f"tol must be > 0, got {tol}")
    if dist.max_degree > n:
        raise DomainError(
            f"max replica count {dist.max_degree} exceeds frame length {n}"
        )
    step = de_step_uniform if cfg.variant is Variant.UNIFORM_REPLICAS else de_step_first_slot
    state = initial_state(cfg)
    loss_trace, q_trace, p_bar_trace = [], [], []
    converged = False
    for i in range(1, horizon + 1):
        step(state, cfg, dist)
        loss_trace.append(state.loss)
        q_trace.append(state.q_window[-1])
        p_bar_trace.append(state.p_bar)
        if i > n and abs(loss_trace[-1] - loss_trace[-1 - n]) < tol:
            converged = True
            break
    return DEResult(
        cfg=cfg,
        plr=loss_trace[-1],
        converged=converged,
        slots=len(loss_trace),
        plr_trace=np.asarray(loss_trace),
        q_trace=np.asarray(q_trace),
        p_bar_trace=np.asarray(p_bar_trace),
    )


def asymptotic_fixed_point(
    dist: DegreeDistribution,
    arrival_rate: float,
    k: int,
    tol: float = 1e-12,
    fixed_point_map: str = "node",
    max_iter: int = 500_000,
) -> float:
    """Largest fixed point of the steady-state scalar map, iterated down from 1.

    ``fixed_point_map`` selects the user-side polynomial: "node" evaluates the
    packet-loss self-consistency x = eval_node(.), which is what the published
    threshold figures follow; "edge" evaluates x = eval_edge(.), the map the
    per-slot recursion's steady state actually contracts on.  Both use the
    effective load arrival_rate * mean_degree inside the slot-failure term.
    The iterate sequence is monotone non-increasing, so the limit is the
    largest fixed point in [0, 1].
    """
    if arrival_rate < 0:
        raise DomainError(f"arrival_rate must be >= 0, got {arrival_rate}")
    if fixed_point_map not in ("node", "edge"):
        raise DomainError(f"unknown fixed_point_map {fixed_point_map!r}")
    if arrival_rate == 0.0:
        return 0.0
    zeta = arrival_rate * dist.mean_degree
    evaluate = dist.eval_node if fixed_point_map == "node" else dist.eval_edge
    x = 1.0
    for _ in range(max_iter):
        g = slot_failure_prob(zeta * x, k)
        x_new = evaluate(g)
        if abs(x_new - x) < tol:
            return x_new
        x = x_new
    return x
