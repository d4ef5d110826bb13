"""User degree distributions: the replica-count polynomial and its derived forms.

A distribution assigns probability ``p_d`` to transmitting ``d`` replicas of a
packet.  Evaluations come in several perspectives used by the analysis:

* ``eval_node(x)``      -- sum_d p_d x^d                      (node view)
* ``eval_edge(x)``      -- sum_d d p_d x^(d-1) / mean         (edge view)
* ``eval_node_shifted`` -- sum_d p_d x^(d-1)                  (node view per remaining replica)
* ``eval_edge_forward`` -- sum_d (d-1) p_d x^(d-2) / (mean-1) (edge view over non-first replicas)

The forward-edge form is the edge perspective of the replicas that are *not*
pinned to the arrival slot; it is what the first-slot-fixed recursion needs.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NegativeCoefficient, NotNormalized, ZeroDegreePresent

logger = logging.getLogger(__name__)

# |sum - 1| <= EXACT_TOL: accepted as-is.  <= RENORM_TOL: renormalized with a
# warning; published distributions are off by up to 2.7e-3 (L2 sums to 1.0027,
# L3 to 0.999).  Beyond: rejected.
EXACT_TOL = 1e-9
RENORM_TOL = 5e-3

_DOMAIN_SLACK = 1e-12

_TERM_RE = re.compile(
    r"^\s*(?:(?P<coef>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*\*?\s*)?x(?:\s*\^\s*(?P<deg>\d+))?\s*$"
)


@dataclass(frozen=True)
class DegreeDistribution:
    """Immutable, validated replica-count distribution.

    ``degrees``/``probs`` are parallel tuples sorted by degree (sparse storage;
    published distributions have 2-3 nonzero terms).
    """

    degrees: tuple[int, ...]
    probs: tuple[float, ...]
    max_degree: int = field(init=False)
    mean_degree: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "max_degree", max(self.degrees))
        object.__setattr__(
            self, "mean_degree", float(sum(d * p for d, p in zip(self.degrees, self.probs)))
        )

    # -- evaluations ---------------------------------------------------------

    def _check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -_DOMAIN_SLACK) or np.any(x > 1.0 + _DOMAIN_SLACK):
            raise DomainError(f"argument outside [0, 1]: {x!r}")
        return np.clip(x, 0.0, 1.0)

    def eval_node(self, x):
        """sum_d p_d x^d; probability that all d replica slots are in a given state."""
        x = self._check_domain(x)
        out = sum(p * x**d for d, p in zip(self.degrees, self.probs))
        return float(out) if out.ndim == 0 else out

    def eval_edge(self, x):
        """Edge-perspective polynomial sum_d d p_d x^(d-1) / mean."""
        x = self._check_domain(x)
        out = sum(d * p * x ** (d - 1) for d, p in zip(self.degrees, self.probs))
        out = out / self.mean_degree
        return float(out) if out.ndim == 0 else out

    def eval_node_shifted(self, x):
        """sum_d p_d x^(d-1): node view with one replica held out."""
        x = self._check_domain(x)
        out = sum(p * x ** (d - 1) for d, p in zip(self.degrees, self.probs))
        return float(out) if out.ndim == 0 else out

    def eval_edge_forward(self, x):
        """Edge perspective over the d-1 replicas beyond the first.

        sum_d (d-1) p_d x^(d-2) / (mean-1).  Zero when the mean degree is 1
        (no forward replicas exist).
        """
        x = self._check_domain(x)
        excess = self.mean_degree - 1.0
        if excess <= 0.0:
            out = np.zeros_like(x)
        else:
            out = (
                sum(
                    (d - 1) * p * x ** (d - 2)
                    for d, p in zip(self.degrees, self.probs)
                    if d >= 2
                )
                / excess
            )
            out = np.asarray(out, dtype=float)
        return float(out) if out.ndim == 0 else out

    # -- sampling ------------------------------------------------------------

    def sample_degree(self, rng: np.random.Generator, size=None):
        """Draw replica counts; ``rng`` is caller-owned (the instance itself is immutable)."""
        idx = rng.choice(len(self.degrees), size=size, p=self.probs)
        deg = np.asarray(self.degrees)[idx]
        return int(deg) if size is None else deg

    # -- text form -----------------------------------------------------------

    def as_text(self) -> str:
        """Round-trippable polynomial text, e.g. ``"0.86*x^3 + 0.14*x^8"``."""
        terms = []
        for d, p in zip(self.degrees, self.probs):
            coef = repr(p)  # shortest exact representation
            terms.append(f"{coef}*x^{d}" if coef != "1.0" else f"x^{d}")
        return " + ".join(terms)

    def as_coeffs(self) -> dict[int, float]:
        return dict(zip(self.degrees, self.probs))


def make_distribution(coeffs: dict[int, float]) -> DegreeDistribution:
    """Validate and build a distribution from a {degree: probability} map."""
    if not coeffs:
        raise NotNormalized("empty coefficient map")
    for d, p in coeffs.items():
        if int(d) != d or d < 1:
            raise ZeroDegreePresent(f"degree {d} < 1: every packet needs at least one replica")
        if p < 0:
            raise NegativeCoefficient(f"coefficient for degree {d} is negative: {p}")
    total = float(sum(coeffs.values()))
    err = abs(total - 1.0)
    if err > RENORM_TOL:
        raise NotNormalized(f"coefficients sum to {total}, off by {err:.3g}")
    items = sorted((int(d), float(p)) for d, p in coeffs.items() if p > 0.0)
    if not items:
        raise NotNormalized("all coefficients are zero")
    if err > EXACT_TOL:
        logger.warning("renormalizing degree distribution: coefficients sum to %.6f", total)
        items = [(d, p / total) for d, p in items]
    degrees, probs = zip(*items)
    return DegreeDistribution(degrees=degrees, probs=probs)


def parse_distribution(text: str) -> DegreeDistribution:
    """Parse polynomial text of the form ``"0.86*x^3 + 0.14*x^8"``."""
    coeffs: dict[int, float] = {}
    for term in text.split("+"):
        m = _TERM_RE.match(term)
        if m is None:
            raise NotNormalized(f"cannot parse term {term.strip()!r}")
        coef = float(m.group("coef")) if m.group("coef") else 1.0
        deg = int(m.group("deg")) if m.group("deg") else 1
        coeffs[deg] = coeffs.get(deg, 0.0) + coef
    return make_distribution(coeffs)


# Built-in presets used throughout the experiments.  L3 is published with
# coefficients summing to 0.999 and is renormalized on construction.
PRESET_COEFFS: dict[str, dict[int, float]] = {
    "L0": {5: 1.0},
    "L1": {3: 0.86, 8: 0.14},
    "L2": {2: 0.8793, 7: 0.003, 11: 0.1204},
    "L3": {2: 0.929, 11: 0.07},
}


def preset(name: str) -> DegreeDistribution:
    try:
        coeffs = PRESET_COEFFS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESET_COEFFS)}") from None
    return make_distribution(coeffs)


def resolve_distribution(spec: str) -> DegreeDistribution:
    """Accept a preset name ('L1') or polynomial text ('0.86*x^3 + 0.14*x^8')."""
    if spec in PRESET_COEFFS:
        return preset(spec)
    return parse_distribution(spec)
