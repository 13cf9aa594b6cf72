"""Choosing which WHT bases span the low-rank space.

Three strategies are supported:

* ``lp_l1``   triangular low-pass, every (i, j) with ``i + j <= r_l1 - 1``
* ``lp_linf`` square low-pass, every (i, j) with ``max(i, j) <= r_inf - 1``
* ``lhe``     the top-r bases by energy profiled from observed output gradients

``full`` selects all n*n bases and exists for parity runs.  Indices are 0-based.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from src.errors import SelectionError, ShapeError
from src.wht import spectrum

log = logging.getLogger(__name__)

STRATEGIES = ("lp_l1", "lp_linf", "lhe", "full")

DEFAULT_PROFILE_STEPS = 8


def _frequency_key(pair):
    i, j = pair
    return (i + j, i)


@dataclass(frozen=True)
class BaseIndexSet:
    """Ordered, duplicate-free selection of (i, j) bases for an order-n transform."""

    strategy: str
    n: int
    indices: tuple
    param: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise SelectionError(f"unknown strategy {self.strategy!r}")
        pairs = tuple((int(i), int(j)) for i, j in self.indices)
        if not pairs:
            raise SelectionError("a base selection needs at least one index")
        if len(set(pairs)) != len(pairs):
            raise SelectionError("duplicate base indices in selection")
        for i, j in pairs:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise SelectionError(f"base ({i}, {j}) is outside the order-{self.n} grid")
        object.__setattr__(self, "indices", pairs)

    @property
    def rank(self):
        return len(self.indices)

    def as_set(self):
        return frozenset(self.indices)

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "n": self.n,
            "param": self.param,
            "rank": self.rank,
            "indices": [list(p) for p in self.indices],
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                strategy=data["strategy"],
                n=int(data["n"]),
                indices=tuple(tuple(p) for p in data["indices"]),
                param=int(data.get("param", 0)),
            )
        except SelectionError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise SelectionError(f"malformed base selection: {e}") from e

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _check_param(value, n, label):
    if value < 1:
        raise SelectionError(f"{label} must be positive, got {value}")
    if value > n:
        raise SelectionError(f"{label}={value} exceeds the order-{n} base grid")


def lp_l1_select(r_l1, n):
    """Triangular low-pass selection of rank ``r_l1 * (r_l1 + 1) / 2``."""
    _check_param(r_l1, n, "r_l1")
    pairs = [(i, j) for i in range(r_l1) for j in range(r_l1) if i + j <= r_l1 - 1]
    pairs.sort(key=_frequency_key)
    return BaseIndexSet(strategy="lp_l1", n=n, indices=tuple(pairs), param=r_l1)


def lp_linf_select(r_inf, n):
    """Square low-pass selection of rank ``r_inf ** 2``."""
    _check_param(r_inf, n, "r_inf")
    pairs = [(i, j) for i in range(r_inf) for j in range(r_inf)]
    pairs.sort(key=_frequency_key)
    return BaseIndexSet(strategy="lp_linf", n=n, indices=tuple(pairs), param=r_inf)


def full_select(n):
    """Every base of the order-n grid."""
    sel = lp_linf_select(n, n)
    return BaseIndexSet(strategy="full", n=n, indices=sel.indices, param=n)


class EnergyProfile:
    """Running sum of squared WHT coefficients per base.  Single writer."""

    def __init__(self, n):
        self.n = n
        self.energy = np.zeros((n, n), dtype=np.float64)
        self.steps_seen = 0

    def __repr__(self):
        return f"EnergyProfile(n={self.n}, steps_seen={self.steps_seen})"


def lhe_profile_step(profile, g_y, plan):
    """Accumulate the energy of one output-gradient batch and return the profile."""
    if plan.n != profile.n:
        raise ShapeError(f"profile has order {profile.n} but plan has order {plan.n}")
    profile.energy += spectrum(g_y, plan)
    profile.steps_seen += 1
    log.debug("LHE profile step %d (total energy %.4g)", profile.steps_seen, profile.energy.sum())
    return profile


def lhe_select(profile, r):
    """The ``r`` bases with the largest accumulated energy; ties go to lower frequencies."""
    if profile.steps_seen < 1:
        raise SelectionError("energy profile is empty; run at least one profiling step")
    n = profile.n
    if not 1 <= r <= n * n:
        raise SelectionError(f"rank {r} is outside 1..{n * n}")
    pairs = [(i, j) for i in range(n) for j in range(n)]
    pairs.sort(key=lambda p: (-profile.energy[p], p[0] + p[1], p[0]))
    chosen = tuple(pairs[:r])
    log.info("LHE selected %d bases after %d profiling steps", r, profile.steps_seen)
    return BaseIndexSet(strategy="lhe", n=n, indices=chosen, param=r)


def select(strategy, param, n, profile=None):
    """Dispatch by strategy name, as used by configs and the CLI."""
    if strategy == "lp_l1":
        return lp_l1_select(param, n)
    if strategy == "lp_linf":
        return lp_linf_select(param, n)
    if strategy == "full":
        return full_select(n)
    if strategy == "lhe":
        if profile is None:
            raise SelectionError("lhe selection needs an energy profile")
        return lhe_select(profile, param)
    raise SelectionError(f"unknown strategy {strategy!r}")
