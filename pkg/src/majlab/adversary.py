"""Budgeted opinion-replacement adversaries.

After each round's update an adversary may move up to ``F`` nodes between
opinions. A move is recorded as a :data:`Displacement`, a sparse map of
signed per-opinion deltas that must sum to zero and whose absolute values
sum to at most ``2F``.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dynamics import Configuration, OpinionRegistry
from .errors import BudgetExceeded, NegativeSupport, NonConserving, RegimeTooSmall
from .observer import Thresholds, partition_small_big, small_threshold

__all__ = [
    "AdversaryKind",
    "AdversarySpec",
    "Displacement",
    "History",
    "propose",
    "apply",
    "check_displacement",
    "f_dynamic_bound",
    "f_static_bound",
]

Displacement = dict[int, int]
History = list[tuple[Configuration, Configuration]]


class AdversaryKind(enum.Enum):
    NULL = "Null"
    STATIC_PLANT = "StaticPlant"
    DYNAMIC_SUSTAIN = "DynamicSustain"
    DYNAMIC_BALANCE_BIG = "DynamicBalanceBig"
    DYNAMIC_FEED_MIN_BIG = "DynamicFeedMinBig"
    DYNAMIC_RANDOM = "DynamicRandom"

    @classmethod
    def parse(cls, value: str | AdversaryKind) -> AdversaryKind:
        if isinstance(value, cls):
            return value
        for kind in cls:
            if value.lower() in (kind.value.lower(), kind.name.lower()):
                return kind
        raise ValueError(f"unknown adversary kind {value!r}")


@dataclass(frozen=True)
class AdversarySpec:
    """Strategy, budget ``F`` and optional target opinion.

    Recognized ``params``:

    * StaticPlant: ``round`` (activation round, default 0), ``source``
      (``"proportional"`` over the other active opinions, or ``"largest"``
      to drain the biggest opinions first).
    * DynamicSustain: ``level``, the support the target is topped up to
      (default ``F``).
    * Big-set strategies: ``small_threshold`` to override the default cutoff.
    """

    kind: AdversaryKind = AdversaryKind.NULL
    budget: int = 0
    target: int | None = None
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", AdversaryKind.parse(self.kind))
        if self.budget < 0:
            raise ValueError("budget F must be non-negative")

    @property
    def is_null(self) -> bool:
        return self.kind is AdversaryKind.NULL or self.budget == 0


def check_displacement(c: Configuration, d: Mapping[int, int], budget: int | None = None) -> None:
    total = sum(d.values())
    if total != 0:
        raise NonConserving(f"deltas sum to {total}, not 0")
    moved = sum(abs(v) for v in d.values())
    if budget is not None and moved > 2 * budget:
        raise BudgetExceeded(f"sum |D_i| = {moved} exceeds 2F = {2 * budget}")
    for i, v in d.items():
        if c[i] + v < 0:
            raise NegativeSupport(f"opinion {i} would have support {c[i] + v}")


def apply(
    c: Configuration,
    d: Mapping[int, int],
    budget: int | None = None,
    registry: OpinionRegistry | None = None,
) -> Configuration:
    check_displacement(c, d, budget)
    if not any(d.values()):
        return c
    supports = c.supports()
    for i, v in d.items():
        supports[i] = supports.get(i, 0) + v
        if registry is not None and supports[i] > 0:
            registry.ensure(i)
    return Configuration(supports, c.n)


def _largest_remainder(weights: Mapping[int, int], amount: int) -> dict[int, int]:
    """Split ``amount`` integer units proportionally to ``weights``.

    Floors first, then one extra unit to the largest fractional parts
    (lowest id on ties). Never exceeds a weight when ``amount <= sum``.
    """
    total = sum(weights.values())
    if amount <= 0 or total <= 0:
        return {}
    amount = min(amount, total)
    shares: dict[int, int] = {}
    fracs = []
    for i in sorted(weights):
        q, r = divmod(amount * weights[i], total)
        shares[i] = q
        fracs.append((-r, i))
    short = amount - sum(shares.values())
    for _, i in sorted(fracs)[:short]:
        shares[i] += 1
    return {i: s for i, s in shares.items() if s}


def _take_from_largest(c: Configuration, amount: int, exclude: Iterable[int]) -> dict[int, int]:
    exclude = set(exclude)
    order = sorted((i for i in c.active if i not in exclude), key=lambda i: (-c[i], i))
    taken: dict[int, int] = {}
    for i in order:
        if amount <= 0:
            break
        x = min(amount, c[i])
        taken[i] = x
        amount -= x
    return taken


def _combine(plus: Mapping[int, int], minus: Mapping[int, int]) -> Displacement:
    d: Displacement = {}
    for i, v in plus.items():
        d[i] = d.get(i, 0) + v
    for i, v in minus.items():
        d[i] = d.get(i, 0) - v
    return {i: v for i, v in sorted(d.items()) if v}


def _fresh_target(history: History, c: Configuration) -> int:
    seen = set(c.active)
    for pre, post in history:
        seen.update(pre.active)
        seen.update(post.active)
    return max(seen) + 1


def _valid(history: History, c: Configuration) -> frozenset[int]:
    return frozenset((history[0][0] if history else c).active)


def _big(spec: AdversarySpec, history: History, c: Configuration) -> list[int]:
    valid = _valid(history, c)
    cut = spec.params.get("small_threshold")
    if cut is None:
        _, big = partition_small_big(c, valid)
    else:
        big = frozenset(i for i, s in c.items() if s > cut)
    return sorted(big)


def propose(
    spec: AdversarySpec,
    history: History,
    c: Configuration,
    rng: np.random.Generator | None = None,
) -> Displacement:
    """Displacement the strategy applies to the freshly updated ``c``.

    ``history`` holds the (pre, post) pairs of all completed rounds, so the
    current round index is ``len(history)``.
    """
    F = spec.budget
    if spec.is_null:
        return {}
    kind = spec.kind
    round_index = len(history)

    if kind is AdversaryKind.STATIC_PLANT:
        if round_index != int(spec.params.get("round", 0)):
            return {}
        target = spec.target if spec.target is not None else _fresh_target(history, c)
        sources = {i: s for i, s in c.items() if i != target}
        if spec.params.get("source", "proportional") == "largest":
            taken = _take_from_largest(c, F, {target})
        else:
            taken = _largest_remainder(sources, F)
        return _combine({target: sum(taken.values())}, taken)

    if kind is AdversaryKind.DYNAMIC_SUSTAIN:
        target = spec.target if spec.target is not None else _fresh_target(history, c)
        level = int(spec.params.get("level", F))
        add = min(F, max(0, level - c[target]))
        taken = _take_from_largest(c, add, {target})
        return _combine({target: sum(taken.values())}, taken)

    if kind is AdversaryKind.DYNAMIC_BALANCE_BIG:
        big = _big(spec, history, c)
        if len(big) < 2:
            return {}
        hi = min(big, key=lambda i: (-c[i], i))
        lo = min(big, key=lambda i: (c[i], i))
        move = min(F, (c[hi] - c[lo]) // 2)
        return _combine({lo: move}, {hi: move}) if move > 0 else {}

    if kind is AdversaryKind.DYNAMIC_FEED_MIN_BIG:
        big = _big(spec, history, c)
        if len(big) < 2:
            return {}
        lo = min(big, key=lambda i: (c[i], i))
        taken = _largest_remainder({i: c[i] for i in big if i != lo}, F)
        return _combine({lo: sum(taken.values())}, taken)

    if kind is AdversaryKind.DYNAMIC_RANDOM:
        if rng is None:
            raise ValueError("DynamicRandom needs an rng")
        m = int(rng.integers(0, min(F, c.n) + 1))
        if m == 0:
            return {}
        ids = list(c.active)
        src = rng.multivariate_hypergeometric(c.counts(), m)
        dests = sorted(set(ids) | ({spec.target} if spec.target is not None else set()))
        dst = rng.multinomial(m, np.full(len(dests), 1.0 / len(dests)))
        return _combine(dict(zip(dests, dst.tolist())), dict(zip(ids, src.tolist())))

    raise AssertionError(f"unhandled adversary kind {kind}")


def f_dynamic_bound(n: int, k: int, beta: float = 1.0, log_base: float = math.e) -> int:
    """Largest dynamic budget ``floor(beta sqrt(n) / (k^(5/2) log n))``."""
    if n < 2 or k < 1:
        raise ValueError("need n >= 2 and k >= 1")
    log_n = math.log(n) / math.log(log_base)
    return max(0, math.floor(beta * math.sqrt(n) / (k**2.5 * log_n)))


def f_static_bound(n: int, k: int, log_base: float = math.e) -> int:
    """Largest static budget ``floor(n/k - sqrt(k n log n))``."""
    if n < 2 or k < 1:
        raise ValueError("need n >= 2 and k >= 1")
    gap = math.sqrt(k * n * math.log(n) / math.log(log_base))
    if not n / k > gap:
        raise RegimeTooSmall(f"n/k = {n / k:.4g} does not exceed sqrt(k n log n) = {gap:.4g}")
    return math.floor(n / k - gap)


def realized_budget(d: Mapping[int, int]) -> int:
    """Nodes actually moved by ``d`` (half of ``sum |D_i|``)."""
    return sum(v for v in d.values() if v > 0)


def displacements_valid(history: Sequence[tuple[Configuration, Configuration]], budget: int) -> bool:
    for pre, post in history:
        d = {i: post[i] - pre[i] for i in set(pre.active) | set(post.active)}
        try:
            check_displacement(pre, d, budget)
        except (NonConserving, BudgetExceeded, NegativeSupport):
            return False
    return True
