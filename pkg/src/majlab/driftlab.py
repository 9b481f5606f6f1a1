"""Empirical checks of drift and hitting-time statements.

The pieces are deliberately generic: a *process* is any callable taking a
``numpy.random.Generator`` and returning an iterator of states, and a
:class:`HittingSpec` says which integer potential of the state is being
driven towards its target.
"""

from __future__ import annotations

import csv
import enum
import math
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from .dynamics import Configuration, step_multinomial
from .seeding import seed_for

__all__ = [
    "ExitReason",
    "HittingSpec",
    "DriftEstimate",
    "TauSample",
    "HittingSummary",
    "estimate_one_step_drift",
    "epsilon_hat",
    "measure_hitting_time",
    "overshoot_probability",
    "birth_death_exact_hitting",
    "biased_walk",
    "majority_process",
    "min_gap_potential",
    "write_tau_csv",
]


class ExitReason(enum.Enum):
    TARGET_HIT = "TargetHit"
    EXITED_A = "ExitedA"
    CENSORED = "Censored"


@dataclass(frozen=True)
class HittingSpec:
    """Stop when ``potential(state) >= m`` or when any stop predicate fires
    (the state has left the allowed set)."""

    m: int
    alpha: float = 2.0
    lambda_claimed: float | None = None
    stop_predicates: tuple[Callable[[Any], bool], ...] = ()
    potential: Callable[[Any], int] = int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("target m must be at least 1")
        if not self.alpha > 1:
            raise ValueError("alpha must exceed 1")
        if self.lambda_claimed is not None and not self.lambda_claimed > 0:
            raise ValueError("lambda_claimed must be positive")

    @property
    def bound(self) -> float | None:
        if self.lambda_claimed is None:
            return None
        return 2.0 * self.alpha * self.m / self.lambda_claimed


@dataclass(frozen=True)
class DriftEstimate:
    mean_delta: float
    std_error: float
    samples: int


@dataclass(frozen=True)
class TauSample:
    tau: int
    y_at_tau: int
    exit_reason: ExitReason


@dataclass
class HittingSummary:
    samples: list[TauSample] = field(repr=False)
    mean_tau: float
    std_error: float
    ci95: tuple[float, float]
    censored_fraction: float
    bound: float | None = None
    # None when censoring makes the comparison inconclusive.
    bound_holds: bool | None = None


def estimate_one_step_drift(
    c: Configuration,
    f: Callable[[Configuration], float] | None = None,
    trials: int = 1000,
    rng: np.random.Generator | None = None,
) -> DriftEstimate:
    """Monte Carlo estimate of ``E[f(C') - f(c)]`` for one multinomial round.

    The default ``f`` is the minimum-gap potential over the opinions active
    in ``c`` (see :func:`min_gap_potential`).
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if rng is None:
        raise ValueError("rng is required")
    f = f or min_gap_potential(c.active, c.n)
    base = f(c)
    deltas = np.fromiter((f(step_multinomial(c, rng)) - base for _ in range(trials)), float, trials)
    return DriftEstimate(float(deltas.mean()), float(deltas.std(ddof=1) / math.sqrt(trials)), trials)


def epsilon_hat(estimate: DriftEstimate, n: int, j: int) -> float:
    """Drift in units of ``sqrt(n) / j**1.5``."""
    return estimate.mean_delta * j**1.5 / math.sqrt(n)


def min_gap_potential(opinions: Iterable[int], n: int) -> Callable[[Configuration], int]:
    """``floor(n/j) - min_i c_i`` over a fixed set of ``j`` opinions.

    The set is frozen at construction, so an opinion that dies counts as
    support 0 instead of dropping out of the minimum.
    """
    tracked = tuple(sorted(opinions))
    top = n // len(tracked)

    def potential(c: Configuration) -> int:
        return top - min(c[i] for i in tracked)

    return potential


def measure_hitting_time(
    process: Callable[[np.random.Generator], Iterator[Any]],
    spec: HittingSpec,
    trials: int,
    max_rounds: int,
    seed: int = 0,
) -> HittingSummary:
    """Run ``trials`` independent copies of ``process`` until the target is
    hit, a stop predicate fires, or ``max_rounds`` elapse.

    Trial ``i`` uses the stream ``seed_for(seed, 0, i)``. Censored trials
    are kept and reported; the mean is over uncensored trials only.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    samples = [_one_hitting_run(process(seed_for(seed, 0, i)), spec, max_rounds) for i in range(trials)]
    return summarize_hitting(samples, spec)


def _one_hitting_run(states: Iterator[Any], spec: HittingSpec, max_rounds: int) -> TauSample:
    y = 0
    for t, state in enumerate(states):
        y = int(spec.potential(state))
        if y >= spec.m:
            return TauSample(t, y, ExitReason.TARGET_HIT)
        if any(pred(state) for pred in spec.stop_predicates):
            return TauSample(t, y, ExitReason.EXITED_A)
        if t >= max_rounds:
            return TauSample(t, y, ExitReason.CENSORED)
    return TauSample(t, y, ExitReason.CENSORED)


def summarize_hitting(samples: Sequence[TauSample], spec: HittingSpec) -> HittingSummary:
    done = np.array([s.tau for s in samples if s.exit_reason is not ExitReason.CENSORED], float)
    censored = len(samples) - done.size
    if done.size:
        mean = float(done.mean())
        se = float(done.std(ddof=1) / math.sqrt(done.size)) if done.size > 1 else 0.0
    else:
        mean, se = math.nan, math.nan
    bound = spec.bound
    holds = None
    if bound is not None and done.size:
        if censored == 0:
            holds = mean <= bound
        else:
            # Counting censored runs at their cut-off understates the mean.
            floor_mean = float(np.mean([s.tau for s in samples]))
            holds = False if floor_mean > bound else None
    return HittingSummary(
        samples=list(samples),
        mean_tau=mean,
        std_error=se,
        ci95=(mean - 1.96 * se, mean + 1.96 * se),
        censored_fraction=censored / len(samples),
        bound=bound,
        bound_holds=holds,
    )


def overshoot_probability(samples: Sequence[TauSample], threshold: float) -> tuple[float, tuple[float, float]]:
    """Fraction of target-hitting runs with ``y_at_tau > threshold`` and its
    exact (Clopper-Pearson) 95% interval."""
    hits = [s for s in samples if s.exit_reason is ExitReason.TARGET_HIT]
    if not hits:
        raise ValueError("no TargetHit samples")
    over = sum(1 for s in hits if s.y_at_tau > threshold)
    ci = stats.binomtest(over, len(hits)).proportion_ci(0.95, method="exact")
    return over / len(hits), (float(ci.low), float(ci.high))


def birth_death_exact_hitting(p_up: float, p_down: float, start: int, m: int) -> float:
    """Exact expected first-passage time from ``start`` to ``m``.

    The chain moves +1 w.p. ``p_up``, -1 w.p. ``p_down`` and holds
    otherwise; at 0 a down-move holds. Writing ``T_i`` for the expected time
    to go from ``i`` to ``i + 1``: ``T_0 = 1/p_up`` and
    ``T_i = (1 + p_down * T_{i-1}) / p_up``; the answer is the sum of
    ``T_start .. T_{m-1}``.
    """
    if not 0 < p_up <= 1:
        raise ValueError("p_up must lie in (0, 1]")
    if p_down < 0 or p_up + p_down > 1 + 1e-15:
        raise ValueError("need p_down >= 0 and p_up + p_down <= 1")
    if start < 0 or m < 0:
        raise ValueError("states are non-negative")
    if start >= m:
        return 0.0
    step = 1.0 / p_up
    total = 0.0
    for i in range(m):
        if i > 0:
            step = (1.0 + p_down * step) / p_up
        if i >= start:
            total += step
    return total


def biased_walk(p_up: float, p_down: float, start: int = 0, block: int = 512):
    """Process factory for the lazy birth-death walk reflected at 0."""

    def process(rng: np.random.Generator) -> Iterator[int]:
        y = start
        while True:
            u = rng.random(block)
            for x in u:
                yield y
                if x < p_up:
                    y += 1
                elif x < p_up + p_down and y > 0:
                    y -= 1

    return process


def majority_process(c0: Configuration):
    """Process factory: the multinomial 3-majority chain from ``c0``."""

    def process(rng: np.random.Generator) -> Iterator[Configuration]:
        c = c0
        while True:
            yield c
            c = step_multinomial(c, rng)

    return process


def write_tau_csv(path, samples: Sequence[TauSample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "tau", "y_at_tau", "exit_reason"])
        for i, s in enumerate(samples):
            w.writerow([i, s.tau, s.y_at_tau, s.exit_reason.value])
