"""Quantities tracked along a trajectory: valid/small/big sets, stage
thresholds, the minimum-big potential, phase boundaries and terminal
verdicts."""

from __future__ import annotations

import enum
import math
import warnings
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .dynamics import Configuration

__all__ = [
    "Thresholds",
    "Terminal",
    "Stage",
    "Verdict",
    "RunOutcome",
    "ViolationEvent",
    "PhaseState",
    "PhaseRecord",
    "PhaseTrace",
    "valid_set",
    "symmetry_break_threshold",
    "small_threshold",
    "partition_small_big",
    "min_big_support",
    "y_value",
    "classify_terminal",
    "monitor_hyp_h",
    "track_phases",
]


@dataclass(frozen=True)
class Thresholds:
    """Constants behind every cutoff.

    The small-opinion cutoff is ``gamma * sqrt(n) / (k**small_k_exponent *
    log(n)**small_log_power)``; the two denominator knobs are configurable
    because only their product with ``gamma`` matters to the monitors.
    """

    gamma: float = 1.0
    alpha_bias: float = 1.0
    log_base: float = math.e
    c_stop: float = 3.0
    small_k_exponent: float = 1.5
    small_log_power: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "alpha_bias", "c_stop"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.log_base > 1:
            raise ValueError("log_base must exceed 1")
        if self.small_k_exponent < 0 or self.small_log_power < 0:
            raise ValueError("denominator exponents must be non-negative")

    def log(self, x: float) -> float:
        return math.log(x) / math.log(self.log_base)

    def check_adversary(self, beta: float | None) -> bool:
        """Warn (and return False) unless gamma exceeds the adversary's beta."""
        if beta is not None and not self.gamma > beta:
            warnings.warn(
                f"gamma={self.gamma} does not exceed adversary beta={beta}; "
                "small/big monitoring is outside its intended regime",
                stacklevel=2,
            )
            return False
        return True


class Terminal(enum.Enum):
    STRICT_CONSENSUS = "StrictConsensus"
    ALMOST_CONSENSUS = "AlmostConsensus"
    MAX_ROUNDS_EXCEEDED = "MaxRoundsExceeded"
    FAILED = "Failed"


class Stage(enum.Enum):
    SYMMETRY_BREAKING = "SymmetryBreaking"
    DROPPING = "Dropping"


@dataclass(frozen=True)
class ViolationEvent:
    round: int
    kind: str  # "small_to_big" or "nonvalid_mass"
    opinion: int | None
    value: int
    threshold: float

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "kind": self.kind,
            "opinion": self.opinion,
            "value": self.value,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class Verdict:
    terminal: Terminal | None
    winner: int
    winner_valid: bool
    residual: int


@dataclass(frozen=True)
class PhaseState:
    j: int
    stage: Stage
    entered_at: int


@dataclass
class PhaseRecord:
    """One value of ``j`` and what happened while it held.

    ``break_round`` is the first round the minimum support over the phase's
    opinions is at or below the symmetry-break threshold. The breaking
    opinion is then followed to ``j**2 * log n`` (``stage1_round``), to
    ``n / (2j)`` (``half_round``) and out of the tracked set
    (``drop_round``).
    """

    j: int
    entered_at: int
    threshold: float
    regime_too_small: bool = False
    break_round: int | None = None
    breaking_opinion: int | None = None
    stage1_round: int | None = None
    half_round: int | None = None
    drop_round: int | None = None
    dropped: tuple[int, ...] = ()
    ended_at: int | None = None

    @property
    def stage(self) -> Stage:
        return Stage.SYMMETRY_BREAKING if self.break_round is None else Stage.DROPPING

    @property
    def breaking_duration(self) -> int | None:
        if self.break_round is None:
            return None
        return self.break_round - self.entered_at

    @property
    def dropping_duration(self) -> int | None:
        if self.break_round is None or self.ended_at is None:
            return None
        return self.ended_at - self.break_round


@dataclass
class PhaseTrace:
    transitions: list[PhaseState] = field(default_factory=list)
    phases: list[PhaseRecord] = field(default_factory=list)

    def tau_break(self, j: int) -> int | None:
        for ph in self.phases:
            if ph.j == j:
                return ph.break_round
        return None


@dataclass
class RunOutcome:
    rounds: int
    terminal: Terminal
    winner: int | None
    winner_valid: bool
    residual: int
    violations: list[ViolationEvent] = field(default_factory=list)
    phases: PhaseTrace | None = None
    error: str | None = None


def valid_set(initial: Configuration) -> frozenset[int]:
    return frozenset(initial.active)


def symmetry_break_threshold(n: int, j: int, log_base: float = math.e) -> float:
    """``n/j - sqrt(j n log n)``; non-positive values mean RegimeTooSmall."""
    if n < 2 or j < 1:
        raise ValueError("need n >= 2 and j >= 1")
    return n / j - math.sqrt(j * n * math.log(n) / math.log(log_base))


def small_threshold(n: int, k: int, th: Thresholds | None = None) -> float:
    th = th or Thresholds()
    if n < 2 or k < 1:
        raise ValueError("need n >= 2 and k >= 1")
    denom = k**th.small_k_exponent * th.log(n) ** th.small_log_power
    return th.gamma * math.sqrt(n) / denom


def partition_small_big(
    c: Configuration, valid: Iterable[int], th: Thresholds | None = None
) -> tuple[frozenset[int], frozenset[int]]:
    """Split active opinions at the small threshold (small means ``<=``)."""
    k = max(1, len(frozenset(valid)))
    cut = small_threshold(c.n, k, th) if c.n >= 2 else 0.0
    small = frozenset(i for i, s in c.items() if s <= cut)
    return small, frozenset(c.active) - small


def min_big_support(c: Configuration, big: Iterable[int]) -> tuple[int, int]:
    big = sorted(big)
    if not big:
        raise ValueError("big-opinion set is empty")
    return min(((i, c[i]) for i in big), key=lambda kv: (kv[1], kv[0]))


def y_value(c: Configuration, big: Iterable[int], j: int | None = None) -> int:
    big = list(big)
    j = len(big) if j is None else j
    _, m = min_big_support(c, big)
    return c.n // j - m


def classify_terminal(
    c: Configuration, valid: Iterable[int], th: Thresholds | None = None
) -> Verdict:
    th = th or Thresholds()
    winner, top = c.argmax()
    residual = c.n - top
    if c.is_consensus():
        terminal = Terminal.STRICT_CONSENSUS
    elif residual <= th.c_stop * math.sqrt(c.n):
        terminal = Terminal.ALMOST_CONSENSUS
    else:
        terminal = None
    return Verdict(terminal, winner, winner in frozenset(valid), residual)


def monitor_hyp_h(
    trajectory: Sequence[Configuration],
    valid: Iterable[int],
    th: Thresholds | None = None,
    start_round: int = 0,
) -> list[ViolationEvent]:
    """Flag rounds where a small valid opinion turns big, or where total
    non-valid support exceeds the small threshold.

    ``trajectory[t]`` is the post-adversary configuration of round
    ``start_round + t``.
    """
    valid = frozenset(valid)
    events: list[ViolationEvent] = []
    if not trajectory:
        return events
    n = trajectory[0].n
    if n < 2:
        return events
    cut = small_threshold(n, max(1, len(valid)), th)
    prev = None
    for t, c in enumerate(trajectory):
        rnd = start_round + t
        if prev is not None:
            for i in sorted(valid):
                if prev[i] <= cut < c[i]:
                    events.append(ViolationEvent(rnd, "small_to_big", i, c[i], cut))
        nonvalid = sum(s for i, s in c.items() if i not in valid)
        if nonvalid > cut:
            events.append(ViolationEvent(rnd, "nonvalid_mass", None, nonvalid, cut))
        prev = c
    return events


def track_phases(
    trajectory: Sequence[Configuration],
    valid: Iterable[int],
    th: Thresholds | None = None,
    adversarial: bool = False,
    start_round: int = 0,
) -> PhaseTrace:
    """Segment a trajectory into phases of constant ``j``.

    ``j`` counts active opinions, or big opinions when ``adversarial``;
    a new phase opens whenever it changes.
    """
    th = th or Thresholds()
    valid = frozenset(valid)
    trace = PhaseTrace()
    current: PhaseRecord | None = None
    members: frozenset[int] = frozenset()
    for t, c in enumerate(trajectory):
        rnd = start_round + t
        n = c.n
        if adversarial:
            now = partition_small_big(c, valid, th)[1]
        else:
            now = frozenset(c.active)
        j = len(now)
        if current is None or j != current.j:
            if current is not None:
                current.ended_at = rnd
                if j < current.j:
                    current.drop_round = rnd
                    current.dropped = tuple(sorted(members - now))
                current = None
            if j >= 2 and n >= 2:
                thr = symmetry_break_threshold(n, j, th.log_base)
                current = PhaseRecord(j=j, entered_at=rnd, threshold=thr, regime_too_small=thr <= 0)
                trace.phases.append(current)
                trace.transitions.append(PhaseState(j, Stage.SYMMETRY_BREAKING, rnd))
        members = now
        if current is None or current.regime_too_small:
            continue
        if current.break_round is None:
            opinion, low = min_big_support(c, now)
            if low <= current.threshold:
                current.break_round = rnd
                current.breaking_opinion = opinion
                trace.transitions.append(PhaseState(j, Stage.DROPPING, rnd))
        if current.break_round is not None:
            s = c[current.breaking_opinion]
            if current.stage1_round is None and s <= j * j * th.log(n):
                current.stage1_round = rnd
            if current.half_round is None and s <= n / (2 * j):
                current.half_round = rnd
    return trace
