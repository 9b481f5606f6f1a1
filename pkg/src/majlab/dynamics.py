"""One synchronous round of the 3-majority rule on the complete graph.

A round is described entirely by the configuration (per-opinion support
counts), so there are two ways to advance it:

* :func:`step_multinomial` draws the whole next configuration at once with
  sequential conditional binomials, O(k) per round regardless of ``n``.
* :func:`step_node_level` simulates every node sampling three nodes; it is
  slow and exists to cross-check the multinomial engine.

:func:`brute_force_adoption_distribution` enumerates ordered opinion triples
and is the independent oracle for the closed form in
:func:`adoption_distribution`.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections.abc import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Configuration",
    "OpinionRegistry",
    "TieBreakRule",
    "EnumerationTooLarge",
    "adoption_distribution",
    "expected_next",
    "expected_upper_bound",
    "step_multinomial",
    "step_node_level",
    "single_node_outcome",
    "brute_force_adoption_distribution",
    "assignment_from_configuration",
    "configuration_of",
]

BRUTE_FORCE_MAX_OPINIONS = 64


class EnumerationTooLarge(ValueError):
    pass


class TieBreakRule(enum.Enum):
    """What a node adopts when its three samples are pairwise distinct."""

    FIRST_SAMPLE = "first"
    UNIFORM_AMONG_SAMPLE = "uniform"


class Configuration:
    """Sparse support counts over opinion ids plus the population size.

    Zero-support opinions are dropped on construction, so ``active`` is
    exactly the set of opinions held by at least one node. Instances are
    immutable and hashable.
    """

    __slots__ = ("_supports", "_n")

    def __init__(self, supports: Mapping[int, int], n: int | None = None):
        items = []
        for i, c in supports.items():
            i, c = int(i), int(c)
            if i < 0:
                raise ValueError(f"opinion id must be non-negative, got {i}")
            if c < 0:
                raise ValueError(f"negative support {c} for opinion {i}")
            if c:
                items.append((i, c))
        items.sort()
        total = sum(c for _, c in items)
        if n is None:
            n = total
        if n < 1:
            raise ValueError("population must be at least 1")
        if total != n:
            raise ValueError(f"supports sum to {total}, expected n={n}")
        self._supports = dict(items)
        self._n = int(n)

    @classmethod
    def from_counts(cls, counts: Iterable[int]) -> Configuration:
        """Opinion ``i`` gets ``counts[i]``."""
        return cls(dict(enumerate(counts)))

    @classmethod
    def uniform(cls, n: int, k: int) -> Configuration:
        """``n`` nodes spread over ``k`` opinions; remainders go to the lowest ids."""
        if k < 1 or k > n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        q, r = divmod(n, k)
        return cls.from_counts(q + (1 if i < r else 0) for i in range(k))

    @property
    def n(self) -> int:
        return self._n

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(self._supports)

    @property
    def k(self) -> int:
        return len(self._supports)

    def supports(self) -> dict[int, int]:
        return dict(self._supports)

    def items(self):
        return self._supports.items()

    def counts(self) -> np.ndarray:
        return np.fromiter(self._supports.values(), dtype=np.int64, count=self.k)

    def __getitem__(self, opinion: int) -> int:
        return self._supports.get(opinion, 0)

    def __contains__(self, opinion: object) -> bool:
        return opinion in self._supports

    def __len__(self) -> int:
        return len(self._supports)

    def __iter__(self):
        return iter(self._supports)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self._n == other._n and self._supports == other._supports

    def __hash__(self) -> int:
        return hash((self._n, tuple(self._supports.items())))

    def __repr__(self) -> str:
        return f"Configuration({self.to_text()!r})"

    def is_consensus(self) -> bool:
        return len(self._supports) == 1

    def argmax(self) -> tuple[int, int]:
        """Largest opinion and its support, lowest id on ties."""
        best = max(self._supports.items(), key=lambda kv: (kv[1], -kv[0]))
        return best

    def to_text(self) -> str:
        body = ",".join(f"{i}:{c}" for i, c in self._supports.items())
        return f"n={self._n};{body}"

    @classmethod
    def from_text(cls, text: str) -> Configuration:
        head, _, body = text.strip().partition(";")
        if not head.startswith("n="):
            raise ValueError(f"malformed configuration text: {text!r}")
        supports = {}
        for part in filter(None, body.split(",")):
            i, _, c = part.partition(":")
            supports[int(i)] = int(c)
        return cls(supports, int(head[2:]))


class OpinionRegistry:
    """Append-only table of opinion ids; ids are never reused."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        for label in labels:
            self.register(label)

    def register(self, label: str | None = None) -> int:
        new_id = len(self._labels)
        self._labels.append(label if label is not None else f"op{new_id}")
        return new_id

    def ensure(self, opinion: int) -> None:
        while len(self._labels) <= opinion:
            self.register()

    def label(self, opinion: int) -> str:
        return self._labels[opinion]

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, opinion: object) -> bool:
        return isinstance(opinion, int) and 0 <= opinion < len(self._labels)


def _fractions(c: Configuration) -> np.ndarray:
    return c.counts() / c.n


def adoption_distribution(c: Configuration) -> dict[int, float]:
    """Probability that a single node adopts each active opinion next round.

    Evaluated as ``x_i * (1 + x_i - sum_l x_l**2)`` with ``x = c / n`` so
    that nothing of order ``n**3`` is ever formed.
    """
    x = _fractions(c)
    s2 = float(np.dot(x, x))
    p = x * (1.0 + x - s2)
    return dict(zip(c.active, p.tolist()))


def expected_next(c: Configuration) -> dict[int, float]:
    return {i: c.n * p for i, p in adoption_distribution(c).items()}


def expected_upper_bound(c: Configuration, opinion: int) -> float:
    """``c_i * (1 + c_i/n - 1/|W|)``, which dominates ``expected_next(c)[i]``."""
    if opinion not in c:
        raise ValueError(f"opinion {opinion} is not active in {c.to_text()}")
    ci = c[opinion]
    return ci * (1.0 + ci / c.n - 1.0 / c.k)


def step_multinomial(c: Configuration, rng: np.random.Generator) -> Configuration:
    """Draw the next configuration as Multinomial(n, adoption_distribution(c)).

    The multinomial is decomposed into conditional binomials: opinion ``i``
    receives Binomial(remaining nodes, p_i / remaining mass).
    """
    ids = c.active
    p = np.fromiter(adoption_distribution(c).values(), dtype=float, count=len(ids))
    # Suffix sums avoid the drift of repeatedly subtracting from 1.0.
    tail = np.cumsum(p[::-1])[::-1]
    remaining = c.n
    out: dict[int, int] = {}
    for idx in range(len(ids) - 1):
        if remaining == 0:
            break
        mass = tail[idx]
        q = min(1.0, p[idx] / mass) if mass > 0.0 else 0.0
        drawn = int(rng.binomial(remaining, q))
        if drawn:
            out[ids[idx]] = drawn
        remaining -= drawn
    if remaining:
        out[ids[-1]] = out.get(ids[-1], 0) + remaining
    return Configuration(out, c.n)


def single_node_outcome(
    sample: Sequence[int],
    rule: TieBreakRule = TieBreakRule.FIRST_SAMPLE,
    rng: np.random.Generator | None = None,
) -> int:
    a, b, d = sample
    if a == b or a == d:
        return a
    if b == d:
        return b
    if rule is TieBreakRule.FIRST_SAMPLE:
        return a
    if rng is None:
        raise ValueError("UNIFORM_AMONG_SAMPLE needs an rng")
    return sample[int(rng.integers(3))]


def assignment_from_configuration(c: Configuration) -> np.ndarray:
    """Node-level state: node ``v`` holds ``a[v]``; blocks in id order."""
    return np.repeat(np.asarray(c.active, dtype=np.int64), c.counts())


def configuration_of(a: np.ndarray) -> Configuration:
    ids, counts = np.unique(a, return_counts=True)
    return Configuration(dict(zip(ids.tolist(), counts.tolist())), int(a.size))


def step_node_level(
    a: np.ndarray,
    rule: TieBreakRule = TieBreakRule.FIRST_SAMPLE,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Every node samples three nodes with replacement (itself included)."""
    if rng is None:
        raise ValueError("rng is required")
    n = a.size
    seen = a[rng.integers(0, n, size=(n, 3))]
    s0, s1, s2 = seen[:, 0], seen[:, 1], seen[:, 2]
    # s0 already wins on s0==s1, s0==s2 and (first-sample) all-distinct.
    out = s0.copy()
    late_pair = (s1 == s2) & (s0 != s1)
    out[late_pair] = s1[late_pair]
    if rule is TieBreakRule.UNIFORM_AMONG_SAMPLE:
        distinct = (s0 != s1) & (s0 != s2) & (s1 != s2)
        rows = np.flatnonzero(distinct)
        out[rows] = seen[rows, rng.integers(0, 3, size=rows.size)]
    return out


def brute_force_adoption_distribution(
    c: Configuration, rule: TieBreakRule = TieBreakRule.FIRST_SAMPLE
) -> dict[int, float]:
    """Enumerate all ``k**3`` ordered opinion triples a node can observe."""
    if c.k > BRUTE_FORCE_MAX_OPINIONS:
        raise EnumerationTooLarge(
            f"{c.k} active opinions exceeds the enumeration guard of {BRUTE_FORCE_MAX_OPINIONS}"
        )
    frac = {i: cnt / c.n for i, cnt in c.items()}
    terms: dict[int, list[float]] = {i: [] for i in c.active}
    for triple in itertools.product(c.active, repeat=3):
        w = frac[triple[0]] * frac[triple[1]] * frac[triple[2]]
        a, b, d = triple
        if rule is TieBreakRule.UNIFORM_AMONG_SAMPLE and a != b and a != d and b != d:
            for o in triple:
                terms[o].append(w / 3.0)
        else:
            terms[single_node_outcome(triple, TieBreakRule.FIRST_SAMPLE)].append(w)
    return {i: math.fsum(ts) for i, ts in terms.items()}
