"""Experiment grids, the per-trial round loop, sweeps and their outputs."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import statistics
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import adversary as adv
from .dynamics import (
    Configuration,
    OpinionRegistry,
    TieBreakRule,
    assignment_from_configuration,
    configuration_of,
    step_multinomial,
    step_node_level,
)
from .errors import AdversaryError
from .observer import (
    RunOutcome,
    Terminal,
    Thresholds,
    classify_terminal,
    monitor_hyp_h,
    track_phases,
    valid_set,
)
from .seeding import seed_for

log = logging.getLogger(__name__)

NODE_LEVEL_MAX_N = 10**6
DYNAMIC_KINDS = frozenset(
    {
        adv.AdversaryKind.DYNAMIC_SUSTAIN,
        adv.AdversaryKind.DYNAMIC_BALANCE_BIG,
        adv.AdversaryKind.DYNAMIC_FEED_MIN_BIG,
        adv.AdversaryKind.DYNAMIC_RANDOM,
    }
)


class InsufficientPoints(ValueError):
    pass


def default_max_rounds(n: int, k: int) -> int:
    """50 times the shape ``(k^2 sqrt(ln n) + k ln n)(k + ln n)``."""
    ln = math.log(max(n, 2))
    return math.ceil(50 * (k * k * math.sqrt(ln) + k * ln) * (k + ln))


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "uniform"  # uniform | explicit | biased
    counts: tuple[int, ...] = ()
    gap: int = 0

    def build(self, n: int, k: int) -> Configuration:
        if self.kind == "uniform":
            return Configuration.uniform(n, k)
        if self.kind == "explicit":
            return Configuration.from_counts(self.counts)
        if self.kind == "biased":
            # Opinion 0 gets ``gap`` extra nodes over an even split of the rest.
            if not 0 <= self.gap <= n - k:
                raise ValueError(f"bias gap {self.gap} impossible for n={n}, k={k}")
            base = Configuration.uniform(n - self.gap, k).supports()
            base[0] += self.gap
            return Configuration(base, n)
        raise ValueError(f"unknown initial kind {self.kind!r}")


@dataclass(frozen=True)
class AdversaryConfig:
    """Adversary as written in a spec file; resolved per cell.

    ``budget`` is either an integer, ``("dynamic", beta)`` or ``("static",)``.
    ``target`` is an opinion id, or ``"fresh"`` for the first id after the
    valid opinions.
    """

    kind: adv.AdversaryKind = adv.AdversaryKind.NULL
    budget: int | tuple = 0
    target: int | str | None = None
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def beta(self) -> float | None:
        if isinstance(self.budget, tuple) and self.budget[0] == "dynamic":
            return float(self.budget[1])
        return None

    def resolve(self, n: int, k: int, log_base: float = math.e) -> adv.AdversarySpec:
        if isinstance(self.budget, tuple):
            if self.budget[0] == "dynamic":
                F = adv.f_dynamic_bound(n, k, self.beta, log_base)
            elif self.budget[0] == "static":
                F = adv.f_static_bound(n, k, log_base)
            else:
                raise ValueError(f"unknown budget formula {self.budget!r}")
        else:
            F = int(self.budget)
        target = k if self.target == "fresh" else self.target
        return adv.AdversarySpec(self.kind, F, target, dict(self.params))

    def label(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class Cell:
    cell_id: int
    n: int
    k: int
    initial: Configuration
    adversary: adv.AdversarySpec
    adversary_label: str
    thresholds: Thresholds
    max_rounds: int
    engine: str = "multinomial"
    tie_break: TieBreakRule = TieBreakRule.FIRST_SAMPLE
    stop_at: str = "strict"

    @property
    def adversarial_observer(self) -> bool:
        return self.adversary.kind in DYNAMIC_KINDS and self.adversary.budget > 0


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    n: tuple[int, ...] = (1000,)
    k: tuple[int, ...] = (2,)
    initial: InitialSpec = InitialSpec()
    adversary: AdversaryConfig = AdversaryConfig()
    trials: int = 10
    max_rounds: int | None = None
    thresholds: Thresholds = Thresholds()
    seed: int = 0
    engine: str = "multinomial"
    tie_break: TieBreakRule = TieBreakRule.FIRST_SAMPLE
    stop_at: str | None = None
    workers: int = 1
    csv_path: str | None = None
    json_path: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.engine not in ("multinomial", "node"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.engine == "node" and max(self.grid_n()) > NODE_LEVEL_MAX_N:
            raise ValueError(f"node-level engine limited to n <= {NODE_LEVEL_MAX_N}")
        if self.stop_at not in (None, "strict", "almost"):
            raise ValueError(f"stop_at must be 'strict' or 'almost', got {self.stop_at!r}")

    def grid_n(self) -> tuple[int, ...]:
        if self.initial.kind == "explicit":
            return (sum(self.initial.counts),)
        return tuple(self.n)

    def grid_k(self) -> tuple[int, ...]:
        if self.initial.kind == "explicit":
            return (sum(1 for x in self.initial.counts if x > 0),)
        return tuple(self.k)

    def cells(self) -> list[Cell]:
        self.thresholds.check_adversary(self.adversary.beta)
        stop_at = self.stop_at
        if stop_at is None:
            stop_at = "almost" if self.adversary.kind in DYNAMIC_KINDS else "strict"
        out = []
        for cid, (n, k) in enumerate(itertools.product(self.grid_n(), self.grid_k())):
            spec = self.adversary.resolve(n, k, self.thresholds.log_base)
            out.append(
                Cell(
                    cell_id=cid,
                    n=n,
                    k=k,
                    initial=self.initial.build(n, k),
                    adversary=spec,
                    adversary_label=self.adversary.label(),
                    thresholds=self.thresholds,
                    max_rounds=self.max_rounds or default_max_rounds(n, k),
                    engine=self.engine,
                    tie_break=self.tie_break,
                    stop_at=stop_at,
                )
            )
        return out


@dataclass
class TrialResult:
    cell_id: int
    trial: int
    outcome: RunOutcome
    target_extinct_round: int | None = None
    trace: list[dict] | None = None
    trajectory: list[Configuration] | None = None


def _apply_to_nodes(a: np.ndarray, d: Mapping[int, int], rng: np.random.Generator) -> np.ndarray:
    """Realize a displacement on a node assignment by relabeling nodes."""
    a = a.copy()
    freed = []
    for i, v in sorted(d.items()):
        if v < 0:
            holders = np.flatnonzero(a == i)
            freed.append(rng.choice(holders, size=-v, replace=False))
    if not freed:
        return a
    slots = np.concatenate(freed)
    labels = np.concatenate([np.full(v, i, dtype=a.dtype) for i, v in sorted(d.items()) if v > 0])
    a[slots] = labels
    return a


def run_trial(
    cell: Cell,
    trial_index: int,
    master_seed: int,
    record_trace: bool = False,
    keep_trajectory: bool = False,
) -> TrialResult:
    """One run: round 0 is the initial configuration followed by the
    adversary's first action; every later round is update -> adversary ->
    terminal check. Observers run over the recorded post-adversary
    trajectory."""
    rng = seed_for(master_seed, cell.cell_id, trial_index)
    th = cell.thresholds
    spec = cell.adversary
    registry = OpinionRegistry(str(i) for i in range(max(cell.initial.active) + 1))
    valid = valid_set(cell.initial)
    history: adv.History = []
    node_state = assignment_from_configuration(cell.initial) if cell.engine == "node" else None

    def adversary_round(pre: Configuration):
        nonlocal node_state
        d = adv.propose(spec, history, pre, rng)
        post = adv.apply(pre, d, spec.budget, registry)
        if node_state is not None and d:
            node_state = _apply_to_nodes(node_state, d, rng)
        history.append((pre, post))
        return post

    def is_done(verdict) -> bool:
        if verdict.terminal is None:
            return False
        return cell.stop_at == "almost" or verdict.terminal is Terminal.STRICT_CONSENSUS

    error = None
    rounds = 0
    try:
        post = adversary_round(cell.initial)
        verdict = classify_terminal(post, valid, th)
        while not is_done(verdict) and rounds < cell.max_rounds:
            rounds += 1
            if node_state is None:
                pre = step_multinomial(post, rng)
            else:
                node_state = step_node_level(node_state, cell.tie_break, rng)
                pre = configuration_of(node_state)
            post = adversary_round(pre)
            verdict = classify_terminal(post, valid, th)
    except AdversaryError as exc:
        error = f"{type(exc).__name__}: {exc}"
        log.warning("cell %d trial %d failed: %s", cell.cell_id, trial_index, error)

    trajectory = [post_c for _, post_c in history]
    violations = monitor_hyp_h(trajectory, valid, th) if cell.adversarial_observer else []
    phases = track_phases(trajectory, valid, th, adversarial=cell.adversarial_observer)

    if error is not None:
        last = trajectory[-1] if trajectory else cell.initial
        winner, top = last.argmax()
        outcome = RunOutcome(rounds, Terminal.FAILED, winner, winner in valid, last.n - top, violations, phases, error)
    else:
        terminal = verdict.terminal if is_done(verdict) else Terminal.MAX_ROUNDS_EXCEEDED
        outcome = RunOutcome(
            rounds, terminal, verdict.winner, verdict.winner_valid, verdict.residual, violations, phases
        )

    extinct = None
    target = spec.target
    if target is not None and not spec.is_null:
        for t, c in enumerate(trajectory):
            if t > 0 and c[target] == 0:
                extinct = t
                break

    trace = None
    if record_trace:
        by_round: dict[int, list[dict]] = {}
        for ev in violations:
            by_round.setdefault(ev.round, []).append(ev.to_dict())
        for ps in phases.transitions:
            by_round.setdefault(ps.entered_at, []).append(
                {"kind": "phase", "j": ps.j, "stage": ps.stage.value}
            )
        trace = [
            {
                "round": t,
                "pre_adv": pre_c.to_text(),
                "post_adv": post_c.to_text(),
                "events": by_round.get(t, []),
            }
            for t, (pre_c, post_c) in enumerate(history)
        ]
    return TrialResult(
        cell.cell_id,
        trial_index,
        outcome,
        extinct,
        trace,
        trajectory if keep_trajectory else None,
    )


# ---------------------------------------------------------------------------
# sweeps

BASE_COLUMNS = [
    "cell_id",
    "n",
    "k",
    "adversary",
    "F",
    "trial",
    "rounds",
    "terminal",
    "winner",
    "winner_valid",
    "residual",
]


@dataclass
class SweepResult:
    rows: list[dict]
    aggregates: list[dict]
    columns: list[str]


def trial_row(cell: Cell, result: TrialResult, max_j: int) -> dict:
    o = result.outcome
    row = {
        "cell_id": cell.cell_id,
        "n": cell.n,
        "k": cell.k,
        "adversary": cell.adversary_label,
        "F": cell.adversary.budget,
        "trial": result.trial,
        "rounds": o.rounds,
        "terminal": o.terminal.value,
        "winner": "" if o.winner is None else o.winner,
        "winner_valid": int(o.winner_valid),
        "residual": o.residual,
    }
    for j in range(max_j, 1, -1):
        tb = o.phases.tau_break(j) if o.phases else None
        row[f"tau_break_j{j}"] = "" if tb is None else tb
    row["violations"] = len(o.violations)
    row["target_extinct_round"] = "" if result.target_extinct_round is None else result.target_extinct_round
    return row


def sweep_columns(max_j: int) -> list[str]:
    return BASE_COLUMNS + [f"tau_break_j{j}" for j in range(max_j, 1, -1)] + ["violations", "target_extinct_round"]


def aggregate(rows: Sequence[Mapping[str, Any]]) -> list[dict]:
    """Per-cell summary; a pure function of the trial rows."""
    cells: dict[int, list[Mapping[str, Any]]] = {}
    for r in rows:
        cells.setdefault(int(r["cell_id"]), []).append(r)
    out = []
    for cid in sorted(cells):
        rs = cells[cid]
        rounds = [int(r["rounds"]) for r in rs]
        reached = [r for r in rs if r["terminal"] in ("StrictConsensus", "AlmostConsensus")]
        agg = {
            "cell_id": cid,
            "n": int(rs[0]["n"]),
            "k": int(rs[0]["k"]),
            "adversary": rs[0]["adversary"],
            "F": int(rs[0]["F"]),
            "trials": len(rs),
            "mean_rounds": statistics.fmean(rounds),
            "median_rounds": float(statistics.median(rounds)),
            "consensus_rate": len(reached) / len(rs),
            "validity_rate": sum(int(r["winner_valid"]) for r in reached) / len(rs),
            "violations": sum(int(r["violations"]) for r in rs),
            "failures": sum(1 for r in rs if r["terminal"] == "Failed"),
            "censored": sum(1 for r in rs if r["terminal"] == "MaxRoundsExceeded"),
        }
        for key in sorted(k for k in rs[0] if str(k).startswith("tau_break_j")):
            vals = [int(r[key]) for r in rs if r[key] not in ("", None)]
            agg[f"mean_{key}"] = statistics.fmean(vals) if vals else None
        out.append(agg)
    return out


def audit(result: SweepResult) -> bool:
    """Aggregates must be recomputable from the rows, and each cell must
    hold the same number of trials."""
    counts = {a["trials"] for a in result.aggregates}
    return aggregate(result.rows) == result.aggregates and len(counts) <= 1


def _run_task(args):
    cell, trial, seed = args
    return run_trial(cell, trial, seed)


def run_sweep(spec: ExperimentSpec, workers: int | None = None, write: bool = True) -> SweepResult:
    cells = spec.cells()
    tasks = [(cell, t, spec.seed) for cell in cells for t in range(spec.trials)]
    workers = spec.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_run_task(t) for t in tasks]
    results.sort(key=lambda r: (r.cell_id, r.trial))
    max_j = max(c.initial.k + (0 if c.adversary.is_null else 1) for c in cells)
    by_id = {c.cell_id: c for c in cells}
    rows = [trial_row(by_id[r.cell_id], r, max_j) for r in results]
    result = SweepResult(rows, aggregate(rows), sweep_columns(max_j))
    if write:
        if spec.csv_path:
            write_csv(spec.csv_path, result, spec.name)
        if spec.json_path:
            write_summary(spec.json_path, result, spec.name)
    return result


def _stamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def render_csv(result: SweepResult, name: str, stamp: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# majlab sweep {name} generated {stamp or _stamp()}\n")
    w = csv.DictWriter(buf, fieldnames=result.columns, lineterminator="\n")
    w.writeheader()
    w.writerows(result.rows)
    return buf.getvalue()


def write_csv(path, result: SweepResult, name: str) -> None:
    Path(path).write_text(render_csv(result, name))


def write_summary(path, result: SweepResult, name: str) -> None:
    doc = {"name": name, "generated": _stamp(), "cells": result.aggregates}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float


def fit_scaling(rows: Sequence[Mapping[str, Any]], x_field: str, y_field: str) -> FitResult:
    """Least-squares line through ``(log x, log y)``."""
    x = np.array([float(r[x_field]) for r in rows])
    y = np.array([float(r[y_field]) for r in rows])
    if len(set(x.tolist())) < 3:
        raise InsufficientPoints("need at least 3 distinct x values")
    if (x <= 0).any() or (y <= 0).any():
        raise ValueError("log-log fit needs positive x and y")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    ss_res = float((resid**2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), r2)


# ---------------------------------------------------------------------------
# spec files


def _as_tuple(v) -> tuple:
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def _parse_budget(table: Mapping[str, Any]):
    if "F_formula" in table:
        f = table["F_formula"]
        if isinstance(f, str):
            f = {f: True}
        if f.get("dynamic"):
            return ("dynamic", float(f.get("beta", table.get("beta", 1.0))))
        if f.get("static"):
            return ("static",)
        raise ValueError(f"F_formula must select dynamic or static, got {f!r}")
    return int(table.get("F", 0))


def spec_from_mapping(doc: Mapping[str, Any], base_dir: Path | None = None) -> ExperimentSpec:
    known = {"name", "grid", "initial", "adversary", "trials", "max_rounds", "thresholds", "seed",
             "engine", "tie_break", "stop_at", "workers", "outputs"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown spec keys: {sorted(unknown)}")
    grid = doc.get("grid", {})
    init = doc.get("initial", {"kind": "uniform"})
    initial = InitialSpec(
        kind=init.get("kind", "uniform").lower(),
        counts=tuple(int(x) for x in init.get("counts", ())),
        gap=int(init.get("gap", 0)),
    )
    a = doc.get("adversary", {})
    adversary = AdversaryConfig(
        kind=adv.AdversaryKind.parse(a.get("kind", "Null")),
        budget=_parse_budget(a),
        target=a.get("target"),
        params=dict(a.get("params", {})),
    )
    th = Thresholds(**doc.get("thresholds", {}))
    outputs = doc.get("outputs", {})

    def out_path(key):
        p = outputs.get(key)
        if p is None:
            return None
        p = Path(p)
        return str(p if p.is_absolute() or base_dir is None else base_dir / p)

    return ExperimentSpec(
        name=doc.get("name", "experiment"),
        n=tuple(int(x) for x in _as_tuple(grid.get("n", 1000))),
        k=tuple(int(x) for x in _as_tuple(grid.get("k", 2))),
        initial=initial,
        adversary=adversary,
        trials=int(doc.get("trials", 10)),
        max_rounds=doc.get("max_rounds"),
        thresholds=th,
        seed=int(doc.get("seed", 0)),
        engine=doc.get("engine", "multinomial"),
        tie_break=TieBreakRule(doc.get("tie_break", "first")),
        stop_at=doc.get("stop_at"),
        workers=int(doc.get("workers", 1)),
        csv_path=out_path("csv"),
        json_path=out_path("json"),
    )


def load_spec(path) -> ExperimentSpec:
    """Read a TOML spec; relative output paths resolve against its folder."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return spec_from_mapping(doc, path.parent)


def with_outputs(spec: ExperimentSpec, csv_path=None, json_path=None) -> ExperimentSpec:
    return replace(spec, csv_path=csv_path or spec.csv_path, json_path=json_path or spec.json_path)
