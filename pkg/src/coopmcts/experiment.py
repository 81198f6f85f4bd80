"""Batch evaluation: strategy/iteration grids of repeated randomized episodes.

Runs execute in a process pool (size capped by COOPMCTS_THREADS) but results
are merged in deterministic (cell, run) order, so the worker count never
changes output bytes.  Seeds are shared across strategy cells: run i of every
cell starts from the identical randomized scene, giving paired comparisons.
"""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

from .mdn import MdnWeights, load_weights
from .planner import search
from .scene import Scenario, Scene, load_scenario, randomize_scenario, step_scene

log = logging.getLogger(__name__)

THREADS_ENV = "COOPMCTS_THREADS"


@dataclass(frozen=True)
class StrategyCell:
    """One point of the strategy grid."""

    strategy: str = "baseline"
    components: int = 2
    integration: str = "root"
    selection: bool = False
    weights: Optional[str] = None

    @property
    def descriptor(self) -> str:
        if self.strategy == "baseline":
            return "baseline"
        sel = "sel" if self.selection else "nosel"
        return f"mdn{self.components}-{self.integration}-{sel}"


@dataclass(frozen=True)
class ExperimentSpec:
    scenarios: tuple[str, ...]
    cells: tuple[StrategyCell, ...]
    iterations: tuple[int, ...] = (200, 500, 1000, 2000, 4000, 8000)
    runs: int = 50
    baseline_runs: int = 100
    base_seed: int = 1000

    def __post_init__(self):
        if not self.scenarios or not self.cells or not self.iterations:
            raise ValueError("experiment grid must be non-empty")
        if self.runs < 1 or self.baseline_runs < 1:
            raise ValueError("runs must be >= 1")

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        base = os.path.dirname(os.path.abspath(os.fspath(path)))

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base, p)

        cells = []
        for cd in doc["strategies"]:
            weights = cd.get("weights")
            cells.append(StrategyCell(
                strategy=cd.get("strategy", "baseline"),
                components=int(cd.get("components", 2)),
                integration=cd.get("integration", "root"),
                selection=bool(cd.get("selection", False)),
                weights=resolve(weights) if weights else None))
        return cls(
            scenarios=tuple(resolve(p) for p in doc["scenarios"]),
            cells=tuple(cells),
            iterations=tuple(int(i) for i in doc.get(
                "iterations", (200, 500, 1000, 2000, 4000, 8000))),
            runs=int(doc.get("runs", 50)),
            baseline_runs=int(doc.get("baseline_runs", 100)),
            base_seed=int(doc.get("base_seed", 1000)),
        )


@dataclass(frozen=True)
class CellResult:
    scenario: str
    strategy: str
    iterations: int
    runs: int
    successes: int
    mean_wall_time_ms: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.runs


@lru_cache(maxsize=64)
def _scenario_cache(path: str) -> Scenario:
    return load_scenario(path)


@lru_cache(maxsize=16)
def _weights_cache(path: str) -> MdnWeights:
    return load_weights(path)


def run_episode(scenario: Scenario, cell: StrategyCell, iterations: int,
                run_seed: int, weights: Optional[MdnWeights] = None,
                policy_provider=None) -> bool:
    """One randomized episode: search, execute, repeat; success iff no
    collision before the scenario's configured end.

    ``policy_provider`` substitutes for the weights file in "mdn" cells
    (used by oracle experiments)."""
    cfg = replace(scenario.config, iterations=iterations,
                  strategy=cell.strategy, components=cell.components,
                  integration=cell.integration,
                  use_selection_bias=cell.selection)
    if cell.strategy == "mdn" and weights is None and policy_provider is None:
        if cell.weights is None:
            raise ValueError("mdn cell without weights")
        weights = _weights_cache(cell.weights)
    scene = randomize_scenario(scenario.scene, run_seed,
                               scenario.randomization)
    history: list[Scene] = [scene]
    for t in range(cfg.episode_steps):
        step_cfg = replace(cfg, seed=run_seed * 100003 + t)
        result = search(scene, step_cfg,
                        weights=weights if cell.strategy == "mdn" else None,
                        history=history,
                        policy_provider=(policy_provider
                                         if cell.strategy == "mdn" else None))
        scene, _rewards, collided = step_scene(
            scene, result.best, cfg.dt, cfg.reward, cfg.collision_substeps)
        history.append(scene)
        if len(history) > 8:
            history.pop(0)
        if any(collided):
            return False
    return True


def _episode_task(args) -> tuple[tuple, bool, float]:
    key, scenario_path, cell, iterations, run_seed = args
    scenario = _scenario_cache(scenario_path)
    t0 = time.perf_counter()
    ok = run_episode(scenario, cell, iterations, run_seed)
    return key, ok, (time.perf_counter() - t0) * 1e3


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(spec: ExperimentSpec,
                   threads: Optional[int] = None) -> list[CellResult]:
    """Evaluate the full grid; rows are sorted, aggregates exact fractions."""
    if threads is None:
        threads = default_threads()
    cells = []
    for cell in spec.cells:
        if cell.strategy == "mdn" and (cell.weights is None
                                       or not os.path.exists(cell.weights)):
            log.warning("skipping cell %s: weights file %r not available",
                        cell.descriptor, cell.weights)
            continue
        cells.append(cell)

    tasks = []
    for si, scenario_path in enumerate(spec.scenarios):
        _scenario_cache(scenario_path)   # fail fast on bad files
        for ci, cell in enumerate(cells):
            n_runs = spec.baseline_runs if cell.strategy == "baseline" else spec.runs
            for ii, iterations in enumerate(spec.iterations):
                for ri in range(n_runs):
                    tasks.append(((si, ci, ii, ri), scenario_path, cell,
                                  iterations, spec.base_seed + ri))

    outcomes: dict[tuple, tuple[bool, float]] = {}
    if threads <= 1 or len(tasks) <= 1:
        for task in tasks:
            key, ok, wall = _episode_task(task)
            outcomes[key] = (ok, wall)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for key, ok, wall in pool.map(_episode_task, tasks,
                                          chunksize=max(1, len(tasks) // (threads * 4))):
                outcomes[key] = (ok, wall)

    rows: list[CellResult] = []
    for si, scenario_path in enumerate(spec.scenarios):
        name = _scenario_cache(scenario_path).name
        for ci, cell in enumerate(cells):
            n_runs = spec.baseline_runs if cell.strategy == "baseline" else spec.runs
            for ii, iterations in enumerate(spec.iterations):
                wins = 0
                wall = 0.0
                for ri in range(n_runs):
                    ok, w = outcomes[(si, ci, ii, ri)]
                    wins += ok
                    wall += w
                rows.append(CellResult(
                    scenario=name, strategy=cell.descriptor,
                    iterations=iterations, runs=n_runs, successes=wins,
                    mean_wall_time_ms=wall / n_runs))
    rows.sort(key=lambda r: (r.scenario, r.strategy, r.iterations))
    return rows
