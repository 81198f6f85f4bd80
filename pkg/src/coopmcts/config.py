"""Shared configuration types for scenarios, rewards and the tree search."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple


class ActionBounds(NamedTuple):
    """Box bounds of the per-agent action space (dv_lon in m/s, dy_lat in m)."""

    dv_min: float = -5.0
    dv_max: float = 5.0
    dy_min: float = -3.5
    dy_max: float = 3.5

    def contains(self, dv_lon: float, dy_lat: float) -> bool:
        return (self.dv_min <= dv_lon <= self.dv_max
                and self.dy_min <= dy_lat <= self.dy_max)

    @property
    def dv_mid(self) -> float:
        return 0.5 * (self.dv_min + self.dv_max)

    @property
    def dy_mid(self) -> float:
        return 0.5 * (self.dy_min + self.dy_max)


class RewardWeights(NamedTuple):
    """Weights of the per-step penalty terms; collision_penalty must be < 0."""

    w_v: float = 1.0
    w_l: float = 0.5
    w_a: float = 0.2
    collision_penalty: float = -1000.0


@dataclass(frozen=True)
class SearchConfig:
    """Everything one tree search needs besides the scene itself.

    Mirrors the scenario file's ``search`` and ``reward`` blocks.  ``strategy``
    selects uniform ("baseline") or mixture-guided ("mdn") expansion;
    ``integration`` decides whether guided expansion happens only at the root
    or at every node; ``use_selection_bias`` additionally weighs the UCT
    exploration term by the mixture density of each child action.
    """

    iterations: int = 500
    c: float = 1.0
    pw_k: float = 2.0
    pw_alpha: float = 0.5
    horizon: int = 8
    seed: int = 0
    strategy: str = "baseline"          # "baseline" | "mdn"
    integration: str = "root"           # "root" | "all"
    use_selection_bias: bool = False
    components: int = 2                 # mixture components K expected in weights
    prior_floor: float = 0.05           # p_min clamp for normalized priors
    dt: float = 1.0
    bounds: ActionBounds = ActionBounds()
    reward: RewardWeights = RewardWeights()
    collision_substeps: int = 10
    episode_steps: int = 8
    uct_variant: str = "sqrt_ratio"     # "sqrt_ratio" | "sqrt_log_ratio"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.c <= 0:
            raise ValueError("exploration constant c must be > 0")
        if self.pw_k <= 0 or not 0.0 < self.pw_alpha <= 1.0:
            raise ValueError("progressive widening needs pw_k > 0 and pw_alpha in (0, 1]")
        if self.strategy not in ("baseline", "mdn"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.integration not in ("root", "all"):
            raise ValueError(f"unknown integration {self.integration!r}")
        if not 0.0 < self.prior_floor <= 1.0:
            raise ValueError("prior_floor must be in (0, 1]")
        if self.uct_variant not in ("sqrt_ratio", "sqrt_log_ratio"):
            raise ValueError(f"unknown uct variant {self.uct_variant!r}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.horizon < 1 or self.episode_steps < 1:
            raise ValueError("horizon and episode_steps must be >= 1")
        if self.collision_substeps < 1:
            raise ValueError("collision_substeps must be >= 1")
