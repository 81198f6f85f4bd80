"""World model: straight-road geometry, agent kinematics, collision checking,
per-step rewards and scenario (de)serialization.

Coordinates are road-aligned: x_lon runs along the road, y_lat across it.
Scenes are immutable value snapshots; every operation here is a pure function
of its inputs.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .config import ActionBounds, RewardWeights, SearchConfig

MAX_AGENTS = 8
_EDGE_EPS = 1e-9

SCENARIO_FORMAT_VERSION = 1


class ScenarioError(ValueError):
    """Scenario file violates the schema; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class RandomizationError(RuntimeError):
    """Randomization could not produce a valid scene within the attempt budget."""


class LaneSpec(NamedTuple):
    lane_id: int
    center_offset_lat: float
    width: float


class AgentState(NamedTuple):
    x_lon: float
    y_lat: float
    heading: float
    v: float
    a: float
    length: float
    width: float
    v_desired: float
    lane_desired: int


class Obstacle(NamedTuple):
    x_lon: float
    y_lat: float
    length: float
    width: float


class Action(NamedTuple):
    dv_lon: float
    dy_lat: float


JointAction = tuple[Action, ...]


class Scene(NamedTuple):
    lanes: tuple[LaneSpec, ...]
    road_length: float
    agents: tuple[AgentState, ...]
    obstacles: tuple[Obstacle, ...]
    t: int = 0


@dataclass(frozen=True)
class TrajectoryStep:
    scene: Scene
    action: JointAction
    rewards: tuple[float, ...]


@dataclass(frozen=True)
class Trajectory:
    """Reward-annotated state-action sequence with a terminal flag."""

    steps: tuple[TrajectoryStep, ...]
    terminal: str = "horizon-reached"   # "horizon-reached" | "invalid"

    def __post_init__(self):
        if self.terminal not in ("horizon-reached", "invalid"):
            raise ValueError(f"unknown terminal flag {self.terminal!r}")


@dataclass(frozen=True)
class RandomizationRanges:
    """Per-attribute randomization intervals.

    Position attributes (``*_x_offset``, ``*_y_offset``) are additive deltas
    around the nominal scenario values; heading, speeds and sizes are absolute
    intervals resampled uniformly; ``road_width_scale`` is a lateral scale
    factor applied to lane centers, lane widths and lateral positions.
    Attributes left at their defaults (or None) are not altered.
    """

    agent_x_offset: tuple[float, float] = (0.0, 0.0)
    agent_y_offset: tuple[float, float] = (0.0, 0.0)
    agent_heading: Optional[tuple[float, float]] = None
    agent_v: Optional[tuple[float, float]] = None
    agent_v_desired: Optional[tuple[float, float]] = None
    agent_length: Optional[tuple[float, float]] = None
    agent_width: Optional[tuple[float, float]] = None
    obstacle_x_offset: tuple[float, float] = (0.0, 0.0)
    obstacle_y_offset: tuple[float, float] = (0.0, 0.0)
    obstacle_length: Optional[tuple[float, float]] = None
    obstacle_width: Optional[tuple[float, float]] = None
    road_width_scale: tuple[float, float] = (1.0, 1.0)


@dataclass(frozen=True)
class Scenario:
    """A loaded scenario file: initial scene, search config, randomization."""

    name: str
    scene: Scene
    config: SearchConfig
    randomization: RandomizationRanges = RandomizationRanges()


# ---------------------------------------------------------------- geometry

def lane_center(scene: Scene, lane_id: int) -> float:
    for lane in scene.lanes:
        if lane.lane_id == lane_id:
            return lane.center_offset_lat
    raise ValueError(f"lane id {lane_id} not present in scene")


def road_lateral_bounds(scene: Scene) -> tuple[float, float]:
    lo = min(l.center_offset_lat - 0.5 * l.width for l in scene.lanes)
    hi = max(l.center_offset_lat + 0.5 * l.width for l in scene.lanes)
    return lo, hi


def validate_scene(scene: Scene, initial: bool = False) -> None:
    """Raise ValueError on structural invariant violations.

    With ``initial=True`` additionally requires every agent to sit fully
    inside the road bounds (scenario construction); mid-rollout scenes may
    legitimately run past the scenario's road length.
    """
    if not scene.lanes:
        raise ValueError("scene needs at least one lane")
    ids = [l.lane_id for l in scene.lanes]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate lane ids: {ids}")
    for lane in scene.lanes:
        if lane.lane_id < 0:
            raise ValueError(f"lane id must be >= 0, got {lane.lane_id}")
        if lane.width <= 0:
            raise ValueError(f"lane {lane.lane_id} width must be > 0")
    for a, b in ((a, b) for i, a in enumerate(scene.lanes)
                 for b in scene.lanes[i + 1:]):
        lo = max(a.center_offset_lat - 0.5 * a.width,
                 b.center_offset_lat - 0.5 * b.width)
        hi = min(a.center_offset_lat + 0.5 * a.width,
                 b.center_offset_lat + 0.5 * b.width)
        if hi - lo > _EDGE_EPS:
            raise ValueError(f"lanes {a.lane_id} and {b.lane_id} overlap")
    if scene.road_length <= 0:
        raise ValueError("road_length must be > 0")
    if not 1 <= len(scene.agents) <= MAX_AGENTS:
        raise ValueError(f"scene must hold 1..{MAX_AGENTS} agents, "
                         f"got {len(scene.agents)}")
    lane_ids = set(ids)
    for i, ag in enumerate(scene.agents):
        if ag.v < 0 or ag.v_desired < 0:
            raise ValueError(f"agent {i}: speeds must be >= 0")
        if ag.length <= 0 or ag.width <= 0:
            raise ValueError(f"agent {i}: dimensions must be > 0")
        if not -math.pi < ag.heading <= math.pi + _EDGE_EPS:
            raise ValueError(f"agent {i}: heading out of (-pi, pi]")
        if ag.lane_desired not in lane_ids:
            raise ValueError(f"agent {i}: lane_desired {ag.lane_desired} "
                             "does not exist in the scene")
    for i, ob in enumerate(scene.obstacles):
        if ob.length <= 0 or ob.width <= 0:
            raise ValueError(f"obstacle {i}: dimensions must be > 0")
    if initial:
        lo, hi = road_lateral_bounds(scene)
        for i, ag in enumerate(scene.agents):
            if (ag.y_lat - 0.5 * ag.width < lo - _EDGE_EPS
                    or ag.y_lat + 0.5 * ag.width > hi + _EDGE_EPS):
                raise ValueError(f"agent {i} starts outside the road laterally")
            if not 0.0 <= ag.x_lon <= scene.road_length:
                raise ValueError(f"agent {i} starts outside the road "
                                 f"longitudinally (x={ag.x_lon})")


# -------------------------------------------------------------- kinematics

def step_kinematics(state: AgentState, action: Action, dt: float) -> AgentState:
    """Advance one agent by (dv_lon, dy_lat) over dt seconds.

    Longitudinal motion integrates the trapezoidal mean speed; speed clamps
    at zero; lateral offset is applied linearly within the step.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v1 = state.v + action.dv_lon
    if v1 < 0.0:
        v1 = 0.0
    advance = 0.5 * (state.v + v1) * dt
    return state._replace(
        x_lon=state.x_lon + advance,
        y_lat=state.y_lat + action.dy_lat,
        heading=math.atan2(action.dy_lat, advance),
        v=v1,
        a=action.dv_lon / dt,
    )


def _rects_overlap(x1, y1, l1, w1, x2, y2, l2, w2) -> bool:
    return (abs(x1 - x2) < 0.5 * (l1 + l2)) and (abs(y1 - y2) < 0.5 * (w1 + w2))


def check_collision(scene: Scene, substeps: int = 10,
                    prev: Optional[Scene] = None) -> tuple[bool, ...]:
    """Per-agent collision flags.

    An agent collides iff its axis-aligned road-frame rectangle intersects an
    obstacle, another agent's rectangle, or leaves the drivable lateral band.
    With ``prev`` given, agent poses are sampled at ``substeps`` interpolation
    points across the last step (end pose included); otherwise only the
    current pose is tested.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    band_lo, band_hi = road_lateral_bounds(scene)
    agents = scene.agents
    n = len(agents)
    flags = [False] * n
    if prev is not None:
        fracs = [(s + 1) / substeps for s in range(substeps)]
        prev_agents = prev.agents
    else:
        fracs = [1.0]
        prev_agents = agents
    for f in fracs:
        xs = [prev_agents[i].x_lon + f * (agents[i].x_lon - prev_agents[i].x_lon)
              for i in range(n)]
        ys = [prev_agents[i].y_lat + f * (agents[i].y_lat - prev_agents[i].y_lat)
              for i in range(n)]
        for i in range(n):
            ag = agents[i]
            if (ys[i] - 0.5 * ag.width < band_lo - _EDGE_EPS
                    or ys[i] + 0.5 * ag.width > band_hi + _EDGE_EPS):
                flags[i] = True
            for ob in scene.obstacles:
                if _rects_overlap(xs[i], ys[i], ag.length, ag.width,
                                  ob.x_lon, ob.y_lat, ob.length, ob.width):
                    flags[i] = True
                    break
            for j in range(i + 1, n):
                other = agents[j]
                if _rects_overlap(xs[i], ys[i], ag.length, ag.width,
                                  xs[j], ys[j], other.length, other.width):
                    flags[i] = True
                    flags[j] = True
    return tuple(flags)


def step_reward(prev: AgentState, nxt: AgentState, action: Action,
                collided: bool, w: RewardWeights, scene: Scene) -> float:
    """Weighted penalty for speed error, lane offset and action effort."""
    r = (-w.w_v * abs(nxt.v - nxt.v_desired)
         - w.w_l * abs(nxt.y_lat - lane_center(scene, nxt.lane_desired))
         - w.w_a * (abs(action.dv_lon) + abs(action.dy_lat)))
    if collided:
        r += w.collision_penalty
    return r


def step_scene(scene: Scene, joint: JointAction, dt: float, w: RewardWeights,
               substeps: int = 10
               ) -> tuple[Scene, tuple[float, ...], tuple[bool, ...]]:
    """Apply one joint action: new scene, per-agent rewards, collision flags."""
    if len(joint) != len(scene.agents):
        raise ValueError(f"joint action has {len(joint)} entries for "
                         f"{len(scene.agents)} agents")
    nxt_agents = tuple(step_kinematics(ag, act, dt)
                       for ag, act in zip(scene.agents, joint))
    nxt = scene._replace(agents=nxt_agents, t=scene.t + 1)
    collided = check_collision(nxt, substeps, prev=scene)
    rewards = tuple(step_reward(pa, na, act, col, w, scene)
                    for pa, na, act, col in
                    zip(scene.agents, nxt_agents, joint, collided))
    return nxt, rewards, collided


def trajectory_return(traj: Trajectory) -> float:
    """Cooperative return: sum over steps of the summed per-agent rewards."""
    return sum(sum(step.rewards) for step in traj.steps)


# ----------------------------------------------------------- serialization

def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise ScenarioError(path, f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _num(obj: dict, key: str, path: str) -> float:
    val = _req(obj, key, path)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(f"{path}.{key}", f"expected a number, got {val!r}")
    return float(val)


def _parse_agent(d: dict, path: str) -> AgentState:
    return AgentState(
        x_lon=_num(d, "x", path), y_lat=_num(d, "y", path),
        heading=_num(d, "heading", path), v=_num(d, "v", path),
        a=_num(d, "a", path), length=_num(d, "length", path),
        width=_num(d, "width", path), v_desired=_num(d, "v_desired", path),
        lane_desired=int(_num(d, "lane_desired", path)),
    )


def _parse_ranges(d: dict) -> RandomizationRanges:
    def pair(key, default):
        if key not in d:
            return default
        val = d[key]
        if (not isinstance(val, (list, tuple)) or len(val) != 2
                or any(isinstance(x, bool) or not isinstance(x, (int, float))
                       for x in val)):
            raise ScenarioError(f"randomization.{key}",
                                f"expected [lo, hi], got {val!r}")
        lo, hi = float(val[0]), float(val[1])
        if hi < lo:
            raise ScenarioError(f"randomization.{key}", f"hi < lo in {val!r}")
        return (lo, hi)

    return RandomizationRanges(
        agent_x_offset=pair("agent_x_offset", (0.0, 0.0)),
        agent_y_offset=pair("agent_y_offset", (0.0, 0.0)),
        agent_heading=pair("agent_heading", None),
        agent_v=pair("agent_v", None),
        agent_v_desired=pair("agent_v_desired", None),
        agent_length=pair("agent_length", None),
        agent_width=pair("agent_width", None),
        obstacle_x_offset=pair("obstacle_x_offset", (0.0, 0.0)),
        obstacle_y_offset=pair("obstacle_y_offset", (0.0, 0.0)),
        obstacle_length=pair("obstacle_length", None),
        obstacle_width=pair("obstacle_width", None),
        road_width_scale=pair("road_width_scale", (1.0, 1.0)),
    )


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    road = _req(doc, "road", "")
    lanes = []
    lane_list = _req(road, "lanes", "road")
    if not isinstance(lane_list, list) or not lane_list:
        raise ScenarioError("road.lanes", "expected a non-empty array")
    for i, ld in enumerate(lane_list):
        path = f"road.lanes[{i}]"
        lanes.append(LaneSpec(lane_id=int(_num(ld, "id", path)),
                              center_offset_lat=_num(ld, "center_offset_m", path),
                              width=_num(ld, "width_m", path)))
    agent_list = _req(doc, "agents", "")
    if not isinstance(agent_list, list) or not agent_list:
        raise ScenarioError("agents", "expected a non-empty array")
    if len(agent_list) > MAX_AGENTS:
        raise ScenarioError("agents", f"at most {MAX_AGENTS} agents supported, "
                            f"got {len(agent_list)}")
    agents = tuple(_parse_agent(ad, f"agents[{i}]")
                   for i, ad in enumerate(agent_list))
    obstacles = []
    for i, od in enumerate(doc.get("obstacles", [])):
        path = f"obstacles[{i}]"
        obstacles.append(Obstacle(x_lon=_num(od, "x", path),
                                  y_lat=_num(od, "y", path),
                                  length=_num(od, "length", path),
                                  width=_num(od, "width", path)))

    scene = Scene(lanes=tuple(lanes), road_length=_num(road, "length_m", "road"),
                  agents=agents, obstacles=tuple(obstacles), t=0)
    try:
        validate_scene(scene, initial=True)
    except ValueError as exc:
        raise ScenarioError("scene", str(exc)) from exc

    rw = doc.get("reward", {})
    reward = RewardWeights(
        w_v=float(rw.get("w_v", 1.0)), w_l=float(rw.get("w_l", 0.5)),
        w_a=float(rw.get("w_a", 0.2)),
        collision_penalty=float(rw.get("collision_penalty", -1000.0)))
    if reward.collision_penalty >= 0:
        raise ScenarioError("reward.collision_penalty", "must be < 0")
    if min(reward.w_v, reward.w_l, reward.w_a) < 0:
        raise ScenarioError("reward", "weights must be >= 0")

    sr = doc.get("search", {})
    ab = sr.get("action_bounds", {})
    bounds = ActionBounds(dv_min=float(ab.get("dv_min", -5.0)),
                          dv_max=float(ab.get("dv_max", 5.0)),
                          dy_min=float(ab.get("dy_min", -3.5)),
                          dy_max=float(ab.get("dy_max", 3.5)))
    if bounds.dv_min >= bounds.dv_max or bounds.dy_min >= bounds.dy_max:
        raise ScenarioError("search.action_bounds", "min must be < max")
    try:
        config = SearchConfig(
            iterations=int(sr.get("iterations", 500)),
            c=float(sr.get("c", 1.0)),
            pw_k=float(sr.get("pw_k", 2.0)),
            pw_alpha=float(sr.get("pw_alpha", 0.5)),
            horizon=int(sr.get("horizon", 8)),
            seed=int(sr.get("seed", 0)),
            strategy=str(sr.get("strategy", "baseline")),
            integration=str(sr.get("integration", "root")),
            use_selection_bias=bool(sr.get("use_selection_bias", False)),
            components=int(sr.get("components", 2)),
            prior_floor=float(sr.get("prior_floor", 0.05)),
            dt=float(sr.get("dt", 1.0)),
            bounds=bounds,
            reward=reward,
            collision_substeps=int(sr.get("collision_substeps", 10)),
            episode_steps=int(sr.get("episode_steps", 8)),
            uct_variant=str(sr.get("uct_variant", "sqrt_ratio")),
        )
    except ValueError as exc:
        raise ScenarioError("search", str(exc)) from exc

    ranges = _parse_ranges(doc.get("randomization", {}))
    return Scenario(name=name, scene=scene, config=config, randomization=ranges)


def scenario_to_dict(sc: Scenario) -> dict:
    cfg = sc.config
    return {
        "format_version": SCENARIO_FORMAT_VERSION,
        "road": {
            "length_m": sc.scene.road_length,
            "lanes": [{"id": l.lane_id, "center_offset_m": l.center_offset_lat,
                       "width_m": l.width} for l in sc.scene.lanes],
        },
        "agents": [{"x": a.x_lon, "y": a.y_lat, "heading": a.heading, "v": a.v,
                    "a": a.a, "length": a.length, "width": a.width,
                    "v_desired": a.v_desired, "lane_desired": a.lane_desired}
                   for a in sc.scene.agents],
        "obstacles": [{"x": o.x_lon, "y": o.y_lat, "length": o.length,
                       "width": o.width} for o in sc.scene.obstacles],
        "reward": {"w_v": cfg.reward.w_v, "w_l": cfg.reward.w_l,
                   "w_a": cfg.reward.w_a,
                   "collision_penalty": cfg.reward.collision_penalty},
        "search": {
            "iterations": cfg.iterations, "c": cfg.c, "pw_k": cfg.pw_k,
            "pw_alpha": cfg.pw_alpha, "horizon": cfg.horizon, "seed": cfg.seed,
            "strategy": cfg.strategy, "integration": cfg.integration,
            "use_selection_bias": cfg.use_selection_bias,
            "components": cfg.components, "prior_floor": cfg.prior_floor,
            "dt": cfg.dt,
            "action_bounds": {"dv_min": cfg.bounds.dv_min,
                              "dv_max": cfg.bounds.dv_max,
                              "dy_min": cfg.bounds.dy_min,
                              "dy_max": cfg.bounds.dy_max},
            "collision_substeps": cfg.collision_substeps,
            "episode_steps": cfg.episode_steps,
            "uct_variant": cfg.uct_variant,
        },
        "randomization": _ranges_to_dict(sc.randomization),
    }


def _ranges_to_dict(r: RandomizationRanges) -> dict:
    out = {}
    for key in ("agent_x_offset", "agent_y_offset", "agent_heading", "agent_v",
                "agent_v_desired", "agent_length", "agent_width",
                "obstacle_x_offset", "obstacle_y_offset", "obstacle_length",
                "obstacle_width", "road_width_scale"):
        val = getattr(r, key)
        if val is not None:
            out[key] = list(val)
    return out


def load_scenario(path: str | os.PathLike) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError("<document>", f"invalid JSON: {exc}") from exc
    name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return scenario_from_dict(doc, name=name)


def save_scenario(sc: Scenario, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------- randomization

def randomize_scenario(scene: Scene, seed: int,
                       ranges: RandomizationRanges,
                       max_attempts: int = 100) -> Scene:
    """Perturb a scene's initial conditions within the configured ranges.

    Resamples (up to ``max_attempts`` times) until the perturbed scene
    satisfies the scene invariants, all agents start inside the road and the
    starting configuration is collision-free.
    """
    rng = np.random.default_rng(seed)

    def draw(interval, fallback):
        if interval is None:
            return fallback
        return float(rng.uniform(interval[0], interval[1]))

    for _ in range(max_attempts):
        scale = float(rng.uniform(*ranges.road_width_scale))
        lanes = tuple(l._replace(center_offset_lat=l.center_offset_lat * scale,
                                 width=l.width * scale) for l in scene.lanes)
        agents = []
        for ag in scene.agents:
            agents.append(ag._replace(
                x_lon=ag.x_lon + float(rng.uniform(*ranges.agent_x_offset)),
                y_lat=ag.y_lat * scale + float(rng.uniform(*ranges.agent_y_offset)),
                heading=draw(ranges.agent_heading, ag.heading),
                v=draw(ranges.agent_v, ag.v),
                v_desired=draw(ranges.agent_v_desired, ag.v_desired),
                length=draw(ranges.agent_length, ag.length),
                width=draw(ranges.agent_width, ag.width),
            ))
        obstacles = []
        for ob in scene.obstacles:
            obstacles.append(ob._replace(
                x_lon=ob.x_lon + float(rng.uniform(*ranges.obstacle_x_offset)),
                y_lat=ob.y_lat * scale + float(rng.uniform(*ranges.obstacle_y_offset)),
                length=draw(ranges.obstacle_length, ob.length),
                width=draw(ranges.obstacle_width, ob.width),
            ))
        candidate = scene._replace(lanes=lanes, agents=tuple(agents),
                                   obstacles=tuple(obstacles))
        try:
            validate_scene(candidate, initial=True)
        except ValueError:
            continue
        if any(check_collision(candidate)):
            continue
        return candidate
    raise RandomizationError(
        f"no valid scene after {max_attempts} randomization attempts")
