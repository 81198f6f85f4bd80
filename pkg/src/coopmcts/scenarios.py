"""Bundled scenario suite: seven desk-scale urban driving situations.

Each builder returns a full Scenario (scene + search config + randomization).
Opposing traffic is approximated with static geometry because the vehicle
model only drives forward; the merge/passing structure (and its multiple
homotopy classes) is what the suite is after.  Lateral action bounds are kept
narrower than the road band so that uniform rollouts survive often enough to
carry gradient through the returns.
"""
from __future__ import annotations

import os

from .config import ActionBounds, RewardWeights, SearchConfig
from .scene import (AgentState, LaneSpec, Obstacle, RandomizationRanges,
                    Scenario, Scene, save_scenario)

TWO_LANES = (LaneSpec(0, 0.0, 4.0), LaneSpec(1, 4.0, 4.0))


def _agent(x, y, v, v_des, lane, length=4.5, width=1.8, heading=0.0, a=0.0):
    return AgentState(x_lon=x, y_lat=y, heading=heading, v=v, a=a,
                      length=length, width=width, v_desired=v_des,
                      lane_desired=lane)


def _config(**kw) -> SearchConfig:
    base = dict(iterations=500, c=1.0, horizon=5, dt=1.0,
                bounds=ActionBounds(-3.0, 3.0, -1.2, 1.2),
                reward=RewardWeights(1.0, 0.5, 0.2, -1000.0),
                collision_substeps=10, episode_steps=6)
    base.update(kw)
    return SearchConfig(**base)


def follow_straight() -> Scenario:
    """Ego behind a slower leader; hold back or slip past on the left."""
    scene = Scene(lanes=TWO_LANES, road_length=250.0,
                  agents=(_agent(20.0, 0.0, 12.0, 12.0, 0),
                          _agent(55.0, 0.0, 8.0, 8.0, 0)),
                  obstacles=())
    rand = RandomizationRanges(agent_x_offset=(-3.0, 3.0),
                               agent_v=(7.0, 12.0), agent_v_desired=(7.0, 12.0))
    return Scenario("follow_straight", scene, _config(episode_steps=8), rand)


def oncoming_obstacle() -> Scenario:
    """Own lane blocked; swerve through a gap flanked by opposing-lane blocks."""
    obstacles = (Obstacle(75.0, 0.0, 12.0, 3.4),      # blocks the ego lane
                 Obstacle(45.0, 4.0, 14.0, 3.4),      # opposing lane before gap
                 Obstacle(105.0, 4.0, 14.0, 3.4))     # opposing lane after gap
    scene = Scene(lanes=TWO_LANES, road_length=200.0,
                  agents=(_agent(15.0, 0.0, 10.0, 10.0, 0),),
                  obstacles=obstacles)
    rand = RandomizationRanges(agent_x_offset=(-4.0, 4.0), agent_v=(8.0, 11.0),
                               obstacle_x_offset=(-3.0, 3.0))
    return Scenario("oncoming_obstacle", scene, _config(), rand)


def double_merge() -> Scenario:
    """Two agents swap into each other's lane within a shared corridor."""
    scene = Scene(lanes=TWO_LANES, road_length=220.0,
                  agents=(_agent(20.0, 0.0, 10.0, 10.0, 1),
                          _agent(28.0, 4.0, 10.0, 10.0, 0)),
                  obstacles=())
    rand = RandomizationRanges(agent_x_offset=(-3.0, 3.0),
                               agent_v=(8.0, 12.0), agent_v_desired=(8.0, 12.0))
    return Scenario("double_merge", scene, _config(), rand)


def narrow_passage() -> Scenario:
    """Obstacles pinch both lanes; thread the off-center slot between them."""
    obstacles = (Obstacle(65.0, -1.0, 10.0, 2.1),
                 Obstacle(65.0, 5.0, 10.0, 2.1))
    scene = Scene(lanes=TWO_LANES, road_length=200.0,
                  agents=(_agent(18.0, 0.0, 9.0, 9.0, 0),),
                  obstacles=obstacles)
    rand = RandomizationRanges(agent_x_offset=(-4.0, 4.0), agent_v=(7.0, 10.0),
                               obstacle_x_offset=(-2.0, 2.0))
    return Scenario("narrow_passage", scene, _config(), rand)


def overtake_oncoming() -> Scenario:
    """Slow leader ahead; the passing lane closes again further on, so the
    overtake has to fit into the open window."""
    obstacles = (Obstacle(135.0, 4.0, 30.0, 3.6),)    # passing window closes
    scene = Scene(lanes=TWO_LANES, road_length=240.0,
                  agents=(_agent(15.0, 0.0, 12.0, 12.0, 0),
                          _agent(45.0, 0.0, 6.0, 6.0, 0)),
                  obstacles=obstacles)
    rand = RandomizationRanges(agent_x_offset=(-3.0, 3.0), agent_v=(5.0, 12.0),
                               obstacle_x_offset=(-5.0, 5.0))
    return Scenario("overtake_oncoming", scene, _config(episode_steps=7), rand)


def bottleneck_three() -> Scenario:
    """Three agents funnel from two lanes into one past a blockage."""
    obstacles = (Obstacle(107.0, 4.0, 44.0, 3.6),)    # lane 1 ends at x=85
    scene = Scene(lanes=TWO_LANES, road_length=220.0,
                  agents=(_agent(8.0, 0.0, 9.5, 9.5, 0),
                          _agent(20.0, 4.0, 9.5, 9.5, 0),
                          _agent(34.0, 0.0, 9.5, 9.5, 0)),
                  obstacles=obstacles)
    rand = RandomizationRanges(agent_x_offset=(-2.0, 2.0), agent_v=(8.5, 10.5))
    return Scenario("bottleneck_three", scene,
                    _config(horizon=4, episode_steps=6), rand)


def merge_two_agent() -> Scenario:
    """Tight two-agent merge: the right lane is blocked ahead and the gap
    alongside is closed, so the merger must open one before cutting over."""
    obstacles = (Obstacle(98.0, 4.0, 40.0, 3.6),)     # lane 1 ends at x=78
    scene = Scene(lanes=TWO_LANES, road_length=220.0,
                  agents=(_agent(38.0, 4.0, 10.0, 10.0, 0),   # merger
                          _agent(36.0, 0.0, 10.0, 10.0, 0)),  # through traffic
                  obstacles=obstacles)
    rand = RandomizationRanges(agent_x_offset=(-1.5, 1.5), agent_v=(9.0, 10.5))
    return Scenario("merge_two_agent", scene,
                    _config(horizon=4, episode_steps=5), rand)


BUILDERS = {
    "follow_straight": follow_straight,
    "oncoming_obstacle": oncoming_obstacle,
    "double_merge": double_merge,
    "narrow_passage": narrow_passage,
    "overtake_oncoming": overtake_oncoming,
    "bottleneck_three": bottleneck_three,
    "merge_two_agent": merge_two_agent,
}


def bundled(name: str) -> Scenario:
    return BUILDERS[name]()


def write_bundled_scenarios(out_dir) -> list[str]:
    """Materialize the suite as scenario JSON files; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, build in BUILDERS.items():
        path = os.path.join(os.fspath(out_dir), f"{name}.json")
        save_scenario(build(), path)
        paths.append(path)
    return paths
