"""Kinematics, collision checking, rewards, scenario IO and randomization."""
import json
import math
import random

import pytest

from coopmcts.config import ActionBounds, RewardWeights
from coopmcts.scene import (Action, AgentState, LaneSpec, Obstacle,
                            RandomizationRanges, Scenario, ScenarioError,
                            Scene, RandomizationError, Trajectory,
                            TrajectoryStep, check_collision, lane_center,
                            load_scenario, randomize_scenario, save_scenario,
                            scenario_from_dict, scenario_to_dict,
                            step_kinematics, step_reward, step_scene,
                            trajectory_return, validate_scene)
from coopmcts.scenarios import BUILDERS, bundled


def agent(x=0.0, y=0.0, v=10.0, v_des=10.0, lane=0, length=4.0, width=1.8,
          heading=0.0, a=0.0):
    return AgentState(x_lon=x, y_lat=y, heading=heading, v=v, a=a,
                      length=length, width=width, v_desired=v_des,
                      lane_desired=lane)


def one_lane_scene(agents, obstacles=(), width=3.5):
    return Scene(lanes=(LaneSpec(0, 0.0, width),), road_length=200.0,
                 agents=tuple(agents), obstacles=tuple(obstacles))


class TestKinematics:
    def test_constant_acceleration_advance(self):
        s = step_kinematics(agent(x=0, v=10), Action(2.0, 0.0), dt=1.0)
        assert s.v == 12.0
        assert s.x_lon == 11.0

    def test_speed_clamped_at_zero(self):
        s = step_kinematics(agent(x=0, v=1), Action(-5.0, 0.0), dt=1.0)
        assert s.v == 0.0
        assert s.x_lon == 0.5

    def test_lateral_offset_added(self):
        s = step_kinematics(agent(x=0, v=10), Action(0.0, 3.5), dt=1.0)
        assert s.y_lat == 3.5
        assert s.x_lon == 10.0

    def test_heading_follows_motion(self):
        s = step_kinematics(agent(v=0), Action(0.0, -1.0), dt=1.0)
        assert s.heading == pytest.approx(-math.pi / 2)

    def test_speed_never_negative(self):
        rng = random.Random(0)
        st = agent(v=3.0)
        for _ in range(500):
            act = Action(rng.uniform(-5, 5), rng.uniform(-3.5, 3.5))
            st = step_kinematics(st, act, dt=rng.uniform(0.2, 2.0))
            assert st.v >= 0.0


class TestCollision:
    def test_identical_poses_collide(self):
        scene = one_lane_scene([agent(x=10), agent(x=10)])
        assert check_collision(scene) == (True, True)

    def test_single_agent_empty_road_clear(self):
        scene = one_lane_scene([agent(x=10, y=0.0)])
        assert check_collision(scene) == (False,)

    def test_off_road_flagged(self):
        scene = one_lane_scene([agent(x=10, y=5.0)])
        assert check_collision(scene) == (True,)

    def test_symmetry_over_random_scenes(self):
        rng = random.Random(1)
        lanes = (LaneSpec(0, 0.0, 3.5), LaneSpec(1, 3.5, 3.5))
        for _ in range(200):
            agents = tuple(agent(x=rng.uniform(0, 30), y=rng.uniform(0, 3.5))
                           for _ in range(4))
            scene = Scene(lanes=lanes, road_length=100.0, agents=agents,
                          obstacles=())
            flags = check_collision(scene)
            # pairwise overlap must be mutual: recompute per ordered pair
            for i in range(4):
                for j in range(4):
                    if i == j:
                        continue
                    a, b = agents[i], agents[j]
                    hit_ij = (abs(a.x_lon - b.x_lon) < 0.5 * (a.length + b.length)
                              and abs(a.y_lat - b.y_lat) < 0.5 * (a.width + b.width))
                    if hit_ij:
                        assert flags[i] and flags[j]

    def test_interpolated_sweep_catches_crossing(self):
        # two agents swap lateral positions; endpoints are clear but the
        # crossing point collides
        lanes = (LaneSpec(0, 0.0, 3.5), LaneSpec(1, 3.5, 3.5))
        prev = Scene(lanes=lanes, road_length=100.0,
                     agents=(agent(x=10, y=0.0), agent(x=10, y=3.5)),
                     obstacles=())
        nxt = Scene(lanes=lanes, road_length=100.0,
                    agents=(agent(x=20, y=3.5), agent(x=20, y=0.0)),
                    obstacles=(), t=1)
        assert check_collision(nxt, substeps=10, prev=prev) == (True, True)
        # a single end-pose sample misses it
        assert check_collision(nxt) == (False, False)

    def test_obstacle_hit(self):
        scene = one_lane_scene([agent(x=10)], obstacles=[Obstacle(11.0, 0.0, 4.0, 2.0)])
        assert check_collision(scene) == (True,)


class TestReward:
    def test_zero_when_on_target(self):
        scene = one_lane_scene([agent()])
        st = agent(v=10, v_des=10, y=0.0)
        assert step_reward(st, st, Action(0.0, 0.0), False,
                           RewardWeights(), scene) == 0.0

    def test_weighted_terms(self):
        scene = one_lane_scene([agent()])
        w = RewardWeights(w_v=1.0, w_l=0.5, w_a=0.2, collision_penalty=-1000.0)
        nxt = agent(v=11.0, v_des=10.0, y=1.0)   # speed error 1, offset 1
        r = step_reward(agent(), nxt, Action(1.0, 0.5), False, w, scene)
        assert r == pytest.approx(-1.0 - 0.5 - 0.3)

    def test_collision_penalty_added(self):
        scene = one_lane_scene([agent()])
        w = RewardWeights(w_v=1.0, w_l=0.5, w_a=0.2, collision_penalty=-1000.0)
        nxt = agent(v=11.0, v_des=10.0, y=1.0)
        r = step_reward(agent(), nxt, Action(1.0, 0.5), True, w, scene)
        assert r == pytest.approx(-1001.8)


class TestTrajectoryReturn:
    def test_empty_is_zero(self):
        assert trajectory_return(Trajectory(steps=())) == 0.0

    def test_single_agent_sum(self):
        scene = one_lane_scene([agent()])
        steps = tuple(TrajectoryStep(scene, (Action(0, 0),), (r,))
                      for r in (-1.0, -2.0, 0.5))
        assert trajectory_return(Trajectory(steps)) == pytest.approx(-2.5)

    def test_cooperative_sum_over_agents(self):
        scene = one_lane_scene([agent(), agent(x=20)])
        steps = (TrajectoryStep(scene, (Action(0, 0), Action(0, 0)),
                                (-1.0, -1.0)),)
        assert trajectory_return(Trajectory(steps)) == pytest.approx(-2.0)

    def test_concatenation_additive(self):
        scene = one_lane_scene([agent()])
        rng = random.Random(2)
        steps = tuple(TrajectoryStep(scene, (Action(0, 0),),
                                     (rng.uniform(-5, 5),)) for _ in range(10))
        t1, t2 = Trajectory(steps[:4]), Trajectory(steps[4:])
        whole = Trajectory(steps)
        assert trajectory_return(whole) == pytest.approx(
            trajectory_return(t1) + trajectory_return(t2))

    def test_on_target_agent_accrues_zero_over_horizon(self):
        scenario = bundled("follow_straight")
        scene = one_lane_scene([agent(v=10, v_des=10, y=0.0, lane=0)])
        w = RewardWeights()
        total = 0.0
        for _ in range(scenario.config.horizon):
            scene, rewards, collided = step_scene(
                scene, (Action(0.0, 0.0),), 1.0, w)
            assert collided == (False,)
            total += sum(rewards)
        assert total == 0.0


class TestScenarioIO:
    def test_round_trip(self, tmp_path):
        for name in BUILDERS:
            sc = bundled(name)
            path = tmp_path / f"{name}.json"
            save_scenario(sc, path)
            back = load_scenario(path)
            assert back.scene == sc.scene
            assert back.config == sc.config
            assert back.randomization == sc.randomization

    def test_bundled_files_match_builders(self, tmp_path):
        # the shipped scenarios/ directory must not drift from the builders
        import os
        repo_dir = os.path.join(os.path.dirname(__file__), "..", "scenarios")
        for name in BUILDERS:
            shipped = load_scenario(os.path.join(repo_dir, f"{name}.json"))
            built = bundled(name)
            assert shipped.scene == built.scene
            assert shipped.config == built.config
            assert shipped.randomization == built.randomization

    def test_save_load_save_is_stable(self, tmp_path):
        sc = bundled("double_merge")
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_scenario(sc, p1)
        save_scenario(load_scenario(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_nine_agents_rejected(self):
        doc = scenario_to_dict(bundled("follow_straight"))
        doc["agents"] = doc["agents"] * 5   # 10 agents
        with pytest.raises(ScenarioError, match="at most 8"):
            scenario_from_dict(doc)

    def test_missing_lane_desired_rejected(self):
        doc = scenario_to_dict(bundled("follow_straight"))
        del doc["agents"][0]["lane_desired"]
        with pytest.raises(ScenarioError) as err:
            scenario_from_dict(doc)
        assert "agents[0].lane_desired" in str(err.value)

    def test_unknown_lane_reference_rejected(self):
        doc = scenario_to_dict(bundled("follow_straight"))
        doc["agents"][0]["lane_desired"] = 4
        with pytest.raises(ScenarioError, match="lane_desired 4"):
            scenario_from_dict(doc)

    def test_invalid_json_reported(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        with pytest.raises(ScenarioError, match="invalid JSON"):
            load_scenario(p)

    def test_field_type_error_carries_path(self):
        doc = scenario_to_dict(bundled("follow_straight"))
        doc["road"]["lanes"][0]["width_m"] = "wide"
        with pytest.raises(ScenarioError) as err:
            scenario_from_dict(doc)
        assert err.value.field_path == "road.lanes[0].width_m"


class TestValidation:
    def test_overlapping_lanes_rejected(self):
        lanes = (LaneSpec(0, 0.0, 3.5), LaneSpec(1, 2.0, 3.5))
        scene = Scene(lanes=lanes, road_length=100.0, agents=(agent(),),
                      obstacles=())
        with pytest.raises(ValueError, match="overlap"):
            validate_scene(scene)

    def test_duplicate_lane_ids_rejected(self):
        lanes = (LaneSpec(0, 0.0, 3.5), LaneSpec(0, 3.5, 3.5))
        scene = Scene(lanes=lanes, road_length=100.0, agents=(agent(),),
                      obstacles=())
        with pytest.raises(ValueError, match="duplicate"):
            validate_scene(scene)

    def test_initial_containment_checked(self):
        scene = one_lane_scene([agent(y=3.0)])
        validate_scene(scene)            # structurally fine
        with pytest.raises(ValueError, match="outside the road"):
            validate_scene(scene, initial=True)


class TestRandomization:
    def test_zero_ranges_identity(self):
        scene = bundled("double_merge").scene
        out = randomize_scenario(scene, seed=1, ranges=RandomizationRanges())
        assert out == scene

    def test_same_seed_same_scene(self):
        sc = bundled("double_merge")
        a = randomize_scenario(sc.scene, 42, sc.randomization)
        b = randomize_scenario(sc.scene, 42, sc.randomization)
        assert a == b

    def test_different_seed_differs(self):
        sc = bundled("double_merge")
        a = randomize_scenario(sc.scene, 1, sc.randomization)
        b = randomize_scenario(sc.scene, 2, sc.randomization)
        assert a != b

    def test_velocity_interval_respected(self):
        scene = bundled("follow_straight").scene
        ranges = RandomizationRanges(agent_v=(8.0, 12.0))
        for seed in range(30):
            out = randomize_scenario(scene, seed, ranges)
            assert all(8.0 <= ag.v <= 12.0 for ag in out.agents)

    def test_result_is_valid_and_collision_free(self):
        sc = bundled("bottleneck_three")
        for seed in range(20):
            out = randomize_scenario(sc.scene, seed, sc.randomization)
            validate_scene(out, initial=True)
            assert not any(check_collision(out))

    def test_road_scale_rescales_geometry(self):
        scene = bundled("double_merge").scene
        ranges = RandomizationRanges(road_width_scale=(1.1, 1.1))
        out = randomize_scenario(scene, 0, ranges)
        assert out.lanes[1].center_offset_lat == pytest.approx(4.4)
        assert out.lanes[0].width == pytest.approx(4.4)
        assert out.agents[1].y_lat == pytest.approx(4.4)

    def test_unsatisfiable_raises(self):
        # force every draw off the road
        scene = bundled("follow_straight").scene
        ranges = RandomizationRanges(agent_y_offset=(50.0, 60.0))
        with pytest.raises(RandomizationError):
            randomize_scenario(scene, 0, ranges)


class TestStepScene:
    def test_collision_flag_and_penalty_flow(self):
        scene = one_lane_scene([agent(x=10, v=2), agent(x=16, v=0, v_des=0)])
        nxt, rewards, collided = step_scene(
            scene, (Action(4.0, 0.0), Action(0.0, 0.0)), 1.0, RewardWeights())
        assert collided == (True, True)
        assert rewards[0] < -1000
        assert nxt.t == scene.t + 1

    def test_mismatched_joint_action_rejected(self):
        scene = one_lane_scene([agent()])
        with pytest.raises(ValueError):
            step_scene(scene, (Action(0, 0), Action(0, 0)), 1.0, RewardWeights())
