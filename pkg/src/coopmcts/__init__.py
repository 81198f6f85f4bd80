"""Cooperative multi-agent trajectory planning with continuous-action tree
search and a learned mixture-density sampling heuristic."""

from .config import ActionBounds, RewardWeights, SearchConfig
from .gmm import FactoredActionGmm, Gmm1D, WeightedSamples, fit_em
from .scene import (Action, AgentState, JointAction, LaneSpec, Obstacle,
                    RandomizationRanges, Scenario, Scene, Trajectory,
                    TrajectoryStep, check_collision, load_scenario,
                    randomize_scenario, save_scenario, step_kinematics,
                    step_reward, step_scene, trajectory_return)
from .features import (FeatureConfig, FeatureTensor, GridSpec, ScalarFeatures,
                       SemanticGrid, build_features, build_scalars,
                       normalize_grid, rasterize, shift_slots)
from .mdn import (MdnMeta, MdnPrediction, MdnWeights, conv2d_reflect, forward,
                  load_weights, nnelu, predict_policy, random_weights,
                  save_weights)
from .planner import (SearchResult, mdn_standalone_policy, search,
                      describe_strategy)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
