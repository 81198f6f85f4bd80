"""Continuous-action cooperative tree search over joint actions.

One tree per search; edges carry joint actions, node statistics follow the
bookkeeping identity N_s = 1 + sum of child edge visit counts.  Progressive
widening caps a node's children at ceil(pw_k * N_s^pw_alpha), which is what
makes the continuous action space searchable.  Expansion is uniform for the
baseline strategy and mixture-guided for the "mdn" strategy (at the root
only, or at every node); the mixture can additionally weigh the UCT
exploration term during selection.
"""
from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .config import SearchConfig
from .mdn import MdnPrediction, MdnWeights, predict_policy
from .scene import (Action, JointAction, Scene, lane_center,
                    road_lateral_bounds, step_scene)

log = logging.getLogger(__name__)

# A policy provider maps (history, ego_index) to a prediction; the default is
# the mixture network, tests may hand in hand-built oracles.
PolicyProvider = Callable[[Sequence[Scene], int], MdnPrediction]


class Node:
    __slots__ = ("scene", "depth", "parent", "n_s", "children", "terminal",
                 "prediction")

    def __init__(self, scene: Scene, depth: int, parent: Optional["Node"],
                 terminal: bool):
        self.scene = scene
        self.depth = depth
        self.parent = parent
        self.n_s = 1                      # creation visit
        self.children: list[Edge] = []
        self.terminal = terminal
        self.prediction: Optional[MdnPrediction] = None


class Edge:
    __slots__ = ("action", "n_sa", "q", "child", "step_return", "prior")

    def __init__(self, action: JointAction, child: Node, step_return: float,
                 prior: Optional[float]):
        self.action = action
        self.n_sa = 0
        self.q = 0.0
        self.child = child
        self.step_return = step_return
        self.prior = prior


@dataclass(frozen=True)
class SearchResult:
    best: JointAction
    root_children: tuple[tuple[JointAction, int, float], ...]
    returns: tuple[float, ...]
    termination: str                      # "iterations" | "terminal-root"
    iterations: int
    seed: int
    strategy: str
    wall_time_ms: float

    def to_dict(self) -> dict:
        return {
            "selected_action": [{"dv_lon": a.dv_lon, "dy_lat": a.dy_lat}
                                for a in self.best],
            "root_children": [
                {"action": [{"dv_lon": a.dv_lon, "dy_lat": a.dy_lat}
                            for a in act],
                 "N_sa": n, "Q": q}
                for act, n, q in self.root_children],
            "iterations": self.iterations,
            "seed": self.seed,
            "strategy": self.strategy,
            "wall_time_ms": self.wall_time_ms,
        }


# ------------------------------------------------------------- primitives

def uct(q: float, n_s: int, n_sa: int, c: float,
        prior: Optional[float] = None, variant: str = "sqrt_ratio") -> float:
    """Upper confidence value of an edge; a prior weighs the exploration term."""
    if n_sa < 1:
        raise ValueError("uct needs n_sa >= 1")
    if variant == "sqrt_ratio":
        explore = math.sqrt(n_s / n_sa)
    else:
        explore = math.sqrt(math.log(n_s) / n_sa) if n_s > 1 else 0.0
    if prior is not None:
        explore *= prior
    return q + c * explore


def select(node: Node, config: SearchConfig) -> Edge:
    """Child edge with maximal UCT value; ties go to the lowest index."""
    use_prior = config.use_selection_bias
    best_edge = node.children[0]
    best_val = -math.inf
    for edge in node.children:
        val = uct(edge.q, node.n_s, edge.n_sa, config.c,
                  edge.prior if use_prior else None, config.uct_variant)
        if val > best_val:
            best_val = val
            best_edge = edge
    return best_edge


def expandable(node: Node, config: SearchConfig) -> bool:
    """Progressive widening: allow a new child while |children| < ceil(k*N^a)."""
    if node.terminal:
        return False
    return len(node.children) < math.ceil(config.pw_k
                                          * node.n_s ** config.pw_alpha)


def _uniform_action(rng: random.Random, bounds) -> Action:
    return Action(rng.uniform(bounds.dv_min, bounds.dv_max),
                  rng.uniform(bounds.dy_min, bounds.dy_max))


def sample_uniform_joint(n_agents: int, rng: random.Random, bounds) -> JointAction:
    return tuple(_uniform_action(rng, bounds) for _ in range(n_agents))


def sample_biased_joint(prediction: Optional[MdnPrediction], n_agents: int,
                        rng: random.Random, bounds) -> JointAction:
    """Per-agent mixture draws; agents without a valid prediction fall back
    to the uniform sampler (consuming the same two draws)."""
    actions = []
    for agent in range(n_agents):
        mix = prediction.for_agent(agent) if prediction is not None else None
        if mix is None:
            log.debug("no prediction for agent %d, expanding uniformly", agent)
            actions.append(_uniform_action(rng, bounds))
        else:
            actions.append(Action(*mix.sample(rng, bounds)))
    return tuple(actions)


def normalized_prior(prediction: MdnPrediction, joint: JointAction,
                     p_min: float) -> float:
    """Joint mixture density scaled into [p_min, 1].

    Per agent the density is divided by the mixture's peak over component
    mean pairs; the product over agents is clamped.  Agents without a
    prediction contribute a neutral factor.
    """
    total = 1.0
    for agent, action in enumerate(joint):
        mix = prediction.for_agent(agent)
        if mix is None:
            continue
        peak = mix.peak_density()
        if peak <= 0.0:
            continue
        total *= mix.joint_density(action.dv_lon, action.dy_lat) / peak
    return min(max(total, p_min), 1.0)


def backpropagate(path: Sequence[Edge], total_return: float,
                  root: Node) -> None:
    """Update every edge on the path with the incremental mean of returns.

    Node visit counts increment only for nodes the path continued past, so
    N_s = 1 + sum of child edge visit counts holds at every node (the final
    node of the path keeps just its creation visit).
    """
    node = root
    for edge in path:
        edge.n_sa += 1
        edge.q += (total_return - edge.q) / edge.n_sa
        node.n_s += 1
        node = edge.child


# ---------------------------------------------------------------- rollout

def simulate(scene: Scene, depth: int, rng: random.Random,
             config: SearchConfig) -> float:
    """Uniform-random rollout from ``depth`` to the horizon.

    Returns the cooperative return of the rollout; stops early on an invalid
    state (collision / off-road), whose step already carries the collision
    penalty.  Runs on flat floats in a hot loop; equivalence with the
    step_scene transition is covered by tests.
    """
    agents = scene.agents
    n = len(agents)
    if depth >= config.horizon or n == 0:
        return 0.0
    bounds = config.bounds
    w = config.reward
    dt = config.dt
    substeps = config.collision_substeps
    band_lo, band_hi = road_lateral_bounds(scene)
    centers = [lane_center(scene, ag.lane_desired) for ag in agents]
    obstacles = scene.obstacles

    xs = [ag.x_lon for ag in agents]
    ys = [ag.y_lat for ag in agents]
    vs = [ag.v for ag in agents]
    lens = [ag.length for ag in agents]
    wids = [ag.width for ag in agents]
    vdes = [ag.v_desired for ag in agents]

    total = 0.0
    uniform = rng.uniform
    for _ in range(config.horizon - depth):
        px, py = xs[:], ys[:]
        acts = []
        for i in range(n):
            dv = uniform(bounds.dv_min, bounds.dv_max)
            dy = uniform(bounds.dy_min, bounds.dy_max)
            acts.append((dv, dy))
            v1 = vs[i] + dv
            if v1 < 0.0:
                v1 = 0.0
            xs[i] = px[i] + 0.5 * (vs[i] + v1) * dt
            ys[i] = py[i] + dy
            vs[i] = v1
        collided = [False] * n
        for s in range(substeps):
            f = (s + 1) / substeps
            cx = [px[i] + f * (xs[i] - px[i]) for i in range(n)]
            cy = [py[i] + f * (ys[i] - py[i]) for i in range(n)]
            for i in range(n):
                if (cy[i] - 0.5 * wids[i] < band_lo - 1e-9
                        or cy[i] + 0.5 * wids[i] > band_hi + 1e-9):
                    collided[i] = True
                for ob in obstacles:
                    if (abs(cx[i] - ob.x_lon) < 0.5 * (lens[i] + ob.length)
                            and abs(cy[i] - ob.y_lat) < 0.5 * (wids[i] + ob.width)):
                        collided[i] = True
                        break
                for j in range(i + 1, n):
                    if (abs(cx[i] - cx[j]) < 0.5 * (lens[i] + lens[j])
                            and abs(cy[i] - cy[j]) < 0.5 * (wids[i] + wids[j])):
                        collided[i] = True
                        collided[j] = True
        any_hit = False
        for i in range(n):
            r = (-w.w_v * abs(vs[i] - vdes[i])
                 - w.w_l * abs(ys[i] - centers[i])
                 - w.w_a * (abs(acts[i][0]) + abs(acts[i][1])))
            if collided[i]:
                r += w.collision_penalty
                any_hit = True
            total += r
        if any_hit:
            break
    return total


# ---------------------------------------------------------------- search

class MdnPolicy:
    """Default policy provider backed by a weights file."""

    def __init__(self, weights: MdnWeights):
        self.weights = weights

    def __call__(self, history: Sequence[Scene], ego_index: int) -> MdnPrediction:
        return predict_policy(self.weights, history, ego_index)


def _node_history(node: Node, base_history: Sequence[Scene],
                  limit: int = 8) -> list[Scene]:
    scenes: list[Scene] = []
    cur: Optional[Node] = node
    while cur is not None and len(scenes) < limit:
        scenes.append(cur.scene)
        cur = cur.parent
    scenes.reverse()
    if len(scenes) < limit:
        head = list(base_history[:-1])
        head = head[len(head) - min(len(head), limit - len(scenes)):]
        scenes = head + scenes
    return scenes


def search(scene: Scene, config: SearchConfig,
           weights: Optional[MdnWeights] = None,
           history: Optional[Sequence[Scene]] = None,
           policy_provider: Optional[PolicyProvider] = None) -> SearchResult:
    """Run the select/expand/simulate/backpropagate loop.

    ``weights`` must be present iff strategy is "mdn" (unless a custom
    ``policy_provider`` is supplied).  The search is anytime: every iteration
    count >= 1 yields a usable result.  The recommended action is the root
    child with the highest visit count, ties broken by higher mean return.
    """
    result, _root = run_search(scene, config, weights, history,
                               policy_provider)
    return result


def run_search(scene: Scene, config: SearchConfig,
               weights: Optional[MdnWeights] = None,
               history: Optional[Sequence[Scene]] = None,
               policy_provider: Optional[PolicyProvider] = None
               ) -> tuple[SearchResult, Node]:
    """Like search(), additionally returning the root node for inspection."""
    t0 = time.perf_counter()
    if config.strategy == "mdn":
        if policy_provider is None:
            if weights is None:
                raise ValueError("mdn strategy needs weights or a policy provider")
            policy_provider = MdnPolicy(weights)
    elif weights is not None or policy_provider is not None:
        raise ValueError("baseline strategy takes no policy")

    base_history = list(history) if history else []
    if not base_history or base_history[-1] is not scene:
        base_history.append(scene)

    rng = random.Random(config.seed)
    root = Node(scene, depth=0, parent=None, terminal=False)
    ego_index = 0
    n_agents = len(scene.agents)

    def prediction_for(node: Node) -> Optional[MdnPrediction]:
        if policy_provider is None:
            return None
        if node.prediction is None:
            node.prediction = policy_provider(_node_history(node, base_history),
                                              ego_index)
        return node.prediction

    returns: list[float] = []
    for _ in range(config.iterations):
        node = root
        path: list[Edge] = []
        path_return = 0.0
        while True:
            if node.terminal:
                break
            if expandable(node, config):
                biased = (config.strategy == "mdn"
                          and (config.integration == "all" or node is root))
                if biased:
                    joint = sample_biased_joint(prediction_for(node), n_agents,
                                                rng, config.bounds)
                else:
                    joint = sample_uniform_joint(n_agents, rng, config.bounds)
                nxt, rewards, collided = step_scene(
                    node.scene, joint, config.dt, config.reward,
                    config.collision_substeps)
                child = Node(nxt, node.depth + 1, node,
                             terminal=any(collided)
                             or node.depth + 1 >= config.horizon)
                prior = None
                if config.use_selection_bias and config.strategy == "mdn":
                    prior = normalized_prior(prediction_for(node), joint,
                                             config.prior_floor)
                edge = Edge(joint, child, sum(rewards), prior)
                node.children.append(edge)
                path.append(edge)
                path_return += edge.step_return
                node = child
                break
            edge = select(node, config)
            path.append(edge)
            path_return += edge.step_return
            node = edge.child

        total = path_return
        if not node.terminal:
            total += simulate(node.scene, node.depth, rng, config)
        backpropagate(path, total, root)
        returns.append(total)

    best_edge = root.children[0]
    best_key = (best_edge.n_sa, best_edge.q)
    for edge in root.children[1:]:
        key = (edge.n_sa, edge.q)
        if key > best_key:
            best_key = key
            best_edge = edge
    snapshot = tuple((e.action, e.n_sa, e.q) for e in root.children)
    result = SearchResult(best=best_edge.action, root_children=snapshot,
                          returns=tuple(returns), termination="iterations",
                          iterations=len(returns), seed=config.seed,
                          strategy=describe_strategy(config),
                          wall_time_ms=(time.perf_counter() - t0) * 1e3)
    return result, root


def describe_strategy(config: SearchConfig) -> str:
    if config.strategy == "baseline":
        return "baseline"
    sel = "sel" if config.use_selection_bias else "nosel"
    return f"mdn{config.components}-{config.integration}-{sel}"


def mdn_standalone_policy(weights: MdnWeights, scene: Scene,
                          rng: random.Random,
                          history: Optional[Sequence[Scene]] = None,
                          n_samples: int = 1000) -> JointAction:
    """Best-of-N mixture policy: per agent, draw ``n_samples`` actions and
    keep the one with the highest joint density."""
    hist = list(history) if history else []
    if not hist or hist[-1] is not scene:
        hist.append(scene)
    prediction = predict_policy(weights, hist, 0)
    bounds = weights.meta.bounds
    actions = []
    for agent in range(len(scene.agents)):
        mix = prediction.for_agent(agent)
        if mix is None:
            actions.append(_uniform_action(rng, bounds))
            continue
        best = None
        best_d = -1.0
        for _ in range(n_samples):
            dv, dy = mix.sample(rng, bounds)
            d = mix.joint_density(dv, dy)
            if d > best_d:
                best_d = d
                best = Action(dv, dy)
        actions.append(best)
    return tuple(actions)
