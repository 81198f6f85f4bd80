"""Scene -> network input: ego-centered semantic grid + normalized scalars.

The grid holds two channel planes, a lane map and an object map, stored as
(n_lat rows x n_lon columns) class-id arrays; rows run across the road,
columns along it.  The scalar vector packs up to 8 agent slots x 8 history
steps x 7 values, ego in slot 0, everything normalized into [-1, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .scene import Scene

# object-map classes
OBJ_FREE = 0
OBJ_STATIC = 1
OBJ_DYNAMIC = 2


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry: cell counts and per-cell metric resolution."""

    n_lon: int = 128            # columns, 1 m each by default
    n_lat: int = 256            # rows, 0.1 m each by default
    res_lon: float = 1.0
    res_lat: float = 0.1
    lane_class_count: int = 9   # non-drivable + up to 8 lane classes
    object_class_count: int = 3

    def __post_init__(self):
        if self.n_lon < 2 or self.n_lat < 2:
            raise ValueError("grid needs at least 2 cells per axis")
        if self.res_lon <= 0 or self.res_lat <= 0:
            raise ValueError("cell resolutions must be > 0")
        if self.lane_class_count < 2 or self.object_class_count < 2:
            raise ValueError("each channel needs at least 2 classes")

    @property
    def half_extent_lon(self) -> float:
        return 0.5 * self.n_lon * self.res_lon

    @property
    def half_extent_lat(self) -> float:
        return 0.5 * self.n_lat * self.res_lat


@dataclass(frozen=True)
class FeatureConfig:
    """Normalization constants shared between training export and inference."""

    grid: GridSpec = GridSpec()
    v_norm: float = 20.0
    a_norm: float = 4.0
    slots: int = 8
    history_len: int = 8

    @property
    def x_norm(self) -> float:
        return self.grid.half_extent_lon

    @property
    def y_norm(self) -> float:
        return self.grid.half_extent_lat

    @property
    def scalar_len(self) -> int:
        return self.slots * self.history_len * 7


@dataclass(frozen=True)
class SemanticGrid:
    """Two uint8 class-id planes of shape (n_lat, n_lon)."""

    lane_map: np.ndarray
    object_map: np.ndarray

    def __post_init__(self):
        if self.lane_map.shape != self.object_map.shape:
            raise ValueError("channel planes must share their shape")
        if self.lane_map.dtype != np.uint8 or self.object_map.dtype != np.uint8:
            raise ValueError("grid planes must be uint8 class ids")

    @property
    def shape(self) -> tuple[int, int]:
        return self.lane_map.shape

    def to_bytes(self) -> bytes:
        """Channel-major, row-major raw class-id export."""
        return np.stack([self.lane_map, self.object_map]).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, n_lat: int, n_lon: int) -> "SemanticGrid":
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(2, n_lat, n_lon)
        return cls(lane_map=arr[0].copy(), object_map=arr[1].copy())


@dataclass(frozen=True)
class ScalarFeatures:
    """Flattened slot-major scalar vector plus per-slot validity mask.

    ``slot_agents`` records which scene agent occupies each slot (None for
    empty slots); slot 0 is always the ego agent.
    """

    values: np.ndarray                       # float32 (slots*history*7,)
    mask: tuple[bool, ...]
    slot_agents: tuple[Optional[int], ...]


@dataclass(frozen=True)
class FeatureTensor:
    """Normalized network input: float grid channels + scalar vector."""

    grid: np.ndarray                         # float32 (2, n_lat, n_lon) in [-1, 1]
    scalars: ScalarFeatures


def _span_to_cells(lo_m: float, hi_m: float, origin: float, n: int,
                   res: float) -> Optional[slice]:
    """Cells whose centers fall inside [lo_m, hi_m] (scene frame)."""
    lo_idx = math.ceil((lo_m - origin) / res + 0.5 * n - 0.5 - 1e-9)
    hi_idx = math.floor((hi_m - origin) / res + 0.5 * n - 0.5 + 1e-9)
    lo_idx = max(lo_idx, 0)
    hi_idx = min(hi_idx, n - 1)
    if lo_idx > hi_idx:
        return None
    return slice(lo_idx, hi_idx + 1)


def rasterize(scene: Scene, ego_index: int,
              spec: GridSpec = GridSpec()) -> SemanticGrid:
    """Paint the scene into an ego-centered semantic grid.

    Lane classes are 1-based in scene lane order on the lane map; the object
    map paints static obstacles first, then all agents (ego included), later
    classes overwriting earlier ones.
    """
    if not 0 <= ego_index < len(scene.agents):
        raise ValueError(f"ego index {ego_index} out of range")
    if len(scene.lanes) + 1 > spec.lane_class_count:
        raise ValueError(f"{len(scene.lanes)} lanes exceed the configured "
                         f"lane class count {spec.lane_class_count}")
    ego = scene.agents[ego_index]
    lane_map = np.zeros((spec.n_lat, spec.n_lon), dtype=np.uint8)
    object_map = np.zeros((spec.n_lat, spec.n_lon), dtype=np.uint8)

    for idx, lane in enumerate(scene.lanes):
        rows = _span_to_cells(lane.center_offset_lat - 0.5 * lane.width,
                              lane.center_offset_lat + 0.5 * lane.width,
                              ego.y_lat, spec.n_lat, spec.res_lat)
        if rows is not None:
            lane_map[rows, :] = idx + 1

    def paint(x, y, length, width, cls):
        cols = _span_to_cells(x - 0.5 * length, x + 0.5 * length,
                              ego.x_lon, spec.n_lon, spec.res_lon)
        rows = _span_to_cells(y - 0.5 * width, y + 0.5 * width,
                              ego.y_lat, spec.n_lat, spec.res_lat)
        if cols is not None and rows is not None:
            object_map[rows, cols] = cls

    for ob in scene.obstacles:
        paint(ob.x_lon, ob.y_lat, ob.length, ob.width, OBJ_STATIC)
    for ag in scene.agents:
        paint(ag.x_lon, ag.y_lat, ag.length, ag.width, OBJ_DYNAMIC)
    return SemanticGrid(lane_map=lane_map, object_map=object_map)


def normalize_grid(grid: SemanticGrid, lane_classes: int,
                   object_classes: int = 3) -> np.ndarray:
    """Map class ids to [-1, 1]: class c of C classes -> 2c/(C-1) - 1."""
    if lane_classes < 2 or object_classes < 2:
        raise ValueError("need at least 2 classes per channel")
    out = np.empty((2,) + grid.shape, dtype=np.float32)
    np.multiply(grid.lane_map, np.float32(2.0 / (lane_classes - 1)), out=out[0])
    np.multiply(grid.object_map, np.float32(2.0 / (object_classes - 1)),
                out=out[1])
    out -= 1.0
    return out


def build_scalars(history: Sequence[Scene], ego_index: int,
                  config: FeatureConfig = FeatureConfig()) -> ScalarFeatures:
    """Encode up to ``history_len`` scenes (oldest first) into the scalar vector.

    Positions are relative to the newest scene's ego pose.  Histories shorter
    than ``history_len`` are front-padded by repeating the oldest scene.
    Every populated value is clamped into [-1, 1]; empty slots stay zero.
    """
    if not history:
        raise ValueError("need at least one scene of history")
    newest = history[-1]
    n_agents = len(newest.agents)
    if not 0 <= ego_index < n_agents:
        raise ValueError(f"ego index {ego_index} out of range")
    if any(len(s.agents) != n_agents for s in history):
        raise ValueError("history scenes must share their agent list")

    padded = list(history[-config.history_len:])
    while len(padded) < config.history_len:
        padded.insert(0, padded[0])

    slot_agents: list[Optional[int]] = [None] * config.slots
    slot_agents[0] = ego_index
    non_ego = [i for i in range(n_agents) if i != ego_index]
    for pos, agent_idx in enumerate(non_ego[:config.slots - 1]):
        slot_agents[1 + pos] = agent_idx
    mask = tuple(a is not None for a in slot_agents)

    ego_now = newest.agents[ego_index]
    lanes = newest.lanes
    lane_pos = {lane.lane_id: i for i, lane in enumerate(lanes)}
    n_lanes = len(lanes)

    values = np.zeros((config.slots, config.history_len, 7), dtype=np.float32)
    for s, agent_idx in enumerate(slot_agents):
        if agent_idx is None:
            continue
        for h, sc in enumerate(padded):
            ag = sc.agents[agent_idx]
            if n_lanes > 1:
                lane_feat = 2.0 * lane_pos[ag.lane_desired] / (n_lanes - 1) - 1.0
            else:
                lane_feat = 0.0
            values[s, h] = (
                ag.heading / math.pi,
                (ag.x_lon - ego_now.x_lon) / config.x_norm,
                (ag.y_lat - ego_now.y_lat) / config.y_norm,
                ag.v / config.v_norm,
                ag.a / config.a_norm,
                ag.v_desired / config.v_norm,
                lane_feat,
            )
    np.clip(values, -1.0, 1.0, out=values)
    return ScalarFeatures(values=values.reshape(-1), mask=mask,
                          slot_agents=tuple(slot_agents))


def shift_slots(scalars: ScalarFeatures, t: int,
                config: FeatureConfig = FeatureConfig()) -> ScalarFeatures:
    """Cycle non-ego slots by t: non-ego slot i receives slot (i + t) mod (slots-1).

    The ego slot stays fixed; the validity mask and slot-agent map are
    permuted identically.  t = 0 and t = slots-1 are identities.
    """
    n_rot = config.slots - 1
    shift = t % n_rot
    if shift == 0:
        return scalars
    per_slot = config.history_len * 7
    blocks = scalars.values.reshape(config.slots, per_slot)
    order = [0] + [1 + (i + shift) % n_rot for i in range(n_rot)]
    values = blocks[order].reshape(-1).copy()
    mask = tuple(scalars.mask[i] for i in order)
    slot_agents = tuple(scalars.slot_agents[i] for i in order)
    return ScalarFeatures(values=values, mask=mask, slot_agents=slot_agents)


def build_features(history: Sequence[Scene], ego_index: int,
                   config: FeatureConfig = FeatureConfig()) -> FeatureTensor:
    """Full network input for the newest scene in ``history``."""
    grid = rasterize(history[-1], ego_index, config.grid)
    return FeatureTensor(
        grid=normalize_grid(grid, config.grid.lane_class_count,
                            config.grid.object_class_count),
        scalars=build_scalars(history, ego_index, config),
    )
