"""Training-corpus generation: expert searches, per-ego records, slot-shift
augmentation, class balancing, mixture label fitting and dataset IO.

Dataset directory layout:

    records.jsonl   one JSON record per line
    grids.bin       concatenated raw semantic grids (uint8 class ids,
                    channel-major, row-major), addressed by offset/length
    manifest.json   counts, class histogram, config echo, format version
"""
from __future__ import annotations

import json
import logging
import os

import numpy as np
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .config import ActionBounds
from .features import (FeatureConfig, ScalarFeatures, SemanticGrid,
                       build_scalars, rasterize, shift_slots)
from .gmm import DegenerateSamplesError, Gmm1D, WeightedSamples, fit_em
from .planner import search
from .scene import Action, Scenario, Scene, randomize_scenario, step_scene

log = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1

LON_CLASSES = ("decelerate", "hold", "accelerate")
LAT_CLASSES = ("left", "keep", "right")


class DatasetError(ValueError):
    """Dataset directory contents are invalid."""


class DatasetVersionError(DatasetError):
    """Dataset was written with an unsupported format version."""


class DatasetOffsetError(DatasetError):
    """A record's grid slice lies outside the grids blob."""


def classify_action(action: Action, dv_thr: float = 0.5,
                    dy_thr: float = 0.5) -> str:
    """Semantic action class, one of 9 = {decelerate,hold,accelerate} x
    {left,keep,right}.  Positive dy_lat is left by convention."""
    if abs(action.dv_lon) < dv_thr:
        lon = "hold"
    else:
        lon = "accelerate" if action.dv_lon > 0 else "decelerate"
    if abs(action.dy_lat) < dy_thr:
        lat = "keep"
    else:
        lat = "left" if action.dy_lat > 0 else "right"
    return f"{lon}-{lat}"


@dataclass
class SlotSamples:
    """Root-edge action samples of one slot's agent, weighted by visit count."""

    lon: WeightedSamples
    lat: WeightedSamples

    def to_dict(self) -> dict:
        return {"lon": {"values": list(self.lon.values),
                        "weights": list(self.lon.weights)},
                "lat": {"values": list(self.lat.values),
                        "weights": list(self.lat.weights)}}

    @classmethod
    def from_dict(cls, d: dict) -> "SlotSamples":
        return cls(lon=WeightedSamples(tuple(d["lon"]["values"]),
                                       tuple(d["lon"]["weights"])),
                   lat=WeightedSamples(tuple(d["lat"]["values"]),
                                       tuple(d["lat"]["weights"])))


@dataclass
class SlotLabels:
    """Fitted mixtures per axis, for two and three components."""

    lon: dict[int, Gmm1D]
    lat: dict[int, Gmm1D]

    def to_dict(self) -> dict:
        return {"lon": {str(k): g.to_dict() for k, g in self.lon.items()},
                "lat": {str(k): g.to_dict() for k, g in self.lat.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "SlotLabels":
        return cls(lon={int(k): Gmm1D.from_dict(g) for k, g in d["lon"].items()},
                   lat={int(k): Gmm1D.from_dict(g) for k, g in d["lat"].items()})


@dataclass
class DatasetRecord:
    """One (timestep, ego) view of an expert run."""

    record_id: int
    scenario: str
    run_seed: int
    timestep: int
    ego_index: int
    failed: bool
    class_tag: str
    scalars: ScalarFeatures
    grid: SemanticGrid
    samples: tuple[Optional[SlotSamples], ...]      # per slot
    labels: Optional[tuple[Optional[SlotLabels], ...]] = None


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs for one expert data-generation run."""

    feature: FeatureConfig = FeatureConfig()
    iterations: Optional[int] = None     # None: use the scenario's setting
    episode_steps: Optional[int] = None


def generate_run(scenario: Scenario, seed: int,
                 gen: GenerationConfig = GenerationConfig()
                 ) -> list[DatasetRecord]:
    """Solve one randomized episode with the baseline search and record every
    (timestep, ego agent) view.

    Sample weights are the final root visit counts.  Records of a run that
    ends in a collision are all flagged failed (and kept).  Slot shifting by
    the timestep index is applied to scalars, masks and samples alike.
    """
    config = scenario.config
    if config.strategy != "baseline":
        raise ValueError("data generation requires the baseline strategy")
    if gen.iterations is not None:
        config = replace(config, iterations=gen.iterations)
    steps = gen.episode_steps or config.episode_steps

    scene = randomize_scenario(scenario.scene, seed, scenario.randomization)
    history: list[Scene] = [scene]
    records: list[DatasetRecord] = []
    failed = False
    for t in range(steps):
        step_cfg = replace(config, seed=seed * 100003 + t)
        result = search(scene, step_cfg)
        for ego in range(len(scene.agents)):
            scalars = shift_slots(build_scalars(history, ego, gen.feature), t,
                                  gen.feature)
            samples: list[Optional[SlotSamples]] = []
            for slot, agent_idx in enumerate(scalars.slot_agents):
                if agent_idx is None:
                    samples.append(None)
                    continue
                lon_vals, lat_vals, weights = [], [], []
                for joint, n_sa, _q in result.root_children:
                    lon_vals.append(joint[agent_idx].dv_lon)
                    lat_vals.append(joint[agent_idx].dy_lat)
                    weights.append(float(n_sa))
                samples.append(SlotSamples(
                    lon=WeightedSamples(tuple(lon_vals), tuple(weights)),
                    lat=WeightedSamples(tuple(lat_vals), tuple(weights))))
            records.append(DatasetRecord(
                record_id=-1, scenario=scenario.name, run_seed=seed,
                timestep=t, ego_index=ego, failed=False,
                class_tag=classify_action(result.best[ego]),
                scalars=scalars, grid=rasterize(scene, ego, gen.feature.grid),
                samples=tuple(samples)))
        scene, _rewards, collided = step_scene(
            scene, result.best, config.dt, config.reward,
            config.collision_substeps)
        history.append(scene)
        if len(history) > gen.feature.history_len:
            history.pop(0)
        if any(collided):
            failed = True
            break
    if failed:
        for rec in records:
            rec.failed = True
    return records


def assign_record_ids(records: Sequence[DatasetRecord]) -> list[DatasetRecord]:
    for i, rec in enumerate(records):
        rec.record_id = i
    return list(records)


def balance_classes(records: Sequence[DatasetRecord]) -> list[DatasetRecord]:
    """Downsample every class to the smallest non-empty class count,
    deterministically keeping the lowest record ids."""
    if not records:
        raise ValueError("no records to balance")
    by_class: dict[str, list[DatasetRecord]] = {}
    for rec in records:
        by_class.setdefault(rec.class_tag, []).append(rec)
    target = min(len(v) for v in by_class.values())
    keep = []
    for recs in by_class.values():
        keep.extend(sorted(recs, key=lambda r: r.record_id)[:target])
    return sorted(keep, key=lambda r: r.record_id)


def fit_labels(record: DatasetRecord, seed: int = 0,
               components: Sequence[int] = (2, 3)
               ) -> Optional[DatasetRecord]:
    """Fit per-axis mixtures for every valid slot; returns None (record
    dropped) when any axis lacks enough distinct samples."""
    labels: list[Optional[SlotLabels]] = []
    for slot, samples in enumerate(record.samples):
        if samples is None:
            labels.append(None)
            continue
        try:
            lon = {k: fit_em(samples.lon, k, seed=seed + record.record_id)
                   for k in components}
            lat = {k: fit_em(samples.lat, k, seed=seed + record.record_id)
                   for k in components}
        except DegenerateSamplesError as exc:
            log.info("dropping record %d (slot %d): %s",
                     record.record_id, slot, exc)
            return None
        labels.append(SlotLabels(lon=lon, lat=lat))
    record.labels = tuple(labels)
    return record


# --------------------------------------------------------------------- IO

def _scalars_to_dict(s: ScalarFeatures) -> dict:
    return {"values": [float(v) for v in s.values],
            "mask": list(s.mask),
            "slot_agents": [a if a is not None else None for a in s.slot_agents]}


def _scalars_from_dict(d: dict) -> ScalarFeatures:
    return ScalarFeatures(
        values=np.asarray(d["values"], dtype=np.float32),
        mask=tuple(bool(m) for m in d["mask"]),
        slot_agents=tuple(a if a is None else int(a) for a in d["slot_agents"]))


def write_dataset(records: Sequence[DatasetRecord], out_dir,
                  feature: FeatureConfig = FeatureConfig(),
                  config_echo: Optional[dict] = None,
                  bounds: Optional[ActionBounds] = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    histogram: dict[str, int] = {}
    grid_path = os.path.join(os.fspath(out_dir), "grids.bin")
    rec_path = os.path.join(os.fspath(out_dir), "records.jsonl")
    offset = 0
    with open(grid_path, "wb") as gh, open(rec_path, "w", encoding="utf-8") as rh:
        for rec in records:
            raw = rec.grid.to_bytes()
            doc = {
                "record_id": rec.record_id,
                "scenario": rec.scenario,
                "run_seed": rec.run_seed,
                "timestep": rec.timestep,
                "ego_index": rec.ego_index,
                "failed": rec.failed,
                "class": rec.class_tag,
                "grid_offset": offset,
                "grid_length": len(raw),
                "scalars": _scalars_to_dict(rec.scalars),
                "samples": [s.to_dict() if s is not None else None
                            for s in rec.samples],
                "labels": ([l.to_dict() if l is not None else None
                            for l in rec.labels]
                           if rec.labels is not None else None),
            }
            gh.write(raw)
            offset += len(raw)
            rh.write(json.dumps(doc, sort_keys=True) + "\n")
            histogram[rec.class_tag] = histogram.get(rec.class_tag, 0) + 1
    gs = feature.grid
    bounds = bounds or ActionBounds()
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "count": len(records),
        "class_histogram": dict(sorted(histogram.items())),
        "grid": {"n_lon": gs.n_lon, "n_lat": gs.n_lat, "res_lon": gs.res_lon,
                 "res_lat": gs.res_lat, "lane_class_count": gs.lane_class_count,
                 "object_class_count": gs.object_class_count},
        "norms": {"v_norm": feature.v_norm, "a_norm": feature.a_norm,
                  "slots": feature.slots, "history_len": feature.history_len},
        "bounds": {"dv_min": bounds.dv_min, "dv_max": bounds.dv_max,
                   "dy_min": bounds.dy_min, "dy_max": bounds.dy_max},
        "config": config_echo or {},
    }
    with open(os.path.join(os.fspath(out_dir), "manifest.json"), "w",
              encoding="utf-8") as mh:
        json.dump(manifest, mh, indent=2, sort_keys=True)
        mh.write("\n")


def read_manifest(dataset_dir) -> dict:
    path = os.path.join(os.fspath(dataset_dir), "manifest.json")
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetVersionError(
            f"dataset format version {version}, supported: "
            f"{DATASET_FORMAT_VERSION}")
    return manifest


def read_dataset(dataset_dir) -> tuple[list[DatasetRecord], dict]:
    """Inverse of write_dataset (bit-exact for grids and floats)."""
    manifest = read_manifest(dataset_dir)
    gd = manifest["grid"]
    with open(os.path.join(os.fspath(dataset_dir), "grids.bin"), "rb") as gh:
        blob = gh.read()
    records = []
    rec_path = os.path.join(os.fspath(dataset_dir), "records.jsonl")
    with open(rec_path, "r", encoding="utf-8") as rh:
        for line in rh:
            doc = json.loads(line)
            off, length = doc["grid_offset"], doc["grid_length"]
            if off < 0 or off + length > len(blob):
                raise DatasetOffsetError(
                    f"record {doc['record_id']}: grid slice [{off}, "
                    f"{off + length}) outside blob of {len(blob)} bytes")
            grid = SemanticGrid.from_bytes(blob[off:off + length],
                                           gd["n_lat"], gd["n_lon"])
            records.append(DatasetRecord(
                record_id=int(doc["record_id"]),
                scenario=doc["scenario"],
                run_seed=int(doc["run_seed"]),
                timestep=int(doc["timestep"]),
                ego_index=int(doc["ego_index"]),
                failed=bool(doc["failed"]),
                class_tag=doc["class"],
                scalars=_scalars_from_dict(doc["scalars"]),
                grid=grid,
                samples=tuple(SlotSamples.from_dict(s) if s is not None else None
                              for s in doc["samples"]),
                labels=(tuple(SlotLabels.from_dict(l) if l is not None else None
                              for l in doc["labels"])
                        if doc.get("labels") is not None else None),
            ))
    return records, manifest
