"""Reader for the training dataset directory format.

Layout consumed (written by the planner-side datagen tooling):

    records.jsonl   one JSON record per line
    grids.bin       raw uint8 class-id grids (channel-major, row-major),
                    sliced by each record's grid_offset/grid_length
    manifest.json   format version, counts, grid/norms/bounds blocks

This is an independent consumer of the documented format; grids are
normalized here from class ids to [-1, 1] exactly as at inference time.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class TrainingRecord:
    record_id: int
    scenario: str
    run_seed: int
    failed: bool
    grid: np.ndarray                  # (2, n_lat, n_lon) float32 in [-1, 1]
    scalars: np.ndarray               # (scalar_len,) float32
    slot_mask: np.ndarray             # (slots,) bool
    lon_values: list                  # per slot: np.ndarray or None
    lon_weights: list
    lat_values: list
    lat_weights: list

    @property
    def group(self) -> tuple:
        return (self.scenario, self.run_seed)


@dataclass
class Dataset:
    manifest: dict
    records: list

    @property
    def slots(self) -> int:
        return int(self.manifest["norms"]["slots"])


def load_dataset(path) -> Dataset:
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format {manifest.get('format_version')}")
    grid_meta = manifest["grid"]
    n_lat, n_lon = int(grid_meta["n_lat"]), int(grid_meta["n_lon"])
    lane_classes = int(grid_meta["lane_class_count"])
    obj_classes = int(grid_meta["object_class_count"])
    with open(os.path.join(path, "grids.bin"), "rb") as fh:
        blob = fh.read()

    records = []
    with open(os.path.join(path, "records.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            doc = json.loads(line)
            off, length = int(doc["grid_offset"]), int(doc["grid_length"])
            if off < 0 or off + length > len(blob):
                raise DatasetFormatError(
                    f"record {doc['record_id']}: grid slice out of range")
            raw = np.frombuffer(blob[off:off + length], dtype=np.uint8)
            grid = raw.reshape(2, n_lat, n_lon).astype(np.float32)
            grid[0] = 2.0 * grid[0] / (lane_classes - 1) - 1.0
            grid[1] = 2.0 * grid[1] / (obj_classes - 1) - 1.0

            lon_v, lon_w, lat_v, lat_w = [], [], [], []
            for slot in doc["samples"]:
                if slot is None:
                    lon_v.append(None)
                    lon_w.append(None)
                    lat_v.append(None)
                    lat_w.append(None)
                else:
                    lon_v.append(np.asarray(slot["lon"]["values"], np.float32))
                    lon_w.append(np.asarray(slot["lon"]["weights"], np.float32))
                    lat_v.append(np.asarray(slot["lat"]["values"], np.float32))
                    lat_w.append(np.asarray(slot["lat"]["weights"], np.float32))
            records.append(TrainingRecord(
                record_id=int(doc["record_id"]),
                scenario=doc["scenario"],
                run_seed=int(doc["run_seed"]),
                failed=bool(doc["failed"]),
                grid=grid,
                scalars=np.asarray(doc["scalars"]["values"], np.float32),
                slot_mask=np.asarray(doc["scalars"]["mask"], bool),
                lon_values=lon_v, lon_weights=lon_w,
                lat_values=lat_v, lat_weights=lat_w))
    return Dataset(manifest=manifest, records=records)


def split_by_group(dataset: Dataset, val_fraction: float = 0.1
                   ) -> tuple[list, list]:
    """Train/validation split by (scenario, run) group, not by record, so
    augmented views of one run never straddle the split."""
    groups = sorted({r.group for r in dataset.records})
    n_val = max(1, int(round(val_fraction * len(groups)))) if len(groups) > 1 else 0
    val_groups = set(groups[:n_val])
    train = [r for r in dataset.records if r.group not in val_groups]
    val = [r for r in dataset.records if r.group in val_groups]
    return train, val


def collate(records, slots: int) -> dict:
    """Stack records into padded numpy batch arrays (weight 0 = padding)."""
    b = len(records)
    max_s = 1
    for rec in records:
        for vals in rec.lon_values:
            if vals is not None:
                max_s = max(max_s, len(vals))
    grid = np.stack([rec.grid for rec in records])
    scalars = np.stack([rec.scalars for rec in records])
    slot_mask = np.stack([rec.slot_mask for rec in records])
    shape = (b, slots, max_s)
    out = {"grid": grid, "scalars": scalars, "slot_mask": slot_mask,
           "lon_values": np.zeros(shape, np.float32),
           "lon_weights": np.zeros(shape, np.float32),
           "lat_values": np.zeros(shape, np.float32),
           "lat_weights": np.zeros(shape, np.float32)}
    for i, rec in enumerate(records):
        for s in range(slots):
            if rec.lon_values[s] is None:
                continue
            n = len(rec.lon_values[s])
            out["lon_values"][i, s, :n] = rec.lon_values[s]
            out["lon_weights"][i, s, :n] = rec.lon_weights[s]
            out["lat_values"][i, s, :n] = rec.lat_values[s]
            out["lat_weights"][i, s, :n] = rec.lat_weights[s]
    return out
