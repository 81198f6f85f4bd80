"""Shared helpers: a from-scratch writer of the dataset directory format."""
import json
import math
import random

import numpy as np
import pytest

SMALL_GRID = {"n_lon": 32, "n_lat": 16, "res_lon": 1.0, "res_lat": 0.1,
              "lane_class_count": 9, "object_class_count": 3}
SMALL_NORMS = {"v_norm": 20.0, "a_norm": 4.0, "slots": 8, "history_len": 8}
SMALL_BOUNDS = {"dv_min": -3.0, "dv_max": 3.0, "dy_min": -1.5, "dy_max": 1.5}

# ground-truth per-axis mixtures the synthetic corpus is sampled from
TRUE_LON = {"phi": (0.4, 0.6), "mu": (-1.5, 1.0), "var": (0.09, 0.04)}
TRUE_LAT = {"phi": (0.5, 0.5), "mu": (-0.6, 0.6), "var": (0.04, 0.04)}


def sample_mixture(params, rng, n):
    out = []
    for _ in range(n):
        k = 0 if rng.random() < params["phi"][0] else 1
        out.append(rng.gauss(params["mu"][k], math.sqrt(params["var"][k])))
    return out


def mixture_logpdf(params, x):
    total = 0.0
    for p, m, v in zip(params["phi"], params["mu"], params["var"]):
        total += p * math.exp(-0.5 * (x - m) ** 2 / v) / math.sqrt(
            2 * math.pi * v)
    return math.log(total)


def write_synthetic_dataset(out_dir, n_runs=60, records_per_run=8,
                            samples_per_record=24, seed=0):
    """Emit records.jsonl/grids.bin/manifest.json in the documented layout.

    Every record has one valid slot (slot 0); the action samples come from
    the fixed ground-truth mixtures regardless of the (random) features, so a
    trained model should approach the generating distribution's NLL.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    nprng = np.random.default_rng(seed)
    n_lat, n_lon = SMALL_GRID["n_lat"], SMALL_GRID["n_lon"]
    scalar_len = SMALL_NORMS["slots"] * SMALL_NORMS["history_len"] * 7

    # fixed, uninformative features: the corpus tests that the optimizer
    # drives the predicted mixtures to the generating marginal
    lane = np.zeros((n_lat, n_lon), dtype=np.uint8)
    lane[4:12] = 1
    obj = np.zeros((n_lat, n_lon), dtype=np.uint8)
    obj[7:9, 14:18] = 2
    fixed_grid = np.stack([lane, obj]).tobytes()
    fixed_scalars = np.full(scalar_len, 0.25, dtype=np.float32)

    histogram = {}
    offset = 0
    record_id = 0
    with open(out_dir / "grids.bin", "wb") as gh, \
            open(out_dir / "records.jsonl", "w", encoding="utf-8") as rh:
        for run in range(n_runs):
            for t in range(records_per_run):
                raw = fixed_grid
                scalars = fixed_scalars
                lon = sample_mixture(TRUE_LON, rng, samples_per_record)
                lat = sample_mixture(TRUE_LAT, rng, samples_per_record)
                weights = [float(rng.randint(1, 5))
                           for _ in range(samples_per_record)]
                doc = {
                    "record_id": record_id,
                    "scenario": f"synthetic_{run % 4}",
                    "run_seed": run,
                    "timestep": t,
                    "ego_index": 0,
                    "failed": False,
                    "class": "hold-keep",
                    "grid_offset": offset,
                    "grid_length": len(raw),
                    "scalars": {"values": [float(v) for v in scalars],
                                "mask": [True] + [False] * 7,
                                "slot_agents": [0] + [None] * 7},
                    "samples": [{"lon": {"values": lon, "weights": weights},
                                 "lat": {"values": lat, "weights": weights}}]
                    + [None] * 7,
                    "labels": None,
                }
                gh.write(raw)
                offset += len(raw)
                rh.write(json.dumps(doc, sort_keys=True) + "\n")
                histogram["hold-keep"] = histogram.get("hold-keep", 0) + 1
                record_id += 1
    manifest = {"format_version": 1, "count": record_id,
                "class_histogram": histogram, "grid": SMALL_GRID,
                "norms": SMALL_NORMS, "bounds": SMALL_BOUNDS,
                "config": {"synthetic": True}}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out_dir


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    return write_synthetic_dataset(tmp_path_factory.mktemp("ds"))
