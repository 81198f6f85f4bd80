"""Mixture-density network inference: weights file IO and the forward pass.

The network is a two-branch pipeline.  Scalars go through fc1/fc2; the
semantic grid goes through two reflect-padded convolutions and fc3; the
concatenated trunk (fc4, fc5) feeds six heads emitting, per agent slot and
per action axis, mixing logits (softmax), means (identity, normalized action
units) and raw variances (non-negative ELU).

Weights file layout (little-endian, bit-exact):

    magic "MDNW" | version u32 | header_len u32 | header JSON (UTF-8)
    | payload: concatenated float32 tensors, row-major, offsets in float
      counts | CRC32 of the payload, u32

The header is ``{"metadata": {...}, "tensors": [{name, shape, offset,
count}, ...]}``.  Metadata, not code, owns the hidden widths and grid dims.
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import ActionBounds
from .features import FeatureConfig, FeatureTensor, GridSpec, build_features
from .gmm import FactoredActionGmm, Gmm1D
from .scene import Scene

MAGIC = b"MDNW"
FORMAT_VERSION = 1

CONV1 = dict(filters=16, kernel=7, stride=4, pad=3)
CONV2 = dict(filters=32, kernel=3, stride=1, pad=1)

# guards float underflow in the variance head; nnelu itself is positive
_VAR_EPS = 1e-30


class WeightsFormatError(ValueError):
    """Weights file is structurally invalid."""


class WeightsTruncatedError(WeightsFormatError):
    """Weights file ends before the declared payload/checksum."""


class WeightsChecksumError(WeightsFormatError):
    """Payload bytes do not match the stored CRC32."""


class WeightsShapeError(WeightsFormatError):
    """Tensor shapes are internally inconsistent."""


@dataclass(frozen=True)
class MdnMeta:
    """Architecture and normalization metadata stored in the weights header."""

    k: int
    g: int = 8
    hidden: tuple[int, int, int, int, int] = (256, 128, 256, 256, 128)
    feature: FeatureConfig = FeatureConfig()
    bounds: ActionBounds = ActionBounds()

    def __post_init__(self):
        if self.k not in (2, 3):
            raise ValueError(f"component count K must be 2 or 3, got {self.k}")
        if self.g < 1:
            raise ValueError("agent slot count must be >= 1")
        if len(self.hidden) != 5 or any(n < 1 for n in self.hidden):
            raise ValueError(f"need five positive hidden widths, got {self.hidden}")

    def to_dict(self) -> dict:
        gs = self.feature.grid
        return {
            "K": self.k, "G": self.g, "hidden": list(self.hidden),
            "grid": {"n_lon": gs.n_lon, "n_lat": gs.n_lat,
                     "res_lon": gs.res_lon, "res_lat": gs.res_lat,
                     "lane_class_count": gs.lane_class_count,
                     "object_class_count": gs.object_class_count},
            "norms": {"v_norm": self.feature.v_norm,
                      "a_norm": self.feature.a_norm,
                      "slots": self.feature.slots,
                      "history_len": self.feature.history_len},
            "bounds": {"dv_min": self.bounds.dv_min, "dv_max": self.bounds.dv_max,
                       "dy_min": self.bounds.dy_min, "dy_max": self.bounds.dy_max},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdnMeta":
        gd, nd, bd = d["grid"], d["norms"], d["bounds"]
        return cls(
            k=int(d["K"]), g=int(d["G"]), hidden=tuple(int(n) for n in d["hidden"]),
            feature=FeatureConfig(
                grid=GridSpec(n_lon=int(gd["n_lon"]), n_lat=int(gd["n_lat"]),
                              res_lon=float(gd["res_lon"]),
                              res_lat=float(gd["res_lat"]),
                              lane_class_count=int(gd["lane_class_count"]),
                              object_class_count=int(gd["object_class_count"])),
                v_norm=float(nd["v_norm"]), a_norm=float(nd["a_norm"]),
                slots=int(nd["slots"]), history_len=int(nd["history_len"])),
            bounds=ActionBounds(dv_min=float(bd["dv_min"]),
                                dv_max=float(bd["dv_max"]),
                                dy_min=float(bd["dy_min"]),
                                dy_max=float(bd["dy_max"])),
        )


def conv_output_size(n: int, kernel: int, stride: int, pad: int) -> int:
    if n + 2 * pad < kernel:
        raise WeightsShapeError(
            f"kernel {kernel} larger than padded input {n + 2 * pad}")
    return (n + 2 * pad - kernel) // stride + 1


def conv_grid_dims(spec: GridSpec) -> tuple[int, int]:
    """(rows, cols) of the conv2 output for a given grid spec."""
    h = conv_output_size(spec.n_lat, CONV1["kernel"], CONV1["stride"], CONV1["pad"])
    w = conv_output_size(spec.n_lon, CONV1["kernel"], CONV1["stride"], CONV1["pad"])
    h = conv_output_size(h, CONV2["kernel"], CONV2["stride"], CONV2["pad"])
    w = conv_output_size(w, CONV2["kernel"], CONV2["stride"], CONV2["pad"])
    return h, w


def expected_shapes(meta: MdnMeta) -> dict[str, tuple[int, ...]]:
    n1, n2, n3, n4, n5 = meta.hidden
    ch, cw = conv_grid_dims(meta.feature.grid)
    flat = CONV2["filters"] * ch * cw
    gk = meta.g * meta.k
    shapes: dict[str, tuple[int, ...]] = {
        "conv1.w": (CONV1["filters"], 2, CONV1["kernel"], CONV1["kernel"]),
        "conv1.b": (CONV1["filters"],),
        "conv2.w": (CONV2["filters"], CONV1["filters"], CONV2["kernel"],
                    CONV2["kernel"]),
        "conv2.b": (CONV2["filters"],),
        "fc1.w": (n1, meta.feature.scalar_len), "fc1.b": (n1,),
        "fc2.w": (n2, n1), "fc2.b": (n2,),
        "fc3.w": (n3, flat), "fc3.b": (n3,),
        "fc4.w": (n4, n2 + n3), "fc4.b": (n4,),
        "fc5.w": (n5, n4), "fc5.b": (n5,),
    }
    for head in ("fc6", "fc7", "fc8"):
        for axis in ("lon", "lat"):
            shapes[f"{head}.{axis}.w"] = (gk, n5)
            shapes[f"{head}.{axis}.b"] = (gk,)
    return shapes


@dataclass(frozen=True)
class MdnWeights:
    meta: MdnMeta
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        _validate_tensors(self.meta, self.tensors)


def _validate_tensors(meta: MdnMeta, tensors: dict[str, np.ndarray]) -> None:
    expected = expected_shapes(meta)
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise WeightsShapeError(f"missing tensors: {missing}")
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise WeightsShapeError(f"unexpected tensors: {extra}")
    # cross-checks on the actual shapes, so a broken file names the tensors
    # that disagree rather than just the metadata expectation
    n2_actual = tensors["fc2.w"].shape[0]
    n3_actual = tensors["fc3.w"].shape[0]
    fc4_in = tensors["fc4.w"].shape[1]
    if fc4_in != n2_actual + n3_actual:
        raise WeightsShapeError(
            f"fc4.w input dim {fc4_in} does not match fc2.w output "
            f"{n2_actual} + fc3.w output {n3_actual}")
    for name, shape in expected.items():
        actual = tuple(tensors[name].shape)
        if actual != shape:
            raise WeightsShapeError(
                f"tensor {name} has shape {actual}, expected {shape}")


def save_weights(weights: MdnWeights, path) -> None:
    names = sorted(weights.tensors)
    entries = []
    offset = 0
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(weights.tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "count": int(arr.size)})
        payload.extend(arr.tobytes())
        offset += arr.size
    header = json.dumps({"metadata": weights.meta.to_dict(),
                         "tensors": entries}, sort_keys=True).encode("utf-8")
    crc = zlib.crc32(bytes(payload)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(bytes(payload))
        fh.write(crc.to_bytes(4, "little"))


def load_weights(path) -> MdnWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise WeightsTruncatedError(f"file is only {len(raw)} bytes")
    if raw[:4] != MAGIC:
        raise WeightsFormatError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    version = int.from_bytes(raw[4:8], "little")
    if version != FORMAT_VERSION:
        raise WeightsFormatError(f"unsupported format version {version}")
    header_len = int.from_bytes(raw[8:12], "little")
    if len(raw) < 12 + header_len:
        raise WeightsTruncatedError("file ends inside the header")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
        meta = MdnMeta.from_dict(header["metadata"])
        entries = header["tensors"]
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise WeightsFormatError(f"invalid header: {exc}") from exc
    if not entries:
        raise WeightsFormatError("header declares no tensors")
    total = max(e["offset"] + e["count"] for e in entries)
    body = raw[12 + header_len:]
    if len(body) < 4 * total + 4:
        raise WeightsTruncatedError(
            f"payload+checksum need {4 * total + 4} bytes, got {len(body)}")
    if len(body) > 4 * total + 4:
        raise WeightsFormatError(f"{len(body) - 4 * total - 4} trailing bytes")
    payload, crc_bytes = body[:4 * total], body[4 * total:]
    if zlib.crc32(payload) & 0xFFFFFFFF != int.from_bytes(crc_bytes, "little"):
        raise WeightsChecksumError("payload CRC32 mismatch")
    flat = np.frombuffer(payload, dtype="<f4")
    tensors = {}
    for e in entries:
        name, shape = e["name"], tuple(int(s) for s in e["shape"])
        count = int(e["count"])
        if count != math.prod(shape):
            raise WeightsShapeError(
                f"tensor {name}: count {count} != prod(shape {shape})")
        tensors[name] = flat[e["offset"]:e["offset"] + count].reshape(shape).copy()
    return MdnWeights(meta=meta, tensors=tensors)


def random_weights(meta: MdnMeta, seed: int = 0, scale: float = 1.0) -> MdnWeights:
    """Randomly initialized weights (fan-in scaled), e.g. for tests."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(meta).items():
        if name.endswith(".b"):
            tensors[name] = (0.1 * scale * rng.standard_normal(shape)
                             ).astype(np.float32)
        else:
            fan_in = math.prod(shape[1:])
            tensors[name] = (scale / math.sqrt(fan_in)
                             * rng.standard_normal(shape)).astype(np.float32)
    return MdnWeights(meta=meta, tensors=tensors)


# ----------------------------------------------------------------- forward

def nnelu(x):
    """Non-negative ELU: x + 1 for x >= 0, exp(x) for x < 0 (always > 0)."""
    if isinstance(x, np.ndarray):
        return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
    return x + 1.0 if x >= 0 else math.exp(x)


def conv2d_reflect(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, pad: int) -> np.ndarray:
    """Cross-correlation over a (C, H, W) stack with reflect padding.

    Reflect padding mirrors rows/columns without repeating the edge cell;
    output dims are (in + 2*pad - kernel) // stride + 1.
    """
    c, h, wid = x.shape
    f, c_w, kh, kw = w.shape
    if c_w != c:
        raise WeightsShapeError(f"kernel expects {c_w} channels, input has {c}")
    if pad > 0:
        if pad >= h or pad >= wid:
            raise WeightsShapeError(f"reflect pad {pad} too large for "
                                    f"{h}x{wid} planes")
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    hp, wp = x.shape[1:]
    if kh > hp or kw > wp:
        raise WeightsShapeError("kernel larger than padded input")
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    cols = windows.transpose(1, 2, 0, 3, 4).reshape(out_h * out_w, c * kh * kw)
    out = cols @ w.reshape(f, -1).T + b
    return np.ascontiguousarray(out.T.reshape(f, out_h, out_w))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0, out=x)


@dataclass(frozen=True)
class MdnPrediction:
    """Per-slot factored action mixtures plus the input slot validity mask."""

    mixtures: tuple[FactoredActionGmm, ...]
    mask: tuple[bool, ...]
    slot_agents: tuple[Optional[int], ...]

    def for_agent(self, agent_index: int) -> Optional[FactoredActionGmm]:
        for mix, ok, agent in zip(self.mixtures, self.mask, self.slot_agents):
            if ok and agent == agent_index:
                return mix
        return None


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(weights: MdnWeights, features: FeatureTensor) -> MdnPrediction:
    """Deterministic forward pass producing one mixture pair per agent slot.

    Mean heads emit normalized action units and are de-normalized here with
    the action bounds from the metadata; variance heads pass through nnelu.
    """
    meta = weights.meta
    t = weights.tensors
    spec = meta.feature.grid
    if features.grid.shape != (2, spec.n_lat, spec.n_lon):
        raise WeightsShapeError(f"grid shape {features.grid.shape} does not "
                                f"match metadata (2, {spec.n_lat}, {spec.n_lon})")
    scal = np.asarray(features.scalars.values, dtype=np.float32)
    if scal.shape != (meta.feature.scalar_len,):
        raise WeightsShapeError(f"scalar length {scal.shape} does not match "
                                f"metadata ({meta.feature.scalar_len},)")

    h = _relu(t["fc1.w"] @ scal + t["fc1.b"])
    h = _relu(t["fc2.w"] @ h + t["fc2.b"])

    vis = conv2d_reflect(np.asarray(features.grid, dtype=np.float32),
                         t["conv1.w"], t["conv1.b"],
                         CONV1["stride"], CONV1["pad"])
    _relu(vis)
    vis = conv2d_reflect(vis, t["conv2.w"], t["conv2.b"],
                         CONV2["stride"], CONV2["pad"])
    _relu(vis)
    v = _relu(t["fc3.w"] @ vis.reshape(-1) + t["fc3.b"])

    trunk = np.concatenate([h, v])
    trunk = _relu(t["fc4.w"] @ trunk + t["fc4.b"])
    trunk = _relu(t["fc5.w"] @ trunk + t["fc5.b"])

    g, k = meta.g, meta.k
    bounds = meta.bounds
    half = {"lon": 0.5 * (bounds.dv_max - bounds.dv_min),
            "lat": 0.5 * (bounds.dy_max - bounds.dy_min)}
    mid = {"lon": bounds.dv_mid, "lat": bounds.dy_mid}
    params = {}
    for axis in ("lon", "lat"):
        phi = _softmax_rows((t[f"fc6.{axis}.w"] @ trunk
                             + t[f"fc6.{axis}.b"]).reshape(g, k).astype(np.float64))
        mu_n = (t[f"fc7.{axis}.w"] @ trunk + t[f"fc7.{axis}.b"]).reshape(g, k)
        mu = mid[axis] + mu_n.astype(np.float64) * half[axis]
        raw = (t[f"fc8.{axis}.w"] @ trunk + t[f"fc8.{axis}.b"]).reshape(g, k)
        var = np.maximum(nnelu(raw.astype(np.float64)), _VAR_EPS)
        params[axis] = (phi, mu, var)

    mixtures = []
    for i in range(g):
        per_axis = []
        for axis in ("lon", "lat"):
            phi, mu, var = params[axis]
            row = phi[i] / phi[i].sum()
            per_axis.append(Gmm1D(tuple(row), tuple(mu[i]), tuple(var[i])))
        mixtures.append(FactoredActionGmm(lon=per_axis[0], lat=per_axis[1]))

    mask = features.scalars.mask
    slot_agents = features.scalars.slot_agents
    if len(mask) != g:
        raise WeightsShapeError(f"{len(mask)} input slots vs {g} network slots")
    return MdnPrediction(mixtures=tuple(mixtures), mask=mask,
                         slot_agents=slot_agents)


def predict_policy(weights: MdnWeights, history: Sequence[Scene],
                   ego_index: int) -> MdnPrediction:
    """Features + forward for the newest scene in ``history``.

    Normalization constants come from the weights metadata so inference
    matches the exporting trainer bit-for-bit.  The latency budget for one
    call at default dims is 5 ms; the acceptance suite measures it.
    """
    feats = build_features(history, ego_index, weights.meta.feature)
    return forward(weights, feats)
