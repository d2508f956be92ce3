"""Binary model checkpoints.

Layout: 4-byte little-endian header length, UTF-8 JSON header, then raw
tensor blobs concatenated in sorted name order. Every blob is little-endian
float32 and carries a CRC32 in the header so corruption is reported by name.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .dataset import TARGET_TYPES
from .features import FeatureNorm
from .model import INIT_SCHEME, ModelConfig, ScannabilityNet

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def _all_tensors(net: ScannabilityNet) -> dict[str, np.ndarray]:
    out = {k: v.data for k, v in net.params.items()}
    for k, s in net.bn_states.items():
        out[f"{k}_running_mean"] = s.running_mean
        out[f"{k}_running_var"] = s.running_var
    return out


def save_checkpoint(net: ScannabilityNet, path, train_seed=None):
    tensors = _all_tensors(net)
    names = sorted(tensors)
    index = []
    blobs = []
    for name in names:
        raw = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(tensors[name].shape), "crc32": zlib.crc32(raw)})
        blobs.append(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "metadata": {
            "config": net.config.to_dict(),
            "feature_norm": net.feature_norm.to_dict() if net.feature_norm else None,
            "type_vocabulary": list(TARGET_TYPES),
            "init_scheme": INIT_SCHEME,
            "train_seed": net.seed if train_seed is None else train_seed,
        },
        "tensors": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        for raw in blobs:
            f.write(raw)


def read_header(path) -> dict:
    with open(path, "rb") as f:
        prefix = f.read(4)
        if len(prefix) < 4:
            raise CheckpointError("truncated file: missing header length")
        (hlen,) = struct.unpack("<I", prefix)
        hbytes = f.read(hlen)
    if len(hbytes) < hlen:
        raise CheckpointError("truncated file: incomplete header")
    try:
        header = json.loads(hbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"format version mismatch: file has {header.get('format_version')}, expected {FORMAT_VERSION}"
        )
    return header


def load_checkpoint(path) -> ScannabilityNet:
    header = read_header(path)
    meta = header["metadata"]
    config = ModelConfig.from_dict(meta["config"])
    net = ScannabilityNet(config, seed=meta.get("train_seed", 0))
    if meta.get("feature_norm"):
        net.feature_norm = FeatureNorm.from_dict(meta["feature_norm"])
    if meta.get("type_vocabulary") != list(TARGET_TYPES):
        raise CheckpointError(f"type vocabulary mismatch: {meta.get('type_vocabulary')}")

    expected = _all_tensors(net)
    index = header["tensors"]
    names = [e["name"] for e in index]
    if names != sorted(names):
        raise CheckpointError("tensor index is not in sorted name order")
    unknown = set(names) - set(expected)
    missing = set(expected) - set(names)
    if unknown or missing:
        raise CheckpointError(f"tensor name mismatch: unknown={sorted(unknown)} missing={sorted(missing)}")

    loaded = {}
    with open(path, "rb") as f:
        (n,) = struct.unpack("<I", f.read(4))
        f.seek(4 + n)
        for entry in index:
            shape = tuple(entry["shape"])
            if expected[entry["name"]].shape != shape:
                raise CheckpointError(
                    f"shape mismatch for {entry['name']}: file has {shape}, model expects {expected[entry['name']].shape}"
                )
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(4 * count)
            if len(raw) < 4 * count:
                raise CheckpointError(f"truncated blob {entry['name']}")
            if zlib.crc32(raw) != entry["crc32"]:
                raise CheckpointError(f"corrupted blob {entry['name']}: CRC mismatch")
            loaded[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(net.dtype)

    for k in net.params:
        net.params[k].data = loaded[k].copy()
    for k, s in net.bn_states.items():
        s.running_mean = loaded[f"{k}_running_mean"].copy()
        s.running_var = loaded[f"{k}_running_var"].copy()
    return net
