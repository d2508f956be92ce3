"""Structured-feature extraction and standardization.

The 7 numeric features are (x, y, distance-to-origin, width, height, area,
n_candidates); the target type joins them as a learned embedding. The same
standardized features feed both the linear baselines and the deep model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import TARGET_TYPES, TYPE_IDS, TaskRecord

FEATURE_NAMES = ("x", "y", "distance", "width", "height", "area", "n_candidates")
EMBED_DIM = 20
NUM_TYPES = len(TARGET_TYPES)


def raw_features(record: TaskRecord) -> np.ndarray:
    x, y, w, h = record.bbox
    return np.array(
        [x, y, math.sqrt(x * x + y * y), w, h, w * h, record.n_candidates],
        dtype=np.float64,
    )


@dataclass
class FeatureNorm:
    """Per-feature standardization parameters, fitted on the training split only.

    Uses the population (1/n) standard deviation.
    """

    means: np.ndarray
    stds: np.ndarray
    time_mean: float
    time_std: float
    fitted_on: str = "train"

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.means) / self.stds

    def unstandardize(self, z: np.ndarray) -> np.ndarray:
        return z * self.stds + self.means

    def normalize_time(self, t):
        return (t - self.time_mean) / self.time_std

    def denormalize_time(self, z):
        return z * self.time_std + self.time_mean

    def to_dict(self):
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "time_mean": self.time_mean,
            "time_std": self.time_std,
            "fitted_on": self.fitted_on,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            means=np.asarray(d["means"], dtype=np.float64),
            stds=np.asarray(d["stds"], dtype=np.float64),
            time_mean=float(d["time_mean"]),
            time_std=float(d["time_std"]),
            fitted_on=d.get("fitted_on", "train"),
        )


def fit_norm(records, fitted_on="train") -> FeatureNorm:
    if len(records) < 2:
        raise ValueError(f"need at least 2 records to fit normalization, got {len(records)}")
    raws = np.stack([raw_features(r) for r in records])
    means = raws.mean(axis=0)
    stds = raws.std(axis=0)
    for name, s in zip(FEATURE_NAMES, stds):
        if s == 0:
            raise ValueError(f"zero-variance feature: {name}")
    times = np.array([r.search_time_s for r in records])
    time_std = times.std()
    if time_std == 0:
        raise ValueError("zero-variance feature: search_time_s")
    return FeatureNorm(means=means, stds=stds, time_mean=float(times.mean()), time_std=float(time_std), fitted_on=fitted_on)


@dataclass
class StructuredFeatures:
    numeric: np.ndarray  # 7 standardized values
    type_id: int


def extract(record: TaskRecord, norm: FeatureNorm) -> StructuredFeatures:
    if record.target_type not in TYPE_IDS:
        raise ValueError(f"unknown target_type {record.target_type!r}")
    return StructuredFeatures(numeric=norm.standardize(raw_features(record)), type_id=TYPE_IDS[record.target_type])


def extract_batch(records, norm: FeatureNorm):
    """Standardized numeric matrix (n, 7) and type-id vector (n,)."""
    feats = [extract(r, norm) for r in records]
    return np.stack([f.numeric for f in feats]), np.array([f.type_id for f in feats], dtype=np.int64)
