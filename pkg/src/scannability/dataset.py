"""Trial-log schema, screenshot handling, filtering/splits, and a synthetic task generator.

The generator renders webpage-like rasters and labels each trial with a
search time from a known linear oracle over standardized structured
features, plus an optional pixel-only clutter term and Gaussian noise.
Because the oracle is known exactly, downstream statistics and models can
be validated against ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

PAGE_SIZE = 1024
MIN_TARGET_PX = 15

TARGET_TYPES = ("image", "text", "link", "button", "input_field")
TYPE_IDS = {t: i for i, t in enumerate(TARGET_TYPES)}


class RecordError(ValueError):
    """Raised when a trial record violates the schema invariants."""


@dataclass
class TaskRecord:
    """One visual-search trial."""

    page_id: str
    screenshot: str
    bbox: tuple  # (x, y, w, h) in page pixels, top-left origin
    target_type: str
    n_candidates: int
    user_id: str
    search_time_s: float
    correct: bool

    def validate(self):
        x, y, w, h = self.bbox
        if x < 0 or y < 0:
            raise RecordError(f"bbox origin must be non-negative, got {self.bbox}")
        if x + w > PAGE_SIZE or y + h > PAGE_SIZE:
            raise RecordError(f"bbox {self.bbox} exceeds the {PAGE_SIZE}px page")
        if w < MIN_TARGET_PX or h < MIN_TARGET_PX:
            raise RecordError(f"bbox {self.bbox} is below the {MIN_TARGET_PX}px target floor")
        if self.target_type not in TARGET_TYPES:
            raise RecordError(f"unknown target_type {self.target_type!r}")
        if self.n_candidates < 1:
            raise RecordError(f"n_candidates must be positive, got {self.n_candidates}")
        if self.search_time_s <= 0:
            raise RecordError(f"search_time_s must be positive, got {self.search_time_s}")
        return self

    def to_json(self) -> str:
        d = asdict(self)
        d["bbox"] = list(self.bbox)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TaskRecord":
        d = json.loads(line)
        d["bbox"] = tuple(d["bbox"])
        return cls(**d).validate()


def save_trials(records, path):
    path = Path(path)
    with path.open("w") as f:
        for r in records:
            f.write(r.to_json() + "\n")


def load_trials(path):
    path = Path(path)
    records = []
    with path.open() as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(TaskRecord.from_json(line))
            except (json.JSONDecodeError, TypeError, KeyError) as e:
                raise RecordError(f"{path}:{i}: malformed trial record: {e}") from e
            except RecordError as e:
                raise RecordError(f"{path}:{i}: {e}") from e
    return records


# -- filtering & splits ------------------------------------------------------

MAX_TIME_S = 10.0


@dataclass
class FilterReport:
    n_input: int
    n_kept: int
    incorrect_count: int
    long_count: int  # correct trials over the time cutoff
    mean_correct_time: float
    mean_incorrect_time: float


def filter_trials(records):
    """Drop incorrect trials and trials longer than the 10 s cutoff."""
    kept = [r for r in records if r.correct and r.search_time_s <= MAX_TIME_S]
    correct_times = [r.search_time_s for r in records if r.correct]
    incorrect_times = [r.search_time_s for r in records if not r.correct]
    report = FilterReport(
        n_input=len(records),
        n_kept=len(kept),
        incorrect_count=len(incorrect_times),
        long_count=sum(1 for r in records if r.correct and r.search_time_s > MAX_TIME_S),
        mean_correct_time=float(np.mean(correct_times)) if correct_times else float("nan"),
        mean_incorrect_time=float(np.mean(incorrect_times)) if incorrect_times else float("nan"),
    )
    return kept, report


@dataclass
class SplitSet:
    train: list
    validation: list
    test: list

    @property
    def user_sets(self):
        return tuple({r.user_id for r in part} for part in (self.train, self.validation, self.test))


def split_by_user(records, fractions=(0.8, 0.1, 0.1), seed=0):
    """User-disjoint train/validation/test split, deterministic given seed."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    users = sorted({r.user_id for r in records})
    if len(users) < 3:
        raise ValueError(f"need at least 3 users to split, got {len(users)}")
    rng = np.random.default_rng(seed)
    order = [users[i] for i in rng.permutation(len(users))]
    n = len(users)
    n_train = int(round(fractions[0] * n))
    n_val = max(1, int(round(fractions[1] * n)))
    n_train = min(n_train, n - n_val - 1)
    train_u = set(order[:n_train])
    val_u = set(order[n_train : n_train + n_val])
    test_u = set(order[n_train + n_val :])
    by = {u: [] for u in users}
    for r in records:
        by[r.user_id].append(r)
    pick = lambda us: [r for u in sorted(us) for r in by[u]]
    return SplitSet(train=pick(train_u), validation=pick(val_u), test=pick(test_u))


# -- raster handling ----------------------------------------------------------


def _open_rgb(png):
    if isinstance(png, Image.Image):
        img = png
    else:
        try:
            img = Image.open(png)
            img.load()
        except Exception as e:
            raise ValueError(f"cannot decode image {png}: {e}") from e
    if img.mode == "RGBA":
        bg = Image.new("RGBA", img.size, (255, 255, 255, 255))
        img = Image.alpha_composite(bg, img)
    return img.convert("RGB")


def page_tensor(png, size=512):
    """Decode and bilinearly resize a screenshot to (size, size, 3) floats in [0, 1]."""
    img = _open_rgb(png).resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def target_crop(png, bbox, size=64):
    """Crop the target bbox from the page raster and resize to (size, size, 3)."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate bbox {bbox}")
    img = _open_rgb(png)
    sx = img.width / PAGE_SIZE
    sy = img.height / PAGE_SIZE
    region = img.crop((round(x * sx), round(y * sy), round((x + w) * sx), round((y + h) * sy)))
    region = region.resize((size, size), Image.BILINEAR)
    return np.asarray(region, dtype=np.float32) / 255.0


def target_mask(bbox, grid=64):
    """Binary grid mask of the bbox footprint; page pixels map to cells with outward rounding."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate bbox {bbox}")
    cell = PAGE_SIZE / grid
    x0 = int(math.floor(x / cell))
    y0 = int(math.floor(y / cell))
    x1 = min(grid, int(math.ceil((x + w) / cell)))
    y1 = min(grid, int(math.ceil((y + h) / cell)))
    mask = np.zeros((grid, grid), dtype=np.float32)
    mask[y0:y1, x0:x1] = 1.0
    return mask


# -- DOM handling ---------------------------------------------------------------


def count_dom_leaves(node) -> int:
    """Count childless nodes in a {"tag": ..., "children": [...]} tree."""
    total = 0
    stack = [(node, frozenset())]
    while stack:
        n, path = stack.pop()
        if not isinstance(n, dict) or "children" not in n or not isinstance(n["children"], list):
            raise ValueError(f"malformed DOM node: {n!r}")
        if id(n) in path:
            raise ValueError("cyclic DOM structure")
        children = n["children"]
        if not children:
            total += 1
        else:
            child_path = path | {id(n)}
            for c in children:
                stack.append((c, child_path))
    return total


# -- synthetic generator -----------------------------------------------------------

# Linear oracle over standardized features; coefficients chosen so that
# analysis on generated data lands on the reference effect sizes.
ORACLE_COEF_Y = 0.2009
ORACLE_COEF_AREA = -0.1105
ORACLE_COEF_NCAND = 0.1316
ORACLE_TYPE_OFFSETS = {
    "image": 0.0,
    "input_field": 0.0767,
    "link": 0.4500,
    "button": 0.5164,
    "text": 0.6222,
}
# Skewed so the vertical-position effect stays the strongest single feature.
TYPE_WEIGHTS = {"image": 0.60, "input_field": 0.28, "link": 0.05, "button": 0.03, "text": 0.04}


@dataclass
class SynthConfig:
    n_users: int = 30
    trials_per_user: int = 20
    gamma: float = 0.0  # weight of the pixel-only clutter term
    sigma: float = 0.0  # Gaussian noise on the normalized time
    incorrect_rate: float = 0.0
    long_rate: float = 0.0
    render: bool = True
    out_dir: str | None = None
    clutter_halfwin: int = 128  # neighborhood half-width in page pixels
    type_weights: dict | None = None  # target-type sampling weights; defaults to TYPE_WEIGHTS
    min_elements: int = 8
    max_elements: int = 28
    min_size: int = 20
    max_size: int = 160
    time_base_s: float = 4.0
    incorrect_penalty_s: float = 4.0
    long_penalty_s: float = 8.0


_PALETTE = [
    (66, 133, 244),
    (219, 68, 55),
    (244, 180, 0),
    (15, 157, 88),
    (171, 71, 188),
    (0, 172, 193),
    (255, 112, 67),
    (92, 107, 192),
]


def _draw_element(draw: ImageDraw.ImageDraw, kind, box, color):
    x0, y0, x1, y1 = box
    if kind == "image":
        draw.rectangle(box, fill=color)
        # inner block for texture
        mx, my = (x0 + x1) // 2, (y0 + y1) // 2
        draw.rectangle((x0 + 4, y0 + 4, mx, my), fill=tuple(min(255, c + 60) for c in color))
    elif kind == "text":
        line_h = 6
        yy = y0 + 2
        while yy + line_h <= y1 - 2:
            draw.rectangle((x0 + 2, yy, x1 - 2, yy + line_h - 2), fill=(60, 60, 60))
            yy += line_h + 4
    elif kind == "link":
        draw.rounded_rectangle(box, radius=4, fill=(30, 90, 200))
    elif kind == "button":
        draw.rounded_rectangle(box, radius=8, fill=color, outline=(40, 40, 40), width=3)
    elif kind == "input_field":
        draw.rectangle(box, fill=(250, 250, 250), outline=(120, 120, 120), width=3)


def _render_page(elements, raster=PAGE_SIZE, background=None):
    img = Image.new("RGB", (raster, raster), (255, 255, 255))
    draw = ImageDraw.Draw(img)
    s = raster / PAGE_SIZE
    if background is not None:
        # per-page checkerboard texture; its contrast and tile size drive
        # page-wide edge density independently of the element list
        tile_px, gray = background
        tp = max(1, int(tile_px * s))
        shade = (gray, gray, gray)
        for ty in range(0, raster, tp):
            for tx in range(0, raster, tp):
                if ((tx // tp) + (ty // tp)) % 2 == 0:
                    draw.rectangle((tx, ty, tx + tp - 1, ty + tp - 1), fill=shade)
    for el in elements:
        x, y, w, h = el["bbox"]
        box = (int(x * s), int(y * s), int((x + w) * s) - 1, int((y + h) * s) - 1)
        _draw_element(draw, el["type"], box, el["color"])
    return img


def _clutter(img: Image.Image, bbox, halfwin=128):
    """Local edge density around the target; computable from pixels only."""
    gray = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    s = img.width / PAGE_SIZE
    x, y, w, h = bbox
    cx, cy = int((x + w / 2) * s), int((y + h / 2) * s)
    hw = int(halfwin * s)
    x0, x1 = max(0, cx - hw), min(img.width, cx + hw)
    y0, y1 = max(0, cy - hw), min(img.height, cy + hw)
    patch = gray[y0:y1, x0:x1]
    ex = np.abs(np.diff(patch, axis=1)).mean() if patch.shape[1] > 1 else 0.0
    ey = np.abs(np.diff(patch, axis=0)).mean() if patch.shape[0] > 1 else 0.0
    return float(ex + ey)


def _zstats(values):
    a = np.asarray(values, dtype=np.float64)
    mean = float(a.mean())
    std = float(a.std())  # population std
    if std == 0:
        raise ValueError("zero variance in generated feature")
    return mean, std


def synth_generate(config: SynthConfig, seed: int):
    """Generate a synthetic corpus; returns (records, oracle_params).

    When ``config.render`` is true, writes trials.jsonl, screenshots/ and
    dom/ under ``config.out_dir``. A nonzero clutter weight requires
    rendering, since clutter is computed from pixels.
    """
    if config.min_size < MIN_TARGET_PX:
        raise ValueError(f"config.min_size={config.min_size} is below the {MIN_TARGET_PX}px target floor")
    if config.gamma < 0 or config.sigma < 0:
        raise ValueError("gamma and sigma must be non-negative")
    if config.gamma > 0 and not config.render:
        raise ValueError("gamma > 0 requires render=True: clutter is computed from pixels")
    if config.render and config.out_dir is None:
        raise ValueError("render=True requires out_dir")

    rng = np.random.default_rng(seed)
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None and config.render:
        (out_dir / "screenshots").mkdir(parents=True, exist_ok=True)
        (out_dir / "dom").mkdir(parents=True, exist_ok=True)

    weights = config.type_weights or TYPE_WEIGHTS
    if set(weights) != set(TARGET_TYPES) or abs(sum(weights.values()) - 1.0) > 1e-9:
        raise ValueError("type_weights must cover all target types and sum to 1")
    type_names = list(weights)
    type_probs = np.array([weights[t] for t in type_names])
    trials = []
    page_index = 0
    for u in range(config.n_users):
        user_id = f"u{u:04d}"
        for _ in range(config.trials_per_user):
            page_id = f"page{page_index:06d}"
            page_index += 1
            n_elements = int(rng.integers(config.min_elements, config.max_elements + 1))
            elements = []
            for _ in range(n_elements):
                w = int(rng.integers(config.min_size, config.max_size + 1))
                h = int(rng.integers(config.min_size, config.max_size + 1))
                x = int(rng.integers(0, PAGE_SIZE - w + 1))
                y = int(rng.integers(0, PAGE_SIZE - h + 1))
                kind = type_names[int(rng.choice(len(type_names), p=type_probs))]
                color = _PALETTE[int(rng.integers(0, len(_PALETTE)))]
                elements.append({"bbox": (x, y, w, h), "type": kind, "color": color})
            target = elements[int(rng.integers(0, n_elements))]
            background = (int(rng.integers(32, 129)), int(rng.integers(150, 256)))
            trial = {
                "page_id": page_id,
                "user_id": user_id,
                "elements": elements,
                "background": background,
                "target": target,
                "n_candidates": n_elements,
                "noise": float(rng.normal(0.0, 1.0)),
                "is_incorrect": bool(rng.random() < config.incorrect_rate),
                "is_long": bool(rng.random() < config.long_rate),
            }
            trials.append(trial)

    # render pages and measure pixel clutter
    for t in trials:
        t["clutter"] = 0.0
        if config.render:
            img = _render_page(t["elements"], background=t["background"])
            img.save(out_dir / "screenshots" / f"{t['page_id']}.png")
            dom = {"tag": "body", "children": [{"tag": el["type"], "children": []} for el in t["elements"]]}
            (out_dir / "dom" / f"{t['page_id']}.json").write_text(json.dumps(dom))
            if config.gamma > 0:
                t["clutter"] = _clutter(img, t["target"]["bbox"], halfwin=config.clutter_halfwin)

    # standardize oracle features over the generated population
    ys = [t["target"]["bbox"][1] for t in trials]
    areas = [t["target"]["bbox"][2] * t["target"]["bbox"][3] for t in trials]
    ncands = [t["n_candidates"] for t in trials]
    y_mean, y_std = _zstats(ys)
    area_mean, area_std = _zstats(areas)
    n_mean, n_std = _zstats(ncands)
    if config.gamma > 0:
        clut_mean, clut_std = _zstats([t["clutter"] for t in trials])
    else:
        clut_mean, clut_std = 0.0, 1.0

    records = []
    for t in trials:
        x, y, w, h = t["target"]["bbox"]
        normalized = (
            ORACLE_COEF_Y * (y - y_mean) / y_std
            + ORACLE_COEF_AREA * (w * h - area_mean) / area_std
            + ORACLE_COEF_NCAND * (t["n_candidates"] - n_mean) / n_std
            + ORACLE_TYPE_OFFSETS[t["target"]["type"]]
            + config.gamma * (t["clutter"] - clut_mean) / clut_std
            + config.sigma * t["noise"]
        )
        seconds = config.time_base_s + normalized
        if t["is_incorrect"]:
            seconds += config.incorrect_penalty_s
        elif t["is_long"]:
            seconds += config.long_penalty_s
        if seconds <= 0:
            raise ValueError("generated non-positive search time; widen time_base_s")
        records.append(
            TaskRecord(
                page_id=t["page_id"],
                screenshot=f"screenshots/{t['page_id']}.png",
                bbox=(x, y, w, h),
                target_type=t["target"]["type"],
                n_candidates=t["n_candidates"],
                user_id=t["user_id"],
                search_time_s=float(seconds),
                correct=not t["is_incorrect"],
            ).validate()
        )

    oracle = {
        "coef_y": ORACLE_COEF_Y,
        "coef_area": ORACLE_COEF_AREA,
        "coef_n_candidates": ORACLE_COEF_NCAND,
        "type_offsets": dict(ORACLE_TYPE_OFFSETS),
        "time_base_s": config.time_base_s,
        "gamma": config.gamma,
        "sigma": config.sigma,
        "feature_stats": {
            "y": (y_mean, y_std),
            "area": (area_mean, area_std),
            "n_candidates": (n_mean, n_std),
            "clutter": (clut_mean, clut_std),
        },
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_trials(records, out_dir / "trials.jsonl")
        (out_dir / "oracle.json").write_text(json.dumps(oracle, indent=2))
    return records, oracle
