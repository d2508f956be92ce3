"""HTTP prediction and what-if API over a loaded checkpoint.

JSON over HTTP with base64-encoded screenshots. The attention map is
returned as raw row-major floats; clients render their own heatmaps.
Handlers share one immutable model that reload swaps atomically.
"""

from __future__ import annotations

import base64
import hashlib
import io
import math

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .checkpoint import load_checkpoint
from .dataset import MIN_TARGET_PX, PAGE_SIZE, TARGET_TYPES, TYPE_IDS, page_tensor, target_crop
from .model import ScannabilityNet, attention

DEFAULT_GRID_CAP = 1024


class RequestError(ValueError):
    """Client error tied to a named request field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class ModelStore:
    """Holds the currently served model; attribute assignment swaps atomically."""

    def __init__(self):
        self._current: tuple[ScannabilityNet, str] | None = None

    def load(self, path):
        net = load_checkpoint(path)
        if net.feature_norm is None:
            raise ValueError(f"checkpoint {path} has no feature normalization; cannot serve")
        with open(path, "rb") as f:
            version = hashlib.sha256(f.read()).hexdigest()[:12]
        self._current = (net, version)

    @property
    def current(self):
        return self._current


def _decode_screenshot(body) -> Image.Image:
    raw = body.get("screenshot")
    if not isinstance(raw, str) or not raw:
        raise RequestError("screenshot", "must be a base64-encoded PNG string")
    try:
        data = base64.b64decode(raw, validate=True)
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as e:
        raise RequestError("screenshot", f"cannot decode PNG: {e}") from e
    return img


def _parse_bbox(body) -> tuple:
    bbox = body.get("bbox")
    if not isinstance(bbox, (list, tuple)) or len(bbox) != 4:
        raise RequestError("bbox", "must be [x, y, w, h]")
    try:
        x, y, w, h = (float(v) for v in bbox)
    except (TypeError, ValueError):
        raise RequestError("bbox", "entries must be numbers")
    if w < MIN_TARGET_PX or h < MIN_TARGET_PX:
        raise RequestError("bbox", f"target smaller than the {MIN_TARGET_PX}px floor")
    if x < 0 or y < 0 or x + w > PAGE_SIZE or y + h > PAGE_SIZE:
        raise RequestError("bbox", f"exceeds the {PAGE_SIZE}x{PAGE_SIZE} page")
    return (x, y, w, h)


def _parse_type(body) -> str:
    t = body.get("target_type")
    if t not in TARGET_TYPES:
        raise RequestError("target_type", f"must be one of {list(TARGET_TYPES)}")
    return t


def _parse_n_candidates(body) -> int:
    n = body.get("n_candidates")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise RequestError("n_candidates", "must be a positive integer")
    return n


def _numeric_vector(bbox, n_candidates) -> np.ndarray:
    x, y, w, h = bbox
    return np.array([x, y, math.sqrt(x * x + y * y), w, h, w * h, n_candidates], dtype=np.float64)


def _attention_embedding(net: ScannabilityNet, page_arr, target_arr):
    """Eval-mode pixel pathway for one page/target pair.

    Returns the flattened attention-side embedding and the raw attention map.
    """
    I = net.encode_page(page_arr[None].astype(net.dtype))
    tvec = net.encode_target(target_arr[None].astype(net.dtype)).data.reshape(1, net.config.channels)
    A = attention(I.data, tvec, cosine=net.config.cosine).data
    variant = net.config.attention_variant
    if variant == "raw":
        emb = A.reshape(-1)
    elif variant == "softmax":
        flat = A.reshape(-1)
        e = np.exp(flat - flat.max())
        emb = e / e.sum()
    else:  # modulated
        emb = (A[..., None] * I.data).reshape(-1)
    return emb, A[0]


def _structured_embedding(net: ScannabilityNet, numeric_batch, type_id):
    """Eval-mode structured branch for a batch of standardized feature rows."""
    emb = net.params["type_embed"].data[type_id]
    x = np.concatenate([numeric_batch, np.tile(emb, (len(numeric_batch), 1))], axis=1)
    for i in range(len(net.config.hidden)):
        x = np.tanh(x @ net.params[f"mlp{i}_w"].data.T + net.params[f"mlp{i}_b"].data)
    return x


def predict_task(net: ScannabilityNet, img, bbox, target_type, n_candidates):
    """Normalized time, seconds, class probabilities, and attention for one task."""
    cfg = net.config
    page_arr = page_tensor(img, size=cfg.page_size)
    target_arr = target_crop(img, bbox, size=cfg.target_size)
    att_emb, A = _attention_embedding(net, page_arr, target_arr)
    numeric = net.feature_norm.standardize(_numeric_vector(bbox, n_candidates))
    s = _structured_embedding(net, numeric[None], TYPE_IDS[target_type])
    fused = np.concatenate([att_emb, s[0]])
    normalized = float(fused @ net.params["head_reg_w"].data[0] + net.params["head_reg_b"].data[0])
    logits = fused @ net.params["head_cls_w"].data.T + net.params["head_cls_b"].data
    e = np.exp(logits - logits.max())
    probs = e / e.sum()
    return {
        "normalized": normalized,
        "seconds": net.denormalize_time(normalized),
        "class_probs": [float(p) for p in probs],
        "attention": [float(v) for v in A.reshape(-1)],
        "grid": cfg.grid,
    }


def whatif_grid(net: ScannabilityNet, img, bbox, target_type, n_candidates, rows, cols):
    """Predicted seconds for the target placed at each cell of a rows x cols sweep.

    The target crop keeps its original appearance; only position features
    vary. A single row (or column) stays at the original y (or x) so a 1x1
    grid reproduces the plain prediction.
    """
    cfg = net.config
    x0, y0, w, h = bbox
    page_arr = page_tensor(img, size=cfg.page_size)
    target_arr = target_crop(img, bbox, size=cfg.target_size)
    att_emb, _ = _attention_embedding(net, page_arr, target_arr)

    xs = np.array([x0]) if cols == 1 else np.linspace(0, PAGE_SIZE - w, cols)
    ys = np.array([y0]) if rows == 1 else np.linspace(0, PAGE_SIZE - h, rows)
    numeric = np.stack(
        [net.feature_norm.standardize(_numeric_vector((x, y, w, h), n_candidates)) for y in ys for x in xs]
    )
    s = _structured_embedding(net, numeric, TYPE_IDS[target_type])
    wv = net.params["head_reg_w"].data[0]
    aw = cfg.attention_width
    normalized = att_emb @ wv[:aw] + s @ wv[aw:] + net.params["head_reg_b"].data[0]
    seconds = np.array([net.denormalize_time(v) for v in normalized]).reshape(rows, cols)
    if not np.all(np.isfinite(seconds)):
        raise ValueError("non-finite prediction in what-if sweep")
    return {
        "rows": rows,
        "cols": cols,
        "x_positions": [float(v) for v in xs],
        "y_positions": [float(v) for v in ys],
        "seconds": [[float(v) for v in row] for row in seconds],
    }


def create_app(store: ModelStore, grid_cap: int = DEFAULT_GRID_CAP) -> FastAPI:
    app = FastAPI(title="visual-search-time service")

    def error(status, field, message):
        return JSONResponse(status_code=status, content={"error": {"field": field, "message": message}})

    async def parse_body(request):
        try:
            body = await request.json()
        except Exception:
            raise RequestError("body", "request body must be JSON")
        if not isinstance(body, dict):
            raise RequestError("body", "request body must be a JSON object")
        return body

    @app.get("/health")
    async def health():
        current = store.current
        if current is None:
            return {"status": "no_model", "model_version": None}
        return {"status": "ok", "model_version": current[1]}

    @app.post("/predict")
    async def predict(request: Request):
        current = store.current
        if current is None:
            return error(503, "model", "no model loaded")
        net, _ = current
        try:
            body = await parse_body(request)
            img = _decode_screenshot(body)
            bbox = _parse_bbox(body)
            target_type = _parse_type(body)
            n_candidates = _parse_n_candidates(body)
        except RequestError as e:
            return error(400, e.field, e.message)
        return predict_task(net, img, bbox, target_type, n_candidates)

    @app.post("/whatif")
    async def whatif(request: Request):
        current = store.current
        if current is None:
            return error(503, "model", "no model loaded")
        net, _ = current
        try:
            body = await parse_body(request)
            img = _decode_screenshot(body)
            bbox = _parse_bbox(body)
            target_type = _parse_type(body)
            n_candidates = _parse_n_candidates(body)
            grid = body.get("grid")
            if not isinstance(grid, dict):
                raise RequestError("grid", "must be an object {rows, cols}")
            rows, cols = grid.get("rows"), grid.get("cols")
            for name, v in (("grid.rows", rows), ("grid.cols", cols)):
                if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                    raise RequestError(name, "must be a positive integer")
            if rows * cols > grid_cap:
                raise RequestError("grid", f"{rows}x{cols} exceeds the cap of {grid_cap} placements")
        except RequestError as e:
            return error(400, e.field, e.message)
        return whatif_grid(net, img, bbox, target_type, n_candidates, rows, cols)

    return app
