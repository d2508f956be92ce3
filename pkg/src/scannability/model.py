"""ScannabilityNet: attention CNN over page/target pixels fused with the
structured-feature branch, plus training and attention-map export.

The webpage encoder maps (page_size, page_size, 3) to a
(grid, grid, channels) embedding through conv/BN/relu/pool blocks; the
target encoder pools all the way down to a single channel vector. Their
per-cell dot product is the attention map that joins the structured
branch for the final prediction.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .dataset import TARGET_TYPES, page_tensor, target_crop, target_mask
from .features import EMBED_DIM, FeatureNorm, extract_batch
from .tensor import AdamState, BatchNormState, Tensor

log = logging.getLogger(__name__)

ATTENTION_VARIANTS = ("raw", "modulated", "softmax")


@dataclass
class ModelConfig:
    page_size: int = 512
    target_size: int = 64
    page_blocks: int = 3
    target_blocks: int = 6
    channels: int = 4
    embed_dim: int = EMBED_DIM
    hidden: tuple = (100, 50)
    lr: float = 1e-4
    batch_size: int = 8
    dropout_rate: float = 0.10
    mask_weight: float = 0.001
    l2_weight: float = 1e-4
    attention_variant: str = "raw"
    cosine: bool = False
    mode: str = "regression"
    max_epochs: int = 50
    patience: int = 5

    def __post_init__(self):
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ValueError(f"unknown attention variant {self.attention_variant!r}")
        if self.page_size % (1 << self.page_blocks) != 0:
            raise ValueError("page_size must be divisible by 2**page_blocks")
        if self.target_size != (1 << self.target_blocks):
            raise ValueError("target encoder must pool down to 1x1: target_size == 2**target_blocks")

    @property
    def grid(self) -> int:
        return self.page_size >> self.page_blocks

    @property
    def attention_width(self) -> int:
        cells = self.grid * self.grid
        return cells * self.channels if self.attention_variant == "modulated" else cells

    @property
    def fused_width(self) -> int:
        return self.attention_width + self.hidden[-1]

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


INIT_SCHEME = "fan-in-scaled uniform"


class ScannabilityNet:
    """Named parameters, batch-norm state, and feature normalization for one model."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = dtype
        self.feature_norm: FeatureNorm | None = None
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        rng = np.random.default_rng(seed)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

        c = config.channels
        for prefix, blocks, cin0 in (("page", config.page_blocks, 3), ("target", config.target_blocks, 3)):
            cin = cin0
            for b in range(blocks):
                fan_in = 9 * cin
                self.params[f"{prefix}_conv{b}_w"] = uniform((3, 3, cin, c), fan_in)
                self.params[f"{prefix}_conv{b}_b"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
                self.params[f"{prefix}_bn{b}_gamma"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
                self.params[f"{prefix}_bn{b}_beta"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
                self.bn_states[f"{prefix}_bn{b}"] = BatchNormState.create(c, dtype=dtype)
                cin = c

        self.params["type_embed"] = uniform((len(TARGET_TYPES), config.embed_dim), config.embed_dim)
        widths = (7 + config.embed_dim,) + tuple(config.hidden)
        for i in range(len(config.hidden)):
            self.params[f"mlp{i}_w"] = uniform((widths[i + 1], widths[i]), widths[i])
            self.params[f"mlp{i}_b"] = Tensor(np.zeros(widths[i + 1], dtype=dtype), requires_grad=True)
        fw = config.fused_width
        self.params["head_reg_w"] = uniform((1, fw), fw)
        self.params["head_reg_b"] = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
        self.params["head_cls_w"] = uniform((5, fw), fw)
        self.params["head_cls_b"] = Tensor(np.zeros(5, dtype=dtype), requires_grad=True)

    def trainable_params(self, mode: str) -> dict[str, Tensor]:
        skip = "head_cls" if mode == "regression" else "head_reg"
        return {k: v for k, v in self.params.items() if not k.startswith(skip)}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self):
        return (
            {k: v.data.copy() for k, v in self.params.items()},
            {k: (s.running_mean.copy(), s.running_var.copy()) for k, s in self.bn_states.items()},
        )

    def restore(self, snap):
        datas, bns = snap
        for k, v in datas.items():
            self.params[k].data = v.copy()
        for k, (m, v) in bns.items():
            self.bn_states[k].running_mean = m.copy()
            self.bn_states[k].running_var = v.copy()

    # -- forward passes -------------------------------------------------

    def _encode(self, x: Tensor, prefix: str, blocks: int, mode: str) -> Tensor:
        for b in range(blocks):
            x = T.conv2d(x, self.params[f"{prefix}_conv{b}_w"], self.params[f"{prefix}_conv{b}_b"])
            x = T.batchnorm(x, self.params[f"{prefix}_bn{b}_gamma"], self.params[f"{prefix}_bn{b}_beta"], self.bn_states[f"{prefix}_bn{b}"], mode=mode)
            x = T.relu(x)
            x = T.maxpool2(x)
        return x

    def encode_page(self, page, mode="eval") -> Tensor:
        page = page if isinstance(page, Tensor) else Tensor(np.asarray(page, dtype=self.dtype))
        expect = (self.config.page_size, self.config.page_size, 3)
        if page.shape[-3:] != expect:
            raise T.ShapeError(f"encode_page: expected trailing shape {expect}, got {page.shape}")
        return self._encode(page, "page", self.config.page_blocks, mode)

    def encode_target(self, target, mode="eval") -> Tensor:
        target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=self.dtype))
        expect = (self.config.target_size, self.config.target_size, 3)
        if target.shape[-3:] != expect:
            raise T.ShapeError(f"encode_target: expected trailing shape {expect}, got {target.shape}")
        return self._encode(target, "target", self.config.target_blocks, mode)

    def forward(self, pages, targets, numeric, type_ids, mode="eval", head=None, rng=None):
        """Full forward pass on a batch.

        Returns (output, raw_attention) where output is (n,) for the
        regression head or (n, 5) probabilities for the classification head.
        """
        cfg = self.config
        head = head or cfg.mode
        batched = np.asarray(pages if not isinstance(pages, Tensor) else pages.data).ndim == 4
        pages = pages if isinstance(pages, Tensor) else Tensor(np.asarray(pages, dtype=self.dtype))
        targets = targets if isinstance(targets, Tensor) else Tensor(np.asarray(targets, dtype=self.dtype))
        if not batched:
            pages = T.reshape(pages, (1,) + tuple(pages.shape))
            targets = T.reshape(targets, (1,) + tuple(targets.shape))
        n = pages.shape[0]

        I = self.encode_page(pages, mode=mode)  # (n, g, g, c)
        Tvec = T.reshape(self.encode_target(targets, mode=mode), (n, cfg.channels))
        A = attention(I, Tvec, variant="raw", cosine=cfg.cosine)

        if cfg.attention_variant == "raw":
            att_emb = T.flatten(A)
        elif cfg.attention_variant == "softmax":
            att_emb = T.softmax(T.flatten(A))
        else:  # modulated
            expanded = T.reshape(A, (n, cfg.grid, cfg.grid, 1))
            att_emb = T.flatten(T.mul(expanded, I))

        numeric = np.asarray(numeric, dtype=self.dtype).reshape(n, 7)
        type_ids = np.asarray(type_ids).reshape(n)
        structured = T.concat([Tensor(numeric), T.embedding(self.params["type_embed"], type_ids)], axis=1)
        for i in range(len(cfg.hidden)):
            structured = T.tanh(T.dense(structured, self.params[f"mlp{i}_w"], self.params[f"mlp{i}_b"]))
            structured = T.dropout(structured, cfg.dropout_rate, mode=mode, rng=rng)

        fused = T.concat([att_emb, structured], axis=1)
        assert fused.shape[1] == cfg.fused_width
        if head == "regression":
            out = T.reshape(T.dense(fused, self.params["head_reg_w"], self.params["head_reg_b"]), (n,))
        elif head == "classification":
            out = T.softmax(T.dense(fused, self.params["head_cls_w"], self.params["head_cls_b"]))
        else:
            raise ValueError(f"unknown head {head!r}")
        if not batched:
            out = T.reshape(out, out.shape[1:]) if head == "classification" else out
        return out, A

    def predict_time(self, page, target, numeric, type_id):
        """Eval-mode normalized-time prediction for a single task."""
        out, A = self.forward(
            np.asarray(page)[None], np.asarray(target)[None], np.asarray(numeric)[None], np.array([type_id]), mode="eval", head="regression"
        )
        return float(out.data[0]), A.data[0]

    def predict_class(self, page, target, numeric, type_id):
        out, A = self.forward(
            np.asarray(page)[None], np.asarray(target)[None], np.asarray(numeric)[None], np.array([type_id]), mode="eval", head="classification"
        )
        return out.data[0], A.data[0]

    def denormalize_time(self, pred: float) -> float:
        if self.feature_norm is None:
            raise ValueError("model has no fitted feature normalization")
        return float(self.feature_norm.denormalize_time(pred))


def attention(I, Tvec, variant="raw", cosine=False):
    """Per-cell alignment between page embedding I (n, g, g, c) and target vector (n, c).

    raw: dot product per cell. softmax: normalized over all cells to sum 1.
    modulated callers reweight I by the raw map themselves.
    """
    if variant not in ATTENTION_VARIANTS:
        raise ValueError(f"unknown attention variant {variant!r}")
    I = I if isinstance(I, Tensor) else Tensor(np.asarray(I))
    Tvec = Tvec if isinstance(Tvec, Tensor) else Tensor(np.asarray(Tvec))
    squeeze = I.data.ndim == 3
    if squeeze:
        I = T.reshape(I, (1,) + tuple(I.shape))
        Tvec = T.reshape(Tvec, (1,) + tuple(Tvec.shape))
    n, g, _, c = I.shape
    if Tvec.shape != (n, c):
        raise T.ShapeError(f"attention: target vector shape {Tvec.shape} != ({n}, {c})")
    t_exp = T.reshape(Tvec, (n, 1, 1, c))
    A = T.tensor_sum(T.mul(I, t_exp), axis=3)
    if cosine:
        eps = 1e-8
        norm_i = T.pow_const(T.add(T.tensor_sum(T.mul(I, I), axis=3), Tensor(np.full((n, g, g), eps))), 0.5)
        norm_t = T.pow_const(T.add(T.tensor_sum(T.mul(Tvec, Tvec), axis=1), Tensor(np.full(n, eps))), 0.5)
        denom = T.mul(norm_i, T.reshape(norm_t, (n, 1, 1)))
        A = T.mul(A, T.pow_const(denom, -1.0))
    if variant == "softmax":
        A = T.reshape(T.softmax(T.flatten(A)), (n, g, g))
    if squeeze:
        A = T.reshape(A, (g, g))
    return A


def model_loss(net: ScannabilityNet, batch, mode=None, l2_weight=None, train=True, rng=None):
    """Task loss + L2 penalty + mask-alignment regularizer, averaged over the batch."""
    cfg = net.config
    mode = mode or cfg.mode
    l2w = cfg.l2_weight if l2_weight is None else l2_weight
    if len(batch["pages"]) == 0:
        raise ValueError("empty batch")
    fmode = "train" if train else "eval"
    out, A = net.forward(batch["pages"], batch["targets"], batch["numeric"], batch["type_ids"], mode=fmode, head=mode, rng=rng)
    if mode == "regression":
        task = T.mse(out, Tensor(np.asarray(batch["labels"], dtype=out.data.dtype)))
    else:
        task = T.cross_entropy(out, np.asarray(batch["labels"], dtype=np.int64))
    loss = task
    if l2w > 0:
        loss = T.add(loss, T.l2_penalty(net.trainable_params(mode).values(), l2w))
    if cfg.mask_weight > 0:
        loss = T.add(loss, T.scale(T.mse(A, Tensor(np.asarray(batch["masks"], dtype=A.data.dtype))), cfg.mask_weight))
    return loss, out, A


def attention_mask_correlation(A: np.ndarray, masks: np.ndarray) -> float:
    """Mean per-example Pearson correlation between attention maps and bbox masks."""
    scores = []
    for a, m in zip(A.reshape(len(A), -1), masks.reshape(len(masks), -1)):
        if a.std() == 0 or m.std() == 0:
            continue
        scores.append(float(np.corrcoef(a, m)[0, 1]))
    return float(np.mean(scores)) if scores else 0.0


# -- data preparation & training ---------------------------------------------


def prepare_examples(records, data_root, config: ModelConfig, norm: FeatureNorm):
    """Materialize model inputs for a list of records."""
    data_root = Path(data_root)
    numeric, type_ids = extract_batch(records, norm)
    pages = np.stack([page_tensor(data_root / r.screenshot, size=config.page_size) for r in records])
    targets = np.stack([target_crop(data_root / r.screenshot, r.bbox, size=config.target_size) for r in records])
    masks = np.stack([target_mask(r.bbox, grid=config.grid) for r in records])
    times = np.array([r.search_time_s for r in records])
    return {
        "pages": pages.astype(np.float32),
        "targets": targets.astype(np.float32),
        "masks": masks.astype(np.float32),
        "numeric": numeric.astype(np.float32),
        "type_ids": type_ids,
        "times": times,
        "norm_times": norm.normalize_time(times),
        "user_ids": np.array([r.user_id for r in records]),
    }


def _labels(examples, mode):
    if mode == "regression":
        return examples["norm_times"]
    from .evaluation import bucketize

    labels = bucketize(examples["times"], examples["user_ids"])
    return labels


def _take(examples, idx, mode):
    return {
        "pages": examples["pages"][idx],
        "targets": examples["targets"][idx],
        "masks": examples["masks"][idx],
        "numeric": examples["numeric"][idx],
        "type_ids": examples["type_ids"][idx],
        "labels": _labels(examples, mode)[idx],
    }


def train(net: ScannabilityNet, train_examples, val_examples, seed=0):
    """Adam on shuffled batches with per-epoch validation and early stopping.

    Returns the training history; the network is left at the parameters of
    the best validation epoch.
    """
    cfg = net.config
    if len(train_examples["pages"]) == 0 or len(val_examples["pages"]) == 0:
        raise ValueError("empty train or validation split")
    rng = np.random.default_rng(seed)
    state = AdamState()
    trainable = net.trainable_params(cfg.mode)
    n = len(train_examples["pages"])
    history = []
    best = (np.inf, net.snapshot(), -1)
    bad_epochs = 0
    mode = cfg.mode
    if mode == "classification":
        keep = _labels(train_examples, mode) >= 0
        train_idx_pool = np.flatnonzero(keep)
    else:
        train_idx_pool = np.arange(n)

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train_idx_pool)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = _take(train_examples, idx, mode)
            net.zero_grad()
            loss, _, _ = model_loss(net, batch, train=True, rng=rng)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"training diverged at epoch {epoch}: loss={float(loss.data)}")
            loss.backward()
            adam_params = {k: p for k, p in trainable.items()}
            for p in adam_params.values():
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            T.adam_step(adam_params, state, lr=cfg.lr)
            epoch_loss += float(loss.data)
            n_batches += 1
        val_loss = evaluate_loss(net, val_examples)
        history.append({"epoch": epoch, "train_loss": epoch_loss / max(1, n_batches), "val_loss": val_loss})
        if val_loss < best[0] - 1e-12:
            best = (val_loss, net.snapshot(), epoch)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    net.restore(best[1])
    log.info("train: best validation loss %.5f at epoch %d", best[0], best[2])
    return history


def evaluate_loss(net: ScannabilityNet, examples, batch_size=64):
    mode = net.config.mode
    labels = _labels(examples, mode)
    idx_pool = np.flatnonzero(labels >= 0) if mode == "classification" else np.arange(len(labels))
    total, count = 0.0, 0
    for start in range(0, len(idx_pool), batch_size):
        idx = idx_pool[start : start + batch_size]
        batch = _take(examples, idx, mode)
        loss, _, _ = model_loss(net, batch, train=False)
        total += float(loss.data) * len(idx)
        count += len(idx)
    return total / max(1, count)


def predict_examples(net: ScannabilityNet, examples, batch_size=64):
    """Eval-mode normalized-time predictions for prepared examples."""
    preds = []
    n = len(examples["pages"])
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(n, start + batch_size))
        out, _ = net.forward(
            examples["pages"][idx], examples["targets"][idx], examples["numeric"][idx], examples["type_ids"][idx], mode="eval", head="regression"
        )
        preds.append(out.data)
    return np.concatenate(preds)


def attention_to_png(A: np.ndarray, path, upsample_to=1024):
    """Export an attention map as a grayscale PNG upsampled to page size."""
    a = np.asarray(A, dtype=np.float64)
    lo, hi = a.min(), a.max()
    scaled = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    img = Image.fromarray((scaled * 255).astype(np.uint8), mode="L")
    img = img.resize((upsample_to, upsample_to), Image.BILINEAR)
    img.save(path)
    return img
