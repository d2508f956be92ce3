"""Command-line pipeline driver: generate, train, eval, analyze, predict, serve, gradcheck.

Every command echoes its configuration into the output directory so any
artifact can be reproduced from the recorded seed and flags.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .analytics import binned_stats, ols, pca2, type_contrast
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import (
    SynthConfig,
    TARGET_TYPES,
    filter_trials,
    load_trials,
    split_by_user,
    synth_generate,
)
from .evaluation import EvalReport, evaluate_predictions
from .features import FEATURE_NAMES, extract_batch, fit_norm
from .model import ModelConfig, ScannabilityNet, predict_examples, prepare_examples, train


def _echo(path: Path, config: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def _run_dir(out, seed) -> Path:
    if out:
        d = Path(out)
    else:
        d = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_filtered(data_dir):
    records = load_trials(Path(data_dir) / "trials.jsonl")
    kept, report = filter_trials(records)
    return kept, report


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        page_size=args.page_size,
        target_size=args.target_size,
        page_blocks=args.page_blocks,
        target_blocks=args.target_blocks,
        lr=args.lr,
        batch_size=args.batch_size,
        l2_weight=args.l2,
        attention_variant=args.variant,
        mode=args.mode,
        max_epochs=args.epochs,
        patience=args.patience,
    )


def cmd_generate(args) -> int:
    out = Path(args.out)
    config = SynthConfig(
        n_users=args.users,
        trials_per_user=args.trials_per_user,
        gamma=args.gamma,
        sigma=args.sigma,
        incorrect_rate=args.incorrect_rate,
        long_rate=args.long_rate,
        render=not args.no_render,
        out_dir=str(out),
    )
    records, oracle = synth_generate(config, seed=args.seed)
    _echo(out / "config.json", {"command": "generate", "seed": args.seed, "generator": vars(config)})
    print(f"generated {len(records)} trials for {config.n_users} users under {out}")
    return 0


def cmd_train(args) -> int:
    records, freport = _load_filtered(args.data)
    split = split_by_user(records, seed=args.split_seed)
    cfg = _model_config(args)
    norm = fit_norm(split.train)
    tr = prepare_examples(split.train, args.data, cfg, norm)
    va = prepare_examples(split.validation, args.data, cfg, norm)
    net = ScannabilityNet(cfg, seed=args.seed)
    net.feature_norm = norm
    history = train(net, tr, va, seed=args.seed)

    run = _run_dir(args.out, args.seed)
    save_checkpoint(net, run / "model.ckpt", train_seed=args.seed)
    with open(run / "history.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss"])
        w.writeheader()
        w.writerows(history)
    _echo(
        run / "config.json",
        {
            "command": "train",
            "seed": args.seed,
            "split_seed": args.split_seed,
            "data": str(args.data),
            "model": cfg.to_dict(),
            "filter": vars(freport),
        },
    )
    print(f"trained {len(history)} epochs; best val loss {min(h['val_loss'] for h in history):.5f}; run dir {run}")
    return 0


def _dummy_columns(records, types=None):
    # all-zero columns would make the design rank deficient
    if types is None:
        present = {r.target_type for r in records}
        types = tuple(t for t in TARGET_TYPES[1:] if t in present)
    cols = [np.array([1.0 if r.target_type == t else 0.0 for r in records]) for t in types]
    stacked = np.column_stack(cols) if cols else np.zeros((len(records), 0))
    return stacked, tuple(types)


def _baseline_rows(split, norm):
    """Linear baselines in the shape of the headline comparison table:
    one per single feature, the target type alone, and all features together."""
    z_tr, _ = extract_batch(split.train, norm)
    z_te, _ = extract_batch(split.test, norm)
    y_tr = np.array([r.search_time_s for r in split.train])
    y_te = np.array([r.search_time_s for r in split.test])
    users_te = [r.user_id for r in split.test]
    d_tr, dummy_types = _dummy_columns(split.train)
    d_te, _ = _dummy_columns(split.test, types=dummy_types)

    designs = [(name, z_tr[:, [i]], z_te[:, [i]]) for i, name in enumerate(FEATURE_NAMES)]
    if dummy_types:
        designs.append(("target type", d_tr, d_te))
    designs.append(("structured-all", np.column_stack([z_tr, d_tr]), np.column_stack([z_te, d_te])))

    rows = []
    for name, X_tr, X_te in designs:
        fit = ols(np.column_stack([np.ones(len(X_tr)), X_tr]), y_tr)
        preds = np.column_stack([np.ones(len(X_te)), X_te]) @ fit.coef
        report = evaluate_predictions(preds, y_te, users_te, model_id=name)
        rows.append(report)
    return rows, y_te, users_te


def _report_rows_text(rows):
    lines = [f"{'model':>16} {'cross R2':>9} {'within R2':>10} {'rank acc':>9} {'class acc':>10}"]
    for r in rows:
        lines.append(
            f"{r.model_id:>16} {r.cross_user_r2:>9.4f} {r.within_user_r2:>10.4f} "
            f"{r.ranking_accuracy:>9.4f} {r.classification_accuracy:>10.4f}"
        )
    return "\n".join(lines)


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    records, _ = _load_filtered(args.data)
    split = split_by_user(records, seed=args.split_seed)
    norm = net.feature_norm
    if norm is None:
        print("error: checkpoint carries no feature normalization", file=sys.stderr)
        return 1

    rows, y_te, users_te = _baseline_rows(split, norm)
    te = prepare_examples(split.test, args.data, net.config, norm)
    deep_preds = np.array([net.denormalize_time(p) for p in predict_examples(net, te)])
    rows.append(evaluate_predictions(deep_preds, y_te, users_te, model_id="deep"))

    run = _run_dir(args.out, args.split_seed)
    report = {
        "rows": [json.loads(r.to_json()) for r in rows],
        "n_test_trials": len(y_te),
        "n_test_users": len(set(users_te)),
    }
    (run / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    text = _report_rows_text(rows)
    (run / "report.txt").write_text(text + "\n")
    _echo(
        run / "config.json",
        {"command": "eval", "checkpoint": str(args.checkpoint), "data": str(args.data), "split_seed": args.split_seed},
    )
    print(text)
    return 0


def cmd_analyze(args) -> int:
    records, _ = _load_filtered(args.data)
    norm = fit_norm(records)
    z, _ = extract_batch(records, norm)
    y = np.array([r.search_time_s for r in records])
    dummies, dummy_names = _dummy_columns(records)
    X = np.column_stack([np.ones(len(records)), z, dummies])
    fit = ols(X, y, column_names=("intercept",) + FEATURE_NAMES + dummy_names)

    run = _run_dir(args.out, 0)
    (run / "ols.csv").write_text(fit.to_csv())
    (run / "ols.txt").write_text(fit.table("search time on standardized features") + "\n")

    contrast = type_contrast(y, [r.target_type for r in records])
    (run / "type_contrast.json").write_text(
        json.dumps(
            {"type_means": contrast.type_means, "differences_vs_image": contrast.differences},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )

    raw = {
        "y": np.array([r.bbox[1] for r in records], dtype=float),
        "area": np.array([r.bbox[2] * r.bbox[3] for r in records], dtype=float),
        "n_candidates": np.array([r.n_candidates for r in records], dtype=float),
    }
    for name, feature in raw.items():
        curve = binned_stats(y, feature, n_bins=args.n_bins)
        (run / f"curve_{name}.csv").write_text(curve.to_csv())

    if args.checkpoint:
        net = load_checkpoint(args.checkpoint)
        proj, ratios = pca2(net.params["type_embed"].data)
        lines = ["target_type,pc1,pc2"]
        for t, row in zip(TARGET_TYPES, proj):
            lines.append(f"{t},{row[0]!r},{row[1]!r}")
        (run / "type_embedding_pca.csv").write_text("\n".join(lines) + "\n")
        (run / "type_embedding_pca_ratios.json").write_text(json.dumps(list(map(float, ratios))) + "\n")

    _echo(run / "config.json", {"command": "analyze", "data": str(args.data), "n_bins": args.n_bins})
    print(fit.table("search time on standardized features"))
    return 0


def cmd_predict(args) -> int:
    from PIL import Image

    from .model import attention_to_png
    from .service import predict_task

    net = load_checkpoint(args.checkpoint)
    if net.feature_norm is None:
        print("error: checkpoint carries no feature normalization", file=sys.stderr)
        return 1
    img = Image.open(args.png)
    bbox = tuple(float(v) for v in args.bbox.split(","))
    if len(bbox) != 4:
        print("error: --bbox must be x,y,w,h", file=sys.stderr)
        return 1
    result = predict_task(net, img, bbox, args.type, args.n_candidates)
    g = result["grid"]
    A = np.array(result["attention"]).reshape(g, g)
    out = Path(args.attention_out)
    attention_to_png(A, out)
    print(f"predicted search time: {result['seconds']:.3f} s (normalized {result['normalized']:.4f})")
    print(f"attention map written to {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ModelStore, create_app

    store = ModelStore()
    store.load(args.checkpoint)
    app = create_app(store, grid_cap=args.grid_cap)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_gradcheck(args) -> int:
    """Finite-difference checks per layer; nonzero exit when any layer fails."""
    rng = np.random.default_rng(args.seed)
    tol = 1e-4
    cases = {
        "conv2d": (
            lambda t: T.tensor_sum(T.conv2d(t["x"], t["k"], t["b"])),
            {"x": rng.random((2, 6, 6, 3)), "k": rng.normal(size=(3, 3, 3, 4)) * 0.3, "b": rng.normal(size=4) * 0.1},
        ),
        "maxpool2": (
            lambda t: T.tensor_sum(T.maxpool2(t["x"])),
            {"x": rng.random((2, 6, 6, 3))},
        ),
        "batchnorm": (
            lambda t: T.tensor_sum(
                T.relu(T.batchnorm(t["x"], t["g"], t["b"], T.BatchNormState.create(3), mode="train"))
            ),
            {"x": rng.random((4, 4, 4, 3)), "g": 1 + 0.1 * rng.normal(size=3), "b": 0.1 * rng.normal(size=3)},
        ),
        "dense+tanh": (
            lambda t: T.tensor_sum(T.tanh(T.dense(t["x"], t["w"], t["b"]))),
            {"x": rng.normal(size=(3, 5)), "w": rng.normal(size=(4, 5)) * 0.3, "b": rng.normal(size=4) * 0.1},
        ),
        "softmax+cross_entropy": (
            lambda t: T.cross_entropy(T.softmax(t["x"]), np.array([0, 2, 1])),
            {"x": rng.normal(size=(3, 4))},
        ),
        "mse": (
            lambda t, target=T.Tensor(rng.normal(size=6)): T.mse(t["x"], target),
            {"x": rng.normal(size=6)},
        ),
        "embedding": (
            lambda t: T.tensor_sum(T.embedding(t["e"], np.array([0, 2, 2, 1]))),
            {"e": rng.normal(size=(3, 4))},
        ),
    }
    failed = []
    for name, (builder, inputs) in cases.items():
        report = T.grad_check(builder, inputs, n_samples=30, seed=args.seed)
        ok = report["max_rel_error"] < tol
        print(f"{name:>24}: {'PASS' if ok else 'FAIL'} (max rel error {report['max_rel_error']:.2e})")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradient check failed for: {failed}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scannability", description="Visual-search-time prediction pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic task dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--users", type=int, default=30)
    g.add_argument("--trials-per-user", type=int, default=20)
    g.add_argument("--gamma", type=float, default=0.0, help="pixel clutter effect size")
    g.add_argument("--sigma", type=float, default=0.0, help="trial noise std")
    g.add_argument("--incorrect-rate", type=float, default=0.0)
    g.add_argument("--long-rate", type=float, default=0.0)
    g.add_argument("--no-render", action="store_true", help="skip PNG rendering (structured features only)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default=None, help="run directory (default runs/<timestamp>-<seed>)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--mode", choices=("regression", "classification"), default="regression")
    t.add_argument("--variant", choices=("raw", "modulated", "softmax"), default="raw")
    t.add_argument("--l2", type=float, default=1e-4)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--page-size", type=int, default=512)
    t.add_argument("--target-size", type=int, default=64)
    t.add_argument("--page-blocks", type=int, default=3)
    t.add_argument("--target-blocks", type=int, default=6)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="baseline table plus deep-model metrics on the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--split-seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="regression tables, type contrasts, binned curves, embedding PCA")
    a.add_argument("--data", required=True)
    a.add_argument("--out", default=None)
    a.add_argument("--checkpoint", default=None, help="optional; enables type-embedding PCA")
    a.add_argument("--n-bins", type=int, default=10)
    a.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("predict", help="one prediction from a checkpoint and a screenshot")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--png", required=True)
    pr.add_argument("--bbox", required=True, help="x,y,w,h in 1024-page pixels")
    pr.add_argument("--type", required=True, choices=TARGET_TYPES)
    pr.add_argument("--n-candidates", type=int, required=True)
    pr.add_argument("--attention-out", default="attention.png")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("serve", help="run the HTTP prediction service")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--grid-cap", type=int, default=1024)
    s.set_defaults(func=cmd_serve)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks per layer")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
