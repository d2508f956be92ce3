"""Seed-paired comparison of the deep model against linear baselines.

Generates a synthetic corpus with a pixel-only clutter effect, fits the
single-feature and all-feature linear baselines once (they are
deterministic given the data), then trains the deep model over several
seeds and reports cross-user R2 per seed plus a paired t test.

Usage:
    python3 scripts/seed_comparison.py --out /tmp/seedcmp --seeds 5
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from scannability.analytics import ols, paired_t
from scannability.cli import _dummy_columns
from scannability.dataset import SynthConfig, split_by_user, synth_generate
from scannability.evaluation import r2_cross
from scannability.features import FEATURE_NAMES, extract_batch, fit_norm
from scannability.model import (
    ModelConfig,
    ScannabilityNet,
    predict_examples,
    prepare_examples,
    train,
)


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True, help="working directory for data and results")
    p.add_argument("--seeds", type=int, default=5, help="number of training seeds")
    p.add_argument("--users", type=int, default=40)
    p.add_argument("--trials-per-user", type=int, default=20)
    p.add_argument("--gamma", type=float, default=0.5, help="pixel clutter effect size")
    p.add_argument("--sigma", type=float, default=0.0, help="trial noise std")
    p.add_argument("--gen-seed", type=int, default=100)
    p.add_argument("--page-size", type=int, default=64, help="reduced page resolution")
    p.add_argument("--target-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--epochs", type=int, default=40)
    return p.parse_args(argv)


def design(z, dummies):
    return np.column_stack([np.ones(len(z)), z, dummies])


def main(argv=None):
    args = parse_args(argv)
    start = time.monotonic()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    gen = SynthConfig(
        n_users=args.users,
        trials_per_user=args.trials_per_user,
        gamma=args.gamma,
        sigma=args.sigma,
        clutter_halfwin=512,
        min_elements=12,
        max_elements=20,
        type_weights={
            "image": 0.70,
            "input_field": 0.22,
            "link": 0.03,
            "button": 0.02,
            "text": 0.03,
        },
        out_dir=str(out / "data"),
    )
    records, _ = synth_generate(gen, seed=args.gen_seed)
    split = split_by_user(records, seed=0)
    norm = fit_norm(split.train)

    z_tr, _ = extract_batch(split.train, norm)
    z_te, _ = extract_batch(split.test, norm)
    y_tr = np.array([r.search_time_s for r in split.train])
    y_te = np.array([r.search_time_s for r in split.test])
    d_tr, types = _dummy_columns(split.train)
    d_te, _ = _dummy_columns(split.test, types=types)

    rows = []
    for i, name in enumerate(FEATURE_NAMES):
        fit = ols(np.column_stack([np.ones(len(y_tr)), z_tr[:, [i]]]), y_tr)
        r2 = r2_cross(np.column_stack([np.ones(len(y_te)), z_te[:, [i]]]) @ fit.coef, y_te)
        rows.append((name, r2))

    fit_all = ols(design(z_tr, d_tr), y_tr)
    base_r2 = r2_cross(design(z_te, d_te) @ fit_all.coef, y_te)
    rows.append(("structured-all", base_r2))

    cfg = ModelConfig(
        page_size=args.page_size,
        target_size=args.target_size,
        page_blocks=3,
        target_blocks=4,
        lr=args.lr,
        dropout_rate=0.0,
        max_epochs=args.epochs,
        patience=args.epochs,
    )
    tr = prepare_examples(split.train, out / "data", cfg, norm)
    va = prepare_examples(split.validation, out / "data", cfg, norm)
    te = prepare_examples(split.test, out / "data", cfg, norm)

    deep_r2s = []
    for seed in range(args.seeds):
        net = ScannabilityNet(cfg, seed=seed)
        net.feature_norm = norm
        train(net, tr, va, seed=seed)
        preds = np.array([net.denormalize_time(p) for p in predict_examples(net, te)])
        deep_r2s.append(r2_cross(preds, y_te))
        print(f"seed {seed}: deep R2 {deep_r2s[-1]:.4f} (baseline {base_r2:.4f})")
        rows.append((f"deep seed {seed}", deep_r2s[-1]))

    tt = paired_t(deep_r2s, [base_r2] * len(deep_r2s))
    elapsed = time.monotonic() - start

    print()
    for name, r2 in rows:
        print(f"{name:>16s}  {r2:8.4f}")
    print(
        f"\npaired t({tt.dof}) = {tt.t_value:.3f}, p = {tt.p_value:.3e}, "
        f"deep mean {np.mean(deep_r2s):.4f} vs structured-all {base_r2:.4f}, "
        f"{elapsed / 60:.1f} min"
    )

    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "r2_cross"])
        writer.writerows(rows)
    print(f"wrote {out / 'results.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
