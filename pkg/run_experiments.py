"""Desk-scale experiments: gradient suite, learning gate and ablation trend."""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np
from loguru import logger

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from glat.config import Settings, load_settings
from glat.models import EmbeddingTable, GradeLabel, WSIBag
from glat.pipeline import holdout_run
from glat.training.head import init_model_params
from glat.training.loss import finite_diff_check
from glat.training.trainer import bundles_for
from glat.utils.prng import SplitMix64, derive_seed


def _random_bag(m: int, d: int, seed: int) -> WSIBag:
    rng = SplitMix64(seed)
    table = EmbeddingTable.from_arrays(range(m), [(i, 0) for i in range(m)], rng.normal((m, d)), slide_id=f"g{seed}")
    label = GradeLabel(class_index=int(rng.integers(0, 3)))
    return WSIBag(slide_id=table.slide_id, label=label, patches=table)


def gradient_suite(instances: int = 24) -> float:
    """Finite-difference check on random instances; returns the worst relative error."""
    worst = 0.0
    for i in range(instances):
        m, d, alpha = (2, 4, 8)[i % 3], (4, 8)[(i // 3) % 2], (0.0, 0.01)[(i // 6) % 2]
        batch = [_random_bag(m, d, 10 * i), _random_bag(m, d, 10 * i + 1)]
        params = init_model_params(d, d_k=4, d_v=4, m_max=8, seed=i)
        rng = SplitMix64(derive_seed(i, 1))
        params = params.with_arrays(
            {"agg_logits": rng.normal(8, scale=0.5), "cls_w": rng.normal((4, 4), scale=0.5)}
        )
        report = finite_diff_check(batch, params, alpha, bundles_for(batch))
        worst = max(worst, report.worst)
        print(f"       M={m} d={d} alpha={alpha}: max rel error {report.worst:.2e}")
    return worst


def learning_gate(settings: Settings, output_path: Path) -> bool:
    """Hold-out run at the given settings; the outcome is appended to ``output_path``."""
    start = time.perf_counter()
    report, result = holdout_run(settings)
    elapsed = time.perf_counter() - start
    passed = report.accuracy >= 0.90 and report.kappa >= 0.85
    print(f"       [OK] {len(result.history)} epochs (best {result.best_epoch}) in {elapsed:.0f}s")
    print(f"       accuracy {report.accuracy:.3f}, kappa {report.kappa:.3f}, AUC {report.auc:.3f}")

    output_path.parent.mkdir(parents=True, exist_ok=True)
    is_new = not output_path.exists()
    with open(output_path, "a", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if is_new:
            writer.writerow(["epochs", "best_epoch", "accuracy", "kappa", "auc", "seconds", "passed"])
        writer.writerow(
            [len(result.history), result.best_epoch, repr(report.accuracy), repr(report.kappa),
             repr(report.auc), f"{elapsed:.1f}", int(passed)]
        )
    return passed


def ablation(settings: Settings, seeds: int, output_path: Path) -> dict:
    """Mean validation kappa of the full model and each ablation over ``seeds`` runs."""
    variants = {
        "full": {},
        "random-selection": {"selection": "random"},
        "mean-pooling": {"aggregation": "mean"},
        "msa": {"attention": "msa"},
        "no-fm": {"scorer": "none"},
    }
    rows = []
    means = {}
    for name, update in variants.items():
        kappas = []
        for seed in range(seeds):
            run = settings.model_copy(update={**update, "seed": seed, "synth_seed": seed, "shuffle_seed": seed})
            report, _ = holdout_run(run)
            kappas.append(report.kappa)
            rows.append([name, seed, repr(report.kappa), repr(report.accuracy)])
        means[name] = float(np.mean(kappas))
        print(f"       {name:<17} kappa {means[name]:.3f}")

    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "seed", "kappa", "accuracy"])
        writer.writerows(rows)
    return means


def main() -> int:
    parser = argparse.ArgumentParser(description="Desk-scale experiments")
    parser.add_argument("--config", type=Path)
    parser.add_argument("--gate", choices=("gradients", "learning", "ablation", "all"), default="all")
    parser.add_argument("--noise", type=float, default=1.5, help="noise_scale for the ablation runs")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--output-dir", type=Path, default=Path("temp/experiments"))
    args = parser.parse_args()

    logger.remove()
    logger.add(sys.stderr, level="WARNING")
    settings = load_settings(args.config)
    passed = True

    if args.gate in ("gradients", "all"):
        print("\n[1/3] Gradient suite (central differences, step 1e-5)...")
        worst = gradient_suite()
        ok = worst < 1e-4
        passed &= ok
        print(f"       [{'OK' if ok else 'FAIL'}] worst relative error {worst:.2e}")

    if args.gate in ("learning", "all"):
        print("\n[2/3] Learning gate on the default synthetic set...")
        ok = learning_gate(settings, args.output_dir / "learning.csv")
        passed &= ok
        print(f"       [{'OK' if ok else 'FAIL'}] accuracy >= 0.90 and kappa >= 0.85")

    if args.gate in ("ablation", "all"):
        print(f"\n[3/3] Ablations at noise_scale={args.noise} over {args.seeds} seeds...")
        means = ablation(
            settings.model_copy(update={"noise_scale": args.noise}), args.seeds, args.output_dir / "ablation.csv"
        )
        for name in ("random-selection", "mean-pooling"):
            drop = means["full"] - means[name]
            ok = drop >= 0.02
            passed &= ok
            print(f"       [{'OK' if ok else 'FAIL'}] {name} lowers kappa by {drop:.3f}")

    print("\n" + "=" * 60)
    print("All gates passed" if passed else "Some gates failed")
    print("=" * 60)
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
