#!/usr/bin/env python3
"""
Long Sampler Acceptance Runs

Runs the statistical experiments that take minutes per seed:
  1. Convergence of the adaptive bias towards the fixed point, per seed
  2. Flat histogram: adaptive runs against paired frozen zero-bias runs
  3. Reweighted estimates on the z-only potential against quadrature

Usage:
    python scripts/run_acceptance.py [--steps 10000000] [--seeds 0 1 2] [--config configs/default.toml]

Environment variables (optional):
    ABF_OUT, ABF_LOG_LEVEL
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

load_dotenv()

from app.config import get_settings, initialize_settings, load_experiment_config
from app.exceptions import ConfigError, NumericalError
from app.numerics.observables import get_observable
from app.numerics.potential import mu_star_observable
from app.services.experiment_service import experiment_service


def convergence_and_flatness(config_path, seeds, steps):
    """Adaptive vs frozen runs on the default potential; returns one dict per seed"""
    results = []
    for seed in seeds:
        print(f"Seed {seed}: adaptive run with {steps:,} steps...")
        overrides = [f"seed={seed}", f"simulation.n_steps={steps}", "simulation.bias_mode=\"adaptive\""]
        adaptive_config = load_experiment_config(config_path, overrides)
        summary, record = experiment_service.run_simulation(adaptive_config)

        t_end = record.final_time
        early = min(
            (row for row in record.diagnostics if row.error_c0 is not None),
            key=lambda row: abs(row.time - t_end / 10.0),
        )
        final_error = summary.final_error_c0
        decreased = final_error is not None and final_error < early.error_c0
        small = final_error is not None and final_error < 0.1 * summary.reference_c0_norm

        print(f"Seed {seed}: frozen zero-bias run...")
        frozen_config = load_experiment_config(
            config_path, overrides[:-1] + ["simulation.bias_mode=\"frozen\""]
        )
        frozen_summary, _ = experiment_service.run_simulation(frozen_config, with_reference=False)
        flatter = summary.flat_histogram_distance < frozen_summary.flat_histogram_distance

        results.append({
            "seed": seed,
            "error_at_tenth": early.error_c0,
            "final_error_c0": final_error,
            "reference_c0_norm": summary.reference_c0_norm,
            "flat_distance": summary.flat_histogram_distance,
            "frozen_flat_distance": frozen_summary.flat_histogram_distance,
            "converging": bool(decreased and small),
            "flatter_than_frozen": bool(flatter),
        })
    return results


def reweighting(config_path, seed, steps):
    """Reweighted cos(z) and 1 on the z-only potential"""
    print("Reweighting run on the z-only potential...")
    config = load_experiment_config(
        config_path,
        [
            f"seed={seed}",
            f"simulation.n_steps={steps}",
            "potential.family=\"z_only\"",
            "potential.b=1.0",
            "simulation.observables=[\"one\", \"cos_z\"]",
        ],
    )
    summary, _ = experiment_service.run_simulation(config, with_reference=False)
    spec = config.potential
    cos_z = get_observable("cos_z")
    exact = mu_star_observable(spec, lambda x: cos_z(x, spec.m))
    estimate = summary.estimates["cos_z"]
    within = estimate.stderr is not None and abs(estimate.value - exact) <= 3.0 * estimate.stderr
    return {
        "exact_cos_z": exact,
        "estimate_cos_z": estimate.value,
        "stderr_cos_z": estimate.stderr,
        "estimate_one": summary.estimates["one"].value,
        "within_three_stderr": bool(within),
        "one_is_exact": summary.estimates["one"].value == 1.0,
    }


def print_results(runs, reweight):
    """Print formatted results"""
    print("\n" + "=" * 50)
    print("SAMPLER ACCEPTANCE RESULTS")
    print("=" * 50)

    print("\nCONVERGENCE AND FLAT HISTOGRAM:")
    print("-" * 40)
    for run in runs:
        mark = "✅" if run["converging"] and run["flatter_than_frozen"] else "❌"
        print(f"   {mark} seed {run['seed']}: C0 error {run['error_at_tenth']:.3e} -> {run['final_error_c0']:.3e} "
              f"(|A_star| {run['reference_c0_norm']:.3f}); "
              f"TV {run['flat_distance']:.4f} vs frozen {run['frozen_flat_distance']:.4f}")

    print("\nREWEIGHTING:")
    print("-" * 40)
    mark = "✅" if reweight["within_three_stderr"] and reweight["one_is_exact"] else "❌"
    print(f"   {mark} cos z: {reweight['estimate_cos_z']:.5f} +/- {reweight['stderr_cos_z']:.5f} "
          f"(quadrature {reweight['exact_cos_z']:.5f})")
    print(f"   phi = 1: {reweight['estimate_one']!r}")
    print("\n" + "=" * 50)


def main():
    """Run all long acceptance experiments and write acceptance.json"""
    parser = argparse.ArgumentParser(description="Long sampler acceptance runs")
    parser.add_argument("--config", type=Path, default=project_root / "configs" / "default.toml")
    parser.add_argument("--steps", type=int, default=10_000_000)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    try:
        settings = initialize_settings()
        logging.basicConfig(level=settings.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        out_dir = (args.out or get_settings().out_root / "acceptance").resolve()
        out_dir.mkdir(parents=True, exist_ok=True)

        runs = convergence_and_flatness(args.config, args.seeds, args.steps)
        reweight = reweighting(args.config, args.seeds[0], args.steps)
        print_results(runs, reweight)

        passed = all(r["converging"] and r["flatter_than_frozen"] for r in runs) and (
            reweight["within_three_stderr"] and reweight["one_is_exact"]
        )
        payload = {"passed": passed, "runs": runs, "reweighting": reweight}
        (out_dir / "acceptance.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"Results written to {out_dir / 'acceptance.json'}")
        sys.exit(0 if passed else 1)

    except ConfigError as e:
        print(f"❌ Configuration error: {str(e)}")
        sys.exit(2)
    except NumericalError as e:
        print(f"❌ Numerical failure: {str(e)}")
        sys.exit(3)


if __name__ == "__main__":
    main()
