#!/usr/bin/env python3
"""Basin-hopping vs random-mutation ASR under each placement mode, averaged
over several seeds. Generates its own fixture set unless --fixtures points at
an existing one (from make_fixtures.py).

Example:
    python scripts/run_compare.py --count 200 --seeds 5
"""

import argparse
import tempfile
from pathlib import Path

from lockmark.evolve import EsConfig
from lockmark.fixtures import fixture_mask_config, write_dataset
from lockmark.harness import LabeledDataset, compare_mutation
from lockmark.lesion_mask import ConstraintMode
from lockmark.oracle import ToyTemplateOracle
from lockmark.raster import WatermarkLogo


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fixtures", help="existing fixture dir (default: generate fresh)")
    parser.add_argument("--count", type=int, default=200)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--fixture-seed", type=int, default=424242)
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args()

    if args.fixtures:
        root = Path(args.fixtures)
        dataset = LabeledDataset.from_csv(root / "images", root / "labels.csv")
        masks_dir = root / "masks"
    else:
        root = Path(tempfile.mkdtemp(prefix="lockmark-compare-"))
        dataset, masks_dir, _ = write_dataset(root, count=args.count, seed=args.fixture_seed)
        print(f"generated {len(dataset)} fixture images under {root}")
    logo = WatermarkLogo.from_file(root / "logo.png")
    oracle = ToyTemplateOracle.from_file(root / "templates.npz")

    modes = [ConstraintMode.WAP, ConstraintMode.WSM_IN, ConstraintMode.WSM_OUT]
    sums = {m: {mode.value: 0.0 for mode in modes} for m in ("bh", "random")}
    for seed in range(1, args.seeds + 1):
        rep = compare_mutation(
            dataset, logo, oracle, EsConfig(seed=seed), fixture_mask_config(),
            masks_dir=masks_dir, modes=modes, workers=args.workers,
        )
        for method, row in rep.asr.items():
            for mode, value in row.items():
                sums[method][mode] += value
        print(f"seed {seed}: {rep.asr}")

    print(f"\nmean ASR over {args.seeds} seeds "
          f"({len(dataset)} images, denominator = correctly classified):")
    header = ["method"] + [m.value for m in modes]
    print(",".join(header))
    for method in ("bh", "random"):
        row = [f"{sums[method][m.value] / args.seeds:.4f}" for m in modes]
        print(",".join([method] + row))


if __name__ == "__main__":
    main()
