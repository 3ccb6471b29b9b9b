#!/usr/bin/env python3
"""Generate a synthetic fixture dataset: images, labels.csv, per-image lesion
masks, a dark logo, and the matching template-oracle weights.

Example:
    python scripts/make_fixtures.py --out runs/fix200 --count 200 --seed 424242
"""

import argparse

from lockmark.fixtures import write_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--count", type=int, default=200)
    parser.add_argument("--seed", type=int, default=424242)
    parser.add_argument("--margin-low", type=float, default=0.92)
    parser.add_argument("--margin-high", type=float, default=0.985)
    parser.add_argument("--no-masks", action="store_true")
    args = parser.parse_args()

    dataset, masks_dir, templates = write_dataset(
        args.out, count=args.count, seed=args.seed,
        margin_low=args.margin_low, margin_high=args.margin_high,
        with_masks=not args.no_masks,
    )
    print(f"images:    {dataset.root} ({len(dataset)} samples)")
    print(f"labels:    {args.out}/labels.csv")
    if masks_dir:
        print(f"masks:     {masks_dir}")
    print(f"logo:      {args.out}/logo.png")
    print(f"oracle:    toy:template:{templates}")


if __name__ == "__main__":
    main()
