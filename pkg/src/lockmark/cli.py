"""Command-line entry point.

One binary with subcommands: lock, unlock, verify, mask, eval, transfer,
compare. Every optimizer/mask knob can come from a JSON config file
(--config) and any CLI flag overrides the file. Exit codes: 0 success,
1 runtime/partial failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import (
    ConfigurationError,
    DecodeError,
    LockmarkError,
    ParameterError,
)
from .evolve import EsConfig
from .harness import LabeledDataset, accuracy, asr, compare_mutation, transfer_matrix
from .keystore import KeyFile, lock_dataset, unlock_dataset, verify_key
from .lesion_mask import ConstraintMode, MaskConfig, build_constraint, load_mask_png
from .oracle import resolve_oracle
from .raster import WatermarkLogo, scaled_dims

USAGE_ERROR = 2
RUNTIME_ERROR = 1


@dataclass
class RunConfig:
    """Flat merged view of every knob; JSON config files mirror these names."""

    # optimizer
    population: int = 50
    generations: int = 3
    crossover_rate: float = 0.9
    mutation_step: int = 10
    bh_iters: int = 3
    alpha_min: int = 100
    alpha_max: int = 255
    seed: int = 0
    early_stop: bool = True
    cache_fitness: bool = False
    mutation: str = "bh"
    # mask pipeline
    kernel_size: int = 11
    dilate_iters: int = 10
    min_area: int = 50_000
    iou_merge_threshold: float = 0.5
    # run-level
    mode: str = "wap"
    scale: float = 4.0
    workers: int = 1
    exact: bool = True
    store_alpha_map: bool = False
    oracle_timeout: float = 30.0

    def es_config(self) -> EsConfig:
        return EsConfig(
            population=self.population,
            generations=self.generations,
            crossover_rate=self.crossover_rate,
            mutation_step=self.mutation_step,
            bh_iters=self.bh_iters,
            alpha_min=self.alpha_min,
            alpha_max=self.alpha_max,
            seed=self.seed,
            early_stop=self.early_stop,
            cache_fitness=self.cache_fitness,
            mutation=self.mutation,
        )

    def mask_config(self) -> MaskConfig:
        return MaskConfig(
            kernel_size=self.kernel_size,
            dilate_iters=self.dilate_iters,
            min_area=self.min_area,
            iou_merge_threshold=self.iou_merge_threshold,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def merge(cls, config_path: str | None, overrides: dict) -> "RunConfig":
        """defaults < config file < CLI flags."""
        values: dict = {}
        if config_path:
            try:
                doc = json.loads(Path(config_path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"cannot read config {config_path}: {exc}") from exc
            known = {f.name for f in fields(cls)}
            unknown = set(doc) - known
            if unknown:
                raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
            values.update(doc)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--crossover-rate", dest="crossover_rate", type=float)
    p.add_argument("--mutation-step", dest="mutation_step", type=int)
    p.add_argument("--bh-iters", dest="bh_iters", type=int)
    p.add_argument("--alpha-min", dest="alpha_min", type=int)
    p.add_argument("--alpha-max", dest="alpha_max", type=int)
    p.add_argument("--early-stop", dest="early_stop", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--cache-fitness", dest="cache_fitness", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--mutation", choices=["bh", "random"])
    p.add_argument("--kernel-size", dest="kernel_size", type=int)
    p.add_argument("--dilate-iters", dest="dilate_iters", type=int)
    p.add_argument("--min-area", dest="min_area", type=int)
    p.add_argument("--iou-merge-threshold", dest="iou_merge_threshold", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--oracle-timeout", dest="oracle_timeout", type=float)


def _run_config(args: argparse.Namespace) -> RunConfig:
    names = {f.name for f in fields(RunConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in names}
    return RunConfig.merge(getattr(args, "config", None), overrides)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_lock(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    mode = ConstraintMode.parse(args.mode if args.mode is not None else cfg.mode)
    if mode is not ConstraintMode.WAP and not args.masks:
        raise ConfigurationError(f"--mode {mode.value} requires --masks")
    dataset = LabeledDataset.from_csv(args.input_dir, args.labels)
    logo = WatermarkLogo.from_file(args.logo)
    out_dir = Path(args.out_dir)
    exact = cfg.exact if args.exact is None else args.exact
    with resolve_oracle(args.oracle, timeout=cfg.oracle_timeout) as oracle:
        key, report = lock_dataset(
            dataset, logo, oracle, mode,
            cfg=cfg.es_config(), mask_cfg=cfg.mask_config(),
            out_dir=out_dir, masks_dir=args.masks,
            scale_factor=cfg.scale, exact=exact,
            store_alpha_map=cfg.store_alpha_map, workers=cfg.workers,
        )
    key.save(args.key)
    _write_jsonl(out_dir / "attacks.jsonl", [r.to_dict() for r in report.results])
    _write_json(
        out_dir / "report.json",
        {
            "config": {**cfg.to_dict(), "mode": mode.value, "exact": exact},
            "dataset_hash": key.dataset_hash,
            "images": len(report.results),
            "attack_successes": report.attack_success_count,
            "failures": [r.to_dict() for r in report.failures],
        },
    )
    print(f"locked {len(report.results) - len(report.failures)}/{len(report.results)} images")
    print(f"attack successes: {report.attack_success_count}")
    print(f"key: {args.key} (dataset_hash {key.dataset_hash[:16]}...)")
    if report.failures:
        for r in report.failures:
            print(f"  failed {r.image_id}: {r.error}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0


def cmd_unlock(args: argparse.Namespace) -> int:
    key = KeyFile.load(args.key)
    logo = WatermarkLogo.from_file(args.logo)
    report = unlock_dataset(args.locked_dir, key, logo, args.out_dir)
    exact_count = sum(1 for r in report.results if r.exact)
    print(f"restored {len(report.results)} images ({exact_count} byte-exact)")
    for r in report.results:
        if not r.exact:
            print(f"  {r.image_id}: max per-channel error <= {r.max_error_bound}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    key = KeyFile.load(args.key)
    logo = WatermarkLogo.from_file(args.logo) if args.logo else None
    report = verify_key(key, args.locked_dir, logo)
    for entry in report.entries:
        print(f"{entry.status:>13}  {entry.image_id}")
    if report.logo_ok is not None:
        print(f"logo hash: {'ok' if report.logo_ok else 'MISMATCH'}")
    print(f"dataset hash: {'ok' if report.key_integrity_ok else 'MISMATCH'}")
    if report.all_ok:
        print("verification passed")
        return 0
    print("verification FAILED", file=sys.stderr)
    return RUNTIME_ERROR


def cmd_mask(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    mode = ConstraintMode.parse(args.mode if args.mode is not None else cfg.mode)
    mask = load_mask_png(args.mask)
    if args.logo:
        logo = WatermarkLogo.from_file(args.logo)
        logo_w, logo_h = scaled_dims(
            logo.image.width, logo.image.height, mask.width, mask.height, cfg.scale
        )
    elif args.logo_w and args.logo_h:
        logo_w, logo_h = args.logo_w, args.logo_h
    else:
        raise ConfigurationError("need --logo or both --logo-w and --logo-h")
    region = build_constraint(
        mask, mode, cfg.mask_config(), mask.width, mask.height, logo_w, logo_h
    )
    payload = region.to_json_dict()
    if args.out:
        _write_json(Path(args.out), payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    dataset = LabeledDataset.from_csv(args.input_dir, args.labels)
    failures: list[str] = []
    with resolve_oracle(args.oracle, timeout=cfg.oracle_timeout) as oracle:
        acc = accuracy(oracle, dataset, failures)
        print(f"accuracy: {acc:.4f} over {len(dataset)} samples")
        result = {"config": cfg.to_dict(), "accuracy": acc, "samples": len(dataset)}
        if args.locked_dir:
            rate = asr(oracle, dataset, args.locked_dir, failures)
            print(f"asr: {rate:.4f}")
            result["asr"] = rate
    for f in failures:
        print(f"  oracle failure: {f}", file=sys.stderr)
    if args.out:
        _write_json(Path(args.out), result)
    return 0


def cmd_transfer(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    dataset = LabeledDataset.from_csv(args.input_dir, args.labels)
    logo = WatermarkLogo.from_file(args.logo)
    source_specs = [s.strip() for s in args.sources.split(",") if s.strip()]
    target_specs = [s.strip() for s in args.targets.split(",") if s.strip()]
    sources = [(s, resolve_oracle(s, timeout=cfg.oracle_timeout)) for s in source_specs]
    targets = []
    by_spec = dict(sources)
    for s in target_specs:
        targets.append((s, by_spec[s] if s in by_spec else resolve_oracle(s, timeout=cfg.oracle_timeout)))
    try:
        matrix, details = transfer_matrix(
            sources, targets, dataset, logo,
            cfg=cfg.es_config(), scale_factor=cfg.scale, workers=cfg.workers,
        )
    finally:
        for _, oracle in {id(o): (n, o) for n, o in [*sources, *targets]}.values():
            oracle.close()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "matrix.csv").write_text(matrix.to_csv())
    _write_json(out_dir / "report.json", {"config": cfg.to_dict(), **matrix.to_dict()})
    _write_jsonl(
        out_dir / "attacks.jsonl",
        [
            {"source": name, **record.to_dict()}
            for name, records in details.items()
            for record in records
        ],
    )
    print(matrix.to_csv(), end="")
    print(f"eligible samples: {matrix.eligible_count}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    dataset = LabeledDataset.from_csv(args.input_dir, args.labels)
    logo = WatermarkLogo.from_file(args.logo)
    modes = None
    if args.modes:
        modes = [ConstraintMode.parse(m) for m in args.modes.split(",") if m.strip()]
    with resolve_oracle(args.oracle, timeout=cfg.oracle_timeout) as oracle:
        report = compare_mutation(
            dataset, logo, oracle,
            cfg=cfg.es_config(), mask_cfg=cfg.mask_config(),
            masks_dir=args.masks, modes=modes,
            scale_factor=cfg.scale, workers=cfg.workers,
        )
    out_dir = Path(args.out_dir)
    _write_json(out_dir / "report.json", {"config": cfg.to_dict(), **report.to_dict()})
    mode_names = list(next(iter(report.asr.values())).keys())
    print("method," + ",".join(mode_names))
    for method, row in report.asr.items():
        print(method + "," + ",".join(f"{row[m]:.4f}" for m in mode_names))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lockmark", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lock", help="optimize and apply watermarks, emit the key")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--logo", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--mode", choices=["wap", "wsm-in", "wsm-out"])
    p.add_argument("--masks")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--exact", action=argparse.BooleanOptionalAction, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_lock)

    p = sub.add_parser("unlock", help="remove watermarks using a key")
    p.add_argument("--locked-dir", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--logo", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_unlock)

    p = sub.add_parser("verify", help="integrity-check a key against locked files")
    p.add_argument("--key", required=True)
    p.add_argument("--locked-dir", required=True)
    p.add_argument("--logo")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("mask", help="emit constraint boxes for one mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--mode", choices=["wap", "wsm-in", "wsm-out"])
    p.add_argument("--logo")
    p.add_argument("--logo-w", dest="logo_w", type=int)
    p.add_argument("--logo-h", dest="logo_h", type=int)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("eval", help="accuracy (and ASR given a locked dir)")
    p.add_argument("--oracle", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--locked-dir")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="cross-model transfer ASR matrix")
    p.add_argument("--sources", required=True, help="comma-separated oracle specs")
    p.add_argument("--targets", required=True, help="comma-separated oracle specs")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--logo", required=True)
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("compare", help="basin-hopping vs random mutation ASR")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--logo", required=True)
    p.add_argument("--oracle", required=True)
    p.add_argument("--masks")
    p.add_argument("--modes", help="comma-separated subset of wap,wsm-in,wsm-out")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ParameterError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except LockmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
