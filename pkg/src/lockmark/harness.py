"""Experiment machinery: dataset ingestion, accuracy/ASR metrics, cross-model
transfer matrices, and the basin-hopping vs random-mutation comparison.

ASR (attack success rate) is always computed over the samples the oracle
classifies correctly on the clean image; samples it never gets right are
excluded from the denominator.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError, LockmarkError, ParameterError, UndefinedMetricError
from .evolve import EsConfig, attack_image, derive_image_seed
from .lesion_mask import BinaryMask, ConstraintMode, MaskConfig, build_constraint, load_mask_png
from .oracle import EnsembleOracle, Oracle, predicted_class
from .raster import Placement, RgbaImage, WatermarkLogo, blend, load_png, scale_logo


@dataclass(frozen=True)
class LabeledDataset:
    """A directory of images plus (image_id, label) pairs."""

    root: Path
    samples: tuple[tuple[str, int], ...]
    class_count: int

    def __post_init__(self):
        for image_id, label in self.samples:
            if not 0 <= label < self.class_count:
                raise ParameterError(
                    f"label {label} of {image_id!r} outside [0, {self.class_count})"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def load(self, image_id: str) -> RgbaImage:
        return load_png(self.root / image_id)

    @classmethod
    def from_csv(
        cls, root: str | Path, labels_csv: str | Path, class_count: int | None = None
    ) -> "LabeledDataset":
        """Read a "image_id,label" CSV; image files must exist under root."""
        root = Path(root)
        samples = []
        with open(labels_csv, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [c.strip() for c in header[:2]] != ["image_id", "label"]:
                raise ConfigurationError(
                    f'labels file {labels_csv} must start with header "image_id,label"'
                )
            for row in reader:
                if not row:
                    continue
                image_id, label = row[0].strip(), int(row[1])
                if not (root / image_id).exists():
                    raise ConfigurationError(f"missing image file {root / image_id}")
                samples.append((image_id, label))
        if class_count is None:
            if not samples:
                raise ConfigurationError("empty labels file and no class count given")
            class_count = max(label for _, label in samples) + 1
        return cls(root=root, samples=tuple(samples), class_count=class_count)


def _clean_predictions(
    oracle: Oracle, dataset: LabeledDataset, failures: list[str] | None = None
) -> dict[str, int]:
    """Predicted class per image; oracle failures are dropped and reported."""
    out: dict[str, int] = {}
    for image_id, _ in dataset.samples:
        try:
            out[image_id] = predicted_class(oracle.score(dataset.load(image_id)))
        except LockmarkError as exc:
            if failures is not None:
                failures.append(f"{image_id}: {exc}")
    return out


def accuracy(
    oracle: Oracle, dataset: LabeledDataset, failures: list[str] | None = None
) -> float:
    """Fraction of samples whose clean image is classified correctly."""
    predictions = _clean_predictions(oracle, dataset, failures)
    if not predictions:
        raise UndefinedMetricError("no samples could be scored")
    labels = dict(dataset.samples)
    hits = sum(1 for image_id, pred in predictions.items() if pred == labels[image_id])
    return hits / len(predictions)


def asr(
    oracle: Oracle,
    dataset: LabeledDataset,
    locked_images: dict[str, RgbaImage] | str | Path,
    failures: list[str] | None = None,
) -> float:
    """Attack success rate: misclassified-when-locked over correct-when-clean."""
    if not isinstance(locked_images, dict):
        locked_dir = Path(locked_images)
        locked_images = {}
        for image_id, _ in dataset.samples:
            path = locked_dir / image_id
            if path.exists():
                locked_images[image_id] = load_png(path)
    labels = dict(dataset.samples)
    predictions = _clean_predictions(oracle, dataset, failures)
    correct = [i for i, pred in predictions.items() if pred == labels[i]]
    if not correct:
        raise UndefinedMetricError("no sample is correctly classified when clean")
    flipped = 0
    for image_id in correct:
        if image_id not in locked_images:
            raise ConfigurationError(f"no locked image for {image_id!r}")
        if predicted_class(oracle.score(locked_images[image_id])) != labels[image_id]:
            flipped += 1
    return flipped / len(correct)


# ---------------------------------------------------------------------------
# Attack sweeps
# ---------------------------------------------------------------------------


@dataclass
class ImageAttackRecord:
    image_id: str
    label: int
    success: bool
    alpha: int | None
    x: int | None
    y: int | None
    queries_used: int
    initial_fitness: float | None
    final_fitness: float | None
    error: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _attack_sweep(
    dataset: LabeledDataset,
    sample_ids: list[str],
    logo: WatermarkLogo,
    oracle: Oracle,
    mode: ConstraintMode,
    cfg: EsConfig,
    mask_cfg: MaskConfig,
    masks_dir: str | Path | None,
    scale_factor: float,
    seed_salt: str,
    workers: int = 1,
) -> tuple[dict[str, RgbaImage], list[ImageAttackRecord]]:
    """Attack each listed sample; returns locked images and per-image records."""
    labels = dict(dataset.samples)

    def one(image_id: str) -> tuple[str, RgbaImage | None, ImageAttackRecord]:
        label = labels[image_id]
        try:
            original = dataset.load(image_id)
            scaled = scale_logo(logo, original.width, original.height, scale_factor)
            mask: BinaryMask | None = None
            if mode is not ConstraintMode.WAP:
                if masks_dir is None:
                    raise ConfigurationError(f"mode {mode.value} requires a mask directory")
                mask = load_mask_png(Path(masks_dir) / image_id)
            region = build_constraint(
                mask, mode, mask_cfg,
                original.width, original.height,
                scaled.image.width, scaled.image.height,
            )
            per_cfg = replace(cfg, seed=derive_image_seed(cfg.seed, seed_salt + image_id))
            result = attack_image(original, label, scaled, oracle, region, per_cfg)
            best = result.best
            locked = blend(
                original,
                scaled,
                Placement(best.alpha, best.x, best.y, scaled.image.width, scaled.image.height),
            )
            record = ImageAttackRecord(
                image_id=image_id, label=label, success=result.success,
                alpha=best.alpha, x=best.x, y=best.y,
                queries_used=result.queries_used,
                initial_fitness=result.initial_fitness,
                final_fitness=result.final_fitness,
            )
            return image_id, locked, record
        except LockmarkError as exc:
            record = ImageAttackRecord(
                image_id=image_id, label=label, success=False,
                alpha=None, x=None, y=None, queries_used=0,
                initial_fitness=None, final_fitness=None, error=str(exc),
            )
            return image_id, None, record

    if workers > 1 and len(sample_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, sample_ids))
    else:
        rows = [one(i) for i in sample_ids]

    locked = {image_id: img for image_id, img, _ in rows if img is not None}
    return locked, [record for _, _, record in rows]


@dataclass
class TransferMatrix:
    """ASR of locked images generated on each source, measured on each target.

    ``cells[i][j]`` is None where the pair is not applicable (target equals
    the source, or the target is a member of the source ensemble).
    """

    source_names: list[str]
    target_names: list[str]
    cells: list[list[float | None]]
    eligible_count: int
    kept_counts: dict[str, int]

    def source_averages(self) -> dict[str, float | None]:
        out = {}
        for name, row in zip(self.source_names, self.cells):
            vals = [v for v in row if v is not None]
            out[name] = sum(vals) / len(vals) if vals else None
        return out

    def target_averages(self) -> dict[str, float | None]:
        out = {}
        for j, name in enumerate(self.target_names):
            vals = [row[j] for row in self.cells if row[j] is not None]
            out[name] = sum(vals) / len(vals) if vals else None
        return out

    def to_csv(self) -> str:
        lines = ["source," + ",".join(self.target_names)]
        for name, row in zip(self.source_names, self.cells):
            cells = ["n/a" if v is None else f"{v:.6f}" for v in row]
            lines.append(name + "," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "sources": self.source_names,
            "targets": self.target_names,
            "cells": self.cells,
            "eligible_count": self.eligible_count,
            "kept_counts": self.kept_counts,
            "source_averages": self.source_averages(),
            "target_averages": self.target_averages(),
        }


def _not_applicable(source_name, source, target_name, target) -> bool:
    if source_name == target_name:
        return True
    if isinstance(source, EnsembleOracle) and target.spec in source.member_specs:
        return True
    return False


def transfer_matrix(
    sources: list[tuple[str, Oracle]],
    targets: list[tuple[str, Oracle]],
    dataset: LabeledDataset,
    logo: WatermarkLogo,
    cfg: EsConfig,
    scale_factor: float = 4.0,
    workers: int = 1,
) -> tuple[TransferMatrix, dict[str, list[ImageAttackRecord]]]:
    """Lock on each source, then measure the locked images on every target.

    Only samples classified correctly by every oracle are attacked, and only
    samples whose attack succeeds on the source count toward transfer cells.
    """
    if not sources or not targets:
        raise ParameterError("need at least one source and one target oracle")
    labels = dict(dataset.samples)

    clean: dict[int, dict[str, int]] = {}
    for _, oracle in [*sources, *targets]:
        if id(oracle) not in clean:
            clean[id(oracle)] = _clean_predictions(oracle, dataset)
    eligible = [
        image_id
        for image_id, label in dataset.samples
        if all(preds.get(image_id) == label for preds in clean.values())
    ]

    cells: list[list[float | None]] = []
    kept_counts: dict[str, int] = {}
    details: dict[str, list[ImageAttackRecord]] = {}
    for source_name, source in sources:
        locked, records = _attack_sweep(
            dataset, eligible, logo, source, ConstraintMode.WAP, cfg,
            MaskConfig(), None, scale_factor, seed_salt=f"{source_name}:", workers=workers,
        )
        details[source_name] = records
        kept = [r.image_id for r in records if r.success]
        kept_counts[source_name] = len(kept)
        row: list[float | None] = []
        for target_name, target in targets:
            if _not_applicable(source_name, source, target_name, target):
                row.append(None)
                continue
            if not kept:
                row.append(None)
                continue
            flipped = sum(
                1
                for image_id in kept
                if predicted_class(target.score(locked[image_id])) != labels[image_id]
            )
            row.append(flipped / len(kept))
        cells.append(row)

    matrix = TransferMatrix(
        source_names=[n for n, _ in sources],
        target_names=[n for n, _ in targets],
        cells=cells,
        eligible_count=len(eligible),
        kept_counts=kept_counts,
    )
    return matrix, details


# ---------------------------------------------------------------------------
# Mutation-strategy comparison
# ---------------------------------------------------------------------------


@dataclass
class CompareReport:
    """ASR per mutation strategy and placement mode, plus per-image detail."""

    asr: dict[str, dict[str, float]]
    denominators: dict[str, int]
    details: dict[str, dict[str, list[ImageAttackRecord]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "asr": self.asr,
            "denominators": self.denominators,
            "details": {
                m: {mode: [r.to_dict() for r in recs] for mode, recs in per_mode.items()}
                for m, per_mode in self.details.items()
            },
        }


def compare_mutation(
    dataset: LabeledDataset,
    logo: WatermarkLogo,
    oracle: Oracle,
    cfg: EsConfig,
    mask_cfg: MaskConfig,
    masks_dir: str | Path | None = None,
    modes: list[ConstraintMode] | None = None,
    scale_factor: float = 4.0,
    workers: int = 1,
) -> CompareReport:
    """Run the attack with basin-hopping and with random mutation under each
    placement mode; report the ASR grid. Images with an infeasible constraint
    stay in the denominator as failed attacks."""
    if modes is None:
        modes = [ConstraintMode.WAP]
        if masks_dir is not None:
            modes += [ConstraintMode.WSM_IN, ConstraintMode.WSM_OUT]
    labels = dict(dataset.samples)
    predictions = _clean_predictions(oracle, dataset)
    correct = [i for i, pred in predictions.items() if pred == labels[i]]
    if not correct:
        raise UndefinedMetricError("no sample is correctly classified when clean")

    table: dict[str, dict[str, float]] = {}
    details: dict[str, dict[str, list[ImageAttackRecord]]] = {}
    for method in ("bh", "random"):
        table[method] = {}
        details[method] = {}
        for mode in modes:
            # seed salt excludes the method so both strategies start from the
            # same initial populations (paired comparison)
            method_cfg = replace(cfg, mutation=method)
            _, records = _attack_sweep(
                dataset, correct, logo, oracle, mode, method_cfg, mask_cfg,
                masks_dir, scale_factor, seed_salt=f"{mode.value}:",
                workers=workers,
            )
            successes = sum(1 for r in records if r.success)
            table[method][mode.value] = successes / len(correct)
            details[method][mode.value] = records

    return CompareReport(
        asr=table,
        denominators={mode.value: len(correct) for mode in modes},
        details=details,
    )
