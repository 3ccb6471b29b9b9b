"""Per-user keys: lock a dataset, verify authorization, reverse the watermark.

A key is a canonical-JSON ledger mapping each image to its watermark
parameters (transparency, position, optional per-pixel alpha map) plus
integrity digests. In exact mode each entry also carries a residual block:
the mod-256 difference between the pre-lock original and the inverse-blend
reconstruction, which makes unlocking byte-exact for every alpha including
255 (where the plain inverse is singular).
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import AuthorizationError, ConfigurationError, LockmarkError
from .evolve import AttackResult, EsConfig, attack_image, derive_image_seed
from .harness import LabeledDataset
from .lesion_mask import BinaryMask, ConstraintMode, MaskConfig, build_constraint, load_mask_png
from .oracle import Oracle
from .raster import (
    Placement,
    RgbaImage,
    WatermarkLogo,
    blend,
    effective_alpha,
    load_png,
    reconstruction_error_bound,
    save_png,
    scale_logo,
    unblend,
)

KEY_VERSION = 1


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_dumps(obj) -> str:
    """Stable JSON: sorted keys, no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))


@dataclass(frozen=True)
class KeyEntry:
    """Watermark parameters and integrity digest for one image."""

    image_id: str
    locked_hash: str
    alpha: int
    x: int
    y: int
    alpha_map: bytes | None = None  # uint8, row-major scaled_h x scaled_w
    residuals: bytes | None = None  # int8, row-major scaled_h x scaled_w x 3

    def to_dict(self) -> dict:
        d = {
            "image_id": self.image_id,
            "locked_hash": self.locked_hash,
            "alpha": self.alpha,
            "x": self.x,
            "y": self.y,
        }
        if self.alpha_map is not None:
            d["alpha_map"] = _b64(self.alpha_map)
        if self.residuals is not None:
            d["residuals"] = _b64(self.residuals)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KeyEntry":
        return cls(
            image_id=d["image_id"],
            locked_hash=d["locked_hash"],
            alpha=int(d["alpha"]),
            x=int(d["x"]),
            y=int(d["y"]),
            alpha_map=_unb64(d["alpha_map"]) if "alpha_map" in d else None,
            residuals=_unb64(d["residuals"]) if "residuals" in d else None,
        )


@dataclass(frozen=True)
class KeyFile:
    logo_id: str
    logo_hash: str
    logo_scaled_w: int
    logo_scaled_h: int
    scale_factor: float
    entries: tuple[KeyEntry, ...]
    version: int = KEY_VERSION

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ConfigurationError("key entries must have unique image ids")

    @property
    def dataset_hash(self) -> str:
        joined = "".join(sorted(e.locked_hash for e in self.entries))
        return hashlib.sha256(joined.encode("ascii")).hexdigest()

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "logo_id": self.logo_id,
            "logo_hash": self.logo_hash,
            "logo_scaled_w": self.logo_scaled_w,
            "logo_scaled_h": self.logo_scaled_h,
            "scale_factor": self.scale_factor,
            "entries": [e.to_dict() for e in sorted(self.entries, key=lambda e: e.image_id)],
            "dataset_hash": self.dataset_hash,
        }

    def to_json(self) -> str:
        return canonical_dumps(self.to_dict())

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "KeyFile":
        key = cls(
            logo_id=d["logo_id"],
            logo_hash=d["logo_hash"],
            logo_scaled_w=int(d["logo_scaled_w"]),
            logo_scaled_h=int(d["logo_scaled_h"]),
            scale_factor=float(d["scale_factor"]),
            entries=tuple(KeyEntry.from_dict(e) for e in d["entries"]),
            version=int(d.get("version", KEY_VERSION)),
        )
        stored = d.get("dataset_hash")
        if stored is not None and stored != key.dataset_hash:
            raise AuthorizationError("key file dataset_hash does not match its entries")
        return key

    @classmethod
    def load(cls, path: str | Path) -> "KeyFile":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise AuthorizationError(f"malformed key file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Locking
# ---------------------------------------------------------------------------


@dataclass
class ImageLockResult:
    image_id: str
    success: bool | None
    queries_used: int = 0
    alpha: int | None = None
    x: int | None = None
    y: int | None = None
    initial_fitness: float | None = None
    final_fitness: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class LockReport:
    results: list[ImageLockResult] = field(default_factory=list)

    @property
    def failures(self) -> list[ImageLockResult]:
        return [r for r in self.results if r.error is not None]

    @property
    def attack_success_count(self) -> int:
        return sum(1 for r in self.results if r.success)


def _tolerant_inverse(
    locked_region: np.ndarray, logo_rgb: np.ndarray, a: np.ndarray
) -> np.ndarray:
    """Inverse blend on footprint arrays; pixels with a = 255 pass through
    (their residual carries the whole original value)."""
    w = a.astype(np.float64)[:, :, None] / 255.0
    singular = a >= 255
    w_safe = np.where(singular[:, :, None], 0.0, w)
    recon = np.floor((locked_region - w_safe * logo_rgb) / (1.0 - w_safe) + 0.5)
    recon = np.clip(recon, 0, 255)
    return np.where(singular[:, :, None], locked_region, recon).astype(np.uint8)


def _wrap_residuals(original_region: np.ndarray, recon: np.ndarray) -> np.ndarray:
    diff = original_region.astype(np.int16) - recon.astype(np.int16)
    return (((diff + 128) % 256) - 128).astype(np.int8)


def _apply_residuals(recon: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    return ((recon.astype(np.int16) + residuals.astype(np.int16)) % 256).astype(np.uint8)


def lock_dataset(
    dataset: LabeledDataset,
    logo: WatermarkLogo,
    oracle: Oracle,
    mode: ConstraintMode,
    cfg: EsConfig,
    mask_cfg: MaskConfig,
    out_dir: str | Path,
    masks_dir: str | Path | None = None,
    scale_factor: float = 4.0,
    exact: bool = True,
    store_alpha_map: bool = False,
    workers: int = 1,
) -> tuple[KeyFile, LockReport]:
    """Attack and watermark every image, writing locked PNGs and the key.

    Each image gets its own RNG stream derived from the run seed and the
    image id, so reruns with the same seed reproduce the key exactly (worker
    count and order do not matter) while a different seed yields different
    watermark parameters. Per-image failures are recorded in the report and
    the run continues.
    """
    if mode is not ConstraintMode.WAP and masks_dir is None:
        raise ConfigurationError(f"mode {mode.value} requires a mask directory")
    out_dir = Path(out_dir)
    samples = sorted(dataset.samples, key=lambda s: s[0])

    attack_cfg = cfg
    if not exact and cfg.alpha_max > 254:
        if cfg.alpha_min > 254:
            raise ConfigurationError("alpha_min > 254 is incompatible with non-exact unlock")
        attack_cfg = replace(cfg, alpha_max=254)

    # All images must share one size so the key can store a single scaled logo.
    host_dims: tuple[int, int] | None = None
    scaled: WatermarkLogo | None = None
    for image_id, _ in samples:
        try:
            first = load_png(dataset.root / image_id)
        except LockmarkError:
            continue
        host_dims = (first.width, first.height)
        scaled = scale_logo(logo, first.width, first.height, scale_factor)
        break

    def lock_one(sample: tuple[str, int]) -> tuple[KeyEntry | None, ImageLockResult]:
        image_id, label = sample
        result = ImageLockResult(image_id=image_id, success=None)
        try:
            original = load_png(dataset.root / image_id)
            if (original.width, original.height) != host_dims:
                raise ConfigurationError(
                    f"{image_id} is {original.width}x{original.height}; "
                    f"all images in a locked dataset must share {host_dims[0]}x{host_dims[1]}"
                )
            mask = _load_mask_for(masks_dir, image_id) if mode is not ConstraintMode.WAP else None
            region = build_constraint(
                mask, mode, mask_cfg,
                original.width, original.height,
                scaled.image.width, scaled.image.height,
            )
            per_image_cfg = replace(attack_cfg, seed=derive_image_seed(attack_cfg.seed, image_id))
            attack: AttackResult = attack_image(original, label, scaled, oracle, region, per_image_cfg)

            best = attack.best
            placement = Placement(
                alpha=best.alpha, x=best.x, y=best.y,
                scaled_w=scaled.image.width, scaled_h=scaled.image.height,
            )
            locked = blend(original, scaled, placement)
            locked_path = out_dir / image_id
            save_png(locked, locked_path)

            entry = _build_entry(
                image_id, locked_path, original, locked, scaled, placement,
                exact=exact, store_alpha_map=store_alpha_map,
            )
            result.success = attack.success
            result.queries_used = attack.queries_used
            result.alpha, result.x, result.y = best.alpha, best.x, best.y
            result.initial_fitness = attack.initial_fitness
            result.final_fitness = attack.final_fitness
            return entry, result
        except LockmarkError as exc:
            result.error = str(exc)
            return None, result

    if workers > 1 and len(samples) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(lock_one, samples))
    else:
        pairs = [lock_one(s) for s in samples]

    report = LockReport(results=[r for _, r in pairs])
    entries = tuple(e for e, _ in pairs if e is not None)

    if scaled is None:  # empty dataset still yields a well-formed key
        scaled = scale_logo(logo, logo.image.width, logo.image.height, scale_factor)
    key = KeyFile(
        logo_id=logo.logo_id,
        logo_hash=logo.content_hash,
        logo_scaled_w=scaled.image.width,
        logo_scaled_h=scaled.image.height,
        scale_factor=scale_factor,
        entries=entries,
    )
    return key, report


def _load_mask_for(masks_dir: str | Path | None, image_id: str) -> BinaryMask:
    if masks_dir is None:
        raise ConfigurationError("mask directory missing")
    path = Path(masks_dir) / image_id
    if not path.exists():
        raise ConfigurationError(f"no mask for {image_id} under {masks_dir}")
    return load_mask_png(path)


def _build_entry(
    image_id: str,
    locked_path: Path,
    original: RgbaImage,
    locked: RgbaImage,
    scaled: WatermarkLogo,
    placement: Placement,
    exact: bool,
    store_alpha_map: bool,
) -> KeyEntry:
    residuals = None
    if exact:
        x, y, mw, mh = placement.x, placement.y, placement.scaled_w, placement.scaled_h
        a = effective_alpha(placement.alpha, scaled)
        locked_region = locked.array[y : y + mh, x : x + mw, :3].astype(np.float64)
        logo_rgb = scaled.image.array[:, :, :3].astype(np.float64)
        recon = _tolerant_inverse(locked_region, logo_rgb, a)
        original_region = original.array[y : y + mh, x : x + mw, :3]
        residuals = _wrap_residuals(original_region, recon).tobytes()
    alpha_map = effective_alpha(placement.alpha, scaled).tobytes() if store_alpha_map else None
    return KeyEntry(
        image_id=image_id,
        locked_hash=sha256_file(locked_path),
        alpha=placement.alpha,
        x=placement.x,
        y=placement.y,
        alpha_map=alpha_map,
        residuals=residuals,
    )


# ---------------------------------------------------------------------------
# Unlocking and verification
# ---------------------------------------------------------------------------


@dataclass
class UnlockEntryResult:
    image_id: str
    exact: bool
    max_error_bound: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class UnlockReport:
    results: list[UnlockEntryResult] = field(default_factory=list)


def unlock_dataset(
    locked_dir: str | Path,
    key: KeyFile,
    logo: WatermarkLogo,
    out_dir: str | Path,
) -> UnlockReport:
    """Reverse the watermark for every key entry.

    The logo hash gates the whole operation; each entry's locked-file digest
    must match before any pixels are touched. Entries carrying residuals are
    restored byte-exactly, others to within the documented rounding bound.
    """
    if logo.content_hash != key.logo_hash:
        raise AuthorizationError(
            f"logo {logo.logo_id!r} does not match the key (hash {key.logo_hash[:12]}...)"
        )
    locked_dir = Path(locked_dir)
    out_dir = Path(out_dir)
    report = UnlockReport()

    scaled: WatermarkLogo | None = None
    for entry in sorted(key.entries, key=lambda e: e.image_id):
        path = locked_dir / entry.image_id
        if not path.exists():
            raise AuthorizationError(f"locked file missing for entry {entry.image_id!r}")
        if sha256_file(path) != entry.locked_hash:
            raise AuthorizationError(f"locked file hash mismatch for entry {entry.image_id!r}")
        locked = load_png(path)
        if scaled is None:
            scaled = scale_logo(logo, locked.width, locked.height, key.scale_factor)
            if (scaled.image.width, scaled.image.height) != (key.logo_scaled_w, key.logo_scaled_h):
                raise AuthorizationError(
                    f"rescaled logo is {scaled.image.width}x{scaled.image.height} but the key "
                    f"says {key.logo_scaled_w}x{key.logo_scaled_h}"
                )
        restored, exact, bound = _restore_entry(locked, scaled, entry)
        save_png(restored, out_dir / entry.image_id)
        report.results.append(
            UnlockEntryResult(image_id=entry.image_id, exact=exact, max_error_bound=bound)
        )
    return report


def _restore_entry(
    locked: RgbaImage, scaled: WatermarkLogo, entry: KeyEntry
) -> tuple[RgbaImage, bool, int]:
    mw, mh = scaled.image.width, scaled.image.height
    placement = Placement(alpha=entry.alpha, x=entry.x, y=entry.y, scaled_w=mw, scaled_h=mh)
    placement.check_fits(locked.width, locked.height)

    if entry.alpha_map is not None:
        a = np.frombuffer(entry.alpha_map, dtype=np.uint8)
        if a.size != mw * mh:
            raise AuthorizationError(f"alpha map for {entry.image_id!r} has wrong length")
        a = a.reshape(mh, mw)
    else:
        a = effective_alpha(entry.alpha, scaled)

    if entry.residuals is not None:
        residuals = np.frombuffer(entry.residuals, dtype=np.int8)
        if residuals.size != mw * mh * 3:
            raise AuthorizationError(f"residual block for {entry.image_id!r} has wrong length")
        residuals = residuals.reshape(mh, mw, 3)
        out = locked.array.copy()
        x, y = entry.x, entry.y
        locked_region = out[y : y + mh, x : x + mw, :3].astype(np.float64)
        logo_rgb = scaled.image.array[:, :, :3].astype(np.float64)
        recon = _tolerant_inverse(locked_region, logo_rgb, a)
        out[y : y + mh, x : x + mw, :3] = _apply_residuals(recon, residuals)
        return RgbaImage(out), True, 0

    restored = unblend(locked, scaled, placement)
    bound = reconstruction_error_bound(int(a.max())) if a.size else 0
    return restored, False, bound


@dataclass
class EntryVerification:
    image_id: str
    status: str  # "ok" | "missing" | "hash-mismatch"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class VerificationReport:
    entries: list[EntryVerification]
    logo_ok: bool | None  # None when no logo was supplied
    key_integrity_ok: bool

    @property
    def all_ok(self) -> bool:
        return (
            self.key_integrity_ok
            and (self.logo_ok is not False)
            and all(e.ok for e in self.entries)
        )


def verify_key(
    key: KeyFile,
    locked_dir: str | Path,
    logo: WatermarkLogo | None = None,
) -> VerificationReport:
    """Integrity-check a key against a locked directory without touching files."""
    locked_dir = Path(locked_dir)
    entries = []
    for entry in sorted(key.entries, key=lambda e: e.image_id):
        path = locked_dir / entry.image_id
        if not path.exists():
            status = "missing"
        elif sha256_file(path) != entry.locked_hash:
            status = "hash-mismatch"
        else:
            status = "ok"
        entries.append(EntryVerification(image_id=entry.image_id, status=status))
    logo_ok = None if logo is None else (logo.content_hash == key.logo_hash)
    return VerificationReport(entries=entries, logo_ok=logo_ok, key_integrity_ok=True)
