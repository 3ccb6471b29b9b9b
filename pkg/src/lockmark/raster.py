"""8-bit RGBA rasters: PNG IO, logo scaling, alpha blending and its inverse.

All pixel arithmetic runs in float64 and is rounded exactly once (half away
from zero), so the inverse blend is well conditioned. Images are immutable
after construction; every operation returns a fresh image.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, GeometryError, ParameterError, SingularInverseError

# PIL modes that are 8 bits per channel and can be promoted to RGBA.
_PROMOTABLE_MODES = {"L", "LA", "RGB", "RGBA", "P", "1"}


def _round_half_up(x: np.ndarray) -> np.ndarray:
    # ties round toward +inf; blend values never tie, inverse-blend values can
    return np.floor(x + 0.5)


@dataclass(frozen=True)
class RgbaImage:
    """Row-major H x W x 4 uint8 raster (R, G, B, A).

    The raw constructor takes ownership of ``array`` and freezes it; use
    :meth:`from_array` to build from a caller-owned array.
    """

    array: np.ndarray

    def __post_init__(self):
        arr = self.array
        if not isinstance(arr, np.ndarray) or arr.ndim != 3 or arr.shape[2] != 4:
            raise ParameterError("RgbaImage requires an (H, W, 4) array")
        if arr.dtype != np.uint8:
            raise ParameterError(f"RgbaImage requires uint8 pixels, got {arr.dtype}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError("image must be at least 1x1")
        arr.flags.writeable = False

    @property
    def width(self) -> int:
        return self.array.shape[1]

    @property
    def height(self) -> int:
        return self.array.shape[0]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RgbaImage":
        """Copy and promote a gray, gray+alpha, or RGB array to RGBA."""
        return cls(_promote_to_rgba(np.asarray(array)))

    def same_pixels(self, other: "RgbaImage") -> bool:
        return self.array.shape == other.array.shape and bool(
            np.array_equal(self.array, other.array)
        )


def _promote_to_rgba(arr: np.ndarray) -> np.ndarray:
    if arr.dtype != np.uint8:
        raise ParameterError(f"expected uint8 pixel data, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ParameterError("pixel array must be 2-d or 3-d")
    h, w, c = arr.shape
    out = np.empty((h, w, 4), dtype=np.uint8)
    if c == 1:
        out[:, :, 0] = out[:, :, 1] = out[:, :, 2] = arr[:, :, 0]
        out[:, :, 3] = 255
    elif c == 2:  # gray + alpha
        out[:, :, 0] = out[:, :, 1] = out[:, :, 2] = arr[:, :, 0]
        out[:, :, 3] = arr[:, :, 1]
    elif c == 3:
        out[:, :, :3] = arr
        out[:, :, 3] = 255
    elif c == 4:
        out[:] = arr
    else:
        raise ParameterError(f"cannot promote {c}-channel data to RGBA")
    return out


@dataclass(frozen=True)
class WatermarkLogo:
    """A logo raster plus the identity of the file it came from.

    ``content_hash`` is the SHA-256 of the original logo file bytes and is
    carried through scaling unchanged, so keys can name the source logo.
    """

    image: RgbaImage
    logo_id: str
    content_hash: str

    @classmethod
    def from_file(cls, path: str | Path) -> "WatermarkLogo":
        path = Path(path)
        data = path.read_bytes()
        return cls(
            image=load_png(path),
            logo_id=path.stem,
            content_hash=hashlib.sha256(data).hexdigest(),
        )

    # blending reuses these per (logo, alpha); memoized because the attack
    # loop evaluates thousands of placements of one logo
    def _rgb_f64(self) -> np.ndarray:
        cached = self.__dict__.get("_rgb_cache")
        if cached is None:
            cached = self.image.array[:, :, :3].astype(np.float64)
            object.__setattr__(self, "_rgb_cache", cached)
        return cached

    def _weights_for(self, alpha: int) -> tuple[np.ndarray, np.ndarray]:
        """(effective alpha uint8 map, float weight map a/255 with channel axis)."""
        cache = self.__dict__.get("_weight_cache")
        if cache is None:
            cache = {}
            object.__setattr__(self, "_weight_cache", cache)
        entry = cache.get(alpha)
        if entry is None:
            a = _round_half_up(alpha * self.image.array[:, :, 3].astype(np.float64) / 255.0)
            entry = (a.astype(np.uint8), a[:, :, None] / 255.0)
            cache[alpha] = entry
        return entry


@dataclass(frozen=True)
class Placement:
    """One watermark instantiation: transparency plus top-left position."""

    alpha: int
    x: int
    y: int
    scaled_w: int
    scaled_h: int

    def __post_init__(self):
        if not 0 <= self.alpha <= 255:
            raise ParameterError(f"alpha {self.alpha} outside [0, 255]")
        if self.scaled_w < 1 or self.scaled_h < 1:
            raise ParameterError("scaled logo dimensions must be >= 1")

    def check_fits(self, host_w: int, host_h: int) -> None:
        if not (0 <= self.x <= host_w - self.scaled_w):
            raise GeometryError(
                f"x={self.x} outside [0, {host_w - self.scaled_w}] for logo width {self.scaled_w}"
            )
        if not (0 <= self.y <= host_h - self.scaled_h):
            raise GeometryError(
                f"y={self.y} outside [0, {host_h - self.scaled_h}] for logo height {self.scaled_h}"
            )


# ---------------------------------------------------------------------------
# PNG codec
# ---------------------------------------------------------------------------


def load_png(path: str | Path) -> RgbaImage:
    """Decode an 8-bit PNG; gray and RGB are promoted to RGBA with alpha 255."""
    try:
        with Image.open(path) as im:
            if im.mode not in _PROMOTABLE_MODES:
                raise DecodeError(f"unsupported PNG mode {im.mode!r} (8-bit only)")
            rgba = im.convert("RGBA")
            arr = np.asarray(rgba, dtype=np.uint8)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return RgbaImage(arr.copy())


def save_png(image: RgbaImage, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image.array), mode="RGBA").save(path, format="PNG")


def encode_png(image: RgbaImage) -> bytes:
    """PNG-encode to bytes (used by the external-oracle wire protocol)."""
    import io

    buf = io.BytesIO()
    Image.fromarray(np.asarray(image.array), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> RgbaImage:
    import io

    return load_png_filelike(io.BytesIO(data))


def load_png_filelike(fp) -> RgbaImage:
    try:
        with Image.open(fp) as im:
            if im.mode not in _PROMOTABLE_MODES:
                raise DecodeError(f"unsupported PNG mode {im.mode!r} (8-bit only)")
            arr = np.asarray(im.convert("RGBA"), dtype=np.uint8)
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode image stream: {exc}") from exc
    return RgbaImage(arr.copy())


# ---------------------------------------------------------------------------
# Resampling and scaling
# ---------------------------------------------------------------------------


def resize_bilinear(array: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of an (H, W, C) uint8 array, centers aligned.

    Source coordinates follow src = (dst + 0.5) * scale - 0.5 so resampling
    to the input size is the identity.
    """
    if out_w < 1 or out_h < 1:
        raise ParameterError("output dimensions must be >= 1")
    h, w = array.shape[:2]
    if (out_w, out_h) == (w, h):
        return array.copy()
    src = array.astype(np.float64)

    def axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        return lo, hi, frac

    x0, x1, fx = axis_coords(out_w, w)
    y0, y1, fy = axis_coords(out_h, h)
    fx = fx[None, :, None]
    fy = fy[:, None, None]

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def scaled_dims(logo_w: int, logo_h: int, host_w: int, host_h: int, sl: float) -> tuple[int, int]:
    """Scaled logo dimensions for a host image and scaling factor ``sl``.

    Both sides share the factor min(host_w / (sl * M), host_h / (sl * N)), so
    the aspect ratio is preserved and the logo occupies roughly 1/sl of the
    tighter host dimension.
    """
    if sl <= 0:
        raise ParameterError(f"scaling factor must be positive, got {sl}")
    if logo_w < 1 or logo_h < 1:
        raise ParameterError("logo must be non-empty")
    factor = min(host_w / (sl * logo_w), host_h / (sl * logo_h))
    new_w = max(1, int(_round_half_up(np.float64(factor * logo_w))))
    new_h = max(1, int(_round_half_up(np.float64(factor * logo_h))))
    return new_w, new_h


def scale_logo(logo: WatermarkLogo, host_w: int, host_h: int, sl: float) -> WatermarkLogo:
    """Resample a logo for a host image, bilinear on all four channels."""
    new_w, new_h = scaled_dims(logo.image.width, logo.image.height, host_w, host_h, sl)
    resized = resize_bilinear(logo.image.array, new_w, new_h)
    return WatermarkLogo(image=RgbaImage(resized), logo_id=logo.logo_id, content_hash=logo.content_hash)


# ---------------------------------------------------------------------------
# Blending
# ---------------------------------------------------------------------------


def effective_alpha(alpha: int, logo: WatermarkLogo) -> np.ndarray:
    """Per-pixel blending weight: the scalar alpha modulated by the logo's own
    alpha channel, so transparent logo backgrounds stay transparent."""
    if not 0 <= alpha <= 255:
        raise ParameterError(f"alpha {alpha} outside [0, 255]")
    return logo._weights_for(alpha)[0]


def blend(original: RgbaImage, logo: WatermarkLogo, placement: Placement) -> RgbaImage:
    """Alpha-blend the logo onto the original at the given placement.

    Only the logo footprint changes; the output alpha channel is the
    original's.
    """
    _check_placement(original, logo, placement)
    x, y, mw, mh = placement.x, placement.y, placement.scaled_w, placement.scaled_h
    out = original.array.copy()
    region = out[y : y + mh, x : x + mw, :3]
    _, w = logo._weights_for(placement.alpha)
    blended = _round_half_up((1.0 - w) * region + w * logo._rgb_f64())
    out[y : y + mh, x : x + mw, :3] = np.clip(blended, 0, 255).astype(np.uint8)
    return RgbaImage(out)


def unblend(locked: RgbaImage, logo: WatermarkLogo, placement: Placement) -> RgbaImage:
    """Invert :func:`blend`: recover the original footprint pixels.

    Exact up to rounding; the per-channel error is bounded by
    ceil(0.5 / (1 - a/255)) where a is the pixel's effective alpha. Raises
    :class:`SingularInverseError` where a = 255 (the blend discarded the
    original there).
    """
    _check_placement(locked, logo, placement)
    x, y, mw, mh = placement.x, placement.y, placement.scaled_w, placement.scaled_h
    a, w = logo._weights_for(placement.alpha)
    if np.any(a >= 255):
        raise SingularInverseError(
            "effective alpha is 255 somewhere in the footprint; the blend is not invertible"
        )
    out = locked.array.copy()
    region = out[y : y + mh, x : x + mw, :3]
    recovered = _round_half_up((region - w * logo._rgb_f64()) / (1.0 - w))
    out[y : y + mh, x : x + mw, :3] = np.clip(recovered, 0, 255).astype(np.uint8)
    return RgbaImage(out)


def reconstruction_error_bound(max_effective_alpha: int) -> int:
    """Worst-case per-channel unblend error for a given maximum effective alpha."""
    if max_effective_alpha >= 255:
        raise SingularInverseError("no finite bound at effective alpha 255")
    return int(np.ceil(0.5 / (1.0 - max_effective_alpha / 255.0)))


def _check_placement(host: RgbaImage, logo: WatermarkLogo, placement: Placement) -> None:
    if (placement.scaled_w, placement.scaled_h) != (logo.image.width, logo.image.height):
        raise GeometryError(
            f"placement says {placement.scaled_w}x{placement.scaled_h} but logo is "
            f"{logo.image.width}x{logo.image.height}"
        )
    placement.check_fits(host.width, host.height)
