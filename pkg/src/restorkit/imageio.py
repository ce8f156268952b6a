"""Image loading, saving, and validation.

The pixel currency everywhere in the package is a float32 numpy array of
shape (H, W, 3) with sRGB values in [0, 1]. Files on disk are 8-bit PNG.
"""

import numpy as np
from PIL import Image

from .errors import ImageError

MIN_SIDE = 16


def validate_image(img, min_side: int = MIN_SIDE, name: str = "image") -> np.ndarray:
    """Check the (H, W, 3) float-in-[0,1] contract and return the array."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"{name}: expected shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise ImageError(
            f"{name}: sides must be >= {min_side}, got {arr.shape[0]}x{arr.shape[1]}"
        )
    if not np.issubdtype(arr.dtype, np.floating):
        raise ImageError(f"{name}: expected floating dtype, got {arr.dtype}")
    if not np.isfinite(arr).all():
        raise ImageError(f"{name}: contains NaN or Inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ImageError(
            f"{name}: values outside [0, 1] (min={arr.min():.4g}, max={arr.max():.4g})"
        )
    return arr


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32) / 255.0).clip(0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(img) * 255.0).clip(0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Decode a file to the float32 (H, W, 3) in-[0,1] representation."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb)
    except (OSError, ValueError) as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    return from_uint8(arr)


def save_image(img: np.ndarray, path) -> None:
    """Write an image as 8-bit sRGB PNG. Deterministic for identical pixels."""
    validate_image(img)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")


def resize_image(img: np.ndarray, side: int) -> np.ndarray:
    """Center-crop to square then bilinear-resize to side x side."""
    arr = validate_image(img)
    h, w, _ = arr.shape
    if h == side and w == side:
        return arr.astype(np.float32)
    s = min(h, w)
    top = (h - s) // 2
    left = (w - s) // 2
    crop = arr[top : top + s, left : left + s]
    pil = Image.fromarray(to_uint8(crop), mode="RGB")
    out = pil.resize((side, side), Image.BILINEAR)
    return from_uint8(np.asarray(out))


def resize_to(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize to an explicit (height, width), no cropping."""
    arr = validate_image(img)
    if arr.shape[0] == height and arr.shape[1] == width:
        return arr.astype(np.float32)
    pil = Image.fromarray(to_uint8(arr), mode="RGB")
    out = pil.resize((width, height), Image.BILINEAR)
    return from_uint8(np.asarray(out))
