"""Degradation operator bank.

Eight parametric image corruptions, each driven by an explicit seed so a
(clean image, spec, seed) triple always produces the same corrupted output.
All operators take and return float32 RGB images in [0, 1].
"""

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import ndimage

from ..errors import DegradationError
from ..imageio import validate_image
from .jpeg import jpeg_roundtrip

KINDS = (
    "noise",
    "low_light",
    "haze",
    "rain",
    "raindrop",
    "snow",
    "blur",
    "jpeg",
)

# Per parameter: (valid_lo, valid_hi, sample_lo, sample_hi, integer).
# The valid range is what apply_degradation accepts; the sample range is the
# narrower band the dataset builder draws from by default.
PARAM_RANGES: dict[str, dict[str, tuple[float, float, float, float, bool]]] = {
    "noise": {
        "sigma": (0.0, 100.0 / 255.0, 0.12, 0.28, False),
    },
    "low_light": {
        "gamma": (2.0, 4.0, 2.0, 4.0, False),
        "scale": (0.1, 0.4, 0.1, 0.4, False),
        "noise_sigma": (0.0, 0.08, 0.005, 0.03, False),
    },
    "haze": {
        "beta": (0.05, 3.0, 0.4, 1.2, False),
        "airlight": (0.0, 1.0, 0.7, 1.0, False),
    },
    "rain": {
        "angle_deg": (-30.0, 30.0, -25.0, 25.0, False),
        "length": (2.0, 64.0, 6.0, 14.0, False),
        "density": (0.0001, 0.02, 0.002, 0.006, False),
        "strength": (0.05, 1.0, 0.25, 0.6, False),
    },
    "raindrop": {
        "num_drops": (1, 64, 6, 14, True),
        "radius_frac": (0.02, 0.25, 0.08, 0.16, False),
        "blur_sigma": (0.5, 5.0, 1.5, 3.0, False),
        "magnify": (1.0, 2.0, 1.2, 1.6, False),
    },
    "snow": {
        "num_flakes": (1, 2000, 40, 120, True),
        "radius": (0.5, 6.0, 1.0, 2.5, False),
        "brightness": (0.1, 1.0, 0.5, 0.9, False),
    },
    "blur": {
        "kernel_sigma": (0.0, 8.0, 1.2, 2.4, False),
        "motion_length": (0.0, 32.0, 0.0, 0.0, False),
        "motion_angle": (-90.0, 90.0, -90.0, 90.0, False),
    },
    "jpeg": {
        "quality": (1, 100, 8, 12, True),
    },
}

# Used when a spec omits a parameter.
DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "noise": {"sigma": 50.0 / 255.0},
    "low_light": {"gamma": 3.0, "scale": 0.25, "noise_sigma": 0.01},
    "haze": {"beta": 0.8, "airlight": 0.85},
    "rain": {"angle_deg": 15.0, "length": 10.0, "density": 0.004, "strength": 0.4},
    "raindrop": {"num_drops": 5, "radius_frac": 0.09, "blur_sigma": 1.8, "magnify": 1.3},
    "snow": {"num_flakes": 80, "radius": 1.6, "brightness": 0.7},
    "blur": {"kernel_sigma": 1.8, "motion_length": 0.0, "motion_angle": 0.0},
    "jpeg": {"quality": 10},
}


def derive_seed(seed: int, index: int) -> int:
    """Stable child seed for slot `index` under a base seed.

    Spawns through SeedSequence so neighbouring indices give statistically
    independent streams; the mapping itself is deterministic and versioned
    by numpy's seed-hashing algorithm.
    """
    if seed < 0 or index < 0:
        raise DegradationError(f"seed and index must be non-negative, got ({seed}, {index})")
    ss = np.random.SeedSequence([int(seed), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class DegradationSpec:
    """One corruption: a kind, its parameters, and a per-slot seed offset."""

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    seed_offset: int = 0

    def validated(self) -> "DegradationSpec":
        """Return a copy with defaults filled in, or raise DegradationError."""
        if self.kind not in KINDS:
            raise DegradationError(
                f"unknown degradation kind {self.kind!r}; expected one of {sorted(KINDS)}"
            )
        if not isinstance(self.seed_offset, (int, np.integer)) or self.seed_offset < 0:
            raise DegradationError(
                f"seed_offset must be a non-negative integer, got {self.seed_offset!r}"
            )
        ranges = PARAM_RANGES[self.kind]
        merged = dict(DEFAULT_PARAMS[self.kind])
        for name, value in self.params.items():
            if name not in ranges:
                raise DegradationError(
                    f"unknown parameter {name!r} for kind {self.kind!r}; "
                    f"expected one of {sorted(ranges)}"
                )
            lo, hi, _, _, integer = ranges[name]
            if not np.isfinite(value):
                raise DegradationError(f"parameter {name!r} of {self.kind!r} must be finite")
            if integer and float(value) != int(value):
                raise DegradationError(
                    f"parameter {name!r} of {self.kind!r} must be an integer, got {value!r}"
                )
            if value < lo or value > hi:
                raise DegradationError(
                    f"parameter {name!r} of {self.kind!r} out of range: "
                    f"{value!r} not in [{lo}, {hi}]"
                )
            merged[name] = int(value) if integer else float(value)
        return DegradationSpec(self.kind, merged, int(self.seed_offset))

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed_offset": self.seed_offset}

    @staticmethod
    def from_json(obj: Mapping) -> "DegradationSpec":
        if not isinstance(obj, Mapping) or "kind" not in obj:
            raise DegradationError(f"degradation entry must be a mapping with a 'kind': {obj!r}")
        return DegradationSpec(
            kind=obj["kind"],
            params=dict(obj.get("params", {})),
            seed_offset=int(obj.get("seed_offset", 0)),
        ).validated()


def _rng_for(seed: int, offset: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(offset)])))


def _finish(out: np.ndarray) -> np.ndarray:
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _apply_noise(img, p, rng):
    out = img.astype(np.float64) + rng.normal(0.0, p["sigma"], size=img.shape)
    return _finish(out)


def _apply_low_light(img, p, rng):
    dark = np.power(img.astype(np.float64), p["gamma"]) * p["scale"]
    dark = dark + rng.normal(0.0, p["noise_sigma"], size=img.shape)
    return _finish(dark)


def haze_synthesize(img: np.ndarray, beta: float, airlight: float) -> np.ndarray:
    """Scattering model I = J*t + A*(1-t) with uniform transmission t=exp(-beta).

    A convex combination of in-range terms, so no clipping is needed and the
    map is exactly invertible (see haze_invert).
    """
    t = np.exp(-float(beta))
    return img * t + float(airlight) * (1.0 - t)


def haze_invert(hazy: np.ndarray, beta: float, airlight: float) -> np.ndarray:
    t = np.exp(-float(beta))
    return (hazy - float(airlight) * (1.0 - t)) / t


def _apply_haze(img, p, rng):
    return _finish(haze_synthesize(img.astype(np.float64), p["beta"], p["airlight"]))


def _line_kernel(length: float, angle_deg: float) -> np.ndarray:
    """Rasterize a unit-mass line segment; angle measured from vertical."""
    half = max(length, 1.0) / 2.0
    size = int(np.ceil(half)) * 2 + 1
    kernel = np.zeros((size, size), dtype=np.float64)
    theta = np.deg2rad(angle_deg)
    dy, dx = np.cos(theta), np.sin(theta)
    c = size // 2
    for s in np.arange(-half, half + 1e-9, 0.5):
        y, x = c + s * dy, c + s * dx
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for oy, wy in ((0, 1 - fy), (1, fy)):
            for ox, wx in ((0, 1 - fx), (1, fx)):
                yy, xx = y0 + oy, x0 + ox
                if 0 <= yy < size and 0 <= xx < size:
                    kernel[yy, xx] += wy * wx
    return kernel / kernel.sum()


def _apply_rain(img, p, rng):
    h, w = img.shape[:2]
    seeds = (rng.random((h, w)) < p["density"]).astype(np.float64)
    kernel = _line_kernel(p["length"], p["angle_deg"]) * p["length"]
    streaks = ndimage.convolve(seeds, kernel, mode="constant", cval=0.0)
    streaks = ndimage.gaussian_filter(streaks, sigma=0.5)
    layer = np.clip(streaks * p["strength"], 0.0, 1.0)
    return _finish(img.astype(np.float64) + layer[..., None])


def _apply_snow(img, p, rng):
    h, w = img.shape[:2]
    canvas = np.zeros((h, w), dtype=np.float64)
    n = int(p["num_flakes"])
    # One joint draw keeps the stream layout independent of loop order.
    centers = rng.random((n, 2)) * [h, w]
    radii = rng.uniform(0.6 * p["radius"], 1.4 * p["radius"], size=n)
    for (cy, cx), r in zip(centers, radii):
        rad = int(np.ceil(3.0 * r))
        y0, y1 = max(0, int(cy) - rad), min(h, int(cy) + rad + 1)
        x0, x1 = max(0, int(cx) - rad), min(w, int(cx) + rad + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        canvas[y0:y1, x0:x1] += np.exp(-d2 / (2.0 * (r / 1.5) ** 2))
    layer = np.clip(canvas * p["brightness"], 0.0, 1.0)
    return _finish(img.astype(np.float64) + layer[..., None])


def _apply_raindrop(img, p, rng):
    h, w = img.shape[:2]
    base = img.astype(np.float64)
    blurred = np.stack(
        [ndimage.gaussian_filter(base[..., c], p["blur_sigma"], mode="reflect") for c in range(3)],
        axis=-1,
    )
    out = base.copy()
    n = int(p["num_drops"])
    centers = rng.random((n, 2)) * [h, w]
    radii = rng.uniform(0.7, 1.3, size=n) * p["radius_frac"] * min(h, w)
    for (cy, cx), r in zip(centers, radii):
        rad = int(np.ceil(r)) + 1
        y0, y1 = max(0, int(cy) - rad), min(h, int(cy) + rad + 1)
        x0, x1 = max(0, int(cx) - rad), min(w, int(cx) + rad + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        alpha = np.clip((r - d) / (0.15 * r + 1e-9), 0.0, 1.0)
        # Content inside the drop is the blurred scene, pulled toward the
        # drop centre so it reads as refracted magnification.
        sy = cy + (yy - cy) / p["magnify"]
        sx = cx + (xx - cx) / p["magnify"]
        coords = np.stack([sy.ravel(), sx.ravel()])
        for c in range(3):
            sampled = ndimage.map_coordinates(
                blurred[..., c], coords, order=1, mode="reflect"
            ).reshape(alpha.shape)
            out[y0:y1, x0:x1, c] = out[y0:y1, x0:x1, c] * (1 - alpha) + sampled * alpha
    return _finish(out)


def _gaussian_kernel_1d(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _apply_blur(img, p, rng):
    sigma = p["kernel_sigma"]
    mlen = p["motion_length"]
    if sigma == 0.0 and mlen < 1.0:
        # Exact identity by contract: no filtering call at all.
        return img.copy()
    out = img.astype(np.float64)
    if sigma > 0.0:
        k = _gaussian_kernel_1d(sigma)
        for c in range(3):
            out[..., c] = ndimage.convolve1d(out[..., c], k, axis=0, mode="reflect")
            out[..., c] = ndimage.convolve1d(out[..., c], k, axis=1, mode="reflect")
    if mlen >= 1.0:
        kernel = _line_kernel(mlen, p["motion_angle"])
        for c in range(3):
            out[..., c] = ndimage.convolve(out[..., c], kernel, mode="reflect")
    return _finish(out)


def _apply_jpeg(img, p, rng):
    return jpeg_roundtrip(img, int(p["quality"]))


_APPLIERS = {
    "noise": _apply_noise,
    "low_light": _apply_low_light,
    "haze": _apply_haze,
    "rain": _apply_rain,
    "raindrop": _apply_raindrop,
    "snow": _apply_snow,
    "blur": _apply_blur,
    "jpeg": _apply_jpeg,
}


def apply_degradation(img: np.ndarray, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Apply one validated degradation with its own random stream."""
    validate_image(img, name="clean image")
    spec = spec.validated()
    rng = _rng_for(seed, spec.seed_offset)
    out = _APPLIERS[spec.kind](img, spec.params, rng)
    validate_image(out, name=f"degraded image ({spec.kind})")
    return out


def compose_mixture(
    img: np.ndarray,
    specs: list[DegradationSpec],
    seed: int,
    start_index: int = 0,
) -> np.ndarray:
    """Apply specs in order; slot i uses the child seed derive_seed(seed, start_index+i).

    Composing [a] then [b] with start indices 0 and 1 is bit-identical to
    composing [a, b] in one call, so pipelines can be split and resumed.
    """
    if not specs:
        raise DegradationError("compose_mixture needs at least one degradation spec")
    out = img
    for i, spec in enumerate(specs):
        out = apply_degradation(out, spec, derive_seed(seed, start_index + i))
    return out


def sample_spec(
    kind: str,
    rng: np.random.Generator,
    overrides: Mapping[str, object] | None = None,
    seed_offset: int = 0,
) -> DegradationSpec:
    """Draw parameters uniformly from each sampling band.

    `overrides` maps a parameter name to either a fixed value or a (lo, hi)
    closed range to draw from instead of the default band.
    """
    if kind not in KINDS:
        raise DegradationError(
            f"unknown degradation kind {kind!r}; expected one of {sorted(KINDS)}"
        )
    params: dict[str, float] = {}
    overrides = dict(overrides or {})
    for name, (lo, hi, slo, shi, integer) in PARAM_RANGES[kind].items():
        if name in overrides:
            ov = overrides.pop(name)
            if isinstance(ov, (tuple, list)):
                if len(ov) != 2:
                    raise DegradationError(
                        f"override range for {name!r} must be (lo, hi), got {ov!r}"
                    )
                slo, shi = float(ov[0]), float(ov[1])
            else:
                params[name] = ov
                continue
        if integer:
            params[name] = int(rng.integers(int(slo), int(shi) + 1))
        else:
            params[name] = float(rng.uniform(slo, shi))
    if overrides:
        raise DegradationError(
            f"unknown parameter overrides for kind {kind!r}: {sorted(overrides)}"
        )
    return DegradationSpec(kind, params, seed_offset).validated()
