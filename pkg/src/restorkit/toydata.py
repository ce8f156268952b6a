"""Procedural clean-image corpus for desk-scale experiments.

Generates small sRGB scenes (gradient backgrounds, geometric shapes, stripe
bands) whose statistics are compressible enough for a tiny autoencoder but
carry enough edges that blur and noise are genuinely destructive.
"""

import os

import numpy as np

from .imageio import save_image


def _grid(side):
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float32)
    return ys / (side - 1), xs / (side - 1)


def _gradient_background(rng, side):
    ys, xs = _grid(side)
    theta = rng.uniform(0.0, 2 * np.pi)
    ramp = xs * np.cos(theta) + ys * np.sin(theta)
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-6)
    c0 = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
    c1 = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
    return ramp[..., None] * c1 + (1.0 - ramp[..., None]) * c0


def _add_disk(rng, img, side):
    ys, xs = _grid(side)
    cy, cx = rng.uniform(0.15, 0.85, size=2)
    r = rng.uniform(0.08, 0.28)
    soft = rng.uniform(0.01, 0.05)
    d = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
    alpha = np.clip((r - d) / soft, 0.0, 1.0)[..., None]
    color = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
    return img * (1 - alpha) + alpha * color


def _add_rect(rng, img, side):
    ys, xs = _grid(side)
    y0, x0 = rng.uniform(0.05, 0.6, size=2)
    h = rng.uniform(0.15, 0.35)
    w = rng.uniform(0.15, 0.35)
    mask = ((ys >= y0) & (ys <= y0 + h) & (xs >= x0) & (xs <= x0 + w))[..., None]
    color = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
    return np.where(mask, 0.25 * img + 0.75 * color, img)


def _add_stripes(rng, img, side):
    ys, xs = _grid(side)
    theta = rng.uniform(0.0, np.pi)
    freq = rng.uniform(3.0, 8.0)
    phase = rng.uniform(0.0, 2 * np.pi)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (xs * np.cos(theta) + ys * np.sin(theta)) + phase)
    band = (wave > 0.75).astype(np.float32)[..., None]
    color = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
    strength = rng.uniform(0.4, 0.9)
    return img * (1 - strength * band) + strength * band * color


def make_image(rng: np.random.Generator, side: int) -> np.ndarray:
    """Render one procedural scene as float32 (side, side, 3) in [0, 1]."""
    img = _gradient_background(rng, side)
    painters = [_add_disk, _add_rect, _add_stripes]
    for _ in range(rng.integers(2, 5)):
        img = painters[rng.integers(0, len(painters))](rng, img, side)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_clean_images(out_dir, count: int, side: int = 64, seed: int = 0) -> list:
    """Write `count` procedural PNGs into out_dir; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    paths = []
    for i in range(count):
        img = make_image(rng, side)
        path = os.path.join(out_dir, f"clean_{i:05d}.png")
        save_image(img, path)
        paths.append(path)
    return paths
