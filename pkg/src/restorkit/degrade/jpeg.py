"""Self-contained JPEG-style compression round trip.

8x8 block DCT on YCbCr with the standard luminance/chrominance quantization
tables scaled by the usual quality-factor rule. No entropy coding: only the
lossy quantize/dequantize path matters for degradation synthesis, and doing
it in-process keeps the artifact bit-reproducible and codec-independent.
"""

import numpy as np
from scipy.fft import dctn, idctn

# Baseline quantization tables (luminance / chrominance), row-major 8x8.
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def quality_scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    """Scale a base table by the classic libjpeg quality rule."""
    q = int(quality)
    if q < 1 or q > 100:
        raise ValueError(f"jpeg quality must be in [1, 100], got {quality}")
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    table = np.floor((base * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def rgb_to_ycbcr(rgb255: np.ndarray) -> np.ndarray:
    r, g, b = rgb255[..., 0], rgb255[..., 1], rgb255[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128.0, ycc[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _blockwise_quantize(channel: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    padded = np.pad(channel, ((0, pad_h), (0, pad_w)), mode="edge")
    ph, pw = padded.shape
    blocks = padded.reshape(ph // 8, 8, pw // 8, 8)
    tiled = table.reshape(1, 8, 1, 8)
    coef = dctn(blocks, axes=(1, 3), norm="ortho")
    coef = np.round(coef / tiled) * tiled
    rec = idctn(coef, axes=(1, 3), norm="ortho")
    return rec.reshape(ph, pw)[:h, :w]


def jpeg_roundtrip(img: np.ndarray, quality: int) -> np.ndarray:
    """Compress/decompress a float [0,1] RGB image at the given quality."""
    rgb255 = np.asarray(img, dtype=np.float64) * 255.0
    ycc = rgb_to_ycbcr(rgb255) - 128.0
    qy = quality_scaled_table(LUMA_TABLE, quality)
    qc = quality_scaled_table(CHROMA_TABLE, quality)
    out = np.empty_like(ycc)
    out[..., 0] = _blockwise_quantize(ycc[..., 0], qy)
    out[..., 1] = _blockwise_quantize(ycc[..., 1], qc)
    out[..., 2] = _blockwise_quantize(ycc[..., 2], qc)
    rgb = ycbcr_to_rgb(out + 128.0) / 255.0
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)
