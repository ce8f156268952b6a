"""Restoration quality metrics and report rendering.

All image metrics take float arrays in [0, 1] and are pure functions of
their inputs, so repeated evaluation of the same artifacts yields
byte-identical reports.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.ndimage import gaussian_filter

from .errors import ShapeError, ValidationError
from .imageio import to_uint8

PSNR_CAP = 99.0
_SSIM_SIGMA = 1.5
_SSIM_TRUNCATE = 3.5   # 2 * int(3.5 * 1.5 + 0.5) + 1 = 11-tap window
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs must match, got {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("metric inputs must be non-empty")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for unit-range images, capped at 99 dB.

    The cap keeps near-identical pairs (MSE below 1e-10) finite and
    comparable instead of overflowing to inf.
    """
    err = mse(a, b)
    if err < 1e-10:
        return PSNR_CAP
    return min(float(10.0 * np.log10(1.0 / err)), PSNR_CAP)


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    # Gaussian-weighted local statistics, population covariance, as in the
    # standard Wang et al. formulation.
    kw = {"sigma": _SSIM_SIGMA, "truncate": _SSIM_TRUNCATE, "mode": "reflect"}
    ux = gaussian_filter(a, **kw)
    uy = gaussian_filter(b, **kw)
    uxx = gaussian_filter(a * a, **kw)
    uyy = gaussian_filter(b * b, **kw)
    uxy = gaussian_filter(a * b, **kw)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy

    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux**2 + uy**2 + c1) * (vx + vy + c2))

    radius = int(_SSIM_TRUNCATE * _SSIM_SIGMA + 0.5)
    if min(a.shape) <= 2 * radius:
        raise ShapeError(
            f"image sides must exceed the {2 * radius + 1}-tap SSIM window, got {a.shape}"
        )
    return float(s[radius:-radius, radius:-radius].mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity with an 11-tap gaussian window (unit range)."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        return _ssim_single(a, b)
    if a.ndim == 3:
        return float(np.mean([_ssim_single(a[..., c], b[..., c]) for c in range(a.shape[-1])]))
    raise ShapeError(f"ssim expects HxW or HxWxC arrays, got shape {a.shape}")


def gaussian_stats(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ShapeError(f"feature set must be (N>=2, D), got {feats.shape}")
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    cov = np.atleast_2d(cov)
    return mu, cov


def _frechet(mu1, cov1, mu2, cov2, eps: float) -> float:
    d = mu1.shape[0]
    cov1 = cov1 + eps * np.eye(d)
    cov2 = cov2 + eps * np.eye(d)
    covmean = linalg.sqrtm(cov1 @ cov2)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu1 - mu2
    val = diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(covmean)
    return float(max(val, 0.0))


def feature_distance(feats_a: np.ndarray, feats_b: np.ndarray, eps: float = 1e-6) -> float:
    """Frechet distance between gaussian fits of two feature sets.

    Covariances get an eps ridge before the matrix square root, and the
    two argument orders are averaged so the result is exactly symmetric
    despite sqrtm round-off.
    """
    mu1, cov1 = gaussian_stats(feats_a)
    mu2, cov2 = gaussian_stats(feats_b)
    if mu1.shape != mu2.shape:
        raise ShapeError(f"feature widths must match, got {mu1.shape} vs {mu2.shape}")
    return 0.5 * (_frechet(mu1, cov1, mu2, cov2, eps) + _frechet(mu2, cov2, mu1, cov1, eps))


def embedding_separability(embeddings: np.ndarray, labels) -> float:
    """Silhouette score of embeddings grouped by degradation kind."""
    from sklearn.metrics import silhouette_score

    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if embeddings.ndim != 2:
        raise ShapeError(f"embeddings must be (N, D), got {embeddings.shape}")
    if labels.shape != (embeddings.shape[0],):
        raise ShapeError(
            f"labels must be ({embeddings.shape[0]},), got {labels.shape}"
        )
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise ValidationError("separability needs at least two degradation kinds")
    if counts.min() < 2:
        raise ValidationError("separability needs at least two samples per kind")
    return float(silhouette_score(embeddings, labels, metric="euclidean"))


@dataclass
class MetricReport:
    """Per-image restoration metrics plus per-kind and overall aggregates."""

    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "summary": self.summary}

    @staticmethod
    def from_dict(data: dict) -> "MetricReport":
        if not isinstance(data, dict) or "rows" not in data or "summary" not in data:
            raise ValidationError("report payload must have 'rows' and 'summary'")
        return MetricReport(rows=list(data["rows"]), summary=dict(data["summary"]))


_ROW_FIELDS = ("id", "kind", "psnr_lq", "psnr_restored", "ssim_lq", "ssim_restored")


def evaluate_pairs(ids, kinds, lq, restored, gt) -> MetricReport:
    """Score restored outputs against ground truth, with the degraded input
    as the no-op baseline."""
    n = len(ids)
    if not (len(kinds) == len(lq) == len(restored) == len(gt) == n):
        raise ShapeError("ids, kinds, and image stacks must have equal length")
    if n == 0:
        raise ValidationError("nothing to evaluate")
    rows = []
    for i in range(n):
        rows.append({
            "id": str(ids[i]),
            "kind": str(kinds[i]),
            "psnr_lq": psnr(lq[i], gt[i]),
            "psnr_restored": psnr(restored[i], gt[i]),
            "ssim_lq": ssim(lq[i], gt[i]),
            "ssim_restored": ssim(restored[i], gt[i]),
        })
    summary: dict = {"overall": _aggregate(rows)}
    for kind in sorted({r["kind"] for r in rows}):
        summary[kind] = _aggregate([r for r in rows if r["kind"] == kind])
    return MetricReport(rows=rows, summary=summary)


def _aggregate(rows: list[dict]) -> dict:
    agg = {"count": len(rows)}
    for key in ("psnr_lq", "psnr_restored", "ssim_lq", "ssim_restored"):
        agg[key] = float(np.mean([r[key] for r in rows]))
    agg["psnr_gain"] = agg["psnr_restored"] - agg["psnr_lq"]
    return agg


def write_report_json(report: MetricReport, path: Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def read_report_json(path: Path) -> MetricReport:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"report file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"report file {path} is not valid JSON: {exc}") from exc
    return MetricReport.from_dict(data)


def write_report_csv(report: MetricReport, path: Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_ROW_FIELDS)
    for row in report.rows:
        writer.writerow([
            row["id"], row["kind"],
            f"{row['psnr_lq']:.6f}", f"{row['psnr_restored']:.6f}",
            f"{row['ssim_lq']:.6f}", f"{row['ssim_restored']:.6f}",
        ])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_comparison_grid(lq, restored, gt, path: Path, max_rows: int = 8) -> None:
    """PNG grid, one row per image: degraded | restored | ground truth."""
    from PIL import Image

    n = min(len(lq), max_rows)
    if n == 0:
        raise ValidationError("comparison grid needs at least one image")
    pad = 2
    rows = []
    for i in range(n):
        strip = [to_uint8(np.asarray(x, dtype=np.float32)) for x in (lq[i], restored[i], gt[i])]
        h = strip[0].shape[0]
        spacer = np.full((h, pad, 3), 255, dtype=np.uint8)
        parts = []
        for j, im in enumerate(strip):
            if j:
                parts.append(spacer)
            parts.append(im)
        rows.append(np.concatenate(parts, axis=1))
    w = rows[0].shape[1]
    hspacer = np.full((pad, w, 3), 255, dtype=np.uint8)
    parts = []
    for j, r in enumerate(rows):
        if j:
            parts.append(hspacer)
        parts.append(r)
    grid = np.concatenate(parts, axis=0)
    Image.fromarray(grid).save(Path(path), format="PNG")


def make_report(report: MetricReport, out_dir: Path,
                lq=None, restored=None, gt=None) -> dict:
    """Render report.json + report.csv (+ grid.png when images are given).

    Returns the artifact paths. Output bytes depend only on the inputs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "report.json", "csv": out_dir / "report.csv"}
    write_report_json(report, paths["json"])
    write_report_csv(report, paths["csv"])
    if lq is not None and restored is not None and gt is not None:
        paths["grid"] = out_dir / "grid.png"
        write_comparison_grid(lq, restored, gt, paths["grid"])
    return paths
