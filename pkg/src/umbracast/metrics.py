"""Image- and mask-quality metrics with global/local variants.

RMSE and SSIM operate on 8-bit intensities (channels averaged); BER on
binary masks. "Local" restricts a metric to a region mask: exact pixel
membership for RMSE/BER, window-center membership for SSIM. Dataset-level
reporting aggregates arithmetic means per scene split.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import DimensionMismatchError, EmptyRegionError
from .geometry import BinaryMask, UnitLightDirection

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255.0) ** 2
SSIM_C2 = (0.03 * 255.0) ** 2
BCE_EPS = 1e-7

TAGS = ("BOS", "BOS-free")
METRIC_COLUMNS = ("GRMSE", "LRMSE", "GSSIM", "LSSIM", "GBER", "LBER")


def _as_channels(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr[:, :, None]
    if arr.ndim == 3:
        return arr
    raise DimensionMismatchError(f"expected a 2D or 3D image, got shape {arr.shape}")


def _check_same_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[:2] != b.shape[:2]:
        raise DimensionMismatchError(f"image dims differ: {a.shape[:2]} vs {b.shape[:2]}")


# ---------------------------------------------------------------------------
# Pixel metrics
# ---------------------------------------------------------------------------


def rmse(a: np.ndarray, b: np.ndarray, region: BinaryMask | None = None) -> float:
    """Root mean squared intensity error, averaged over channels."""
    ia, ib = _as_channels(a), _as_channels(b)
    _check_same_dims(ia, ib)
    sq = (ia - ib) ** 2
    if region is not None:
        if region.bits.shape != ia.shape[:2]:
            raise DimensionMismatchError("region dims differ from image dims")
        if not region.bits.any():
            raise EmptyRegionError("rmse region is empty")
        sq = sq[region.bits]
    return math.sqrt(float(sq.mean()))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-window SSIM scores (channels averaged).

    Uses the standard 11x11 Gaussian window (sigma 1.5) and the 8-bit
    stabilizers C1=(0.01*255)^2, C2=(0.03*255)^2. The map covers the
    positions where the full window fits; entry (i, j) scores the window
    centered at pixel (i+5, j+5).
    """
    ia, ib = _as_channels(a), _as_channels(b)
    _check_same_dims(ia, ib)
    h, w = ia.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DimensionMismatchError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)

    maps = []
    for c in range(ia.shape[2]):
        x, y = ia[:, :, c], ib[:, :, c]
        mu_x = fftconvolve(x, kernel, mode="valid")
        mu_y = fftconvolve(y, kernel, mode="valid")
        xx = fftconvolve(x * x, kernel, mode="valid") - mu_x * mu_x
        yy = fftconvolve(y * y, kernel, mode="valid") - mu_y * mu_y
        xy = fftconvolve(x * y, kernel, mode="valid") - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (xx + yy + SSIM_C2)
        maps.append(num / den)
    return np.mean(maps, axis=0)


def ssim(a: np.ndarray, b: np.ndarray, region: BinaryMask | None = None) -> float:
    """Mean SSIM; the local variant averages windows whose centers fall in
    the region."""
    smap = ssim_map(a, b)
    if region is None:
        return float(smap.mean())
    ia = _as_channels(a)
    if region.bits.shape != ia.shape[:2]:
        raise DimensionMismatchError("region dims differ from image dims")
    half = SSIM_WINDOW // 2
    centers = region.bits[half:half + smap.shape[0], half:half + smap.shape[1]]
    if not centers.any():
        raise EmptyRegionError("no SSIM window centers fall inside the region")
    return float(smap[centers].mean())


# ---------------------------------------------------------------------------
# Mask metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_counts(
    pred: BinaryMask, gt: BinaryMask, region: BinaryMask | None = None
) -> ConfusionCounts:
    if pred.bits.shape != gt.bits.shape:
        raise DimensionMismatchError("prediction and ground-truth dims differ")
    p, g = pred.bits, gt.bits
    if region is not None:
        if region.bits.shape != p.shape:
            raise DimensionMismatchError("region dims differ from mask dims")
        if not region.bits.any():
            raise EmptyRegionError("confusion region is empty")
        p, g = p[region.bits], g[region.bits]
    return ConfusionCounts(
        tp=int((p & g).sum()),
        fp=int((p & ~g).sum()),
        tn=int((~p & ~g).sum()),
        fn=int((~p & g).sum()),
    )


def ber(pred: BinaryMask, gt: BinaryMask, region: BinaryMask | None = None) -> float:
    """Balanced error rate, mean of the per-class error rates.

    A class absent from the region contributes 0 (not NaN), so a
    single-class region scores on the present class only.
    """
    c = confusion_counts(pred, gt, region)
    pos = c.tp + c.fn
    neg = c.fp + c.tn
    miss = c.fn / pos if pos else 0.0
    false_alarm = c.fp / neg if neg else 0.0
    return 0.5 * (miss + false_alarm)


def dice_coefficient(a: BinaryMask, b: BinaryMask) -> float:
    """2|a & b| / (|a| + |b|); defined as 1 when both masks are empty."""
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatchError("mask dims differ")
    denom = a.count + b.count
    if denom == 0:
        return 1.0
    return 2.0 * float((a.bits & b.bits).sum()) / denom


def dice_loss(a: BinaryMask, b: BinaryMask) -> float:
    return 1.0 - dice_coefficient(a, b)


def bce(pred: np.ndarray, gt: BinaryMask) -> float:
    """Mean binary cross-entropy of a probability raster against a mask;
    probabilities are clamped to [eps, 1-eps] with eps = 1e-7."""
    p = np.asarray(pred, dtype=np.float64)
    if p.shape != gt.bits.shape:
        raise DimensionMismatchError("probability raster dims differ from mask")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    y = gt.bits.astype(np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def angular_error(pred: UnitLightDirection, gt: UnitLightDirection) -> float:
    """Angle between two unit directions, in degrees."""
    dot = float(np.dot(pred.vector, gt.vector))
    return math.degrees(math.acos(max(-1.0, min(1.0, dot))))


# ---------------------------------------------------------------------------
# Dataset reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EvalItem:
    """One test tuple: generated and reference images, predicted and
    ground-truth shadow masks, plus the scene split tag. Directions are
    optional and only feed the angular-error summary."""

    generated: np.ndarray
    reference: np.ndarray
    pred_mask: BinaryMask
    gt_mask: BinaryMask
    tag: str
    item_id: str = ""
    pred_direction: UnitLightDirection | None = None
    gt_direction: UnitLightDirection | None = None


@dataclass(frozen=True)
class MetricReport:
    grmse: float
    lrmse: float
    gssim: float
    lssim: float
    gber: float
    lber: float
    count: int

    def as_row(self) -> tuple[float, ...]:
        return (self.grmse, self.lrmse, self.gssim, self.lssim, self.gber, self.lber)


_EMPTY_REPORT = MetricReport(*(float("nan"),) * 6, count=0)


def item_metrics(item: EvalItem) -> MetricReport:
    """All six metrics for a single tuple (local region = gt shadow mask)."""
    return MetricReport(
        grmse=rmse(item.generated, item.reference),
        lrmse=rmse(item.generated, item.reference, region=item.gt_mask),
        gssim=ssim(item.generated, item.reference),
        lssim=ssim(item.generated, item.reference, region=item.gt_mask),
        gber=ber(item.pred_mask, item.gt_mask),
        lber=ber(item.pred_mask, item.gt_mask, region=item.gt_mask),
        count=1,
    )


def batch_report(
    items: list[EvalItem],
) -> tuple[dict[str, MetricReport], list[tuple[str, str]]]:
    """Arithmetic means of all six metrics per split (BOS, BOS-free, all).

    Per-item failures are recorded as (item_id, message) and excluded from
    the means rather than silently dropped.
    """
    per_tag: dict[str, list[MetricReport]] = {t: [] for t in (*TAGS, "all")}
    failures: list[tuple[str, str]] = []
    for i, item in enumerate(items):
        if item.tag not in TAGS:
            failures.append((item.item_id or str(i), f"unknown tag {item.tag!r}"))
            continue
        try:
            m = item_metrics(item)
        except Exception as exc:  # recorded, never dropped silently
            failures.append((item.item_id or str(i), str(exc)))
            continue
        per_tag[item.tag].append(m)
        per_tag["all"].append(m)

    out: dict[str, MetricReport] = {}
    for tag, rows in per_tag.items():
        if not rows:
            out[tag] = _EMPTY_REPORT
            continue
        means = np.mean([r.as_row() for r in rows], axis=0)
        out[tag] = MetricReport(*(float(x) for x in means), count=len(rows))
    return out, failures


@dataclass(frozen=True)
class AngularSummary:
    count: int
    with_direction: int
    mean_error_deg: float


def angular_report(
    items: list[tuple[str, UnitLightDirection | None, UnitLightDirection | None]],
) -> dict[str, AngularSummary]:
    """Mean angular error per split; items are (tag, predicted, truth).

    Items missing either direction count toward the split size but not the
    mean, mirroring datasets where only some scenes carry a usable
    direction."""
    out: dict[str, AngularSummary] = {}
    for tag in (*TAGS, "all"):
        rows = items if tag == "all" else [r for r in items if r[0] == tag]
        errs = [angular_error(p, g) for _, p, g in rows if p is not None and g is not None]
        mean = float(np.mean(errs)) if errs else float("nan")
        out[tag] = AngularSummary(
            count=len(rows), with_direction=len(errs), mean_error_deg=mean
        )
    return out


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def metrics_csv(reports: dict[str, MetricReport], label: str = "pred") -> str:
    """One wide row per label with BOS and BOS-free column groups."""
    header = ["label"]
    for tag in TAGS:
        header += [f"{tag}_{m}" for m in METRIC_COLUMNS]
    row = [label]
    for tag in TAGS:
        row += [_fmt(v) for v in reports[tag].as_row()]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerow(row)
    return buf.getvalue()


def angular_csv(summary: dict[str, AngularSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scene", "count", "with_direction", "mean_angular_error_deg"])
    for tag in (*TAGS, "all"):
        s = summary[tag]
        writer.writerow([tag, s.count, s.with_direction, _fmt(s.mean_error_deg)])
    return buf.getvalue()


def _null_if_nan(v: float) -> float | None:
    return None if math.isnan(v) else v


def report_json(
    reports: dict[str, MetricReport],
    failures: list[tuple[str, str]],
    angular: dict[str, AngularSummary] | None = None,
) -> str:
    payload = {
        "metrics": {
            tag: {
                "GRMSE": _null_if_nan(rep.grmse),
                "LRMSE": _null_if_nan(rep.lrmse),
                "GSSIM": _null_if_nan(rep.gssim),
                "LSSIM": _null_if_nan(rep.lssim),
                "GBER": _null_if_nan(rep.gber),
                "LBER": _null_if_nan(rep.lber),
                "count": rep.count,
            }
            for tag, rep in reports.items()
        },
        "failures": [{"item": i, "error": e} for i, e in failures],
        "warning_count": len(failures),
    }
    if angular is not None:
        payload["angular"] = {
            tag: {
                "count": s.count,
                "with_direction": s.with_direction,
                "mean_angular_error_deg": _null_if_nan(s.mean_error_deg),
            }
            for tag, s in angular.items()
        }
    return json.dumps(payload, indent=2, sort_keys=True)
