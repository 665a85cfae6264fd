"""Particle delineation and scale calibration.

Segmentation is a marker-controlled watershed on the gradient magnitude of
the smoothed image. Fragment markers are h-maxima of the smoothed intensity;
dark voids seed one competing basin, so particle edges settle on gradient
ridges. Regions smaller than ``min_particle_area`` are returned to label 0 and
counted as unresolved fines.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.morphology import h_maxima
from skimage.segmentation import watershed

from .errors import DimensionMismatch, LowContrast, NoScaleFound
from .io import Raster, TracedCircle

DEFAULT_MIN_PARTICLE_AREA = 9  # px^2
DEFAULT_CONTRAST_FLOOR = 8  # gray levels, p99.5 - p0.5 of the segmented raster
DEFAULT_RAW_CONTRAST_FLOOR = 32  # same measure on the unstretched camera frame


@dataclass(frozen=True)
class Particle:
    id: int
    area: int  # px^2
    centroid: Tuple[float, float]  # (x px, y px)
    ellipse_major: float  # px
    ellipse_minor: float  # px
    orientation: float = 0.0  # rad, major axis from +x
    weight: float = 1.0  # sampling weight in distributions


@dataclass
class DelineationNet:
    label_map: np.ndarray  # int32, 0 = background / unresolved
    particles: List[Particle]
    unresolved_fraction: float
    region_area: int  # analysis-region pixels
    min_particle_area: int = DEFAULT_MIN_PARTICLE_AREA

    @property
    def shape(self):
        return self.label_map.shape


@dataclass(frozen=True)
class ScaleCalibration:
    mm_per_px: float
    method: str  # "sphere_detect" or "manual_trace"
    n_objects: int
    circles: Tuple[Tuple[float, float, float], ...] = ()  # (cx, cy, radius) px

    def __post_init__(self):
        if not self.mm_per_px > 0:
            raise ValueError("mm_per_px must be positive")
        if self.n_objects < 1:
            raise ValueError("a calibration needs at least one scale object")


# --- preprocessing ------------------------------------------------------------

@dataclass(frozen=True)
class ContrastOptions:
    stretch: str = "linear"  # "linear" (min/max), "percentile", or "none"
    low_pct: float = 0.5
    high_pct: float = 99.5
    denoise_sigma: float = 0.0
    max_gain: Optional[float] = None


def preprocess(r: Raster, opts: ContrastOptions = ContrastOptions()) -> Raster:
    img = r.samples.astype(float)
    if opts.denoise_sigma > 0:
        img = ndimage.gaussian_filter(img, opts.denoise_sigma)
    if opts.stretch == "none":
        return Raster.from_array(np.clip(np.rint(img), 0, 255))
    if opts.stretch == "linear":
        lo, hi = float(img.min()), float(img.max())
    elif opts.stretch == "percentile":
        lo, hi = (float(v) for v in np.percentile(img, [opts.low_pct, opts.high_pct]))
    else:
        raise ValueError(f"unknown stretch {opts.stretch!r}")
    if hi - lo <= 0:
        # nothing to stretch: hand back a constant frame
        return Raster.from_array(np.full(img.shape, int(np.clip(np.rint(lo), 0, 255))))
    gain = 255.0 / (hi - lo)
    if opts.max_gain is not None:
        gain = min(gain, opts.max_gain)
    out = np.clip(np.rint((img - lo) * gain), 0, 255)
    return Raster.from_array(out)


def dynamic_range(r: Raster, low_pct: float = 0.5, high_pct: float = 99.5) -> float:
    lo, hi = np.percentile(r.samples, [low_pct, high_pct])
    return float(hi - lo)


# --- segmentation -------------------------------------------------------------

@dataclass(frozen=True)
class SegmentationParams:
    smoothing_sigma: float = 1.0  # px, gradient smoothing radius
    marker_source: str = "intensity"  # "intensity" (h-maxima) or "gradient" (flat cores)
    marker_h: float = 0.1  # h-maxima depth, fraction of the dynamic range
    marker_threshold: float = 0.25  # gradient cores: fraction of the robust gradient scale
    marker_sigma: float = 1.5  # px, smoothing of the gradient map before core extraction
    marker_brightness: float = 1.15  # marker cores must exceed this multiple of the region threshold
    marker_min_area: int = 3  # px, gradient cores only
    region_threshold: float = 0.45  # fraction of the Otsu level separating rock from voids
    min_particle_area: int = DEFAULT_MIN_PARTICLE_AREA
    contrast_floor: float = DEFAULT_CONTRAST_FLOOR
    raw_contrast_floor: float = DEFAULT_RAW_CONTRAST_FLOOR
    exclude_border: bool = True
    flood_surface: str = "gradient"  # "gradient" or "intensity" (flood the inverted image)
    void_marker: Optional[float] = 0.25  # fraction of Otsu (None: fixed-level mask); darker pixels seed a competing void basin


def _gradient(img: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(img, axis=1)
    gy = ndimage.sobel(img, axis=0)
    return np.hypot(gx, gy) / 8.0


def _intensity_peaks(smooth: np.ndarray, h_frac: float) -> np.ndarray:
    """Regional maxima of ``smooth`` at least ``h_frac`` of the dynamic range deep."""
    lo, hi = np.percentile(smooth, [0.5, 99.5])
    scale = 1024.0 / max(hi - lo, 1e-9)
    q = np.rint(np.clip((smooth - lo) * scale, 0, 4095)).astype(np.int32)
    h = max(1, int(round(h_frac * 1024.0)))
    return h_maxima(q, h).astype(bool)


def _disc_mask(shape, circles, pad=0.0) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if not circles:
        return mask
    yy, xx = np.ogrid[0 : shape[0], 0 : shape[1]]
    for cx, cy, rad in circles:
        mask |= (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= (rad + pad) ** 2
    return mask


def segment(
    r: Raster,
    params: SegmentationParams = SegmentationParams(),
    exclude: Optional[np.ndarray] = None,
) -> DelineationNet:
    """Delineate particles in a preprocessed raster.

    ``exclude`` marks pixels (e.g. scale objects) that belong to neither
    particles nor fines. Raises LowContrast on frames without usable signal.
    """
    if dynamic_range(r) < params.contrast_floor:
        raise LowContrast(
            f"dynamic range {dynamic_range(r):.1f} below floor {params.contrast_floor} gray levels"
        )
    img = r.samples.astype(float)
    smooth = ndimage.gaussian_filter(img, params.smoothing_sigma) if params.smoothing_sigma > 0 else img
    grad = _gradient(smooth)

    level = threshold_otsu(smooth)
    region = smooth > params.region_threshold * level
    if exclude is not None:
        region &= ~exclude
    if not region.any():
        raise LowContrast("no pixel rises above the void level")

    if params.marker_source == "intensity":
        cores = _intensity_peaks(smooth, params.marker_h)
    elif params.marker_source == "gradient":
        gscale = float(np.percentile(grad[region], 90)) or 1.0
        gm = ndimage.gaussian_filter(grad, params.marker_sigma) if params.marker_sigma > 0 else grad
        cores = gm < params.marker_threshold * gscale
    else:
        raise ValueError(f"unknown marker source {params.marker_source!r}")
    cores &= region & (smooth > params.marker_brightness * params.region_threshold * level)
    markers, n_markers = ndimage.label(cores)
    if n_markers and params.marker_source == "gradient":
        sizes = np.bincount(markers.ravel())
        small = sizes < params.marker_min_area
        small[0] = False
        markers[small[markers]] = 0
    if params.flood_surface == "gradient":
        surface = grad
    elif params.flood_surface == "intensity":
        surface = -smooth
    else:
        raise ValueError(f"unknown flood surface {params.flood_surface!r}")
    if params.void_marker is not None:
        # voids compete with particles, so edges sit on gradient ridges rather than at a fixed level
        void_id = n_markers + 1
        markers[(smooth < params.void_marker * level) & ~cores] = void_id
        if exclude is not None:
            markers[exclude] = void_id
        labels = watershed(surface, markers)
        region = labels != void_id
        labels[~region] = 0
    else:
        labels = watershed(surface, markers, mask=region)

    if params.exclude_border:
        edge_ids = np.unique(
            np.concatenate([labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]])
        )
        edge_ids = edge_ids[edge_ids > 0]
        if edge_ids.size:
            cut = np.isin(labels, edge_ids)
            region &= ~cut
            labels[cut] = 0

    return _finish_net(labels, region, params.min_particle_area, edge_weights=params.exclude_border)


def delineate_image(
    raw: Raster,
    params: SegmentationParams = SegmentationParams(),
    contrast: ContrastOptions = ContrastOptions(stretch="percentile"),
    exclude: Optional[np.ndarray] = None,
) -> DelineationNet:
    """Contrast check on the raw frame, then stretch and segment.

    The check runs before stretching: a stretch would blow sensor noise in a
    black frame up to full range.
    """
    rng = dynamic_range(raw)
    if rng < params.raw_contrast_floor:
        raise LowContrast(f"raw dynamic range {rng:.1f} below floor {params.raw_contrast_floor} gray levels")
    return segment(preprocess(raw, contrast), params, exclude=exclude)


def _finish_net(labels: np.ndarray, region: np.ndarray, min_area: int, edge_weights: bool = False) -> DelineationNet:
    labels = np.where(region, labels, 0)
    counts = np.bincount(labels.ravel())
    keep = counts >= min_area
    keep[0] = False
    # relabel surviving regions 1..n in raster order of first appearance
    flat = labels.ravel()
    kept_pixels = keep[flat]
    first_seen = np.unique(flat[kept_pixels], return_index=True)
    ids_in_order = first_seen[0][np.argsort(first_seen[1], kind="stable")]
    lut = np.zeros(counts.size, dtype=np.int32)
    lut[ids_in_order] = np.arange(1, ids_in_order.size + 1, dtype=np.int32)
    out = lut[labels]
    region_area = int(region.sum())
    particles = measure_particles(out)
    if edge_weights and particles:
        particles = _miles_lantuejoul(out, particles)
    resolved = sum(p.area for p in particles)
    unresolved = 0.0 if region_area == 0 else (region_area - resolved) / region_area
    return DelineationNet(out, particles, float(unresolved), region_area, int(min_area))


def _miles_lantuejoul(labels: np.ndarray, particles: List[Particle]) -> List[Particle]:
    """Weight each particle by the inverse chance that a region of its bounding box avoids the frame edge."""
    h, w = labels.shape
    boxes = ndimage.find_objects(labels)
    out = []
    for p in particles:
        sl = boxes[p.id - 1]
        bh = sl[0].stop - sl[0].start
        bw = sl[1].stop - sl[1].start
        free = max(w - bw, 1) * max(h - bh, 1)
        out.append(replace(p, weight=float(w * h) / free))
    return out


def measure_particles(labels: np.ndarray) -> List[Particle]:
    """Area, centroid and second-moment ellipse axes of every positive label."""
    n = int(labels.max()) if labels.size else 0
    if n == 0:
        return []
    ys, xs = np.nonzero(labels)
    ids = labels[ys, xs]
    xs = xs.astype(float)
    ys = ys.astype(float)
    cnt = np.bincount(ids, minlength=n + 1).astype(float)
    sx = np.bincount(ids, xs, n + 1)
    sy = np.bincount(ids, ys, n + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mx = sx / cnt
        my = sy / cnt
        dx = xs - mx[ids]
        dy = ys - my[ids]
        cxx = np.bincount(ids, dx * dx, n + 1) / cnt
        cyy = np.bincount(ids, dy * dy, n + 1) / cnt
        cxy = np.bincount(ids, dx * dy, n + 1) / cnt
    out = []
    for k in range(1, n + 1):
        if cnt[k] == 0:
            continue
        major, minor, theta = _moment_axes(cxx[k], cyy[k], cxy[k])
        # pixel centres: centroid reported in pixel-centre coordinates (+0.5)
        out.append(Particle(k, int(cnt[k]), (mx[k] + 0.5, my[k] + 0.5), major, minor, theta))
    return out


def _moment_axes(cxx: float, cyy: float, cxy: float):
    """Full ellipse axes (4 sqrt(eigenvalue)) and orientation from central second moments.

    Moments are those of the union of unit pixel squares, i.e. the pixel-centre
    covariance plus 1/12 per axis; this also keeps one-pixel-wide regions finite.
    """
    cxx += 1.0 / 12.0
    cyy += 1.0 / 12.0
    half_tr = (cxx + cyy) / 2.0
    disc = math.sqrt(max(((cxx - cyy) / 2.0) ** 2 + cxy**2, 0.0))
    l1 = half_tr + disc
    l2 = max(half_tr - disc, 1e-12)
    theta = 0.5 * math.atan2(2.0 * cxy, cxx - cyy)
    return 4.0 * math.sqrt(l1), 4.0 * math.sqrt(l2), theta


# --- scale objects ------------------------------------------------------------

@dataclass(frozen=True)
class SphereDetectOptions:
    radius_range: Tuple[float, float] = (20.0, 250.0)  # px
    smoothing_sigma: float = 1.0
    plateau_gradient: float = 0.02  # fraction of the dynamic range per px
    min_inlier_fraction: float = 0.6
    min_fill: float = 0.6  # plateau area / fitted disc area
    n_rays: int = 360


def _radial_edges(smooth, cx, cy, r_guess, r_lo, r_hi, n_rays):
    """Subpixel radius of the steepest descent along each ray."""
    step = 0.25
    radii = np.arange(max(r_lo, 1.0), r_hi, step)
    ang = np.linspace(0.0, 2 * math.pi, n_rays, endpoint=False)
    xs = cx - 0.5 + np.outer(np.cos(ang), radii)
    ys = cy - 0.5 + np.outer(np.sin(ang), radii)
    prof = ndimage.map_coordinates(smooth, [ys.ravel(), xs.ravel()], order=1, mode="nearest")
    prof = prof.reshape(n_rays, radii.size)
    d = -np.diff(prof, axis=1)
    k = np.argmax(d, axis=1)
    # parabolic refinement of the gradient peak
    k = np.clip(k, 1, d.shape[1] - 2)
    rows = np.arange(n_rays)
    y0, y1, y2 = d[rows, k - 1], d[rows, k], d[rows, k + 1]
    den = y0 - 2 * y1 + y2
    safe = np.where(np.abs(den) > 1e-12, den, 1.0)
    off = np.where(np.abs(den) > 1e-12, 0.5 * (y0 - y2) / safe, 0.0)
    r_edge = radii[0] + (k + 0.5 + np.clip(off, -1, 1)) * step
    px = cx + np.cos(ang) * r_edge
    py = cy + np.sin(ang) * r_edge
    return px, py, y1 / step


def _fit_circle(px, py):
    """Algebraic (Kasa) circle fit."""
    a = np.column_stack([px, py, np.ones_like(px)])
    rhs = px**2 + py**2
    sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    cx, cy = sol[0] / 2.0, sol[1] / 2.0
    rad = math.sqrt(max(sol[2] + cx**2 + cy**2, 0.0))
    return cx, cy, rad


def find_scale_circles(r: Raster, opts: SphereDetectOptions = SphereDetectOptions()) -> List[Tuple[float, float, float]]:
    """Bright, flat, circular objects as ``(cx, cy, radius)`` in pixel coordinates."""
    img = r.samples.astype(float)
    lo, hi = np.percentile(img, [0.5, 99.9])
    rng = hi - lo
    if rng <= 0:
        return []
    smooth = ndimage.gaussian_filter(img, opts.smoothing_sigma)
    grad = _gradient(smooth)
    level = threshold_otsu(smooth)
    plateau = (smooth > level) & (grad < opts.plateau_gradient * rng)
    lab, n = ndimage.label(plateau)
    if n == 0:
        return []
    r_min, r_max = opts.radius_range
    sizes = np.bincount(lab.ravel())
    circles = []
    for k in np.nonzero(sizes >= 0.5 * math.pi * (0.5 * r_min) ** 2)[0]:
        if k == 0:
            continue
        ys, xs = np.nonzero(lab == k)
        cx, cy = xs.mean() + 0.5, ys.mean() + 0.5
        r_eq = math.sqrt(sizes[k] / math.pi)
        if r_eq > r_max * 1.2:
            continue
        inside_level = float(np.median(smooth[ys, xs]))
        px, py, strength = _radial_edges(smooth, cx, cy, r_eq, 0.5 * r_eq, 1.6 * r_eq + 6, opts.n_rays)
        keep = strength > 0.1 * (inside_level - lo)
        if keep.sum() < 8:
            continue
        inliers = keep
        for _ in range(3):
            fcx, fcy, frad = _fit_circle(px[inliers], py[inliers])
            dist = np.hypot(px - fcx, py - fcy)
            inliers = keep & (np.abs(dist - frad) <= max(1.0, 0.02 * frad))
            if inliers.sum() < 8:
                break
        if inliers.sum() < max(8, opts.min_inlier_fraction * opts.n_rays):
            continue
        fcx, fcy, frad = _fit_circle(px[inliers], py[inliers])
        if not r_min <= frad <= r_max:
            continue
        if sizes[k] < opts.min_fill * math.pi * frad**2:
            continue
        circles.append((fcx, fcy, frad))
    circles.sort(key=lambda c: (round(c[1], 6), round(c[0], 6)))
    return circles


def detect_scale_spheres(
    r: Raster,
    true_diameter: float,
    opts: SphereDetectOptions = SphereDetectOptions(),
) -> ScaleCalibration:
    """Scale from spherical scale objects: true diameter over the mean detected pixel diameter."""
    circles = find_scale_circles(r, opts)
    if not circles:
        raise NoScaleFound("no circular scale object passed the detection thresholds")
    mean_d = float(np.mean([2.0 * c[2] for c in circles]))
    return ScaleCalibration(float(true_diameter) / mean_d, "sphere_detect", len(circles), tuple(circles))


def calibration_from_trace(circles: Sequence[TracedCircle]) -> ScaleCalibration:
    """Scale from manually traced circles (mean of per-object mm-per-px)."""
    if not circles:
        raise NoScaleFound("no traced scale objects")
    scales = [c.diameter_mm / (2.0 * c.radius) for c in circles]
    return ScaleCalibration(
        float(np.mean(scales)),
        "manual_trace",
        len(circles),
        tuple((c.cx, c.cy, c.radius) for c in circles),
    )


def scale_exclusion_mask(shape, cal: ScaleCalibration, pad: float = 3.0) -> np.ndarray:
    return _disc_mask(shape, cal.circles, pad)


# --- quality against ground truth ---------------------------------------------

@dataclass(frozen=True)
class QualityReport:
    fusion: int
    disintegration: int
    boundary_iou: float
    n_predicted: int
    n_truth: int

    CSV_HEADER = ("n_predicted", "n_truth", "fusion", "disintegration", "boundary_iou")

    def csv_row(self) -> List[str]:
        return [str(self.n_predicted), str(self.n_truth), str(self.fusion), str(self.disintegration), repr(self.boundary_iou)]


def _boundary_band(labels: np.ndarray, width: int) -> np.ndarray:
    edge = np.zeros(labels.shape, dtype=bool)
    edge[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    edge[:, :-1] |= labels[:, 1:] != labels[:, :-1]
    edge[1:, :] |= labels[1:, :] != labels[:-1, :]
    edge[:-1, :] |= labels[1:, :] != labels[:-1, :]
    if width > 1:
        edge = ndimage.binary_dilation(edge, iterations=width - 1)
    return edge


def _drop_small(labels: np.ndarray, min_area: int) -> np.ndarray:
    if min_area <= 1:
        return labels
    counts = np.bincount(labels.ravel())
    small = counts < min_area
    small[0] = False
    return np.where(small[labels], 0, labels)


def match_to_truth(net, truth: np.ndarray, min_area: int = DEFAULT_MIN_PARTICLE_AREA, band: int = 2) -> QualityReport:
    """Fusion / disintegration counts and boundary IoU of a delineation against a truth label map.

    A predicted region covers a truth region when it holds the majority of
    that region's pixels; fusion counts predicted regions covering two or more
    truth regions. Disintegration counts truth regions holding the majority of
    two or more predicted regions.
    """
    pred = net.label_map if hasattr(net, "label_map") else np.asarray(net)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    truth = _drop_small(truth.astype(np.int64), min_area)
    pred = pred.astype(np.int64)

    both = (pred > 0) & (truth > 0)
    pairs, counts = np.unique(np.stack([pred[both], truth[both]]), axis=1, return_counts=True)
    pred_sizes = np.bincount(pred.ravel())
    truth_sizes = np.bincount(truth.ravel())

    covered_by = {}  # predicted id -> truth ids it holds the majority of
    owns = {}  # truth id -> predicted ids whose majority lies inside it
    for (p, t), c in zip(pairs.T, counts):
        if 2 * c > truth_sizes[t]:
            covered_by.setdefault(int(p), []).append(int(t))
        if 2 * c > pred_sizes[p]:
            owns.setdefault(int(t), []).append(int(p))
    fusion = sum(1 for ts in covered_by.values() if len(ts) >= 2)
    disintegration = sum(1 for ps in owns.values() if len(ps) >= 2)

    bp = _boundary_band(pred, band)
    bt = _boundary_band(truth, band)
    union = np.count_nonzero(bp | bt)
    iou = 1.0 if union == 0 else np.count_nonzero(bp & bt) / union
    n_pred = int(np.count_nonzero(pred_sizes[1:]))
    n_truth = int(np.count_nonzero(truth_sizes[1:]))
    return QualityReport(int(fusion), int(disintegration), float(iou), n_pred, n_truth)


def quality_reports_to_csv(rows: Sequence[Tuple[str, QualityReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("image",) + QualityReport.CSV_HEADER)
    for name, q in rows:
        w.writerow([name] + q.csv_row())
    return buf.getvalue()
