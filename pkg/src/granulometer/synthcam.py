"""Synthetic rock piles with known size distributions, rendered under a parametric lighting model.

A scene is a 2-D layered packing of elliptical fragments whose sieve sizes are
drawn from a target Swebrec distribution. Each fragment carries an ellipsoidal
cap height field, so a directional source produces bright faces on the lit
side and dark rims. Rendering applies an illumination field (global gradient
plus hard shadow sectors whose severity is ``1 - evenness``) and a simple
sensor: gain, black level, Gaussian read noise, clipping at full well.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DomainError, PackingFailure
from .granulometry import (
    DEFAULT_SIEVES_MM,
    FIT_SIEVES_MM,
    SieveSeries,
    SizeDistribution,
    SwebrecParams,
    distribution_from_sizes,
    swebrec_eval,
    swebrec_inverse,
)
from .io import Raster

# --- lighting -----------------------------------------------------------------

SOURCE_AZIMUTH_DEG = 135.0  # direction the light comes from, counter-clockwise from +x

# unevenness model coefficients, scaled by severity = 1 - evenness
GRADIENT_DEPTH = 0.6  # fractional drop of the illumination ramp across the pile
SHADOW_DEPTH = 0.85  # fractional darkening inside a cast-shadow sector
OBLIQUE_TILT_DEG = 55.0  # extra source tilt at full severity


@dataclass(frozen=True)
class LightingCondition:
    pile_illuminance: float  # lx
    source_emittance: Optional[float] = None  # lx; None when not applicable
    source_tilt: float = 0.0  # degrees from vertical
    source_distance: Optional[float] = None  # m
    evenness: float = 1.0  # 1 = perfectly even
    label: str = ""

    def __post_init__(self):
        if not self.pile_illuminance >= 0:
            raise ValueError(f"illuminance must be >= 0, got {self.pile_illuminance}")
        if not 0.0 <= self.evenness <= 1.0:
            raise ValueError(f"evenness must lie in [0, 1], got {self.evenness}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LightingCondition":
        return cls(
            pile_illuminance=float(d["pile_illuminance"]),
            source_emittance=None if d.get("source_emittance") is None else float(d["source_emittance"]),
            source_tilt=float(d.get("source_tilt", 0.0)),
            source_distance=None if d.get("source_distance") is None else float(d["source_distance"]),
            evenness=float(d.get("evenness", 1.0)),
            label=str(d.get("label", "")),
        )


# Recorded lighting rows of the indoor (lab) and outdoor experiments. Illuminance,
# emittance and source pose are the measured values; evenness is the model's
# setting for each row (ceiling banks and the deliberately even artificial lights
# are even; the uneven row switches lights off; the dark lab row is stray light).
LAB_CONDITIONS: Tuple[LightingCondition, ...] = (
    LightingCondition(450.0, 1815.0, 0.0, 3.0, 1.0, "normal lighting"),
    LightingCondition(120.0, 1815.0, 0.0, 3.0, 1.0, "dim lighting"),
    LightingCondition(40.0, 1815.0, 0.0, 3.0, 0.3, "uneven lighting"),
    LightingCondition(11.0, None, 0.0, None, 0.4, "dark"),  # stray light only
    LightingCondition(14.0, 1000.0, 20.0, 3.0, 1.0, "artificial lighting 1"),
    LightingCondition(18.0, 1000.0, 30.0, 2.0, 1.0, "artificial lighting 2"),
)

FIELD_CONDITIONS: Tuple[LightingCondition, ...] = (
    LightingCondition(9500.0, 54000.0, 0.0, None, 1.0, "cloudy"),
    LightingCondition(363.0, 1966.0, 0.0, None, 1.0, "dusk"),
    LightingCondition(14.0, 18.0, 45.0, 30.0, 1.0, "artificial lighting"),
    LightingCondition(3.0, 3.0, 0.0, None, 1.0, "dark"),
)


def illuminance_at_pile(source_emittance: float, distance: float, tilt: float) -> float:
    """Illuminance (lx) from a source rated in lux at 1 m: E * cos(tilt) / distance^2."""
    if not distance > 0:
        raise DomainError(f"distance must be positive, got {distance}")
    if not 0.0 <= tilt < 90.0:
        raise DomainError(f"tilt must lie in [0, 90) degrees, got {tilt}")
    return float(source_emittance) * math.cos(math.radians(tilt)) / float(distance) ** 2


def illumination_field(shape: Tuple[int, int], evenness: float, azimuth_deg: float = SOURCE_AZIMUTH_DEG) -> np.ndarray:
    """Multiplicative illumination field; identically 1 at evenness 1."""
    h, w = shape
    severity = 1.0 - float(evenness)
    if severity <= 0:
        return np.ones(shape)
    az = math.radians(azimuth_deg)
    ux, uy = math.cos(az), math.sin(az)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    xx -= (w - 1) / 2.0
    yy -= (h - 1) / 2.0
    # ramp: 0 on the side facing the source, 1 on the far side
    proj = -(xx * ux + yy * uy)
    span = proj.max() - proj.min()
    ramp = (proj - proj.min()) / span if span > 0 else np.zeros(shape)
    # three 20-degree shadow wedges centred on the anti-source direction
    rel = (np.degrees(np.arctan2(yy, xx)) - (azimuth_deg + 180.0) + 180.0) % 360.0 - 180.0
    shadow = (np.abs(rel) <= 10.0) | ((np.abs(rel) >= 30.0) & (np.abs(rel) <= 50.0))
    return (1.0 - GRADIENT_DEPTH * severity * ramp) * (1.0 - SHADOW_DEPTH * severity * shadow)


# --- sensor -------------------------------------------------------------------

@dataclass(frozen=True)
class SensorModel:
    exposure_gain: float  # gray levels per lux at unit shading
    noise_floor_sigma: float = 1.5  # gray levels
    full_well: int = 255
    rng_seed: int = 0
    black_level: float = 0.0  # gray levels subtracted before clipping

    def __post_init__(self):
        if not self.exposure_gain > 0:
            raise ValueError("exposure gain must be positive")
        if not self.noise_floor_sigma >= 0:
            raise ValueError("noise sigma must be non-negative")


@dataclass(frozen=True)
class AutoExposure:
    """Camera exposure control: aim a fully lit face at ``target_level`` within a gain ceiling."""

    target_level: float = 215.0
    max_gain: float = 16.0
    black_level: float = 24.0
    noise_floor_sigma: float = 1.5

    def sensor_for(self, illuminance: float, rng_seed: int) -> SensorModel:
        if illuminance > 0:
            gain = min(self.target_level / illuminance, self.max_gain)
        else:
            gain = self.max_gain
        return SensorModel(gain, self.noise_floor_sigma, 255, rng_seed, self.black_level)


# --- scenes -------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleSphere:
    diameter_mm: float = 60.0
    position: Tuple[float, float] = (0.5, 0.5)  # m from the scene origin


@dataclass(frozen=True)
class SceneSpec:
    extent: Tuple[float, float]  # (width m, height m)
    target_params: SwebrecParams
    particle_count: int
    packing_seed: int
    scale_sphere: Optional[ScaleSphere] = None
    mm_per_px: float = 0.3125
    size_bounds: Tuple[float, float] = (0.5, 19.0)  # mm
    aspect_range: Tuple[float, float] = (1.0, 1.6)
    max_overlap: float = 0.10  # fraction of a new particle allowed over earlier ones
    albedo_range: Tuple[float, float] = (0.55, 0.95)
    background_albedo: float = 0.06
    texture_amplitude: float = 0.04
    max_attempts: int = 300

    def __post_init__(self):
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ValueError("scene extent must be positive")
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if not self.mm_per_px > 0:
            raise ValueError("mm_per_px must be positive")

    @property
    def shape(self) -> Tuple[int, int]:
        return (
            int(round(self.extent[1] * 1000.0 / self.mm_per_px)),
            int(round(self.extent[0] * 1000.0 / self.mm_per_px)),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_params"] = asdict(self.target_params)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["target_params"] = SwebrecParams(**d["target_params"])
        if d.get("scale_sphere") is not None:
            s = d["scale_sphere"]
            d["scale_sphere"] = ScaleSphere(float(s["diameter_mm"]), tuple(s["position"]))
        for key in ("extent", "size_bounds", "aspect_range", "albedo_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class SceneParticle:
    id: int
    center: Tuple[float, float]  # m
    semi_major: float  # m
    semi_minor: float  # m
    angle: float  # rad, major axis from +x
    sieve_size: float  # mm (minor axis)
    albedo: float


@dataclass
class Scene:
    spec: SceneSpec
    particles: List[SceneParticle]
    truth_label_map: np.ndarray  # int32, 0 = background
    truth_distribution: SizeDistribution
    normals: np.ndarray = field(repr=False)  # (h, w, 3)
    albedo: np.ndarray = field(repr=False)  # (h, w)
    sphere_mask: np.ndarray = field(repr=False)  # bool (h, w)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.truth_label_map.shape

    def sieve_sizes(self) -> np.ndarray:
        return np.array([p.sieve_size for p in self.particles])

    def sphere_geometry_px(self) -> Optional[Tuple[float, float, float]]:
        """(cx, cy, radius) of the scale sphere in scene pixels."""
        s = self.spec.scale_sphere
        if s is None:
            return None
        k = 1000.0 / self.spec.mm_per_px
        return s.position[0] * k, s.position[1] * k, s.diameter_mm / 2.0 / self.spec.mm_per_px

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "particles": [asdict(p) for p in self.particles],
        }


def sample_sieve_sizes(params: SwebrecParams, n: int, rng: np.random.Generator, bounds=(0.0, math.inf)) -> np.ndarray:
    """Inverse-CDF draws from a Swebrec distribution; draws outside ``bounds`` are clipped to them."""
    u = rng.random(n)
    u = np.where(u <= 0.0, np.nextafter(0.0, 1.0), u)
    x = swebrec_inverse(params, u)
    lo, hi = bounds
    return np.clip(np.atleast_1d(x), lo if lo > 0 else 0.0, min(hi, params.x_max))


def _ellipse_patch(cx, cy, a, b, theta):
    """Pixel indices and local coordinates of pixel centres inside an ellipse (px units)."""
    r = max(a, b)
    x0, x1 = int(math.floor(cx - r)), int(math.ceil(cx + r))
    y0, y1 = int(math.floor(cy - r)), int(math.ceil(cy + r))
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    c, s = math.cos(theta), math.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    rho2 = (u / a) ** 2 + (v / b) ** 2
    inside = rho2 <= 1.0
    return ys[inside], xs[inside], u[inside], v[inside], rho2[inside]


def _cap_normals(u, v, rho2, a, b, theta):
    """Unit normals of an ellipsoidal cap with semi-axes (a, b, b) at local coordinates."""
    root = np.sqrt(np.maximum(1.0 - rho2, 1e-3))
    dhu = -b * (u / a**2) / root
    dhv = -b * (v / b**2) / root
    c, s = math.cos(theta), math.sin(theta)
    gx = dhu * c - dhv * s
    gy = dhu * s + dhv * c
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def generate_pile(spec: SceneSpec) -> Scene:
    """Draw sizes from the target distribution and dart-throw the ellipses, largest first."""
    h, w = spec.shape
    ss = np.random.SeedSequence([int(spec.packing_seed), 0x5EED])
    size_rng, place_rng, tex_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    n = int(spec.particle_count)
    sizes = sample_sieve_sizes(spec.target_params, n, size_rng, spec.size_bounds)
    aspects = size_rng.uniform(spec.aspect_range[0], spec.aspect_range[1], n)
    angles = size_rng.uniform(0.0, math.pi, n)
    albedos = size_rng.uniform(spec.albedo_range[0], spec.albedo_range[1], n)
    order = np.argsort(-sizes, kind="stable")

    labels = np.zeros((h, w), dtype=np.int32)
    occupied = np.zeros((h, w), dtype=bool)
    normals = np.zeros((h, w, 3), dtype=np.float32)
    normals[..., 2] = 1.0
    albedo = np.full((h, w), spec.background_albedo, dtype=np.float32)
    sphere_mask = np.zeros((h, w), dtype=bool)

    px_per_m = 1000.0 / spec.mm_per_px
    if spec.scale_sphere is not None:
        sx, sy = (c * px_per_m for c in spec.scale_sphere.position)
        sr = spec.scale_sphere.diameter_mm / 2.0 / spec.mm_per_px
        yy, xx, *_ = _ellipse_patch(sx, sy, sr, sr, 0.0)
        keep = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        sphere_mask[yy[keep], xx[keep]] = True
        occupied |= sphere_mask

    particles: List[SceneParticle] = []
    for k, idx in enumerate(order, start=1):
        d_mm = float(sizes[idx])
        b = d_mm / 2.0 / spec.mm_per_px
        a = b * float(aspects[idx])
        theta = float(angles[idx])
        placed = False
        for _ in range(spec.max_attempts):
            cx = place_rng.uniform(a, w - a) if w > 2 * a else w / 2.0
            cy = place_rng.uniform(a, h - a) if h > 2 * a else h / 2.0
            yy, xx, u, v, rho2 = _ellipse_patch(cx, cy, a, b, theta)
            keep = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            yy, xx, u, v, rho2 = yy[keep], xx[keep], u[keep], v[keep], rho2[keep]
            if yy.size and occupied[yy, xx].sum() > spec.max_overlap * yy.size:
                continue
            placed = True
            break
        if not placed:
            raise PackingFailure(
                f"could not place particle {k} of {n} ({d_mm:.2f} mm) within overlap bound "
                f"{spec.max_overlap} after {spec.max_attempts} attempts"
            )
        if yy.size:
            labels[yy, xx] = k
            occupied[yy, xx] = True
            normals[yy, xx] = _cap_normals(u, v, rho2, a, b, theta)
            albedo[yy, xx] = albedos[idx]
        particles.append(
            SceneParticle(
                id=k,
                center=(cx / px_per_m, cy / px_per_m),
                semi_major=a / px_per_m,
                semi_minor=b / px_per_m,
                angle=theta,
                sieve_size=d_mm,
                albedo=float(albedos[idx]),
            )
        )

    if spec.scale_sphere is not None:
        labels[sphere_mask] = 0
        albedo[sphere_mask] = 1.0
        normals[sphere_mask] = (0.0, 0.0, 1.0)

    if spec.texture_amplitude > 0:
        tex = ndimage.gaussian_filter(tex_rng.standard_normal((h, w)), 1.0)
        tex /= max(tex.std(), 1e-12)
        rock = labels > 0
        albedo[rock] *= (1.0 + spec.texture_amplitude * tex[rock]).astype(np.float32)

    sieves = SieveSeries(DEFAULT_SIEVES_MM).merged(FIT_SIEVES_MM)
    truth = distribution_from_sizes([p.sieve_size for p in particles], sieves, source="sieve_analysis")
    return Scene(spec, particles, labels, truth, normals, albedo, sphere_mask)


def ground_truth_distribution(scene: Scene, sieves: SieveSeries) -> SizeDistribution:
    """Percent passing of the scene's true sieve sizes, by the same d^3 rule as image analysis."""
    return distribution_from_sizes(scene.sieve_sizes(), sieves, source="sieve_analysis")


# --- rendering ----------------------------------------------------------------

AMBIENT_FRACTION = 0.35


def _light_vector(tilt_deg: float, azimuth_deg: float) -> np.ndarray:
    t, a = math.radians(tilt_deg), math.radians(azimuth_deg)
    return np.array([math.sin(t) * math.cos(a), math.sin(t) * math.sin(a), math.cos(t)])


def effective_source_tilt(light: LightingCondition) -> float:
    return min(85.0, light.source_tilt + OBLIQUE_TILT_DEG * (1.0 - light.evenness))


def shading_map(scene: Scene, light: LightingCondition) -> np.ndarray:
    """Albedo times Lambertian-plus-ambient shading, before illuminance and illumination field."""
    l = _light_vector(effective_source_tilt(light), SOURCE_AZIMUTH_DEG)
    lambert = np.clip(scene.normals @ l.astype(np.float32), 0.0, None)
    shade = scene.albedo * (AMBIENT_FRACTION + (1.0 - AMBIENT_FRACTION) * lambert)
    # the scale sphere is drawn as a uniform bright disc
    shade[scene.sphere_mask] = scene.albedo[scene.sphere_mask]
    return shade


def render(scene: Scene, light: LightingCondition, sensor: SensorModel) -> Raster:
    shade = shading_map(scene, light)
    fieldmap = illumination_field(scene.shape, light.evenness)
    signal = sensor.exposure_gain * light.pile_illuminance * shade * fieldmap - sensor.black_level
    rng = np.random.default_rng(np.random.SeedSequence([int(sensor.rng_seed), 0xCA3]))
    if sensor.noise_floor_sigma > 0:
        # read noise is bounded at 3 sigma, so a black scene stays within the noise floor
        s = sensor.noise_floor_sigma
        signal = signal + np.clip(rng.normal(0.0, s, signal.shape), -3.0 * s, 3.0 * s)
    pix = np.clip(np.rint(signal), 0, sensor.full_well).astype(np.uint8)
    return Raster.from_array(pix)


# --- viewpoints ---------------------------------------------------------------

FRAME_SIZE = (856, 480)  # (width, height) px


def view_origins(scene_shape, frame=FRAME_SIZE, grid=(3, 3), jitter_px=16, seed=0) -> List[Tuple[int, int]]:
    """Top-left corners of a row-major grid of crops, each jittered by a seeded offset."""
    h, w = scene_shape
    fw, fh = frame
    if fw > w or fh > h:
        raise ValueError(f"frame {fw}x{fh} does not fit in scene {w}x{h}")
    nx, ny = grid
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x71E]))
    out = []
    for j in range(ny):
        for i in range(nx):
            cx = (i + 0.5) * w / nx
            cy = (j + 0.5) * h / ny
            ox = int(round(cx - fw / 2.0)) + int(rng.integers(-jitter_px, jitter_px + 1))
            oy = int(round(cy - fh / 2.0)) + int(rng.integers(-jitter_px, jitter_px + 1))
            out.append((min(max(ox, 0), w - fw), min(max(oy, 0), h - fh)))
    return out


def crop(arr: np.ndarray, origin: Tuple[int, int], frame=FRAME_SIZE) -> np.ndarray:
    ox, oy = origin
    fw, fh = frame
    return arr[oy : oy + fh, ox : ox + fw]


def scene_extent_for_frames(mm_per_px: float, frame=FRAME_SIZE, grid=(3, 3), margin_px=32) -> Tuple[float, float]:
    """Scene extent (m) holding a grid of frames separated by ``margin_px``."""
    fw, fh = frame
    nx, ny = grid
    wpx = nx * fw + (nx + 1) * margin_px
    hpx = ny * fh + (ny + 1) * margin_px
    return wpx * mm_per_px / 1000.0, hpx * mm_per_px / 1000.0
