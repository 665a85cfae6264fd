"""Sieve series, cumulative size distributions and the image-to-distribution rules."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import EmptyInput, EmptyNet, ParseError

DEFAULT_SIEVES_MM = (4.0, 9.5, 12.5, 19.0)

# dense series used when a distribution has to be fitted or re-plotted
FIT_SIEVES_MM = (1.0, 1.4, 2.0, 2.8, 4.0, 5.6, 8.0, 9.5, 11.2, 12.5, 16.0, 19.0, 22.4, 25.0)


@dataclass(frozen=True)
class SieveSeries:
    sizes: Tuple[float, ...]

    def __init__(self, sizes: Iterable[float]):
        sizes = tuple(float(s) for s in sizes)
        if not sizes:
            raise ValueError("sieve series is empty")
        if any(not s > 0 for s in sizes):
            raise ValueError("sieve apertures must be positive")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sieve apertures must be strictly increasing")
        object.__setattr__(self, "sizes", sizes)

    def __iter__(self):
        return iter(self.sizes)

    def __len__(self):
        return len(self.sizes)

    @classmethod
    def default(cls) -> "SieveSeries":
        return cls(DEFAULT_SIEVES_MM)

    def merged(self, other: Iterable[float]) -> "SieveSeries":
        return SieveSeries(sorted(set(self.sizes) | {float(s) for s in other}))


@dataclass(frozen=True)
class SizeDistribution:
    """Cumulative percent passing, non-decreasing in size, all values in [0, 100]."""

    points: Tuple[Tuple[float, float], ...]
    basis: str = "volume_proxy"  # or "count"
    source: str = "image_analysis"  # or "sieve_analysis", "swebrec_model"

    def __post_init__(self):
        pts = tuple((float(s), float(p)) for s, p in self.points)
        if not pts:
            raise ValueError("distribution has no points")
        for s, p in pts:
            if not s > 0:
                raise ValueError(f"size must be positive, got {s}")
            if not 0.0 <= p <= 100.0:
                raise ValueError(f"percent passing {p} outside [0, 100]")
        for (s0, p0), (s1, p1) in zip(pts, pts[1:]):
            if s1 <= s0:
                raise ValueError("sizes must be strictly increasing")
            if p1 < p0:
                raise ValueError("percent passing must be non-decreasing")
        object.__setattr__(self, "points", pts)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([s for s, _ in self.points])

    @property
    def percents(self) -> np.ndarray:
        return np.array([p for _, p in self.points])

    def at(self, sizes):
        """Percent passing at ``sizes``, linear in (log size, percent); clamped outside the data."""
        xs = np.log(self.sizes)
        q = np.log(np.asarray(sizes, dtype=float))
        out = np.interp(q, xs, self.percents)
        return float(out) if np.ndim(out) == 0 else out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["size_mm", "percent_passing"])
        for s, p in self.points:
            w.writerow([_fmt(s), _fmt(p)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, basis="volume_proxy", source="sieve_analysis") -> "SizeDistribution":
        rows = list(csv.reader(io.StringIO(text)))
        pts = []
        for lineno, row in enumerate(rows, start=1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and row[0].strip().lower().startswith("size"):
                continue
            if len(row) < 2:
                raise ParseError("expected size_mm,percent_passing", line=lineno)
            try:
                pts.append((float(row[0]), float(row[1])))
            except ValueError:
                raise ParseError(f"non-numeric row {row!r}", line=lineno) from None
        if not pts:
            raise ParseError("distribution file has no data rows")
        try:
            return cls(tuple(pts), basis=basis, source=source)
        except ValueError as exc:
            raise ParseError(str(exc)) from None


def _fmt(v: float) -> str:
    return repr(float(v))


# --- sizes and volume proxies -----------------------------------------------

def equivalent_sieve_size(p, cal) -> float:
    """Sieve size (mm) of a particle: the ellipse minor axis times the image scale."""
    return float(p.ellipse_minor) * float(cal.mm_per_px)


def min_particle_diameter_px(min_particle_area: float) -> float:
    """Diameter of the disc whose area equals the smallest resolvable particle area."""
    return 2.0 * math.sqrt(float(min_particle_area) / math.pi)


def fines_below_smallest(net, cal) -> float:
    """Default fines policy: unresolved area times the smallest resolvable size, as a volume proxy.

    unresolved_area_px * d_min_px * mm_per_px**3, all of it passing every sieve.
    """
    unresolved_px = net.unresolved_fraction * net.region_area
    d_min_px = min_particle_diameter_px(net.min_particle_area)
    return unresolved_px * d_min_px * float(cal.mm_per_px) ** 3


def fines_ignored(net, cal) -> float:
    return 0.0


FINES_POLICIES = {
    "below_smallest": fines_below_smallest,
    "ignore": fines_ignored,
}

FinesPolicy = Union[str, Callable]


def _resolve_policy(policy: FinesPolicy) -> Callable:
    if callable(policy):
        return policy
    try:
        return FINES_POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown fines policy {policy!r}") from None


def distribution_from_sizes(
    sizes_mm: Sequence[float],
    sieves: SieveSeries,
    fines_volume: float = 0.0,
    weights: Optional[Sequence[float]] = None,
    source: str = "image_analysis",
) -> SizeDistribution:
    """Volume-proxy (d^3) percent passing at each sieve; particles with d <= s pass s.

    ``fines_volume`` is counted as passing every sieve.
    """
    d = np.asarray(sizes_mm, dtype=float)
    w = np.ones_like(d) if weights is None else np.asarray(weights, dtype=float)
    vol = w * d**3
    total = float(vol.sum()) + float(fines_volume)
    if total <= 0:
        raise EmptyNet("no particle or fines volume to distribute")
    order = np.argsort(d, kind="stable")
    d_sorted = d[order]
    cum = np.concatenate([[0.0], np.cumsum(vol[order])])
    pts = []
    for s in sieves:
        k = int(np.searchsorted(d_sorted, s, side="right"))
        pct = 100.0 * (cum[k] + fines_volume) / total
        pts.append((s, min(100.0, pct)))
    # cumulative sums are monotone already; guard against float jitter
    fixed = []
    prev = 0.0
    for s, p in pts:
        prev = max(prev, p)
        fixed.append((s, prev))
    return SizeDistribution(tuple(fixed), basis="volume_proxy", source=source)


def _net_contribution(net, cal, policy):
    sizes = [equivalent_sieve_size(p, cal) for p in net.particles]
    weights = [getattr(p, "weight", 1.0) for p in net.particles]
    fines = float(policy(net, cal)) if net.unresolved_fraction > 0 else 0.0
    return sizes, weights, fines


def build_distribution(net, cal, sieves: SieveSeries, fines_policy: FinesPolicy = "below_smallest") -> SizeDistribution:
    if not net.particles and not net.unresolved_fraction > 0:
        raise EmptyNet("delineation has no particles and no unresolved area")
    sizes, weights, fines = _net_contribution(net, cal, _resolve_policy(fines_policy))
    return distribution_from_sizes(sizes, sieves, fines, weights)


def combine_distributions(nets_with_cals, sieves: SieveSeries, fines_policy: FinesPolicy = "below_smallest") -> SizeDistribution:
    """Pool every particle and all fines volume of an image set, then compute percent passing."""
    items = list(nets_with_cals)
    if not items:
        raise EmptyInput("no delineations to combine")
    policy = _resolve_policy(fines_policy)
    sizes: List[float] = []
    weights: List[float] = []
    fines = 0.0
    nonempty = 0
    for net, cal in items:
        if not net.particles and not net.unresolved_fraction > 0:
            continue
        nonempty += 1
        s, w, f = _net_contribution(net, cal, policy)
        sizes += s
        weights += w
        fines += f
    if not nonempty:
        raise EmptyNet("every delineation in the set is empty")
    return distribution_from_sizes(sizes, sieves, fines, weights)
