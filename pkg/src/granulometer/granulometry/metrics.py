"""Accuracy metrics against a sieve reference: percent error residuals, 2-norm, error envelope."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import ParseError, ZeroReference
from .distribution import SieveSeries, SizeDistribution
from .swebrec import SwebrecParams, swebrec_eval

DEFAULT_ENVELOPE_PCT = 30.0
DEFAULT_TWO_NORM_SAMPLES = 50


@dataclass(frozen=True)
class ResidualRow:
    size: float  # mm
    p_ia: float  # %
    p_sa: float  # %
    residual: float  # %


@dataclass(frozen=True)
class ResidualReport:
    rows: Tuple[ResidualRow, ...]
    two_norm: float  # percentage points
    envelope_limit: float = DEFAULT_ENVELOPE_PCT
    passed: bool = False

    def to_csv(self) -> str:
        return residual_rows_to_csv(self.rows)


def percent_error_residuals(ia: SizeDistribution, sa: SizeDistribution, sieves: SieveSeries) -> List[ResidualRow]:
    """(P_IA - P_SA) / P_SA * 100 at each sieve; both curves read by log-size interpolation."""
    rows = []
    for s in sieves:
        p_ia = ia.at(s)
        p_sa = sa.at(s)
        if p_sa <= 0:
            raise ZeroReference(f"reference passes 0 % at {s} mm")
        rows.append(ResidualRow(s, p_ia, p_sa, (p_ia - p_sa) / p_sa * 100.0))
    return rows


def envelope_check(rows: Sequence[ResidualRow], limit: float = DEFAULT_ENVELOPE_PCT) -> bool:
    """True when every |residual| is within ``limit`` (inclusive)."""
    if not rows:
        raise ValueError("envelope check needs at least one residual")
    return all(abs(r.residual) <= limit for r in rows)


def log_spaced(lo: float, hi: float, k: int) -> np.ndarray:
    return np.exp(np.linspace(math.log(lo), math.log(hi), k))


def two_norm_error(
    fitted_ia: SwebrecParams,
    reference: SwebrecParams,
    size_range: Tuple[float, float],
    k: int = DEFAULT_TWO_NORM_SAMPLES,
) -> float:
    """RMS difference in percentage points between two Swebrec curves over k log-spaced sizes."""
    lo, hi = float(size_range[0]), float(size_range[1])
    if not 0 < lo < hi:
        raise ValueError(f"invalid size range ({lo}, {hi})")
    if k < 2:
        raise ValueError("need at least two samples")
    xs = log_spaced(lo, hi, k)
    diff = 100.0 * (swebrec_eval(fitted_ia, xs) - swebrec_eval(reference, xs))
    return float(np.sqrt(np.mean(diff**2)))


def default_two_norm_range(sieves: SieveSeries, reference: SwebrecParams) -> Tuple[float, float]:
    """[smallest sieve / 2, x_max of the reference]."""
    lo = sieves.sizes[0] / 2.0
    hi = max(reference.x_max, lo * 1.0001)
    return lo, hi


def residual_report(
    ia: SizeDistribution,
    sa: SizeDistribution,
    sieves: SieveSeries,
    two_norm: float,
    limit: float = DEFAULT_ENVELOPE_PCT,
) -> ResidualReport:
    rows = tuple(percent_error_residuals(ia, sa, sieves))
    return ResidualReport(rows, float(two_norm), float(limit), envelope_check(rows, limit))


def residual_rows_to_csv(rows: Sequence[ResidualRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["size_mm", "p_ia", "p_sa", "residual_pct"])
    for r in rows:
        w.writerow([repr(r.size), repr(r.p_ia), repr(r.p_sa), repr(r.residual)])
    return buf.getvalue()


def residual_rows_from_csv(text: str) -> List[ResidualRow]:
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row:
            continue
        if lineno == 1 and row[0].strip() == "size_mm":
            continue
        if len(row) != 4:
            raise ParseError("expected size_mm,p_ia,p_sa,residual_pct", line=lineno)
        try:
            rows.append(ResidualRow(*(float(v) for v in row)))
        except ValueError:
            raise ParseError(f"non-numeric row {row!r}", line=lineno) from None
    return rows
