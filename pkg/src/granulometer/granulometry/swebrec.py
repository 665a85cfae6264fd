"""Swebrec cumulative size distribution: evaluation, inversion and least-squares fitting.

The fitter runs scipy's Levenberg-Marquardt in an unconstrained
reparameterisation ``u = (ln x_50, ln(ln x_max - ln x_50), ln b)`` so every
iterate satisfies ``x_max > x_50 > 0`` and ``b > 0`` without bound handling.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from ..errors import DomainError, NoConvergence, TooFewPoints


@dataclass(frozen=True)
class SwebrecParams:
    x_max: float  # mm
    x_50: float  # mm
    b: float

    def __post_init__(self):
        if not (self.x_50 > 0 and self.x_max > self.x_50):
            raise ValueError(f"need x_max > x_50 > 0, got x_max={self.x_max}, x_50={self.x_50}")
        if not self.b > 0:
            raise ValueError(f"undulation exponent must be positive, got {self.b}")


@dataclass(frozen=True)
class SwebrecFit:
    params: SwebrecParams
    rms_residual: float  # fraction units
    converged: bool
    iterations: int

    def to_dict(self) -> dict:
        return {
            "x_max_mm": self.params.x_max,
            "x_50_mm": self.params.x_50,
            "b": self.params.b,
            "rms_residual": self.rms_residual,
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SwebrecFit":
        params = SwebrecParams(float(d["x_max_mm"]), float(d["x_50_mm"]), float(d["b"]))
        return cls(params, float(d["rms_residual"]), bool(d["converged"]), int(d.get("iterations", 0)))


def _eval_array(x_max, x_50, b, x):
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    below = x < x_max
    z = np.log(x_max / x[below]) / math.log(x_max / x_50)
    out[below] = 1.0 / (1.0 + z**b)
    return out


def swebrec_eval(params: SwebrecParams, x):
    """Fraction passing size ``x`` (mm); scalar in, float out, array in, array out."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("Swebrec is defined for sizes > 0 only")
    out = _eval_array(params.x_max, params.x_50, params.b, arr)
    if arr.ndim == 0:
        return float(out)
    return out


def swebrec_inverse(params: SwebrecParams, p):
    """Size (mm) at which the passing fraction equals ``p`` for ``0 < p < 1``; ``p = 1`` maps to x_max."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p > 1)):
        raise DomainError("passing fraction must lie in (0, 1]")
    with np.errstate(divide="ignore"):
        z = (1.0 / p - 1.0) ** (1.0 / params.b)
    x = params.x_max * np.exp(-z * math.log(params.x_max / params.x_50))
    return float(x) if x.ndim == 0 else x


# --- fitting -----------------------------------------------------------------

def _to_u(p: SwebrecParams) -> np.ndarray:
    return np.array([math.log(p.x_50), math.log(math.log(p.x_max / p.x_50)), math.log(p.b)])


def _from_u(u) -> Tuple[float, float, float]:
    x_50 = math.exp(u[0])
    gap = math.exp(u[1])
    return x_50 * math.exp(gap), x_50, math.exp(u[2])


def _model_and_jac(u, lx):
    """Model values and Jacobian w.r.t. ``u`` at log-sizes ``lx``."""
    l50, gap, b = u[0], math.exp(u[1]), math.exp(u[2])
    z = 1.0 + (l50 - lx) / gap
    pred = np.ones_like(lx)
    jac = np.zeros((lx.size, 3))
    m = z > 0
    zm = z[m]
    zb = zm**b
    denom = (1.0 + zb) ** 2
    pred[m] = 1.0 / (1.0 + zb)
    dp_dz = -b * zm ** (b - 1.0) / denom
    jac[m, 0] = dp_dz / gap
    jac[m, 1] = dp_dz * (-(l50 - lx[m]) / gap)
    jac[m, 2] = -zb * np.log(zm) / denom * b
    return pred, jac


def default_initial_guess(sizes, fractions) -> SwebrecParams:
    """x_50 from the 50 % crossing (log-size interpolation), x_max = 1.5 x largest size, b = 2."""
    order = np.argsort(sizes)
    xs = np.asarray(sizes, dtype=float)[order]
    ps = np.asarray(fractions, dtype=float)[order]
    # np.interp needs increasing abscissae; cumulative data is non-decreasing
    ps_mono = np.maximum.accumulate(ps)
    if ps_mono[0] >= 0.5:
        x_50 = xs[0]
    elif ps_mono[-1] <= 0.5:
        x_50 = xs[-1]
    else:
        k = int(np.searchsorted(ps_mono, 0.5))
        p0, p1 = ps_mono[k - 1], ps_mono[k]
        t = 0.5 if p1 == p0 else (0.5 - p0) / (p1 - p0)
        x_50 = math.exp(math.log(xs[k - 1]) + t * (math.log(xs[k]) - math.log(xs[k - 1])))
    x_max = 1.5 * xs[-1]
    if x_max <= x_50:
        x_max = 1.5 * x_50
    return SwebrecParams(x_max, x_50, 2.0)


def swebrec_fit(
    points: Sequence[Tuple[float, float]],
    init: Optional[SwebrecParams] = None,
    max_iter: int = 500,
    xtol: float = 1e-13,
    ftol: float = 1e-15,
) -> SwebrecFit:
    """Least-squares Swebrec fit to ``(size_mm, fraction_passing)`` points.

    Raises TooFewPoints with fewer than three points or three distinct sizes,
    NoConvergence when the evaluation budget runs out or the iterate diverges.
    """
    pts = [(float(s), float(p)) for s, p in points]
    if len(pts) < 3 or len({s for s, _ in pts}) < 3:
        raise TooFewPoints(f"need at least 3 points at 3 distinct sizes, got {len(pts)}")
    sizes = np.array([s for s, _ in pts])
    fr = np.array([p for _, p in pts])
    if np.any(sizes <= 0):
        raise DomainError("sizes must be positive")
    if np.any((fr <= 0) | (fr > 1)):
        raise DomainError("passing fractions must lie in (0, 1]")

    lx = np.log(sizes)
    guess = init if init is not None else default_initial_guess(sizes, fr)
    sol = least_squares(
        lambda u: _model_and_jac(u, lx)[0] - fr,
        _to_u(guess),
        jac=lambda u: _model_and_jac(u, lx)[1],
        method="lm",
        xtol=xtol,
        ftol=ftol,
        gtol=1e-15,
        max_nfev=max_iter,
    )
    if sol.status <= 0 or not np.all(np.isfinite(sol.x)):
        raise NoConvergence(f"Swebrec fit did not converge in {max_iter} evaluations: {sol.message}")
    cost = float(sol.fun @ sol.fun)
    try:
        params = SwebrecParams(*_from_u(sol.x))
    except (OverflowError, ValueError):
        raise NoConvergence(f"Swebrec fit diverged to u = {sol.x.tolist()}") from None
    return SwebrecFit(
        params,
        rms_residual=math.sqrt(cost / len(pts)),
        converged=True,
        iterations=int(sol.nfev),
    )


def params_to_dict(p: SwebrecParams) -> dict:
    return asdict(p)
