"""End-to-end acceptance checks. Each records a pass/fail line before asserting."""
import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from granulometer.cli import EXIT_DARK, EXIT_OK, condition_dirname, main
from granulometer.delineation import ScaleCalibration, detect_scale_spheres
from granulometer.granulometry import SieveSeries, SwebrecParams, build_distribution, swebrec_eval, swebrec_fit
from granulometer.missionplan import CameraModel, Waypoint, footprint, plan_flight
from granulometer.synthcam import (
    FIELD_CONDITIONS,
    LAB_CONDITIONS,
    AutoExposure,
    LightingCondition,
    ScaleSphere,
    SceneSpec,
    generate_pile,
    render,
)

from conftest import CRITERIA_LINES, make_net
from oracles import ray_ground_hit

LAB_SEED = 42  # fixed before any run
UNEVEN_SEEDS = (11, 12, 13, 14, 15)
REF = SwebrecParams(19.0, 6.0, 2.0)


def record(n, ok, detail):
    CRITERIA_LINES.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def analyze(folder, out):
    t0 = time.perf_counter()
    rc = main(["analyze", str(folder), "--out", str(out)])
    elapsed = time.perf_counter() - t0
    rep = json.loads((Path(out) / "report.json").read_text()) if (Path(out) / "report.json").exists() else None
    return rc, rep, elapsed


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    """Default lab table at the default 4000-particle scene, every condition analysed."""
    root = tmp_path_factory.mktemp("lab")
    assert main(["synth", "--seed", str(LAB_SEED), "--out", str(root / "data")]) == EXIT_OK
    runs = {}
    for idx, light in enumerate(LAB_CONDITIONS, start=1):
        name = condition_dirname(idx, light)
        runs[light.pile_illuminance] = analyze(root / "data" / name, root / "analysis" / name)
    return runs


# --- 1 --------------------------------------------------------------------------

def test_criterion_1_swebrec_recovery():
    t0 = time.perf_counter()
    xs = np.exp(np.linspace(math.log(0.5), math.log(18.5), 20))
    ys = swebrec_eval(REF, xs)
    fit = swebrec_fit(list(zip(xs.tolist(), ys.tolist())))
    got = (fit.params.x_max, fit.params.x_50, fit.params.b)
    worst = max(abs(g - w) / w for g, w in zip(got, (19.0, 6.0, 2.0)))
    hits = 0
    for seed in range(10):
        noisy = np.clip(ys + np.random.default_rng(seed).normal(0.0, 0.01, ys.size), 1e-6, 1.0)
        f = swebrec_fit(list(zip(xs.tolist(), noisy.tolist())))
        hits += abs(f.params.x_50 - 6.0) / 6.0 <= 0.05
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and hits >= 9 and elapsed < 5.0
    record(1, ok, f"noiseless max rel err {worst:.2e}, noisy x50 within 5% in {hits}/10, {elapsed:.2f} s")


# --- 2 --------------------------------------------------------------------------

_property_failures = []


@settings(max_examples=1000, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
@given(
    st.lists(st.floats(0.5, 40.0), min_size=1, max_size=40),
    st.floats(0.0, 0.9),
    st.lists(st.floats(0.5, 30.0), min_size=1, max_size=8, unique=True),
)
def _distribution_properties(sizes, fines, sieves):
    cal = ScaleCalibration(1.0, "manual_trace", 1)
    p = build_distribution(make_net(sizes, unresolved_fraction=fines), cal, SieveSeries(sorted(sieves))).percents
    if not (np.all(np.diff(p) >= -1e-9) and p.min() >= 0.0 and p.max() <= 100.0 + 1e-9):
        _property_failures.append((sizes, fines, sieves))


def test_criterion_2_distribution_correctness():
    cal = ScaleCalibration(1.0, "manual_trace", 1)
    p = build_distribution(make_net([3, 10, 15]), cal, SieveSeries([4, 12.5, 19])).percents
    want = (100 * 27 / 4402, 100 * 1027 / 4402, 100.0)
    hand_ok = all(abs(a - b) <= 0.01 for a, b in zip(p, want)) and abs(p[0] - 0.61) <= 0.01 and abs(p[1] - 23.33) <= 0.01
    _property_failures.clear()
    _distribution_properties()
    ok = hand_ok and not _property_failures
    record(2, ok, f"hand case {p[0]:.4f}/{p[1]:.4f}/{p[2]:.4f} %, {len(_property_failures)} property failures in 1000 nets")


# --- 3, 4, 6, 7 -------------------------------------------------------------

def test_criterion_3_normal_lighting_envelope(lab):
    rc, rep, elapsed = lab[450.0]
    rows = rep["residuals"] if rep else []
    worst = max((abs(r["residual_pct"]) for r in rows), default=math.inf)
    ok = rc == EXIT_OK and rep["n_particles"] >= 300 and len(rows) == 4 and worst <= 30.0 and elapsed < 60.0
    record(3, ok, f"450 lx max |residual| {worst:.2f}% over {len(rows)} sieves, {rep['n_particles']} particles, analyze {elapsed:.1f} s")


def test_criterion_4_dark_failure(lab, tmp_path):
    dark = FIELD_CONDITIONS[-1]
    cfg = write_config(tmp_path / "dark.json", {"synth": {"lighting": [dark.to_dict()]}})
    assert main(["synth", "--config", cfg, "--seed", str(LAB_SEED), "--out", str(tmp_path / "data")]) == EXIT_OK
    rc3, rep3, _ = analyze(tmp_path / "data" / condition_dirname(1, dark), tmp_path / "out")
    rc11, rep11, _ = lab[11.0]
    fails_11 = rc11 != EXIT_OK or rep11["envelope_pass"] is False
    worst11 = max((abs(r["residual_pct"]) for r in (rep11 or {}).get("residuals") or []), default=float("nan"))
    ok = rc3 == EXIT_DARK and rep3["status"] == "low_contrast" and fails_11
    record(4, ok, f"{dark.pile_illuminance:g} lx exit {rc3}; 11 lx exit {rc11}, envelope_pass {rep11 and rep11['envelope_pass']}, max |residual| {worst11:.1f}%")


def test_criterion_6_artificial_light_recovery(lab):
    base = lab[450.0][1]["two_norm"]
    parts, ok = [], True
    for lx in (14.0, 18.0):
        rc, rep, _ = lab[lx]
        good = rc == EXIT_OK and rep["envelope_pass"] and rep["two_norm"] <= 2.0 * base
        ok &= bool(good)
        parts.append(f"{lx:g} lx 2-norm {rep['two_norm']:.3f} envelope {rep['envelope_pass']}")
    record(6, ok, f"450 lx 2-norm {base:.3f}; " + "; ".join(parts))


def test_criterion_7_scale_calibration(lab):
    pooled = lab[450.0][1]["scale"]["mm_per_px"]
    # an independent scene at a different scale, single frame
    spec = SceneSpec((0.35, 0.25), REF, 500, 7, ScaleSphere(60.0, (0.175, 0.125)), mm_per_px=0.25)
    ras = render(generate_pile(spec), LightingCondition(450.0), AutoExposure().sensor_for(450.0, 7))
    single = detect_scale_spheres(ras, 60.0).mm_per_px
    e1, e2 = abs(pooled / 0.3125 - 1), abs(single / 0.25 - 1)
    record(7, e1 <= 0.01 and e2 <= 0.01, f"pooled lab views {pooled:.5f} (err {e1:.3%}); 0.25 mm/px scene {single:.5f} (err {e2:.3%})")


# --- 5 --------------------------------------------------------------------------

def test_criterion_5_uneven_worse_than_even(tmp_path):
    uneven = LAB_CONDITIONS[2]
    even = dataclasses.replace(uneven, evenness=1.0, label="even")
    cfg = write_config(tmp_path / "c.json", {"synth": {"lighting": [even.to_dict(), uneven.to_dict()]}})
    wins, parts = 0, []
    for seed in UNEVEN_SEEDS:
        data = tmp_path / f"s{seed}"
        assert main(["synth", "--config", cfg, "--seed", str(seed), "--out", str(data)]) == EXIT_OK
        norms = []
        for idx, light in enumerate((even, uneven), start=1):
            name = condition_dirname(idx, light)
            rc, rep, _ = analyze(data / name, tmp_path / f"a{seed}" / name)
            norms.append(rep["two_norm"] if rc == EXIT_OK and rep["two_norm"] is not None else math.inf)
        wins += norms[1] > norms[0]
        parts.append(f"seed {seed}: {norms[0]:.2f} vs {norms[1]:.2f}")
    record(5, wins == 5, f"uneven > even in {wins}/5 ({'; '.join(parts)})")


# --- 8 --------------------------------------------------------------------------

def test_criterion_8_flight_plan():
    plan = plan_flight([(0, 0), (2, 0), (2, 2), (0, 2)])
    plan_ok = (
        len(plan.waypoints) == 9
        and all(wp.camera_tilt == 83.0 and wp.position[2] == 0.5 for wp in plan.waypoints)
        and plan.max_overlap() <= 0.10
    )
    rng = np.random.default_rng(8)
    cam = CameraModel(max_tilt=90.0)
    worst = 0.0
    for _ in range(100):
        x, y = rng.uniform(-3, 3, 2)
        z = rng.uniform(0.1, 3.0)
        tilt = rng.uniform(45.0, 90.0)
        q = footprint(cam, Waypoint((float(x), float(y), float(z)), float(tilt)))
        for (u, v), got in zip(((-1, -1), (1, -1), (1, 1), (-1, 1)), q):
            want = ray_ground_hit((x, y, z), tilt, cam.h_fov, cam.v_fov, u, v)
            worst = max(worst, math.hypot(got[0] - want[0], got[1] - want[1]))
    ok = plan_ok and worst <= 1e-9
    record(8, ok, f"{len(plan.waypoints)} waypoints, max overlap {plan.max_overlap():.3f}; ray-cast max deviation {worst:.2e} m over 100 poses")


# --- 9 --------------------------------------------------------------------------

SMALL = {
    "synth": {
        "particle_count": 500,
        "extent": [0.3, 0.17],
        "lighting": [{"pile_illuminance": 450, "label": "normal"}, {"pile_illuminance": 3, "label": "dark"}],
    }
}


def _run_all(root: Path, cfg: str):
    rcs = [main(["synth", "--config", cfg, "--seed", "9", "--out", str(root / "data")])]
    rcs.append(main(["analyze", str(root / "data" / "01_450lx_normal"), "--out", str(root / "a1")]))
    rcs.append(main(["analyze", str(root / "data" / "02_3lx_dark"), "--out", str(root / "a2")]))
    rcs.append(main(["compare", str(root / "a1"), "--reference", str(root / "data" / "truth_distribution.csv"), "--out", str(root / "cmp")]))
    rcs.append(main(["plot", str(root / "cmp" / "comparison.json"), "--out", str(root / "plot")]))
    poly = root / "pile.json"
    poly.write_text("[[0,0],[2,0],[2,2],[0,2]]")
    rcs.append(main(["plan", "--polygon", str(poly), "--out", str(root / "plan")]))
    return rcs


def _tree(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path):
    cfg = write_config(tmp_path / "small.json", SMALL)
    rc_a = _run_all(tmp_path / "a", cfg)
    rc_b = _run_all(tmp_path / "b", cfg)
    ta, tb = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    differ = sorted(k for k in ta.keys() | tb.keys() if ta.get(k) != tb.get(k))
    ok = rc_a == rc_b == [0, 0, 2, 0, 0, 0] and not differ
    record(9, ok, f"{len(ta)} files per tree, exit codes {rc_a}, {len(differ)} differing files {differ[:3]}")
