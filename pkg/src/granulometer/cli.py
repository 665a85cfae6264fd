"""Command-line pipeline: synth | analyze | compare | plan | plot.

Exit codes: 0 success, 1 usage or input error, 2 every image too dark to
delineate. All JSON is written with sorted keys and no wall-clock data unless
``--timings`` is given, so identical inputs and seed give identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import missionplan
from .delineation import (
    ScaleCalibration,
    SegmentationParams,
    calibration_from_trace,
    delineate_image,
    dynamic_range,
    find_scale_circles,
    match_to_truth,
    quality_reports_to_csv,
    scale_exclusion_mask,
)
from .errors import GranulometerError, LowContrast, NoScaleFound, ParseError, TooFewPoints
from .granulometry import (
    DEFAULT_ENVELOPE_PCT,
    DEFAULT_SIEVES_MM,
    FIT_SIEVES_MM,
    SieveSeries,
    SizeDistribution,
    SwebrecFit,
    SwebrecParams,
    build_distribution,
    combine_distributions,
    default_two_norm_range,
    envelope_check,
    percent_error_residuals,
    swebrec_eval,
    swebrec_fit,
    two_norm_error,
)
from .granulometry.metrics import residual_rows_to_csv
from .io import Raster, read_label_map, read_raster, read_scale_annotation, write_label_map, write_raster
from .synthcam import (
    FIELD_CONDITIONS,
    LAB_CONDITIONS,
    AutoExposure,
    LightingCondition,
    SceneSpec,
    ScaleSphere,
    crop,
    generate_pile,
    ground_truth_distribution,
    render,
    scene_extent_for_frames,
    view_origins,
)

EXIT_OK, EXIT_ERROR, EXIT_DARK = 0, 1, 2

LIGHTING_TABLES = {"lab": LAB_CONDITIONS, "field": FIELD_CONDITIONS}

DEFAULT_SYNTH = {
    "particle_count": 4000,
    "target": {"x_max": 19.0, "x_50": 6.0, "b": 2.0},
    "mm_per_px": 0.3125,
    "sphere_diameter_mm": 60.0,
    "lighting": "lab",
    "sieves": list(DEFAULT_SIEVES_MM),
    "jitter_px": 16,
    "auto_exposure": {},
}

REPORT_NAME = "report.json"
IMAGE_SUFFIXES = (".pgm", ".png")


class UsageError(GranulometerError):
    pass


# --- small helpers ----------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    """JSON config, or TOML when the file ends in .toml (needs ``tomli``)."""
    if not path:
        return {}
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".toml":
        try:
            import tomli
        except ImportError:
            raise UsageError("TOML configs need the 'tomli' package; use JSON instead") from None
        return tomli.loads(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "condition"


def condition_dirname(idx: int, light: LightingCondition) -> str:
    return f"{idx:02d}_{light.pile_illuminance:g}lx_{slug(light.label)}"


def _lighting_rows(spec) -> List[LightingCondition]:
    if isinstance(spec, str):
        try:
            return list(LIGHTING_TABLES[spec])
        except KeyError:
            raise UsageError(f"unknown lighting table {spec!r}; use one of {sorted(LIGHTING_TABLES)}") from None
    return [LightingCondition.from_dict(d) for d in spec]


def _fit_or_none(dist: SizeDistribution) -> Tuple[Optional[SwebrecFit], Optional[str]]:
    pts = [(s, p / 100.0) for s, p in dist.points if p > 0]
    try:
        return swebrec_fit(pts), None
    except GranulometerError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _points(dist: SizeDistribution) -> List[List[float]]:
    return [[s, p] for s, p in dist.points]


# --- synth ------------------------------------------------------------------

def cmd_synth(cfg: dict, seed: int, out: Path) -> int:
    c = {**DEFAULT_SYNTH, **cfg.get("synth", cfg)}
    sieves = SieveSeries(c["sieves"])
    lights = _lighting_rows(c["lighting"])
    if not lights:
        raise UsageError("lighting table is empty")
    count = int(c["particle_count"])
    if count < 1:
        raise UsageError(f"particle_count must be >= 1, got {count}")
    mmpp = float(c["mm_per_px"])
    extent = tuple(c.get("extent") or scene_extent_for_frames(mmpp))
    sphere = None
    if c.get("sphere_diameter_mm"):
        sphere = ScaleSphere(float(c["sphere_diameter_mm"]), (extent[0] / 2.0, extent[1] / 2.0))
    target = SwebrecParams(**{k: float(v) for k, v in c["target"].items()})
    spec = SceneSpec(extent, target, count, int(seed), sphere, mm_per_px=mmpp)
    ae = AutoExposure(**c["auto_exposure"])

    # everything is computed before the first write, so a failure leaves no partial tree
    scene = generate_pile(spec)
    truth = ground_truth_distribution(scene, sieves.merged(FIT_SIEVES_MM))
    origins = view_origins(scene.shape, jitter_px=int(c["jitter_px"]), seed=seed)
    sensor_seeds = np.random.SeedSequence([int(seed), 0x5E45]).generate_state(len(lights))
    renders = []
    for light, sseed in zip(lights, sensor_seeds):
        sensor = ae.sensor_for(light.pile_illuminance, int(sseed))
        renders.append((light, sensor, render(scene, light, sensor)))

    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "scene.json", dump_json({**scene.to_dict(), "seed": int(seed), "view_origins": [list(o) for o in origins]}))
    write_label_map(out / "truth_labels.pgm", scene.truth_label_map)
    write_text(out / "truth_distribution.csv", truth.to_csv())
    for idx, (light, sensor, ras) in enumerate(renders, start=1):
        d = out / condition_dirname(idx, light)
        d.mkdir(parents=True, exist_ok=True)
        meta = {
            "lighting": light.to_dict(),
            "sensor": {
                "exposure_gain": sensor.exposure_gain,
                "black_level": sensor.black_level,
                "noise_floor_sigma": sensor.noise_floor_sigma,
                "rng_seed": int(sensor.rng_seed),
            },
            "true_mm_per_px": mmpp,
            "views": [{"name": f"view_{k}.pgm", "origin": list(o)} for k, o in enumerate(origins)],
        }
        write_text(d / "condition.json", dump_json(meta))
        for k, o in enumerate(origins):
            write_raster(d / f"view_{k}.pgm", Raster.from_array(np.ascontiguousarray(crop(ras.samples, o))))
            write_label_map(d / f"truth_view_{k}.pgm", crop(scene.truth_label_map, o))
    print(f"wrote {len(renders)} condition(s) x {len(origins)} views to {out}")
    return EXIT_OK


# --- analyze ----------------------------------------------------------------

def list_images(folder: Path) -> List[Path]:
    if not folder.is_dir():
        raise UsageError(f"image directory {folder} does not exist")
    imgs = sorted(
        (p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and not p.name.startswith("truth_")),
        key=lambda p: _natural_key(p.name),
    )
    if not imgs:
        raise UsageError(f"no .pgm or .png images in {folder}")
    return imgs


def _natural_key(name: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name)]


def analyze_images(
    images: Sequence[Tuple[str, "object"]],
    sieves: SieveSeries,
    params: SegmentationParams = SegmentationParams(),
    sphere_diameter_mm: Optional[float] = 60.0,
    trace=None,
    reference: Optional[SizeDistribution] = None,
    lighting: Optional[LightingCondition] = None,
    truth_maps: Optional[Dict[str, np.ndarray]] = None,
    fines_policy: str = "below_smallest",
):
    """Run delineation and granulometry over a named image set.

    Returns (report dict, label maps by name, quality CSV text or None). The
    report's ``status`` is ``"low_contrast"`` when no image carries signal.
    """
    if (sphere_diameter_mm is None) == (trace is None):
        raise UsageError("exactly one scale source is required: sphere detection or a traced annotation")
    timings = {}
    t0 = time.perf_counter()

    dark = {}
    live = []
    for name, ras in images:
        rng = dynamic_range(ras)
        if rng < params.raw_contrast_floor:
            dark[name] = f"raw dynamic range {rng:.1f} below floor {params.raw_contrast_floor} gray levels"
        else:
            live.append((name, ras))
    base = {
        "kind": "analysis_report",
        "lighting": lighting.to_dict() if lighting else None,
        "sieves": list(sieves.sizes),
        "envelope_limit": DEFAULT_ENVELOPE_PCT,
        "reference": _reference_block(reference),
    }
    if not live:
        base.update(status="low_contrast", images=[{"name": n, "status": "low_contrast", "reason": r} for n, r in dark.items()])
        return base, {}, None

    # scale: detected spheres pooled over the set (fixed altitude, one scale for all views)
    circles_by_name = {}
    if trace is not None:
        cal = calibration_from_trace(trace)
    else:
        diameters = []
        for name, ras in live:
            cs = find_scale_circles(ras)
            circles_by_name[name] = cs
            diameters += [2.0 * c[2] for c in cs]
        if not diameters:
            raise NoScaleFound("no scale sphere detected in any image")
        cal = ScaleCalibration(
            float(sphere_diameter_mm) / float(np.mean(diameters)),
            "sphere_detect",
            len(diameters),
            tuple(c for cs in circles_by_name.values() for c in cs),
        )
    timings["scale_s"] = time.perf_counter() - t0

    nets, labels, per_image, qrows = [], {}, [], []
    fit_series = sieves.merged(FIT_SIEVES_MM)
    for name, ras in images:
        if name in dark:
            per_image.append({"name": name, "status": "low_contrast", "reason": dark[name]})
            continue
        cs = circles_by_name.get(name, ())
        excl = scale_exclusion_mask(ras.samples.shape, ScaleCalibration(cal.mm_per_px, cal.method, 1, tuple(cs))) if cs else None
        try:
            net = delineate_image(ras, params, exclude=excl)
        except LowContrast as exc:
            per_image.append({"name": name, "status": "low_contrast", "reason": str(exc)})
            continue
        nets.append(net)
        labels[name] = net.label_map
        entry = {
            "name": name,
            "status": "ok",
            "n_particles": len(net.particles),
            "unresolved_fraction": net.unresolved_fraction,
            "scale_objects": [list(c) for c in cs],
        }
        if net.particles or net.unresolved_fraction > 0:
            entry["distribution"] = _points(build_distribution(net, cal, sieves, fines_policy))
        per_image.append(entry)
        if truth_maps and name in truth_maps:
            qrows.append((name, match_to_truth(net, truth_maps[name])))
    timings["delineation_s"] = time.perf_counter() - t0 - timings["scale_s"]

    if not nets:
        base.update(status="low_contrast", images=per_image)
        return base, {}, None

    combined = combine_distributions([(n, cal) for n in nets], fit_series, fines_policy)
    fit, fit_err = _fit_or_none(combined)
    report = {
        **base,
        "status": "ok",
        "images": per_image,
        "scale": {"method": cal.method, "mm_per_px": cal.mm_per_px, "n_objects": cal.n_objects},
        "combined": {"basis": combined.basis, "points": _points(combined)},
        "fit": fit.to_dict() if fit else None,
        "fit_error": fit_err,
        "n_particles": sum(len(n.particles) for n in nets),
    }
    report.update(_accuracy(combined, fit, reference, sieves))
    timings["total_s"] = time.perf_counter() - t0
    report["_timings"] = timings
    qcsv = quality_reports_to_csv(qrows) if qrows else None
    return report, labels, qcsv


def _reference_block(reference: Optional[SizeDistribution]):
    if reference is None:
        return None
    fit, err = _fit_or_none(reference)
    return {"points": _points(reference), "fit": fit.to_dict() if fit else None, "fit_error": err}


def _accuracy(ia: SizeDistribution, ia_fit: Optional[SwebrecFit], reference: Optional[SizeDistribution], sieves: SieveSeries) -> dict:
    if reference is None:
        return {"residuals": None, "two_norm": None, "envelope_pass": None}
    rows = percent_error_residuals(ia, reference, sieves)
    ref_fit, _ = _fit_or_none(reference)
    tn = None
    if ia_fit is not None and ref_fit is not None:
        tn = two_norm_error(ia_fit.params, ref_fit.params, default_two_norm_range(sieves, ref_fit.params))
    return {
        "residuals": [{"size_mm": r.size, "p_ia": r.p_ia, "p_sa": r.p_sa, "residual_pct": r.residual} for r in rows],
        "two_norm": tn,
        "envelope_pass": envelope_check(rows),
    }


def read_reference(path: Path) -> SizeDistribution:
    ref = SizeDistribution.from_csv(Path(path).read_text(), source="sieve_analysis")
    if len(ref.points) < 3:
        raise TooFewPoints(f"reference {path} has {len(ref.points)} points; at least 3 are needed")
    return ref


def _segmentation_params(cfg: dict) -> SegmentationParams:
    return SegmentationParams(**cfg.get("segmentation", {}))


def cmd_analyze(args, cfg: dict) -> int:
    acfg = cfg.get("analyze", cfg)
    src = args.images or acfg.get("images")
    if not src:
        raise UsageError("analyze needs an image directory")
    folder = Path(src)
    paths = list_images(folder)
    sieves = SieveSeries(acfg.get("sieves", DEFAULT_SIEVES_MM))

    meta = {}
    if (folder / "condition.json").exists():
        meta = json.loads((folder / "condition.json").read_text())
    lighting = None
    if args.lux is not None:
        lighting = LightingCondition(float(args.lux), label=args.label or "")
    elif meta.get("lighting"):
        lighting = LightingCondition.from_dict(meta["lighting"])

    ref_path = args.reference or acfg.get("reference")
    if ref_path is None and (folder.parent / "truth_distribution.csv").exists():
        ref_path = folder.parent / "truth_distribution.csv"
    reference = read_reference(Path(ref_path)) if ref_path else None

    trace_path = args.scale_annotation or acfg.get("scale_annotation")
    sphere = args.sphere_diameter if args.sphere_diameter is not None else acfg.get("sphere_diameter_mm")
    if trace_path and sphere is not None:
        raise UsageError("give either --scale-annotation or --sphere-diameter, not both")
    trace = read_scale_annotation(Path(trace_path).read_text()) if trace_path else None
    if trace is None and sphere is None:
        sphere = 60.0

    images = [(p.name, read_raster(p)) for p in paths]
    truth_maps = {}
    for p in paths:
        t = p.with_name("truth_" + p.stem + ".pgm")
        if t.exists():
            truth_maps[p.name] = read_label_map(t)

    report, labels, qcsv = analyze_images(
        images,
        sieves,
        _segmentation_params(acfg),
        sphere_diameter_mm=None if trace is not None else float(sphere),
        trace=trace,
        reference=reference,
        lighting=lighting,
        truth_maps=truth_maps or None,
        fines_policy=acfg.get("fines_policy", "below_smallest"),
    )
    timings = report.pop("_timings", None)
    if args.timings and timings:
        report["timings"] = timings
    report["inputs"] = {"images": [p.name for p in paths], "reference": Path(ref_path).name if ref_path else None}

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / REPORT_NAME, dump_json(report))
    if report["status"] == "low_contrast":
        print(f"every image is too dark to delineate; report written to {out / REPORT_NAME}", file=sys.stderr)
        return EXIT_DARK

    write_text(out / "distribution.csv", SizeDistribution(tuple(map(tuple, report["combined"]["points"]))).to_csv())
    if report["residuals"] is not None:
        rows = percent_error_residuals(
            SizeDistribution(tuple(map(tuple, report["combined"]["points"]))), reference, sieves
        )
        write_text(out / "residuals.csv", residual_rows_to_csv(rows))
    if labels:
        (out / "labels").mkdir(exist_ok=True)
    for name, lab in labels.items():
        write_label_map(out / "labels" / (Path(name).stem + ".pgm"), lab)
    if qcsv:
        write_text(out / "quality.csv", qcsv)

    verdict = ""
    if report["envelope_pass"] is not None:
        verdict = f", envelope {'pass' if report['envelope_pass'] else 'FAIL'}"
        if report["two_norm"] is not None:
            verdict += f", 2-norm {report['two_norm']:.3f}"
    print(f"{report['n_particles']} particles at {report['scale']['mm_per_px']:.5f} mm/px{verdict}")
    return EXIT_OK


# --- compare ----------------------------------------------------------------

def _load_report(path: Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_NAME
    try:
        rep = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read report {p}: {exc}") from None
    if rep.get("kind") != "analysis_report":
        raise ParseError(f"{p} is not an analysis report")
    rep["_path"] = str(p)
    return rep


def _lux(rep: dict) -> float:
    light = rep.get("lighting") or {}
    return float(light.get("pile_illuminance", math.nan))


def _label(rep: dict) -> str:
    light = rep.get("lighting") or {}
    return light.get("label") or Path(rep["_path"]).parent.name


def compare_reports(reports: Sequence[dict], reference: SizeDistribution) -> dict:
    ref_fit, ref_err = _fit_or_none(reference)
    entries = []
    for rep in reports:
        sieves = SieveSeries(rep.get("sieves", DEFAULT_SIEVES_MM))
        entry = {"label": _label(rep), "lux": _lux(rep), "status": rep["status"], "source": Path(rep["_path"]).parent.name}
        if rep["status"] == "ok":
            ia = SizeDistribution(tuple(map(tuple, rep["combined"]["points"])))
            fit = SwebrecFit.from_dict(rep["fit"]) if rep.get("fit") else None
            acc = _accuracy(ia, fit, reference, sieves)
            entry.update(
                residuals=acc["residuals"],
                two_norm=acc["two_norm"],
                envelope_pass=acc["envelope_pass"],
                max_abs_residual=max(abs(r["residual_pct"]) for r in acc["residuals"]),
                combined=rep["combined"]["points"],
                fit=rep.get("fit"),
            )
        entries.append(entry)
    # Table order: by illuminance, brightest first; unlabeled runs last
    entries.sort(key=lambda e: (math.isnan(e["lux"]), -e["lux"] if not math.isnan(e["lux"]) else 0.0, e["label"]))
    return {
        "kind": "comparison",
        "envelope_limit": DEFAULT_ENVELOPE_PCT,
        "reference": {"points": _points(reference), "fit": ref_fit.to_dict() if ref_fit else None, "fit_error": ref_err},
        "entries": entries,
    }


def _num(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(v)


def comparison_csv(cmp: dict) -> str:
    lines = ["label,lux,size_mm,p_ia,p_sa,residual_pct"]
    for e in cmp["entries"]:
        for r in e.get("residuals") or []:
            lines.append(",".join([_csv_text(e["label"]), _num(e["lux"]), _num(r["size_mm"]), _num(r["p_ia"]), _num(r["p_sa"]), _num(r["residual_pct"])]))
    return "\n".join(lines) + "\n"


def summary_csv(cmp: dict) -> str:
    lines = ["label,lux,status,two_norm,max_abs_residual_pct,envelope_pass"]
    for e in cmp["entries"]:
        ep = e.get("envelope_pass")
        lines.append(
            ",".join(
                [
                    _csv_text(e["label"]),
                    _num(e["lux"]),
                    e["status"],
                    _num(e.get("two_norm")),
                    _num(e.get("max_abs_residual")),
                    "" if ep is None else str(bool(ep)).lower(),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _csv_text(s: str) -> str:
    return '"' + s.replace('"', '""') + '"' if ("," in s or '"' in s) else s


def cmd_compare(args, cfg: dict) -> int:
    ref_path = args.reference or cfg.get("compare", cfg).get("reference")
    if not ref_path:
        raise UsageError("compare needs --reference")
    reference = read_reference(Path(ref_path))
    if not args.reports:
        raise UsageError("compare needs at least one report")
    reports = [_load_report(Path(p)) for p in args.reports]
    cmp = compare_reports(reports, reference)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "comparison.json", dump_json(cmp))
    write_text(out / "comparison.csv", comparison_csv(cmp))
    write_text(out / "summary.csv", summary_csv(cmp))
    sys.stdout.write(summary_csv(cmp))
    return EXIT_OK


# --- plan -------------------------------------------------------------------

def cmd_plan(args, cfg: dict) -> int:
    pcfg = cfg.get("plan", cfg)
    poly_path = args.polygon or pcfg.get("polygon")
    if not poly_path:
        raise UsageError("plan needs --polygon")
    polygon = missionplan.read_polygon(Path(poly_path).read_text())
    cam = missionplan.CameraModel(**pcfg.get("camera", {}))
    altitude = args.altitude if args.altitude is not None else float(pcfg.get("altitude", missionplan.DEFAULT_ALTITUDE_M))
    tilt = args.tilt if args.tilt is not None else float(pcfg.get("tilt", missionplan.DEFAULT_TILT_DEG))
    budget = float(pcfg.get("overlap_budget", missionplan.DEFAULT_OVERLAP_BUDGET))
    plan = missionplan.plan_flight(polygon, altitude, tilt, cam, overlap_budget=budget)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "plan.csv", plan.to_csv())
    write_text(out / "plan.json", plan.to_json())
    gsd = missionplan.ground_sample_distance(cam, altitude)
    print(f"{len(plan.waypoints)} waypoints, max pairwise overlap {plan.max_overlap():.4f}, GSD {gsd:.3f} mm/px at {altitude} m")
    return EXIT_OK


# --- plot -------------------------------------------------------------------

def _comparison_from_inputs(paths: Sequence[str]) -> dict:
    docs = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            p = p / REPORT_NAME
        try:
            docs.append((p, json.loads(p.read_text())))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read {p}: {exc}") from None
    if not docs:
        raise UsageError("plot needs at least one report or comparison file")
    if len(docs) == 1 and docs[0][1].get("kind") == "comparison":
        return docs[0][1]
    reports = []
    for p, d in docs:
        if d.get("kind") != "analysis_report":
            raise ParseError(f"{p} is neither an analysis report nor a comparison")
        d["_path"] = str(p)
        reports.append(d)
    ref = next((r["reference"] for r in reports if r.get("reference")), None)
    if ref is None:
        raise ParseError("no report carries a reference distribution to plot against")
    reference = SizeDistribution(tuple(map(tuple, ref["points"])), source="sieve_analysis")
    return compare_reports(reports, reference)


def plot_figures(cmp: dict, out: Path) -> List[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "granulometer"
    plt.rcParams["svg.fonttype"] = "path"
    out.mkdir(parents=True, exist_ok=True)
    limit = float(cmp.get("envelope_limit", DEFAULT_ENVELOPE_PCT)) / 100.0
    ref = cmp["reference"]
    ref_pts = np.array(ref["points"], dtype=float)
    entries = [e for e in cmp["entries"] if e["status"] == "ok"]

    # distribution with the error envelope
    lo = max(min(ref_pts[:, 0]) / 2.0, 1e-3)
    hi = max(ref_pts[:, 0]) * 1.2
    xs = np.exp(np.linspace(math.log(lo), math.log(hi), 200))
    if ref.get("fit"):
        ys = 100.0 * swebrec_eval(SwebrecFit.from_dict(ref["fit"]).params, xs)
    else:
        ys = SizeDistribution(tuple(map(tuple, ref_pts))).at(xs)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    band = ax.fill_between(xs, ys * (1 - limit), np.minimum(ys * (1 + limit), 100.0), color="0.85", linewidth=0)
    band.set_gid("envelope")
    (line,) = ax.plot(xs, ys, color="black", linewidth=1.5, label="reference")
    line.set_gid("reference-curve")
    ax.plot(ref_pts[:, 0], ref_pts[:, 1], "s", color="black", markersize=4, gid="reference-points")
    for e in entries:
        rows = e["residuals"]
        sx = [r["size_mm"] for r in rows]
        sy = [r["p_ia"] for r in rows]
        ax.plot(sx, sy, "o-", markersize=4, linewidth=0.8, label=f"{e['label']} ({e['lux']:g} lx)", gid=f"condition-{e['lux']:g}lx")
    ax.set_xscale("log")
    ax.set_xlabel("size (mm)")
    ax.set_ylabel("percent passing (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=7, loc="upper left")
    fig.tight_layout()
    p1 = out / "distribution.svg"
    fig.savefig(p1, format="svg", metadata={"Date": None})
    plt.close(fig)

    # illuminance against 2-norm error
    fig, ax = plt.subplots(figsize=(6, 4))
    for e in entries:
        if e.get("two_norm") is None or math.isnan(e["lux"]) or e["lux"] <= 0:
            continue
        color = "tab:green" if e["envelope_pass"] else "tab:red"
        ax.scatter([e["lux"]], [e["two_norm"]], color=color, s=30, gid=f"point-{e['lux']:g}lx")
        ax.annotate(e["label"], (e["lux"], e["two_norm"]), fontsize=7, xytext=(4, 4), textcoords="offset points")
    ax.set_xscale("log")
    ax.set_xlabel("illuminance of the pile (lx)")
    ax.set_ylabel("2-norm error (percentage points)")
    fig.tight_layout()
    p2 = out / "two_norm.svg"
    fig.savefig(p2, format="svg", metadata={"Date": None})
    plt.close(fig)
    return [p1, p2]


def cmd_plot(args, cfg: dict) -> int:
    cmp = _comparison_from_inputs(args.inputs)
    for p in plot_figures(cmp, Path(args.out)):
        print(f"wrote {p}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors share exit code 1; 2 is reserved for dark image sets
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON (or TOML) configuration file")
    common.add_argument("--seed", type=_seed, default=0, help="master RNG seed (default 0)")
    common.add_argument("--out", default="out", help="output directory")

    p = _Parser(prog="granulometer", description="Rock fragment granulometry from images under varied lighting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="render a synthetic pile under a lighting table")

    a = sub.add_parser("analyze", parents=[common], help="delineate an image set and build its size distribution")
    a.add_argument("images", nargs="?", help="directory of .pgm/.png views")
    a.add_argument("--reference", help="reference distribution CSV (size_mm,percent_passing)")
    a.add_argument("--scale-annotation", help="traced scale circles (cx,cy,radius,diameter_mm)")
    a.add_argument("--sphere-diameter", type=float, help="scale sphere diameter in mm (default 60)")
    a.add_argument("--lux", type=float, help="pile illuminance, overrides condition.json")
    a.add_argument("--label", help="condition label used with --lux")
    a.add_argument("--timings", action="store_true", help="add wall-clock timings to the report")

    c = sub.add_parser("compare", parents=[common], help="compare reports against a reference distribution")
    c.add_argument("reports", nargs="*", help="report.json files or analysis output directories")
    c.add_argument("--reference", help="reference distribution CSV")

    pl = sub.add_parser("plan", parents=[common], help="nine-image flight plan over a pile polygon")
    pl.add_argument("--polygon", help="pile polygon as JSON [[x, y], ...] or CSV x,y lines (m)")
    pl.add_argument("--altitude", type=float, help="m above the pile (default 0.5)")
    pl.add_argument("--tilt", type=float, help="camera tilt below the horizon in degrees (default 83)")

    pt = sub.add_parser("plot", parents=[common], help="SVG figures from reports or a comparison")
    pt.add_argument("inputs", nargs="+", help="comparison.json, report.json files or analysis directories")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "synth":
            return cmd_synth(cfg, args.seed, Path(args.out))
        handler = {"analyze": cmd_analyze, "compare": cmd_compare, "plan": cmd_plan, "plot": cmd_plot}[args.command]
        return handler(args, cfg)
    except (GranulometerError, ValueError, OSError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
