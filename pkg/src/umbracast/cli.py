"""Command-line surface.

Commands:
  cast       estimate + hard-cast a scene at a given light
  fit-light  recover the light direction from the observed shadow mask
  eval       dataset metric report with BOS / BOS-free / all splits
  preview    darken an image with a shadow mask for inspection
  synth      generate synthetic oracle scenes with known truth light

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
UMBRACAST_THREADS caps per-scene parallelism in eval and fit-light.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import casting, fitting, metrics, scene_io
from .compositing import AffineParams, render_preview
from .errors import DataError, ManifestError, NumericalError
from .geometry import fit_pinhole, fit_receiver_plane, light_from_angles


def thread_count() -> int:
    env = os.environ.get("UMBRACAST_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise DataError(f"UMBRACAST_THREADS must be an integer, got {env!r}") from exc
    return min(8, os.cpu_count() or 1)


def _parse_light(args) -> tuple[float, float]:
    """Angles in radians from --light 'phi,theta' (degrees) or --light-json."""
    if args.light_json:
        rec = json.loads(Path(args.light_json).read_text())
        return math.radians(rec["phi_deg"]), math.radians(rec["theta_deg"])
    try:
        phi_deg, theta_deg = (float(x) for x in args.light.split(","))
    except (ValueError, AttributeError) as exc:
        raise DataError(f"--light expects 'phi,theta' in degrees, got {args.light!r}") from exc
    return math.radians(phi_deg), math.radians(theta_deg)


def _save_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _save_heatmap(path: Path, table: np.ndarray, upscale: int = 4) -> None:
    lo, hi = float(table.min()), float(table.max())
    span = hi - lo if hi > lo else 1.0
    gray = np.round((table - lo) / span * 255.0).astype(np.uint8)
    gray = np.repeat(np.repeat(gray, upscale, axis=0), upscale, axis=1)
    from PIL import Image

    Image.fromarray(gray, mode="L").save(path)


def _density_png(path: Path, render: casting.ShadowRender) -> None:
    peak = float(render.density.max())
    scale = 255.0 / peak if peak > 0 else 0.0
    from PIL import Image

    Image.fromarray(np.round(render.density * scale).astype(np.uint8), mode="L").save(path)


def _scene_plane_model(loaded: scene_io.LoadedScene, seed: int):
    model = fit_pinhole(loaded.point_map)
    plane = fit_receiver_plane(loaded.point_map, loaded.object_mask, seed)
    return plane, model


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_cast(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phi, theta = _parse_light(args)
    light = light_from_angles(phi, theta)
    tau = math.radians(args.tau)
    for scene in scene_io.load_manifest(args.scene):
        loaded = scene_io.load_scene(scene)
        plane, model = _scene_plane_model(loaded, args.seed)
        estimate = casting.estimate_shadow(
            loaded.point_map, loaded.object_mask, light, tau
        )
        hits, report = casting.cast_hard(
            loaded.point_map, loaded.object_mask, light, plane, model
        )
        render = casting.soft_splat(
            hits, model, (loaded.point_map.height, loaded.point_map.width),
            sigma=args.sigma,
        )
        sid = scene.item_id
        scene_io.save_mask(out / f"{sid}_estimate.png", estimate.mask)
        _density_png(out / f"{sid}_render.png", render)
        _save_json(out / f"{sid}_cast_report.json", {
            "n_cast": report.n_cast,
            "n_negative_t": report.n_negative_t,
            "n_backfacing": report.n_backfacing,
            "n_offscreen": report.n_offscreen,
            "tau_deg": args.tau,
            "phi_deg": math.degrees(phi),
            "theta_deg": math.degrees(theta),
        })
        print(f"{sid}: cast {report.n_cast}/{report.n_total} points, "
              f"estimate {estimate.mask.count} px")
    return 0


def cmd_fit_light(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = fitting.FitConfig()
    if args.config:
        config = fitting.FitConfig.from_json(Path(args.config).read_text())
    scenes = scene_io.load_manifest(args.scene)

    def fit_one(scene: scene_io.SceneTuple):
        loaded = scene_io.load_scene(scene)
        if loaded.shadow_mask is None:
            raise DataError(f"{scene.item_id}: fit-light needs a shadow mask")
        plane, model = _scene_plane_model(loaded, args.seed)
        result, sweep = fitting.fit_light(
            loaded.point_map, loaded.object_mask, loaded.shadow_mask,
            plane, model, config,
        )
        return scene.item_id, result, sweep

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(fit_one, scenes))

    for sid, result, sweep in results:
        _save_json(out / f"{sid}_fit.json", fitting.fit_result_to_dict(result))
        _save_heatmap(out / f"{sid}_sweep.png", sweep.table)
        scene_io.save_mask(out / f"{sid}_fitted_mask.png", result.fitted_mask)
        print(f"{sid}: phi={math.degrees(result.direction.azimuth):.2f} deg, "
              f"theta={math.degrees(result.direction.elevation):.2f} deg, "
              f"converged={result.converged}")
    return 0


def _load_eval_item(scene: scene_io.SceneTuple, pred_dir: Path) -> metrics.EvalItem:
    loaded = scene_io.load_scene(scene)
    gen_path = pred_dir / f"{scene.item_id}.png"
    mask_path = pred_dir / f"{scene.item_id}_mask.png"
    for p in (gen_path, mask_path):
        if not p.exists():
            raise ManifestError(f"missing prediction file: {p}")
    if loaded.shadow_mask is None:
        raise DataError(f"{scene.item_id}: eval needs a ground-truth shadow mask")
    reference = loaded.gt_image if loaded.gt_image is not None else loaded.composite

    pred_dir_light = pred_dir / f"{scene.item_id}_light.json"
    pred_direction = None
    if pred_dir_light.exists():
        rec = json.loads(pred_dir_light.read_text())
        pred_direction = light_from_angles(
            math.radians(rec["phi_deg"]), math.radians(rec["theta_deg"])
        )
    return metrics.EvalItem(
        generated=scene_io.load_image(gen_path),
        reference=reference,
        pred_mask=scene_io.load_mask(mask_path),
        gt_mask=loaded.shadow_mask,
        tag=scene.tag,
        item_id=scene.item_id,
        pred_direction=pred_direction,
        gt_direction=loaded.truth_light,
    )


def cmd_eval(args) -> int:
    scenes = scene_io.load_manifest(args.manifest)
    pred_dir = Path(args.pred_dir)

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        items = list(pool.map(lambda s: _load_eval_item(s, pred_dir), scenes))

    if args.best_of:
        groups: dict[str, list[metrics.EvalItem]] = {}
        for item in items:
            key = next(s.group for s in scenes if s.item_id == item.item_id) or item.item_id
            groups.setdefault(key, []).append(item)
        items = [
            max(group, key=lambda it: metrics.ssim(it.generated, it.reference,
                                                   region=it.gt_mask))
            for group in groups.values()
        ]

    reports, failures = metrics.batch_report(items)
    angular = metrics.angular_report(
        [(it.tag, it.pred_direction, it.gt_direction) for it in items]
    )

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    base = out.with_suffix("") if out.suffix in (".json", ".csv") else out
    Path(f"{base}.json").write_text(metrics.report_json(reports, failures, angular))
    Path(f"{base}.csv").write_text(metrics.metrics_csv(reports, label=args.label))
    Path(f"{base}_angular.csv").write_text(metrics.angular_csv(angular))
    for item_id, message in failures:
        print(f"warning: {item_id}: {message}", file=sys.stderr)
    print(f"evaluated {reports['all'].count} items "
          f"({len(failures)} failures) -> {base}.json")
    return 0


def cmd_preview(args) -> int:
    scenes = scene_io.load_manifest(args.scene)
    if not 0 <= args.index < len(scenes):
        raise DataError(f"--index {args.index} outside manifest of {len(scenes)} scenes")
    loaded = scene_io.load_scene(scenes[args.index])
    mask = scene_io.load_mask(args.mask)
    preview = render_preview(
        loaded.composite, mask, AffineParams(scale=args.scale, bias=0.0)
    )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    scene_io.save_image(args.out, preview)
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    raw = json.loads(Path(args.spec).read_text())
    specs = raw if isinstance(raw, list) else [raw]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, record in enumerate(specs):
        if "random_seed" in record:
            spec = scene_io.random_scene_spec(
                int(record["random_seed"]),
                width=int(record.get("width", 128)),
                height=int(record.get("height", 128)),
            )
        else:
            known = {k: v for k, v in record.items()
                     if k in scene_io.SynthSpec.__dataclass_fields__}
            known.setdefault("name", f"scene{i:04d}")
            spec = scene_io.SynthSpec(**known)
        synth = scene_io.synthesize(spec)
        scene = scene_io.write_scene(synth, out)
        entries.append({
            "id": scene.item_id,
            "composite": scene.composite.name,
            "object_mask": scene.object_mask.name,
            "shadow_mask": scene.shadow_mask.name,
            "point_map": scene.point_map.name,
            "tag": scene.tag,
            "light": scene.light,
        })
        print(f"{scene.item_id}: object {synth.object_mask.count} px, "
              f"shadow {synth.shadow_mask.count} px")
    (out / "manifest.json").write_text(json.dumps(entries, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="umbracast",
        description="Shadow casting from point maps and light recovery from masks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cast", help="estimate + hard-cast scenes at a given light")
    p.add_argument("--scene", required=True, help="scene manifest JSON")
    p.add_argument("--light", help="'phi,theta' in degrees")
    p.add_argument("--light-json", help="JSON file with phi_deg/theta_deg")
    p.add_argument("--tau", type=float, default=5.0,
                   help="angular tolerance in degrees (default 5)")
    p.add_argument("--sigma", type=float, default=casting.DEFAULT_SIGMA,
                   help="splat kernel width in pixels")
    p.add_argument("--seed", type=int, default=0, help="plane-fit RANSAC seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cast)

    p = sub.add_parser("fit-light", help="recover the light from shadow masks")
    p.add_argument("--scene", required=True, help="scene manifest JSON")
    p.add_argument("--config", help="fit-config JSON")
    p.add_argument("--seed", type=int, default=0, help="plane-fit RANSAC seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_light)

    p = sub.add_parser("eval", help="dataset metric report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True,
                   help="directory with <id>.png and <id>_mask.png predictions")
    p.add_argument("--out", required=True, help="report base path")
    p.add_argument("--label", default="pred", help="row label in the CSV report")
    p.add_argument("--best-of", action="store_true",
                   help="keep the highest-LSSIM item per manifest group")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("preview", help="darken an image with a shadow mask")
    p.add_argument("--scene", required=True)
    p.add_argument("--index", type=int, default=0, help="manifest entry index")
    p.add_argument("--mask", required=True)
    p.add_argument("--scale", type=float, default=0.55)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("synth", help="generate synthetic oracle scenes")
    p.add_argument("--spec", required=True, help="scene spec JSON (object or array)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "cast" and not (args.light or args.light_json):
        parser.error("cast requires --light or --light-json")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
