"""File formats, manifests, and synthetic oracle scenes.

Point-map container (little-endian throughout):

    bytes 0..7    magic "UPM1" followed by four zero bytes
    bytes 8..11   width, uint32
    bytes 12..15  height, uint32
    bytes 16..19  flags, uint32; bit 0 set when a validity raster follows
    payload       width*height*3 float32, row-major, (x, y, z) per pixel
    validity      width*height bytes of 0/1 (only when flags bit 0 is set)

Masks are 8-bit grayscale PNGs binarized at threshold 128; images are
8-bit RGB PNGs. A manifest is a JSON array of scene entries with keys
composite, object_mask, shadow_mask (optional), point_map, tag, and the
optional extras id, gt_image, group, light; unknown keys are ignored.
Paths are resolved relative to the manifest file.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_closing

from .casting import cast_points
from .compositing import AffineParams, render_preview
from .errors import (
    CorruptPointMapError,
    DataError,
    DimensionMismatchError,
    ManifestError,
    PointMapFormatError,
)
from .geometry import (
    BinaryMask,
    PinholeModel,
    PointMap,
    ReceiverPlane,
    UnitLightDirection,
    light_from_angles,
)

POINTMAP_MAGIC = b"UPM1\x00\x00\x00\x00"
FLAG_HAS_VALIDITY = 1
TAGS = ("BOS", "BOS-free")


# ---------------------------------------------------------------------------
# Point-map container
# ---------------------------------------------------------------------------


def write_pointmap(path: str | Path, pm: PointMap) -> None:
    """Serialize a point map; positions are stored as float32."""
    payload = pm.points.astype("<f4").tobytes()
    validity = pm.valid.astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(POINTMAP_MAGIC)
        fh.write(struct.pack("<III", pm.width, pm.height, FLAG_HAS_VALIDITY))
        fh.write(payload)
        fh.write(validity)


def read_pointmap(path: str | Path) -> PointMap:
    """Parse a point-map file, rejecting wrong magic, truncation, and
    non-finite or non-positive-depth valid pixels."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 20:
        raise PointMapFormatError(f"{path}: truncated header")
    if blob[:8] != POINTMAP_MAGIC:
        raise PointMapFormatError(f"{path}: bad magic {blob[:8]!r}")
    width, height, flags = struct.unpack("<III", blob[8:20])
    n = width * height
    end = 20 + n * 12
    if len(blob) < end:
        raise PointMapFormatError(f"{path}: truncated payload")
    points = (
        np.frombuffer(blob[20:end], dtype="<f4")
        .reshape(height, width, 3)
        .astype(np.float64)
    )
    if flags & FLAG_HAS_VALIDITY:
        if len(blob) < end + n:
            raise PointMapFormatError(f"{path}: truncated validity raster")
        valid = np.frombuffer(blob[end:end + n], dtype=np.uint8).reshape(height, width) != 0
    else:
        valid = np.ones((height, width), dtype=bool)

    sel = points[valid]
    if sel.size and not np.all(np.isfinite(sel)):
        raise CorruptPointMapError(f"{path}: non-finite values in valid pixels")
    if sel.size and not np.all(sel[:, 2] > 0.0):
        raise CorruptPointMapError(f"{path}: non-positive depth in valid pixels")
    return PointMap(points=points, valid=valid)


# ---------------------------------------------------------------------------
# PNG rasters
# ---------------------------------------------------------------------------


def save_mask(path: str | Path, mask: BinaryMask) -> None:
    Image.fromarray(mask.bits.astype(np.uint8) * 255, mode="L").save(path)


def load_mask(path: str | Path) -> BinaryMask:
    with Image.open(path) as img:
        return BinaryMask.from_grayscale(np.asarray(img.convert("L")))


def save_image(path: str | Path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


# ---------------------------------------------------------------------------
# Scene tuples and manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneTuple:
    """Paths of one dataset tuple plus its split tag."""

    composite: Path
    object_mask: Path
    point_map: Path
    tag: str
    shadow_mask: Path | None = None
    gt_image: Path | None = None
    item_id: str = ""
    group: str = ""
    light: dict | None = None


@dataclass(frozen=True, eq=False)
class LoadedScene:
    scene: SceneTuple
    composite: np.ndarray
    object_mask: BinaryMask
    point_map: PointMap
    shadow_mask: BinaryMask | None = None
    gt_image: np.ndarray | None = None

    @property
    def truth_light(self) -> UnitLightDirection | None:
        rec = self.scene.light
        if not rec:
            return None
        return light_from_angles(
            math.radians(rec["phi_deg"]), math.radians(rec["theta_deg"])
        )


def scene_from_entry(entry: dict, base_dir: str | Path) -> SceneTuple:
    base = Path(base_dir)
    try:
        tag = entry["tag"]
        composite = base / entry["composite"]
        object_mask = base / entry["object_mask"]
        point_map = base / entry["point_map"]
    except KeyError as exc:
        raise ManifestError(f"manifest entry missing required key {exc}") from exc
    if tag not in TAGS:
        raise ManifestError(f"unknown scene tag {tag!r}; expected one of {TAGS}")
    shadow = base / entry["shadow_mask"] if entry.get("shadow_mask") else None
    gt = base / entry["gt_image"] if entry.get("gt_image") else None
    return SceneTuple(
        composite=composite,
        object_mask=object_mask,
        point_map=point_map,
        tag=tag,
        shadow_mask=shadow,
        gt_image=gt,
        item_id=str(entry.get("id", Path(entry["composite"]).stem)),
        group=str(entry.get("group", "")),
        light=entry.get("light"),
    )


def load_manifest(path: str | Path) -> list[SceneTuple]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    return [scene_from_entry(e, path.parent) for e in entries]


def load_scene(scene: SceneTuple) -> LoadedScene:
    """Load and cross-validate one tuple; all rasters must share dims."""
    for p in (scene.composite, scene.object_mask, scene.point_map,
              scene.shadow_mask, scene.gt_image):
        if p is not None and not Path(p).exists():
            raise ManifestError(f"missing file: {p}")

    composite = load_image(scene.composite)
    object_mask = load_mask(scene.object_mask)
    point_map = read_pointmap(scene.point_map)

    dims = composite.shape[:2]

    def check(name: str, shape: tuple[int, int], path):
        if shape != dims:
            raise DimensionMismatchError(
                f"{path}: {name} is {shape[1]}x{shape[0]} but composite "
                f"{scene.composite} is {dims[1]}x{dims[0]}"
            )

    check("object mask", object_mask.bits.shape, scene.object_mask)
    check("point map", (point_map.height, point_map.width), scene.point_map)

    shadow = None
    if scene.shadow_mask is not None:
        shadow = load_mask(scene.shadow_mask)
        check("shadow mask", shadow.bits.shape, scene.shadow_mask)
    gt = None
    if scene.gt_image is not None:
        gt = load_image(scene.gt_image)
        check("ground-truth image", gt.shape[:2], scene.gt_image)

    return LoadedScene(
        scene=scene,
        composite=composite,
        object_mask=object_mask,
        point_map=point_map,
        shadow_mask=shadow,
        gt_image=gt,
    )


# ---------------------------------------------------------------------------
# Synthetic oracle scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """An axis-aligned box over a flat ground plane, lit by a single
    direction. The camera sits at the origin looking along +z; the ground
    is the plane y = ground_y (positive, below the optical axis)."""

    width: int = 128
    height: int = 128
    fx: float | None = None          # default: same as width
    fy: float | None = None
    cx: float | None = None          # default: image center
    cy: float | None = None
    ground_y: float = 1.5
    box_center_x: float = 0.0
    box_center_z: float = 4.0
    box_half_x: float = 0.5
    box_half_z: float = 0.5
    box_height: float = 1.0
    box_clearance: float = 0.0       # gap between box bottom and ground
    phi_deg: float = 40.0
    theta_deg: float = 35.0
    seed: int = 0
    tag: str = "BOS-free"
    name: str = "scene"
    # close single-pixel holes in the rasterized shadow. Needed for steep
    # lights, where the casting surface is seen coarser than the receiver
    # below it; off by default because closing fattens thin shadow strips.
    fill_holes: bool = False

    def model(self) -> PinholeModel:
        return PinholeModel(
            fx=self.fx if self.fx is not None else float(self.width),
            fy=self.fy if self.fy is not None else float(self.height),
            cx=self.cx if self.cx is not None else (self.width - 1) / 2.0,
            cy=self.cy if self.cy is not None else (self.height - 1) / 2.0,
        )

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([
            self.box_center_x - self.box_half_x,
            self.ground_y - self.box_clearance - self.box_height,
            self.box_center_z - self.box_half_z,
        ])
        hi = np.array([
            self.box_center_x + self.box_half_x,
            self.ground_y - self.box_clearance,
            self.box_center_z + self.box_half_z,
        ])
        return lo, hi


@dataclass(frozen=True, eq=False)
class SynthScene:
    spec: SynthSpec
    point_map: PointMap
    object_mask: BinaryMask
    shadow_mask: BinaryMask
    composite: np.ndarray
    truth: UnitLightDirection
    plane: ReceiverPlane
    model: PinholeModel


def _ray_box_entry(
    dx: np.ndarray, dy: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Entry parameter of rays (dx, dy, 1) from the origin into an AABB;
    inf where the ray misses."""
    tmin = np.zeros_like(dx)
    tmax = np.full_like(dx, np.inf)
    for d, a, b in ((dx, lo[0], hi[0]), (dy, lo[1], hi[1]),
                    (np.ones_like(dx), lo[2], hi[2])):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (a - 0.0) / d
            t2 = (b - 0.0) / d
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        # axis-parallel rays: inside the slab keeps current bounds,
        # outside kills the ray
        par = d == 0.0
        inside = (a <= 0.0) & (0.0 <= b)
        near = np.where(par, np.where(inside, -np.inf, np.inf), near)
        far = np.where(par, np.where(inside, np.inf, -np.inf), far)
        tmin = np.maximum(tmin, near)
        tmax = np.minimum(tmax, far)
    entry = np.where((tmax >= tmin) & (tmax > 0.0), np.maximum(tmin, 0.0), np.inf)
    return entry


def ray_hits_box(
    origins: np.ndarray, direction: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Whether rays from `origins` along a shared direction enter the AABB.

    Used by tests as an analytic occlusion oracle, independent of the
    cast-and-rasterize path that produces synthetic shadow masks."""
    tmin = np.full(origins.shape[0], -np.inf)
    tmax = np.full(origins.shape[0], np.inf)
    for axis in range(3):
        d = float(direction[axis])
        o = origins[:, axis]
        if d == 0.0:
            outside = (o < lo[axis]) | (o > hi[axis])
            tmax = np.where(outside, -np.inf, tmax)
            continue
        t1 = (lo[axis] - o) / d
        t2 = (hi[axis] - o) / d
        tmin = np.maximum(tmin, np.minimum(t1, t2))
        tmax = np.minimum(tmax, np.maximum(t1, t2))
    return (tmax >= np.maximum(tmin, 0.0)) & (tmax > 0.0)


def synthesize(spec: SynthSpec) -> SynthScene:
    """Build a deterministic analytic scene with its ground-truth light.

    The shadow mask is produced by hard-casting a 4x supersampled set of
    visible box-surface points at the truth light and marking the nearest
    receiver pixels. Raises DataError when the box pokes below the ground
    or the elevation leaves (0, 85] degrees.
    """
    if spec.box_clearance < 0.0:
        raise DataError("box extends below the ground plane")
    if not 0.0 < spec.theta_deg <= 85.0:
        raise DataError("synthetic elevation must lie in (0, 85] degrees")

    model = spec.model()
    h, w = spec.height, spec.width
    g = spec.ground_y
    lo, hi = spec.box_bounds()

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))

    def trace(us, vs):
        dx = (us - model.cx) / model.fx
        dy = (vs - model.cy) / model.fy
        with np.errstate(divide="ignore"):
            t_ground = np.where(dy > 1e-12, g / dy, np.inf)
        t_box = _ray_box_entry(dx, dy, lo, hi)
        t = np.minimum(t_ground, t_box)
        hit = np.isfinite(t)
        pts = np.stack([dx * t, dy * t, t], axis=-1)
        pts[~hit] = 0.0
        return pts, hit, t_box < t_ground

    points, valid, is_box = trace(uu, vv)
    pm = PointMap(points=points, valid=valid)
    object_mask = BinaryMask(is_box & valid)
    plane = ReceiverPlane(anchor=np.array([0.0, g, spec.box_center_z]),
                          normal=np.array([0.0, -1.0, 0.0]))
    truth = light_from_angles(math.radians(spec.phi_deg), math.radians(spec.theta_deg))

    # shadow mask: hard-cast the visible object surface (pixel centers,
    # the same samples any consumer of this point map casts) at the truth
    # light and mark nearest pixels. Morphological cleanup stays opt-in:
    # closing fattens thin shadow strips by half a pixel, and that bias is
    # larger than everything else in the light-recovery error budget.
    hits, _ = cast_points(points[object_mask.bits], truth, plane, model, (h, w))
    shadow = np.zeros((h, w), dtype=bool)
    if hits.shape[0]:
        px = model.fx * hits[:, 0] / hits[:, 2] + model.cx
        py = model.fy * hits[:, 1] / hits[:, 2] + model.cy
        shadow[np.round(py).astype(int), np.round(px).astype(int)] = True
    if spec.fill_holes:
        shadow = binary_closing(shadow, structure=np.ones((3, 3), dtype=bool))
    shadow &= valid & ~object_mask.bits
    shadow_mask = BinaryMask(shadow)

    # flat-shaded composite with seeded texture noise, darkened in shadow
    rng = np.random.default_rng(spec.seed)
    base = np.zeros((h, w, 3), dtype=np.float64)
    base[:] = (135.0, 170.0, 220.0)              # sky
    base[valid & ~is_box] = (205.0, 200.0, 190.0)  # ground
    base[object_mask.bits] = (180.0, 95.0, 60.0)
    base += rng.integers(-12, 13, size=(h, w, 1)).astype(np.float64)
    composite = render_preview(
        np.clip(base, 0, 255).astype(np.uint8),
        shadow_mask,
        AffineParams(scale=0.55, bias=0.0),
    )

    return SynthScene(
        spec=spec,
        point_map=pm,
        object_mask=object_mask,
        shadow_mask=shadow_mask,
        composite=composite,
        truth=truth,
        plane=plane,
        model=model,
    )


def write_scene(synth: SynthScene, out_dir: str | Path) -> SceneTuple:
    """Write a synthesized scene plus its truth-light record and return a
    manifest-ready tuple. Byte-deterministic for a fixed spec."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = synth.spec.name
    save_image(out / f"{name}_composite.png", synth.composite)
    save_mask(out / f"{name}_object.png", synth.object_mask)
    save_mask(out / f"{name}_shadow.png", synth.shadow_mask)
    write_pointmap(out / f"{name}_points.upm", synth.point_map)

    light = {
        "phi_deg": synth.spec.phi_deg,
        "theta_deg": synth.spec.theta_deg,
        "vector": [float(x) for x in synth.truth.vector],
    }
    (out / f"{name}_light.json").write_text(json.dumps(light, indent=2, sort_keys=True))

    entry = {
        "id": name,
        "composite": f"{name}_composite.png",
        "object_mask": f"{name}_object.png",
        "shadow_mask": f"{name}_shadow.png",
        "point_map": f"{name}_points.upm",
        "tag": synth.spec.tag,
        "light": light,
    }
    return scene_from_entry(entry, out)


def random_scene_spec(
    seed: int,
    width: int = 128,
    height: int = 128,
    theta_range_deg: tuple[float, float] = (15.0, 75.0),
    min_shadow_pixels: int = 150,
    max_offscreen_fraction: float = 0.02,
    min_visible_fraction: float = 0.7,
    min_shadow_length_px: float = 10.0,
) -> SynthSpec:
    """Draw a random box pose and light, retrying deterministically until
    the cast shadow is large, in frame, mostly visible, and long enough
    (at working resolution) to constrain both light angles.

    Shadows hidden behind the occluder, clipped by the frame, or spanning
    only a few working pixels carry too little evidence about the light;
    such draws are rejected the same way unreliable scenes are excluded
    from supervision in practice. Steeper lights get nearer boxes and a
    longer lens so their shorter shadows stay observable.
    """
    rng = np.random.default_rng(seed)
    for _ in range(300):
        theta = float(rng.uniform(*theta_range_deg))
        if theta < 40.0:
            z_range, h_range = (3.4, 4.4), (0.7, 1.2)
        elif theta < 60.0:
            z_range, h_range = (3.0, 4.0), (0.9, 1.35)
        else:
            z_range, h_range = (2.7, 3.5), (1.05, 1.45)
        spec = SynthSpec(
            width=width,
            height=height,
            fx=1.5 * width,
            fy=1.5 * width,
            cy=0.15 * height,  # camera framed on the ground ahead
            box_center_x=float(rng.uniform(-0.35, 0.35)),
            box_center_z=float(rng.uniform(*z_range)),
            box_half_x=float(rng.uniform(0.28, 0.5)),
            box_half_z=float(rng.uniform(0.28, 0.5)),
            box_height=float(rng.uniform(*h_range)),
            phi_deg=float(rng.uniform(0.0, 360.0)),
            theta_deg=theta,
            seed=seed,
            name=f"scene{seed:04d}",
        )
        length_px = (
            spec.fx * (64.0 / width) * spec.box_height
            / (math.tan(math.radians(theta)) * spec.box_center_z)
        )
        if length_px < min_shadow_length_px:
            continue
        scene = synthesize(spec)
        occ = scene.object_mask.bits & scene.point_map.valid
        hits, report = cast_points(
            scene.point_map.points[occ], scene.truth, scene.plane,
            scene.model, (height, width),
        )
        if scene.shadow_mask.count < min_shadow_pixels or report.n_cast == 0:
            continue
        if report.failure_fraction > max_offscreen_fraction:
            continue
        receiver = scene.point_map.valid & ~scene.object_mask.bits
        ix = np.clip(np.round(scene.model.fx * hits[:, 0] / hits[:, 2]
                              + scene.model.cx).astype(int), 0, width - 1)
        iy = np.clip(np.round(scene.model.fy * hits[:, 1] / hits[:, 2]
                              + scene.model.cy).astype(int), 0, height - 1)
        visible = float(receiver[iy, ix].mean())
        if visible >= min_visible_fraction:
            return spec
    raise DataError(f"could not draw a usable scene for seed {seed}")
