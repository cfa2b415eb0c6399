"""Forward shadow synthesis.

Three paths from geometry + light to a shadow raster:

  estimate_shadow   -- plane-free angular-tolerance test over all
                       occluder/receiver pairs at a capped working
                       resolution (64x64 by default).
  cast_hard         -- exact ray-plane intersections from occluder points
                       along the flow direction, with per-point failure
                       accounting (negative ray parameter, back-facing,
                       off-screen).
  soft_splat        -- truncated-Gaussian splatting of cast points into a
                       density that varies smoothly with the light angles.

The pair test for occluder point O and receiver point R with flow
direction D = -light:

    v = R - O,   p = v . D,   q^2 = |v|^2 - p^2
    shadowed  iff  p > 0  and  q^2 <= tan(tau)^2 * p^2

i.e. R lies inside a cone of half-angle tau around D apexed at O.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyMaskError,
    GrazingLightError,
    NumericalError,
)
from .geometry import (
    BinaryMask,
    PinholeModel,
    PointMap,
    ReceiverPlane,
    UnitLightDirection,
    downsample_mask,
    downsample_pointmap,
    project_points,
)

GRAZING_EPS = 1e-8
DEFAULT_RESOLUTION = 64
DEFAULT_SIGMA = 1.5


@dataclass(frozen=True, eq=False)
class ShadowEstimate:
    """Angular-tolerance shadow estimate at working resolution."""

    mask: BinaryMask

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.mask.height, self.mask.width)


@dataclass(frozen=True, eq=False)
class ShadowRender:
    """Non-negative density raster. Each successfully splatted point
    deposits unit mass; mass_shortfall records what fell off-raster."""

    density: np.ndarray
    mass_shortfall: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.density, dtype=np.float64)
        if d.ndim != 2:
            raise DimensionMismatchError("density must be a 2D raster")
        if not np.all(np.isfinite(d)) or np.any(d < 0.0):
            raise NumericalError("density entries must be finite and >= 0")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @property
    def total_mass(self) -> float:
        return float(self.density.sum())


@dataclass(frozen=True)
class CastReport:
    """Per-category accounting of one hard cast; the four counts add up to
    the number of occluder points."""

    n_cast: int
    n_negative_t: int
    n_backfacing: int
    n_offscreen: int

    @property
    def n_total(self) -> int:
        return self.n_cast + self.n_negative_t + self.n_backfacing + self.n_offscreen

    @property
    def failure_fraction(self) -> float:
        total = self.n_total
        if total == 0:
            return 0.0
        return (self.n_negative_t + self.n_backfacing + self.n_offscreen) / total


# ---------------------------------------------------------------------------
# Angular-tolerance estimate
# ---------------------------------------------------------------------------


def _tan_sq(tau: float) -> float:
    # single code path so the kernel and its brute-force oracle share the
    # exact threshold value
    return float(np.tan(tau)) ** 2


def _check_estimate_inputs(pm: PointMap, object_mask: BinaryMask, tau: float):
    if (pm.height, pm.width) != (object_mask.height, object_mask.width):
        raise DimensionMismatchError(
            f"point map {pm.height}x{pm.width} vs object mask "
            f"{object_mask.height}x{object_mask.width}"
        )
    if not 0.0 <= tau < math.pi / 4:
        raise NumericalError(f"tau must lie in [0, pi/4), got {tau}")


def _working_scene(
    pm: PointMap, object_mask: BinaryMask, resolution: int | None
) -> tuple[PointMap, BinaryMask]:
    if resolution is None:
        return pm, object_mask
    out_h = min(resolution, pm.height)
    out_w = min(resolution, pm.width)
    return (
        downsample_pointmap(pm, out_h, out_w),
        downsample_mask(object_mask, out_h, out_w),
    )


def estimate_shadow(
    pm: PointMap,
    object_mask: BinaryMask,
    light: UnitLightDirection,
    tau: float,
    resolution: int | None = DEFAULT_RESOLUTION,
) -> ShadowEstimate:
    """Mark every receiver pixel shadowed by some occluder pixel.

    Occluders are valid object pixels; receivers are valid non-object
    pixels. Inputs larger than `resolution` are first downsampled (any-true
    pooling for the mask, block averages for positions). The pair test is
    an OR-reduction over occluders, so tiling is order-independent.
    """
    _check_estimate_inputs(pm, object_mask, tau)
    wpm, wobj = _working_scene(pm, object_mask, resolution)

    occ = wobj.bits & wpm.valid
    rec = wpm.valid & ~wobj.bits
    if not occ.any():
        raise EmptyMaskError("object mask has no valid pixels")

    out = np.zeros(occ.shape, dtype=bool)
    rr, rc = np.nonzero(rec)
    if rr.size == 0:
        return ShadowEstimate(mask=BinaryMask(out))

    opts = wpm.points[occ]
    rpts = wpm.points[rr, rc]
    dx, dy, dz = (-light.vector).tolist()
    t2 = _tan_sq(tau)

    ox = opts[:, 0][:, None]
    oy = opts[:, 1][:, None]
    oz = opts[:, 2][:, None]
    hit = np.zeros(rr.size, dtype=bool)
    chunk = 128  # keeps the pair blocks cache-resident
    for lo in range(0, rr.size, chunk):
        hi = min(lo + chunk, rr.size)
        vx = rpts[lo:hi, 0][None, :] - ox
        vy = rpts[lo:hi, 1][None, :] - oy
        vz = rpts[lo:hi, 2][None, :] - oz
        p = vx * dx + vy * dy + vz * dz
        pp = p * p
        q2 = (vx * vx + vy * vy + vz * vz) - pp
        hit[lo:hi] = ((p > 0.0) & (q2 <= t2 * pp)).any(axis=0)

    out[rr[hit], rc[hit]] = True
    return ShadowEstimate(mask=BinaryMask(out))


def estimate_shadow_bruteforce(
    pm: PointMap,
    object_mask: BinaryMask,
    light: UnitLightDirection,
    tau: float,
    resolution: int | None = DEFAULT_RESOLUTION,
) -> ShadowEstimate:
    """Oracle for estimate_shadow: a naive double loop over all
    occluder/receiver pairs with scalar arithmetic. Bit-identical to the
    vectorized kernel; intended for working resolutions up to 64x64."""
    _check_estimate_inputs(pm, object_mask, tau)
    wpm, wobj = _working_scene(pm, object_mask, resolution)
    if wpm.height > 64 or wpm.width > 64:
        raise NumericalError("brute-force oracle is limited to 64x64 rasters")

    occ = wobj.bits & wpm.valid
    rec = wpm.valid & ~wobj.bits
    if not occ.any():
        raise EmptyMaskError("object mask has no valid pixels")

    opts = [tuple(p) for p in wpm.points[occ].tolist()]
    dx, dy, dz = (-light.vector).tolist()
    t2 = _tan_sq(tau)

    out = np.zeros(occ.shape, dtype=bool)
    for r, c in zip(*np.nonzero(rec)):
        rx, ry, rz = wpm.points[r, c].tolist()
        for ox, oy, oz in opts:
            vx = rx - ox
            vy = ry - oy
            vz = rz - oz
            p = vx * dx + vy * dy + vz * dz
            pp = p * p
            q2 = (vx * vx + vy * vy + vz * vz) - pp
            if p > 0.0 and q2 <= t2 * pp:
                out[r, c] = True
                break
    return ShadowEstimate(mask=BinaryMask(out))


# ---------------------------------------------------------------------------
# Hard ray-plane casting
# ---------------------------------------------------------------------------


def cast_points(
    points: np.ndarray,
    light: UnitLightDirection,
    plane: ReceiverPlane,
    model: PinholeModel,
    dims: tuple[int, int],
) -> tuple[np.ndarray, CastReport]:
    """Intersect rays from `points` along -light with the receiver plane.

    dims is (height, width) of the raster used for the on-screen check; a
    projection is on-screen when it falls inside the pixel grid extent
    [-0.5, W-0.5) x [-0.5, H-0.5). Returns the valid intersections (M, 3)
    and the failure accounting. Raises GrazingLightError when the cast
    direction is parallel to the plane.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = -light.vector
    n = plane.normal
    denom = float(np.dot(d, n))
    if abs(denom) < GRAZING_EPS:
        raise GrazingLightError("cast direction is parallel to the receiver plane")

    t = ((plane.anchor - pts) @ n) / denom
    hits = pts + t[:, None] * d

    neg = t <= 0.0
    # a ray with t > 0 moving along +normal arrives from behind the plane
    back = ~neg & (denom > 0.0)
    front = ~neg & ~back

    height, width = dims
    off = np.zeros(pts.shape[0], dtype=bool)
    idx = np.nonzero(front)[0]
    if idx.size:
        fh = hits[idx]
        bad_z = fh[:, 2] <= 0.0
        uv = np.full((idx.size, 2), -1.0)
        good = ~bad_z
        if good.any():
            uv[good] = project_points(model, fh[good])
        inside = (
            good
            & (uv[:, 0] >= -0.5)
            & (uv[:, 0] < width - 0.5)
            & (uv[:, 1] >= -0.5)
            & (uv[:, 1] < height - 0.5)
        )
        off[idx[~inside]] = True

    ok = front & ~off
    report = CastReport(
        n_cast=int(ok.sum()),
        n_negative_t=int(neg.sum()),
        n_backfacing=int(back.sum()),
        n_offscreen=int(off.sum()),
    )
    return hits[ok], report


def cast_hard(
    pm: PointMap,
    object_mask: BinaryMask,
    light: UnitLightDirection,
    plane: ReceiverPlane,
    model: PinholeModel,
) -> tuple[np.ndarray, CastReport]:
    """cast_points over the valid object pixels of a point map."""
    if (pm.height, pm.width) != (object_mask.height, object_mask.width):
        raise DimensionMismatchError("point map and object mask dims differ")
    occ = object_mask.bits & pm.valid
    if not occ.any():
        raise EmptyMaskError("object mask has no valid pixels")
    return cast_points(pm.points[occ], light, plane, model, (pm.height, pm.width))


# ---------------------------------------------------------------------------
# Soft splatting
# ---------------------------------------------------------------------------


def soft_splat(
    points: np.ndarray,
    model: PinholeModel,
    out_dims: tuple[int, int],
    sigma: float = DEFAULT_SIGMA,
) -> ShadowRender:
    """Deposit a unit-mass truncated Gaussian (radius 3*sigma) at each
    point's continuous projection.

    The kernel is renormalized over its truncation disc, so a fully
    on-raster splat contributes exactly 1 to the total mass; portions
    falling outside the raster are dropped and accumulated in
    mass_shortfall. The density is a smooth function of the point
    positions (and hence of the light angles upstream).
    """
    if sigma <= 0.0:
        raise NumericalError("sigma must be positive")
    height, width = out_dims
    if height < 8 or width < 8:
        raise NumericalError("output raster must be at least 8x8")

    density = np.zeros((height, width))
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return ShadowRender(density=density, mass_shortfall=0.0)

    vis = pts[:, 2] > 0.0
    shortfall = float((~vis).sum())
    if not vis.any():
        return ShadowRender(density=density, mass_shortfall=shortfall)

    uv = project_points(model, pts[vis])
    radius = 3.0 * sigma
    # offsets beyond floor(radius) can never fall inside the truncation disc
    half = int(math.floor(radius + 1e-12))
    offs = np.arange(-half, half + 1)
    ogrid_x = np.tile(offs, offs.size)          # (K,)
    ogrid_y = np.repeat(offs, offs.size)        # (K,)

    base_x = np.round(uv[:, 0]).astype(np.int64)
    base_y = np.round(uv[:, 1]).astype(np.int64)
    px = base_x[:, None] + ogrid_x[None, :]     # (N, K) absolute columns
    py = base_y[:, None] + ogrid_y[None, :]
    ddx = px - uv[:, 0][:, None]
    ddy = py - uv[:, 1][:, None]
    r2 = ddx * ddx + ddy * ddy
    # rim-subtracted form: the kernel reaches 0 continuously at the
    # truncation radius, so taps entering or leaving the disc as a point
    # moves do not step the deposited mass
    rim = math.exp(-(radius * radius) / (2.0 * sigma * sigma))
    w = np.exp(-r2 / (2.0 * sigma * sigma)) - rim
    w[(r2 > radius * radius) | (w < 0.0)] = 0.0
    totals = w.sum(axis=1)
    # a point can only have zero support if every tap was truncated, which
    # cannot happen for radius >= 1; guard anyway
    totals[totals == 0.0] = 1.0
    w /= totals[:, None]

    inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    shortfall += float(w[~inside].sum())
    flat = py[inside] * width + px[inside]
    density = np.bincount(flat, weights=w[inside], minlength=height * width)
    density = density.reshape(height, width)
    return ShadowRender(density=density, mass_shortfall=shortfall)


def binarize_render(render: ShadowRender, rel_threshold: float = 0.5) -> BinaryMask:
    """Threshold a density at rel_threshold x its per-image maximum."""
    peak = float(render.density.max())
    if peak == 0.0:
        return BinaryMask(np.zeros_like(render.density, dtype=bool))
    return BinaryMask(render.density >= rel_threshold * peak)
