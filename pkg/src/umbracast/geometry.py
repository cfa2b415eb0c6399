"""Core spatial types and camera utilities.

Coordinate conventions used throughout the package:

  Camera frame (right-handed, standard computer vision):
    - Origin: camera optical center
    - x: right in the image
    - y: down in the image
    - z: forward along the optical axis

  Light direction: a unit vector pointing *toward* the source,
    l(phi, theta) = [-cos(phi)cos(theta), -sin(theta), -sin(phi)cos(theta)]
  with azimuth phi in [0, 2pi) and elevation theta in (-pi/2, pi/2).
  A source above the scene has theta > 0, so l.y < 0 (upward in image
  terms). The shadow flow direction is D = -l.

  Image frame: pixel (0, 0) is the top-left pixel center; u grows right,
  v grows down. Projection is continuous (not rounded).

All types are immutable after construction; operations are pure functions
and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateElevationError,
    DimensionMismatchError,
    InsufficientSupportError,
    NumericalError,
    SingularFitError,
)

_UNIT_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointMap:
    """Dense per-pixel 3D positions with a validity raster.

    points: (height, width, 3) float64, camera-frame positions.
    valid:  (height, width) bool. Every valid entry must be finite with
            z > 0; invalid entries are never read downstream.
    """

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        val = np.asarray(self.valid, dtype=bool)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise DimensionMismatchError(f"points must be (H, W, 3), got {pts.shape}")
        if val.shape != pts.shape[:2]:
            raise DimensionMismatchError(
                f"valid raster {val.shape} does not match points {pts.shape[:2]}"
            )
        sel = pts[val]
        if sel.size and not np.all(np.isfinite(sel)):
            raise NumericalError("valid point-map entries must be finite")
        if sel.size and not np.all(sel[:, 2] > 0.0):
            raise NumericalError("valid point-map entries must have z > 0")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "valid", _freeze(val))

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """2D binary raster; bits is (height, width) bool."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise DimensionMismatchError(f"mask must be 2D, got shape {b.shape}")
        object.__setattr__(self, "bits", _freeze(b))

    @classmethod
    def from_grayscale(cls, arr: np.ndarray) -> "BinaryMask":
        """8-bit grayscale to binary: values >= 128 map to True."""
        return cls(np.asarray(arr) >= 128)

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class UnitLightDirection:
    """Azimuth/elevation pair with the derived unit vector toward the source."""

    azimuth: float
    elevation: float
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (3,):
            raise DimensionMismatchError("light vector must have 3 components")
        if abs(float(np.linalg.norm(v)) - 1.0) > _UNIT_TOL:
            raise NumericalError("light vector must be unit length")
        if not -math.pi / 2 < self.elevation < math.pi / 2:
            raise DegenerateElevationError(
                f"elevation {self.elevation} outside (-pi/2, pi/2)"
            )
        object.__setattr__(self, "vector", _freeze(v))


@dataclass(frozen=True, eq=False)
class ReceiverPlane:
    """Point-normal plane; the normal is normalized and oriented to face
    the camera (normal . (0 - anchor) > 0)."""

    anchor: np.ndarray
    normal: np.ndarray
    inlier_tolerance: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.anchor, dtype=np.float64)
        n = np.asarray(self.normal, dtype=np.float64)
        if a.shape != (3,) or n.shape != (3,):
            raise DimensionMismatchError("plane anchor and normal must be 3-vectors")
        norm = float(np.linalg.norm(n))
        if norm == 0.0:
            raise NumericalError("plane normal must be nonzero")
        n = n / norm
        facing = float(np.dot(n, -a))
        if facing == 0.0:
            raise NumericalError("receiver plane passes through the camera origin")
        if facing < 0.0:
            n = -n
        object.__setattr__(self, "anchor", _freeze(a))
        object.__setattr__(self, "normal", _freeze(n))


@dataclass(frozen=True)
class PinholeModel:
    """Pinhole intrinsics in pixels. rms_residual records the reprojection
    RMS of the fit that produced the model (0 for exact models)."""

    fx: float
    fy: float
    cx: float
    cy: float
    rms_residual: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise NumericalError("focal lengths must be positive")


# ---------------------------------------------------------------------------
# Light parameterization
# ---------------------------------------------------------------------------


def light_from_angles(azimuth: float, elevation: float) -> UnitLightDirection:
    """Build the toward-source unit vector from azimuth/elevation (radians)."""
    if not -math.pi / 2 < elevation < math.pi / 2:
        raise DegenerateElevationError(
            "elevation must lie strictly inside (-pi/2, pi/2)"
        )
    azimuth = azimuth % (2.0 * math.pi)
    ct = math.cos(elevation)
    vec = np.array(
        [
            -math.cos(azimuth) * ct,
            -math.sin(elevation),
            -math.sin(azimuth) * ct,
        ]
    )
    # renormalize: cos/sin round-off can leave the norm 1 +/- few ulp
    vec /= np.linalg.norm(vec)
    return UnitLightDirection(azimuth=azimuth, elevation=elevation, vector=vec)


def angles_from_vector(v: np.ndarray) -> tuple[float, float]:
    """Inverse of light_from_angles; v need not be normalized.

    Raises DegenerateElevationError for the poles (0, +/-1, 0) where the
    azimuth is undefined, and NumericalError for the zero vector.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise DimensionMismatchError("expected a 3-vector")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise NumericalError("cannot derive angles from the zero vector")
    ux, uy, uz = (v / norm).tolist()
    if math.hypot(ux, uz) < _UNIT_TOL:
        raise DegenerateElevationError("vector points at a pole; azimuth undefined")
    elevation = math.asin(max(-1.0, min(1.0, -uy)))
    azimuth = math.atan2(-uz, -ux) % (2.0 * math.pi)
    return azimuth, elevation


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def project(model: PinholeModel, p: np.ndarray) -> tuple[float, float]:
    """Project one camera-frame point to continuous pixel coordinates."""
    p = np.asarray(p, dtype=np.float64)
    if p[2] <= 0.0:
        raise BehindCameraError(f"cannot project point with z = {p[2]}")
    return (
        model.fx * float(p[0]) / float(p[2]) + model.cx,
        model.fy * float(p[1]) / float(p[2]) + model.cy,
    )


def project_points(model: PinholeModel, pts: np.ndarray) -> np.ndarray:
    """Vectorized projection of (N, 3) points (all z > 0) to (N, 2) pixels."""
    pts = np.asarray(pts, dtype=np.float64)
    if pts.size and np.any(pts[:, 2] <= 0.0):
        raise BehindCameraError("all points must have z > 0")
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = model.fx * pts[:, 0] / pts[:, 2] + model.cx
    out[:, 1] = model.fy * pts[:, 1] / pts[:, 2] + model.cy
    return out


def scale_model(model: PinholeModel, sx: float, sy: float) -> PinholeModel:
    """Intrinsics for a raster resampled by factors (sx, sy).

    Uses the pixel-center mapping u' = (u + 0.5) * s - 0.5 so block
    centers stay aligned between resolutions.
    """
    return PinholeModel(
        fx=model.fx * sx,
        fy=model.fy * sy,
        cx=(model.cx + 0.5) * sx - 0.5,
        cy=(model.cy + 0.5) * sy - 0.5,
        rms_residual=model.rms_residual * max(sx, sy),
    )


def fit_pinhole(pm: PointMap) -> PinholeModel:
    """Least-squares pinhole intrinsics from a self-consistent point map.

    Solves u*z ~ fx*x + cx*z per axis over all valid pixels. Requires at
    least 50 valid points; raises SingularFitError when the points span a
    single ray (rank-deficient design).
    """
    vv, uu = np.nonzero(pm.valid)
    if vv.size < 50:
        raise InsufficientSupportError(
            f"need >= 50 valid points to fit intrinsics, have {vv.size}"
        )
    pts = pm.points[vv, uu]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]

    def solve_axis(coord, pix):
        design = np.stack([coord, z], axis=1)
        rhs = pix * z
        sol, _, rank, _ = np.linalg.lstsq(design, rhs, rcond=None)
        if rank < 2:
            raise SingularFitError("point map is degenerate (single-ray geometry)")
        return sol

    fx, cx = solve_axis(x, uu.astype(np.float64))
    fy, cy = solve_axis(y, vv.astype(np.float64))
    if fx <= 0 or fy <= 0:
        raise SingularFitError("fitted focal lengths are non-positive")

    du = fx * x / z + cx - uu
    dv = fy * y / z + cy - vv
    rms = math.sqrt(float(np.mean(du * du + dv * dv)) / 2.0)
    return PinholeModel(fx=float(fx), fy=float(fy), cx=float(cx), cy=float(cy),
                        rms_residual=rms)


# ---------------------------------------------------------------------------
# Receiver-plane fitting
# ---------------------------------------------------------------------------


def fit_receiver_plane(
    pm: PointMap,
    exclude: BinaryMask,
    seed: int,
    iterations: int = 500,
    tolerance_scale: float = 0.02,
    min_inlier_fraction: float = 0.3,
) -> ReceiverPlane:
    """RANSAC + total-least-squares fit of the dominant ground plane.

    Candidates are valid pixels outside `exclude` in the lower two thirds
    of the image (the receiver surface in upright photos). 3-point
    hypotheses are scored by inlier count at a tolerance of
    tolerance_scale x candidate depth range, then the best hypothesis is
    refined on its inliers. Deterministic for a fixed seed.
    """
    if pm.valid.shape != exclude.bits.shape:
        raise DimensionMismatchError("point map and exclude mask dims differ")
    cand_mask = pm.valid & ~exclude.bits
    cand_mask[: pm.height // 3, :] = False
    pts = pm.points[cand_mask]
    n = pts.shape[0]
    if n < 100:
        raise InsufficientSupportError(
            f"need >= 100 candidate points for plane fitting, have {n}"
        )

    depth_range = float(pts[:, 2].max() - pts[:, 2].min())
    tol = max(tolerance_scale * depth_range, 1e-12)

    rng = np.random.default_rng(seed)
    tri = rng.integers(0, n, size=(iterations, 3))
    a = pts[tri[:, 0]]
    normals = np.cross(pts[tri[:, 1]] - a, pts[tri[:, 2]] - a)
    lengths = np.linalg.norm(normals, axis=1)
    ok = lengths > 1e-12
    normals[ok] /= lengths[ok, None]

    best_idx, best_count = -1, -1
    chunk = 64
    for lo in range(0, iterations, chunk):
        hi = min(lo + chunk, iterations)
        # |(p - a) . n| per hypothesis x candidate
        dists = np.abs(pts @ normals[lo:hi].T - np.einsum("ij,ij->i", a[lo:hi], normals[lo:hi]))
        counts = (dists <= tol).sum(axis=0)
        counts[~ok[lo:hi]] = -1
        i = int(np.argmax(counts))
        if counts[i] > best_count:
            best_count = int(counts[i])
            best_idx = lo + i

    if best_count < min_inlier_fraction * n:
        raise InsufficientSupportError(
            f"best plane supports only {best_count}/{n} candidates"
        )

    # TLS refinement: centroid + smallest principal direction of the inliers.
    n0 = normals[best_idx]
    inl = pts[np.abs((pts - a[best_idx]) @ n0) <= tol]
    centroid = inl.mean(axis=0)
    _, _, vt = np.linalg.svd(inl - centroid, full_matrices=False)
    normal = vt[2]
    return ReceiverPlane(anchor=centroid, normal=normal, inlier_tolerance=tol)


# ---------------------------------------------------------------------------
# Working-resolution resampling
# ---------------------------------------------------------------------------


def _block_edges(size: int, out: int) -> np.ndarray:
    return (np.arange(out + 1) * size) // out


def downsample_mask(mask: BinaryMask, out_h: int, out_w: int) -> BinaryMask:
    """Any-true block pooling (a block is set if any source pixel is set)."""
    if out_h >= mask.height and out_w >= mask.width:
        return mask
    re = _block_edges(mask.height, out_h)
    ce = _block_edges(mask.width, out_w)
    out = np.zeros((out_h, out_w), dtype=bool)
    for r in range(out_h):
        rows = mask.bits[re[r]:re[r + 1]]
        for c in range(out_w):
            out[r, c] = rows[:, ce[c]:ce[c + 1]].any()
    return BinaryMask(out)


def downsample_mask_fractional(mask: BinaryMask, out_h: int, out_w: int) -> np.ndarray:
    """Block-mean pooling to a float coverage raster in [0, 1].

    Unlike any-true pooling this neither grows nor shrinks thin regions,
    which matters when a mask is compared against a render at working
    resolution."""
    if out_h >= mask.height and out_w >= mask.width:
        return mask.bits.astype(np.float64)
    re = _block_edges(mask.height, out_h)
    ce = _block_edges(mask.width, out_w)
    out = np.zeros((out_h, out_w))
    for r in range(out_h):
        rows = mask.bits[re[r]:re[r + 1]]
        for c in range(out_w):
            out[r, c] = rows[:, ce[c]:ce[c + 1]].mean()
    return out


def downsample_pointmap(pm: PointMap, out_h: int, out_w: int) -> PointMap:
    """Block-average positions (over valid entries only); validity is
    sampled at the block-center pixel."""
    if out_h >= pm.height and out_w >= pm.width:
        return pm
    re = _block_edges(pm.height, out_h)
    ce = _block_edges(pm.width, out_w)
    centers_r = ((np.arange(out_h) * 2 + 1) * pm.height) // (2 * out_h)
    centers_c = ((np.arange(out_w) * 2 + 1) * pm.width) // (2 * out_w)
    valid = pm.valid[np.ix_(centers_r, centers_c)]
    points = np.zeros((out_h, out_w, 3))
    for r in range(out_h):
        for c in range(out_w):
            if not valid[r, c]:
                continue
            blk_v = pm.valid[re[r]:re[r + 1], ce[c]:ce[c + 1]]
            blk_p = pm.points[re[r]:re[r + 1], ce[c]:ce[c + 1]]
            points[r, c] = blk_p[blk_v].mean(axis=0)
    return PointMap(points=points, valid=valid)
