import math

import numpy as np
import pytest

import umbracast as uc
from umbracast.errors import (
    DimensionMismatchError,
    EmptyMaskError,
    GrazingLightError,
    NumericalError,
)
from umbracast.geometry import BinaryMask, PinholeModel, PointMap, ReceiverPlane

from conftest import make_random_scene

TAU5 = math.radians(5.0)


def _down_light():
    # toward-source vector (0, -1, 0): flow direction D = (0, 1, 0)
    return uc.UnitLightDirection(azimuth=0.0, elevation=0.0, vector=np.array([0.0, -1.0, 0.0]))


def _two_pixel_scene(receiver_pos):
    pts = np.zeros((1, 2, 3))
    pts[0, 0] = [0.0, 0.0, 1.0]
    pts[0, 1] = receiver_pos
    pm = PointMap(points=pts, valid=np.ones((1, 2), dtype=bool))
    obj = BinaryMask(np.array([[True, False]]))
    return pm, obj


# ---------------------------------------------------------------------------
# estimate_shadow
# ---------------------------------------------------------------------------


def test_estimate_collinear_pair_shadowed():
    pm, obj = _two_pixel_scene([0.0, 2.0, 1.0])
    est = uc.estimate_shadow(pm, obj, _down_light(), TAU5)
    assert est.mask.bits[0, 1]


def test_estimate_off_cone_pair_not_shadowed():
    # v = (1, 1, 0): p = 1, q^2 = 1; tan^2(5 deg) * 1 ~ 0.00765 < 1
    pm, obj = _two_pixel_scene([1.0, 1.0, 1.0])
    est = uc.estimate_shadow(pm, obj, _down_light(), TAU5)
    assert not est.mask.bits[0, 1]


def test_estimate_reversed_light_empty(box_scene):
    est = uc.estimate_shadow(box_scene.point_map, box_scene.object_mask,
                             box_scene.truth, TAU5)
    assert est.mask.count > 0
    rev = uc.light_from_angles(box_scene.truth.azimuth + math.pi,
                               -box_scene.truth.elevation)
    np.testing.assert_allclose(rev.vector, -box_scene.truth.vector, atol=1e-12)
    est_rev = uc.estimate_shadow(box_scene.point_map, box_scene.object_mask,
                                 rev, TAU5)
    assert est_rev.mask.count == 0


def test_estimate_errors():
    pm, obj = _two_pixel_scene([0.0, 2.0, 1.0])
    with pytest.raises(EmptyMaskError):
        uc.estimate_shadow(pm, BinaryMask.zeros(1, 2), _down_light(), TAU5)
    with pytest.raises(DimensionMismatchError):
        uc.estimate_shadow(pm, BinaryMask.zeros(2, 2), _down_light(), TAU5)
    with pytest.raises(NumericalError):
        uc.estimate_shadow(pm, obj, _down_light(), math.pi / 4)
    with pytest.raises(NumericalError):
        uc.estimate_shadow(pm, obj, _down_light(), -0.01)


def test_estimate_never_marks_object_pixels(box_scene):
    est = uc.estimate_shadow(box_scene.point_map, box_scene.object_mask,
                             box_scene.truth, TAU5)
    obj64 = uc.downsample_mask(box_scene.object_mask, 64, 64)
    assert not (est.mask.bits & obj64.bits).any()


def test_estimate_empty_receiver_set():
    pts = np.ones((1, 1, 3))
    pm = PointMap(points=pts, valid=np.ones((1, 1), dtype=bool))
    obj = BinaryMask(np.array([[True]]))
    est = uc.estimate_shadow_bruteforce(pm, obj, _down_light(), TAU5)
    assert est.mask.count == 0


def test_estimate_tau_zero_exact_hits_only():
    pm, obj = _two_pixel_scene([0.0, 2.0, 1.0])
    est = uc.estimate_shadow_bruteforce(pm, obj, _down_light(), 0.0)
    assert est.mask.bits[0, 1]
    pm2, obj2 = _two_pixel_scene([1e-3, 2.0, 1.0])
    est2 = uc.estimate_shadow_bruteforce(pm2, obj2, _down_light(), 0.0)
    assert not est2.mask.bits[0, 1]


def test_estimate_matches_bruteforce_random_scenes():
    light = uc.light_from_angles(2.1, 0.4)
    for seed in range(10):
        for size in (16, 32):
            pm, obj = make_random_scene(seed, size)
            fast = uc.estimate_shadow(pm, obj, light, TAU5)
            slow = uc.estimate_shadow_bruteforce(pm, obj, light, TAU5)
            np.testing.assert_array_equal(fast.mask.bits, slow.mask.bits)


def test_estimate_tau_monotonicity():
    light = uc.light_from_angles(0.8, 0.5)
    for seed in range(5):
        pm, obj = make_random_scene(seed, 24)
        prev = None
        for tau_deg in (1.0, 3.0, 5.0, 10.0):
            est = uc.estimate_shadow(pm, obj, light, math.radians(tau_deg))
            if prev is not None:
                assert not (prev & ~est.mask.bits).any()
            prev = est.mask.bits


def test_estimate_downsamples_to_working_resolution(box_scene):
    est = uc.estimate_shadow(box_scene.point_map, box_scene.object_mask,
                             box_scene.truth, TAU5)
    assert est.resolution == (64, 64)
    est_small = uc.estimate_shadow(box_scene.point_map, box_scene.object_mask,
                                   box_scene.truth, TAU5, resolution=32)
    assert est_small.resolution == (32, 32)


# ---------------------------------------------------------------------------
# cast_hard / cast_points
# ---------------------------------------------------------------------------


def _axis_setup():
    light = _down_light()
    plane = ReceiverPlane(anchor=[0.0, 0.5, 1.0], normal=[0.0, -1.0, 0.0])
    model = PinholeModel(32.0, 32.0, 31.5, 31.5)
    return light, plane, model


def test_cast_worked_example_exact():
    light, plane, model = _axis_setup()
    pts, report = uc.cast_points(np.array([[0.0, 0.0, 1.0]]), light, plane, model, (64, 64))
    assert report == uc.CastReport(n_cast=1, n_negative_t=0, n_backfacing=0, n_offscreen=0)
    assert pts.shape == (1, 3)
    assert pts[0].tolist() == [0.0, 0.5, 1.0]  # t = 0.5 exactly


def test_cast_negative_t_counted():
    light, plane, model = _axis_setup()
    # occluder below the plane along the flow direction
    pts, report = uc.cast_points(np.array([[0.0, 1.0, 1.0]]), light, plane, model, (64, 64))
    assert report.n_negative_t == 1 and report.n_cast == 0
    assert pts.shape == (0, 3)


def test_cast_backfacing_counted():
    # light from below: flow direction moves along +normal, so a point
    # behind the plane reaches its back face with t > 0
    light = uc.UnitLightDirection(azimuth=0.0, elevation=0.0,
                                  vector=np.array([0.0, 1.0, 0.0]))
    plane = ReceiverPlane(anchor=[0.0, 0.5, 1.0], normal=[0.0, -1.0, 0.0])
    model = PinholeModel(32.0, 32.0, 31.5, 31.5)
    pts, report = uc.cast_points(np.array([[0.0, 1.0, 1.0]]), light, plane, model, (64, 64))
    assert report.n_backfacing == 1 and report.n_cast == 0


def test_cast_offscreen_counted():
    light, plane, model = _axis_setup()
    # intersection projects far outside a tiny raster
    pts, report = uc.cast_points(np.array([[5.0, 0.0, 1.0]]), light, plane, model, (8, 8))
    assert report.n_offscreen == 1 and report.n_cast == 0


def test_cast_grazing_light_error():
    plane = ReceiverPlane(anchor=[0.0, 0.5, 1.0], normal=[0.0, -1.0, 0.0])
    model = PinholeModel(32.0, 32.0, 31.5, 31.5)
    horizontal = uc.light_from_angles(0.0, 0.0)  # flow parallel to the ground
    with pytest.raises(GrazingLightError):
        uc.cast_points(np.array([[0.0, 0.0, 1.0]]), horizontal, plane, model, (64, 64))


def test_cast_hard_report_counts_add_up(box_scene, box_scene_fits):
    plane, model = box_scene_fits
    hits, report = uc.cast_hard(box_scene.point_map, box_scene.object_mask,
                                box_scene.truth, plane, model)
    occ = box_scene.object_mask.bits & box_scene.point_map.valid
    assert report.n_total == int(occ.sum())
    assert hits.shape == (report.n_cast, 3)


def test_cast_hard_plane_equation_and_positive_t(box_scene, box_scene_fits):
    plane, model = box_scene_fits
    hits, _ = uc.cast_hard(box_scene.point_map, box_scene.object_mask,
                           box_scene.truth, plane, model)
    res = np.abs((hits - plane.anchor) @ plane.normal)
    assert res.max() < 1e-6
    occ = box_scene.point_map.points[box_scene.object_mask.bits & box_scene.point_map.valid]
    # every returned intersection lies forward of some occluder along -l
    d = -box_scene.truth.vector
    t = ((plane.anchor - occ) @ plane.normal) / float(d @ plane.normal)
    assert (t[np.isfinite(t)] > 0).any()


def test_cast_hard_footprint_matches_analytic_rectangle():
    # floating slab under near-vertical light: the hard-cast footprint must
    # reproduce the box footprint projected along the flow direction
    spec = uc.SynthSpec(width=256, height=256, fx=384.0, fy=384.0, cy=38.4,
                        box_center_x=0.0, box_center_z=3.2,
                        box_half_x=0.45, box_half_z=0.45,
                        box_height=0.25, box_clearance=0.3,
                        phi_deg=90.0, theta_deg=85.0, seed=1)
    sc = uc.synthesize(spec)
    lo, hi = spec.box_bounds()
    n = 400  # dense analytic sample of the light-facing (top) surface
    xs = np.linspace(lo[0], hi[0], n)
    zs = np.linspace(lo[2], hi[2], n)
    X, Z = np.meshgrid(xs, zs)
    surf = np.stack([X.ravel(), np.full(X.size, lo[1]), Z.ravel()], axis=1)
    hits, report = uc.cast_points(surf, sc.truth, sc.plane, sc.model, (256, 256))
    assert report.n_cast == n * n

    mark = np.zeros((256, 256), dtype=bool)
    px = np.round(sc.model.fx * hits[:, 0] / hits[:, 2] + sc.model.cx).astype(int)
    py = np.round(sc.model.fy * hits[:, 1] / hits[:, 2] + sc.model.cy).astype(int)
    mark[py, px] = True

    d = -sc.truth.vector
    t = (spec.ground_y - lo[1]) / d[1]
    rx0, rx1 = lo[0] + t * d[0], hi[0] + t * d[0]
    rz0, rz1 = lo[2] + t * d[2], hi[2] + t * d[2]
    gm = sc.point_map.valid & ~sc.object_mask.bits
    gp = sc.point_map.points
    rect = gm & (gp[:, :, 0] >= rx0) & (gp[:, :, 0] <= rx1) \
              & (gp[:, :, 2] >= rz0) & (gp[:, :, 2] <= rz1)
    dice = uc.dice_coefficient(BinaryMask(mark & gm), BinaryMask(rect))
    assert dice >= 0.99


def test_cast_rotation_equivariance(box_scene):
    # rotating scene and light 90 degrees about the camera axis rotates the
    # rendered shadow by the same amount (exact pixel permutation when the
    # principal point sits at the array center and fx == fy)
    N = 128
    model = PinholeModel(192.0, 192.0, (N - 1) / 2, (N - 1) / 2)
    occ = box_scene.object_mask.bits & box_scene.point_map.valid
    opts = box_scene.point_map.points[occ]
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])

    hits1, _ = uc.cast_points(opts, box_scene.truth, box_scene.plane, model, (N, N))
    mask1 = uc.binarize_render(uc.soft_splat(hits1, model, (N, N), 1.0))

    az, el = uc.angles_from_vector(rot @ box_scene.truth.vector)
    light_r = uc.light_from_angles(az, el)
    plane_r = ReceiverPlane(anchor=rot @ box_scene.plane.anchor,
                            normal=rot @ box_scene.plane.normal)
    hits2, _ = uc.cast_points(opts @ rot.T, light_r, plane_r, model, (N, N))
    mask2 = uc.binarize_render(uc.soft_splat(hits2, model, (N, N), 1.0))

    rotated = BinaryMask(np.rot90(mask1.bits, k=-1))
    assert uc.dice_coefficient(rotated, mask2) >= 0.98


# ---------------------------------------------------------------------------
# soft_splat
# ---------------------------------------------------------------------------


def test_splat_single_point_at_pixel_center():
    model = PinholeModel(32.0, 32.0, 16.0, 16.0)
    render = uc.soft_splat(np.array([[0.0, 0.0, 1.0]]), model, (32, 32), sigma=1.0)
    assert abs(render.total_mass - 1.0) < 1e-6
    assert render.density.argmax() == 16 * 32 + 16
    assert render.mass_shortfall == 0.0


def test_splat_zero_points():
    model = PinholeModel(32.0, 32.0, 16.0, 16.0)
    render = uc.soft_splat(np.zeros((0, 3)), model, (32, 32), sigma=1.0)
    assert render.total_mass == 0.0
    assert not render.density.any()


def test_splat_centroid_tracks_subpixel_shift():
    model = PinholeModel(32.0, 32.0, 16.0, 16.0)
    cols = np.arange(32)

    def centroid_x(render):
        w = render.density.sum(axis=0)
        return float((w * cols).sum() / w.sum())

    r0 = uc.soft_splat(np.array([[0.0, 0.0, 1.0]]), model, (32, 32), sigma=1.5)
    # +0.5 pixel in x at z=1 is x = 0.5/32
    r1 = uc.soft_splat(np.array([[0.5 / 32.0, 0.0, 1.0]]), model, (32, 32), sigma=1.5)
    assert abs((centroid_x(r1) - centroid_x(r0)) - 0.5) < 1e-3


def test_splat_off_raster_shortfall_accounting():
    model = PinholeModel(32.0, 32.0, 16.0, 16.0)
    pts = np.array([
        [0.0, 0.0, 1.0],        # fully inside
        [0.47, 0.0, 1.0],       # projects to x ~ 31: partially off-raster
        [100.0, 0.0, 1.0],      # fully off-raster
    ])
    render = uc.soft_splat(pts, model, (32, 32), sigma=1.5)
    assert abs(render.total_mass - (3 - render.mass_shortfall)) < 1e-6
    assert 0.0 < render.mass_shortfall < 3.0


def test_splat_total_mass_equals_cast_count(box_scene, box_scene_fits):
    plane, model = box_scene_fits
    hits, report = uc.cast_hard(box_scene.point_map, box_scene.object_mask,
                                box_scene.truth, plane, model)
    render = uc.soft_splat(hits, model, (128, 128), sigma=1.5)
    assert abs(render.total_mass + render.mass_shortfall - report.n_cast) < 1e-6


def test_splat_validation():
    model = PinholeModel(32.0, 32.0, 16.0, 16.0)
    with pytest.raises(NumericalError):
        uc.soft_splat(np.zeros((0, 3)), model, (32, 32), sigma=0.0)
    with pytest.raises(NumericalError):
        uc.soft_splat(np.zeros((0, 3)), model, (4, 4), sigma=1.0)


def test_binarize_render_threshold():
    density = np.zeros((8, 8))
    density[2, 2] = 1.0
    density[3, 3] = 0.6
    density[4, 4] = 0.4
    mask = uc.binarize_render(uc.ShadowRender(density=density))
    assert mask.bits[2, 2] and mask.bits[3, 3] and not mask.bits[4, 4]
    empty = uc.binarize_render(uc.ShadowRender(density=np.zeros((8, 8))))
    assert empty.count == 0
