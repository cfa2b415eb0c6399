import json
import math
import struct

import numpy as np
import pytest

import umbracast as uc
from umbracast.errors import (
    CorruptPointMapError,
    DataError,
    DimensionMismatchError,
    ManifestError,
    PointMapFormatError,
)
from umbracast.scene_io import POINTMAP_MAGIC, ray_hits_box


def _random_pm(seed, size=12):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3.0, 3.0, (size, size, 3))
    pts[:, :, 2] = np.abs(pts[:, :, 2]) + 0.5
    pts = pts.astype(np.float32).astype(np.float64)  # f32-representable
    valid = rng.random((size, size)) > 0.2
    return uc.PointMap(points=pts, valid=valid)


# ---------------------------------------------------------------------------
# point-map container
# ---------------------------------------------------------------------------


def test_pointmap_round_trip_bit_exact(tmp_path):
    pm = _random_pm(0)
    path = tmp_path / "a.upm"
    uc.write_pointmap(path, pm)
    back = uc.read_pointmap(path)
    np.testing.assert_array_equal(back.points, pm.points)
    np.testing.assert_array_equal(back.valid, pm.valid)
    # second write reproduces the file byte-for-byte
    path2 = tmp_path / "b.upm"
    uc.write_pointmap(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_pointmap_quantizes_to_float32(tmp_path):
    pts = np.full((8, 8, 3), 1.0 + 1e-12)
    pm = uc.PointMap(points=pts, valid=np.ones((8, 8), dtype=bool))
    path = tmp_path / "q.upm"
    uc.write_pointmap(path, pm)
    back = uc.read_pointmap(path)
    np.testing.assert_array_equal(
        back.points, pts.astype(np.float32).astype(np.float64)
    )


def test_pointmap_reader_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.upm"
    path.write_bytes(b"NOPE0000" + b"\x00" * 64)
    with pytest.raises(PointMapFormatError):
        uc.read_pointmap(path)


def test_pointmap_reader_rejects_truncation(tmp_path):
    pm = _random_pm(1, size=6)
    path = tmp_path / "t.upm"
    uc.write_pointmap(path, pm)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(PointMapFormatError):
        uc.read_pointmap(path)
    path.write_bytes(blob[:10])
    with pytest.raises(PointMapFormatError):
        uc.read_pointmap(path)


def test_pointmap_reader_rejects_nan_in_valid_pixels(tmp_path):
    path = tmp_path / "nan.upm"
    n = 4
    payload = np.full((n, n, 3), 2.0, dtype="<f4")
    payload[1, 1, 0] = np.nan
    blob = POINTMAP_MAGIC + struct.pack("<III", n, n, 1)
    blob += payload.tobytes() + b"\x01" * (n * n)
    path.write_bytes(blob)
    with pytest.raises(CorruptPointMapError):
        uc.read_pointmap(path)


def test_pointmap_reader_rejects_nonpositive_depth(tmp_path):
    path = tmp_path / "z.upm"
    n = 4
    payload = np.full((n, n, 3), 2.0, dtype="<f4")
    payload[0, 0, 2] = -1.0
    blob = POINTMAP_MAGIC + struct.pack("<III", n, n, 1)
    blob += payload.tobytes() + b"\x01" * (n * n)
    path.write_bytes(blob)
    with pytest.raises(CorruptPointMapError):
        uc.read_pointmap(path)


def test_pointmap_nan_in_invalid_pixel_tolerated(tmp_path):
    path = tmp_path / "ok.upm"
    n = 4
    payload = np.full((n, n, 3), 2.0, dtype="<f4")
    payload[1, 1, 0] = np.nan
    validity = np.ones((n, n), dtype=np.uint8)
    validity[1, 1] = 0
    blob = POINTMAP_MAGIC + struct.pack("<III", n, n, 1)
    blob += payload.tobytes() + validity.tobytes()
    pm = uc.read_pointmap(path) if False else None
    path.write_bytes(blob)
    pm = uc.read_pointmap(path)
    assert not pm.valid[1, 1]


def test_pointmap_without_validity_raster(tmp_path):
    path = tmp_path / "nv.upm"
    n = 4
    payload = np.full((n, n, 3), 2.0, dtype="<f4")
    blob = POINTMAP_MAGIC + struct.pack("<III", n, n, 0) + payload.tobytes()
    path.write_bytes(blob)
    pm = uc.read_pointmap(path)
    assert pm.valid.all()


# ---------------------------------------------------------------------------
# PNG rasters and manifests
# ---------------------------------------------------------------------------


def test_mask_png_round_trip(tmp_path):
    mask = uc.BinaryMask(np.random.default_rng(2).random((16, 16)) > 0.5)
    uc.save_mask(tmp_path / "m.png", mask)
    back = uc.load_mask(tmp_path / "m.png")
    np.testing.assert_array_equal(back.bits, mask.bits)


def test_image_png_round_trip(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, (16, 16, 3)).astype(np.uint8)
    uc.save_image(tmp_path / "i.png", img)
    np.testing.assert_array_equal(uc.load_image(tmp_path / "i.png"), img)


def _write_scene_files(tmp_path, dims=(24, 24), pm_dims=None):
    h, w = dims
    img = np.zeros((h, w, 3), dtype=np.uint8)
    uc.save_image(tmp_path / "comp.png", img)
    uc.save_mask(tmp_path / "obj.png", uc.BinaryMask(np.eye(h, w, dtype=bool)))
    uc.save_mask(tmp_path / "sh.png", uc.BinaryMask(np.eye(h, w, k=2, dtype=bool)))
    ph, pw = pm_dims or dims
    pts = np.ones((ph, pw, 3))
    uc.write_pointmap(tmp_path / "pm.upm",
                      uc.PointMap(points=pts, valid=np.ones((ph, pw), dtype=bool)))
    return {
        "id": "s1", "composite": "comp.png", "object_mask": "obj.png",
        "shadow_mask": "sh.png", "point_map": "pm.upm", "tag": "BOS",
        "light": {"phi_deg": 10.0, "theta_deg": 30.0},
        "some_future_field": 123,
    }


def test_manifest_load_and_scene_load(tmp_path):
    entry = _write_scene_files(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps([entry]))
    scenes = uc.load_manifest(tmp_path / "manifest.json")
    assert len(scenes) == 1 and scenes[0].item_id == "s1"
    loaded = uc.load_scene(scenes[0])
    assert loaded.composite.shape == (24, 24, 3)
    assert loaded.shadow_mask is not None
    truth = loaded.truth_light
    assert abs(math.degrees(truth.elevation) - 30.0) < 1e-9


def test_manifest_missing_file_names_path(tmp_path):
    entry = _write_scene_files(tmp_path)
    entry["composite"] = "gone.png"
    scene = uc.scene_from_entry(entry, tmp_path)
    with pytest.raises(ManifestError, match="gone.png"):
        uc.load_scene(scene)


def test_scene_dimension_mismatch_names_both_dims(tmp_path):
    entry = _write_scene_files(tmp_path, dims=(24, 24), pm_dims=(12, 12))
    scene = uc.scene_from_entry(entry, tmp_path)
    with pytest.raises(DimensionMismatchError, match="12x12.*24x24"):
        uc.load_scene(scene)


def test_manifest_rejects_bad_tag(tmp_path):
    entry = _write_scene_files(tmp_path)
    entry["tag"] = "SOMETHING"
    with pytest.raises(ManifestError):
        uc.scene_from_entry(entry, tmp_path)


def test_manifest_entry_requires_keys(tmp_path):
    with pytest.raises(ManifestError):
        uc.scene_from_entry({"composite": "x.png"}, tmp_path)


def test_corrupt_pointmap_error_propagates(tmp_path):
    entry = _write_scene_files(tmp_path)
    n = 24
    payload = np.full((n, n, 3), 2.0, dtype="<f4")
    payload[0, 0, 0] = np.inf
    blob = POINTMAP_MAGIC + struct.pack("<III", n, n, 1)
    blob += payload.tobytes() + b"\x01" * (n * n)
    (tmp_path / "pm.upm").write_bytes(blob)
    scene = uc.scene_from_entry(entry, tmp_path)
    with pytest.raises(CorruptPointMapError):
        uc.load_scene(scene)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


def test_synth_deterministic(box_scene):
    again = uc.synthesize(box_scene.spec)
    np.testing.assert_array_equal(again.point_map.points, box_scene.point_map.points)
    np.testing.assert_array_equal(again.object_mask.bits, box_scene.object_mask.bits)
    np.testing.assert_array_equal(again.shadow_mask.bits, box_scene.shadow_mask.bits)
    np.testing.assert_array_equal(again.composite, box_scene.composite)


def test_write_scene_byte_identical(box_scene, tmp_path):
    t1 = uc.write_scene(box_scene, tmp_path / "a")
    t2 = uc.write_scene(uc.synthesize(box_scene.spec), tmp_path / "b")
    for name in ("composite", "object_mask", "shadow_mask", "point_map"):
        p1 = getattr(t1, name)
        p2 = getattr(t2, name)
        assert p1.read_bytes() == p2.read_bytes(), name


def test_synth_validation_errors():
    with pytest.raises(DataError):
        uc.synthesize(uc.SynthSpec(box_clearance=-0.1))
    with pytest.raises(DataError):
        uc.synthesize(uc.SynthSpec(theta_deg=0.0))
    with pytest.raises(DataError):
        uc.synthesize(uc.SynthSpec(theta_deg=86.0))


def test_synth_overhead_footprint_dice():
    # short floating slab under near-vertical light: visible shadow matches
    # the analytic occlusion footprint. Steep lights see the casting face
    # coarser than the ground, so hole filling is enabled for this scene.
    spec = uc.SynthSpec(width=256, height=256, fx=384.0, fy=384.0, cy=38.4,
                        box_center_x=0.0, box_center_z=3.2,
                        box_half_x=0.5, box_half_z=0.45,
                        box_height=0.2, box_clearance=0.45,
                        phi_deg=90.0, theta_deg=85.0, seed=1,
                        fill_holes=True)
    sc = uc.synthesize(spec)
    lo, hi = spec.box_bounds()
    ground = sc.point_map.valid & ~sc.object_mask.bits
    gp = sc.point_map.points[ground]
    oracle = np.zeros_like(ground)
    oracle[ground] = ray_hits_box(gp + 1e-9 * sc.truth.vector, sc.truth.vector, lo, hi)
    assert uc.dice_coefficient(sc.shadow_mask, uc.BinaryMask(oracle)) >= 0.98


def test_synth_shadow_length_matches_trigonometry():
    # theta=30, phi=0: shadow offset along +x by height / tan(theta)
    spec = uc.SynthSpec(width=256, height=256, fx=256.0, fy=256.0, cy=38.4,
                        box_center_x=-1.0, box_center_z=3.4,
                        box_half_x=0.35, box_half_z=0.35, box_height=1.0,
                        phi_deg=0.0, theta_deg=30.0, seed=2)
    sc = uc.synthesize(spec)
    sh = sc.point_map.points[sc.shadow_mask.bits]
    length = float(sh[:, 0].max()) - (spec.box_center_x + spec.box_half_x)
    expect = spec.box_height / math.tan(math.radians(30.0))
    assert abs(length - expect) / expect <= 0.05


def test_random_scene_spec_deterministic_and_in_domain():
    a = uc.random_scene_spec(11)
    b = uc.random_scene_spec(11)
    assert a == b
    assert 15.0 <= a.theta_deg <= 75.0
    sc = uc.synthesize(a)
    assert sc.shadow_mask.count >= 150
