import numpy as np
import pytest

import umbracast as uc


def make_random_scene(seed: int, size: int) -> tuple[uc.PointMap, uc.BinaryMask]:
    """Random point cloud raster + sparse object mask for kernel tests."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2.0, 2.0, size=(size, size, 3))
    pts[:, :, 2] = rng.uniform(0.5, 6.0, size=(size, size))
    valid = rng.random((size, size)) > 0.1
    obj = (rng.random((size, size)) < 0.06) & valid
    if not obj.any():
        obj[size // 2, size // 2] = True
        valid[size // 2, size // 2] = True
    return uc.PointMap(points=pts, valid=valid), uc.BinaryMask(obj)


@pytest.fixture(scope="session")
def box_scene():
    """One fixed, well-conditioned synthetic scene reused across tests."""
    return uc.synthesize(uc.random_scene_spec(5))


@pytest.fixture(scope="session")
def box_scene_fits(box_scene):
    plane = uc.fit_receiver_plane(box_scene.point_map, box_scene.object_mask, seed=0)
    model = uc.fit_pinhole(box_scene.point_map)
    return plane, model
