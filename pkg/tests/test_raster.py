import math

import numpy as np
import pytest

from hgtraj.geometry import rotation
from hgtraj.lanegraph import CHANNELS, Lane, LaneGraph
from hgtraj.raster import PATCH_PX, export_patch, pixel_world_coords, rasterize
from hgtraj.templates import build_template


def agreement(a, b):
    return float((a == b).mean())


def test_empty_graph_gives_zero_patch():
    p = rasterize(LaneGraph({}), (0.0, 0.0), 0.3)
    assert p.channels.shape == (10, 128, 128)
    assert not p.channels.any()


def test_straight_lane_symmetric_about_vertical_axis():
    g = LaneGraph({"A": Lane("A", np.array([[-100.0, 0.0], [100.0, 0.0]]), 3.5)})
    drivable = rasterize(g, (0.0, 0.0), 0.0).channels[CHANNELS.index("drivable")]
    np.testing.assert_array_equal(drivable, drivable[:, ::-1])
    # direct analytic rendering: a pixel is drivable iff its lateral offset is within the half-width
    cols = (np.arange(PATCH_PX) + 0.5 - PATCH_PX / 2) * (50.0 / PATCH_PX)
    expected = np.tile(np.abs(cols) <= 1.75, (PATCH_PX, 1))
    np.testing.assert_array_equal(drivable.astype(bool), expected)


def test_heading_up_and_left_column():
    pts = pixel_world_coords((0.0, 0.0), math.pi / 2).reshape(PATCH_PX, PATCH_PX, 2)
    assert pts[0, 64, 1] > 24 and pts[-1, 64, 1] < -24  # row 0 is ahead
    assert pts[64, 0, 0] < -24  # column 0 is on the left


def test_heading_flip_is_180_degree_rotation():
    g = build_template("cross_intersection")
    a = rasterize(g, (3.0, -18.0), 0.4).channels
    b = rasterize(g, (3.0, -18.0), 0.4 + math.pi).channels
    assert agreement(a, np.rot90(b, 2, axes=(1, 2))) >= 0.99


@pytest.mark.parametrize("name", ["y_fork", "lane_change"])
def test_world_rotation_equivariance(name):
    g = build_template(name)
    rng = np.random.default_rng(11)
    for _ in range(3):
        c, h, phi = rng.uniform(-30, 30, 2), rng.uniform(-math.pi, math.pi), rng.uniform(-math.pi, math.pi)
        a = rasterize(g, c, h).channels
        b = rasterize(g.rotated(phi), rotation(phi) @ c, h + phi).channels
        assert agreement(a, b) >= 0.99


def test_patch_values_binary_and_populated():
    p = rasterize(build_template("cross_intersection"), (0.0, -20.0), math.pi / 2)
    assert set(np.unique(p.channels)) <= {0.0, 1.0}
    for name in ("drivable", "lane_border", "ped_crossing", "walkway", "stop_area", "road_divider",
                 "intersection"):
        assert p.channels[CHANNELS.index(name)].any(), name


def test_non_finite_heading_rejected():
    with pytest.raises(ValueError):
        rasterize(LaneGraph({}), (0.0, 0.0), math.nan)


def test_export_writes_pgm_and_pose(tmp_path):
    p = rasterize(build_template("straight"), (0.0, 0.0), 0.0)
    files = export_patch(p, tmp_path, "x")
    assert len(files) == 11
    data = files[0].read_bytes()
    header = b"P5\n128 128\n255\n"
    assert data.startswith(header) and len(data) == len(header) + 128 * 128
