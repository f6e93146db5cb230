import numpy as np
import pytest

from gdemscale.camera import Intrinsics, Pose, make_pose
from gdemscale.errors import EmptyProjection, NoGroundAnchors
from gdemscale.gdem import GdemCloud
from gdemscale.projection import (
    DEFAULT_RANGE,
    SCENE_RANGES,
    RangeMask,
    anchors,
    apply_masks,
    project_gdem,
    reject_occluded,
    to_csv,
)

K = Intrinsics(100.0, 100.0, 50.0, 40.0, 100, 80)
AXIS = Pose(np.eye(3), np.zeros(3), pitch=90.0)


def test_nearest_point_wins_pixel():
    g = project_gdem(GdemCloud([[0, 0, 40.0], [0, 0, 10.0]]), AXIS, K)
    assert g[40, 50] == 10.0
    assert np.count_nonzero(g) == 1


def test_behind_points_absent():
    g = project_gdem(GdemCloud([[0, 0, 5.0], [0, 0, -5.0]]), AXIS, K)
    assert np.count_nonzero(g) == 1
    with pytest.raises(EmptyProjection):
        project_gdem(GdemCloud([[0, 0, -5.0]]), AXIS, K)


def test_sub_pixel_binning_to_nearest_pixel():
    # u = 50.6 lands on column 51, v = 39.4 on row 39
    g = project_gdem(GdemCloud([[0.006, -0.006, 1.0]]), AXIS, K)
    assert g[39, 51] == 1.0
    # u just below W - 0.5 stays inside the last column
    g = project_gdem(GdemCloud([[0.497, 0.0, 1.0]]), AXIS, K)
    assert g[40, 99] == 1.0


def test_nadir_flat_terrain(rng):
    pose = make_pose((0, 0, 50.0), 90.0, 0.0)
    xy = rng.uniform(-15, 15, (3000, 2))
    g = project_gdem(GdemCloud(np.column_stack([xy, np.zeros(len(xy))])), pose, K)
    z = g[g > 0]
    assert len(z) > 1000
    assert np.max(np.abs(z - 50.0)) < 1e-6


def _map(values):
    g = np.zeros((9, 9))
    for (r, c), z in values.items():
        g[r, c] = z
    return g


def test_occlusion_rule_examples():
    iso = _map({(4, 4): 100.0})
    assert reject_occluded(iso)[4, 4] == 100.0
    g = reject_occluded(_map({(4, 4): 100.0, (4, 6): 95.0}))
    assert g[4, 4] == 0.0 and g[4, 6] == 95.0
    g = reject_occluded(_map({(4, 4): 100.0, (4, 6): 97.0}))
    assert g[4, 4] == 100.0 and g[4, 6] == 97.0


def test_window_shape():
    # rows +-2, cols +-3
    assert reject_occluded(_map({(4, 4): 100.0, (6, 7): 50.0}))[4, 4] == 0.0
    assert reject_occluded(_map({(4, 4): 100.0, (7, 4): 50.0}))[4, 4] == 100.0
    assert reject_occluded(_map({(4, 4): 100.0, (4, 8): 50.0}))[4, 4] == 100.0
    assert reject_occluded(_map({(4, 4): 100.0, (5, 4): 50.0}), window=(1, 7))[4, 4] == 100.0


def test_window_minimum_survives_and_subset(rng):
    g = np.where(rng.random((60, 80)) < 0.3, rng.uniform(20, 200, (60, 80)), 0.0)
    out = reject_occluded(g)
    assert np.all((out == g) | (out == 0))
    for r, c in zip(*np.nonzero(g)):
        win = g[max(r - 2, 0): r + 3, max(c - 3, 0): c + 4]
        if g[r, c] == win[win > 0].min():
            assert out[r, c] == g[r, c]
    r, c = np.unravel_index(np.argmin(np.where(g > 0, g, np.inf)), g.shape)
    assert out[r, c] == g[r, c]


def test_occlusion_matches_brute_force(rng):
    g = np.where(rng.random((20, 25)) < 0.4, rng.uniform(50, 60, (20, 25)), 0.0)
    out = reject_occluded(g)
    for r, c in zip(*np.nonzero(g)):
        win = g[max(r - 2, 0): r + 3, max(c - 3, 0): c + 4]
        others = win[win > 0]
        occluded = g[r, c] - others.min() > 0.04 * g[r, c]
        assert (out[r, c] == 0) == occluded


def test_apply_masks():
    g = _map({(1, 1): 40.0, (2, 2): 200.0, (3, 3): 10.0, (4, 4): 100.0})
    allg = np.ones_like(g, dtype=bool)
    assert np.array_equal(apply_masks(g, allg, RangeMask(5, 500)), g)
    with pytest.raises(NoGroundAnchors):
        apply_masks(g, np.zeros_like(allg), DEFAULT_RANGE)
    ground = allg.copy()
    ground[4, 4] = False
    out = apply_masks(g, ground, DEFAULT_RANGE)
    brute = {(r, c) for r, c in zip(*np.nonzero(g)) if ground[r, c] and 30 <= g[r, c] <= 150}
    assert set(zip(*np.nonzero(out))) == brute
    with pytest.raises(ValueError):
        apply_masks(g, np.ones((2, 2), bool), None)


def test_range_mask():
    assert str(RangeMask.parse("30:150")) == "30:150"
    assert SCENE_RANGES["chilia"] == RangeMask(50, 250)
    with pytest.raises(ValueError):
        RangeMask.parse("150:30")


def test_csv_export(tmp_path):
    g = _map({(1, 2): 40.0})
    to_csv(g, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines() == ["u,v,z_m", "2,1,40.000000"]
    rows, cols, z = anchors(g)
    assert rows.tolist() == [1] and cols.tolist() == [2] and z.tolist() == [40.0]
