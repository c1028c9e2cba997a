import math

import numpy as np
import pytest

from bevground.cameras import CameraRig, PinholeCamera, convex_hull_2d, make_default_rig


class TestPinholeProjection:
    def test_forward_point_hits_principal_point(self):
        cam = make_default_rig().by_name("front")
        uv, depth = cam.project(np.array([[10.0, 0.0, cam.height]]))
        assert depth[0] == pytest.approx(10.0)
        assert uv[0, 0] == pytest.approx(cam.cx)
        assert uv[0, 1] == pytest.approx(cam.cy)

    def test_left_of_heading_projects_left_of_center(self):
        cam = make_default_rig().by_name("front")
        uv, depth = cam.project(np.array([[10.0, 2.0, cam.height]]))
        assert depth[0] > 0
        assert uv[0, 0] < cam.cx  # +y is left in the ego frame

    def test_behind_camera_gets_negative_depth(self):
        cam = make_default_rig().by_name("front")
        _, depth = cam.project(np.array([[-5.0, 0.0, 0.0]]))
        assert depth[0] < 0

    def test_each_sector_camera_sees_its_sector_center(self):
        rig = make_default_rig()
        for cam in rig:
            x = 20.0 * math.cos(cam.yaw)
            y = 20.0 * math.sin(cam.yaw)
            uv, depth = cam.project(np.array([[x, y, 0.0]]))
            assert depth[0] > 0
            assert cam.contains(uv)[0]

    def test_rig_save_load_roundtrip(self, tmp_path):
        rig = make_default_rig(image_w=256, image_h=128)
        rig.save(tmp_path / "calib.json")
        back = CameraRig.load(tmp_path / "calib.json")
        assert len(back) == 6
        for a, b in zip(rig, back):
            assert a == b


class TestConvexHull:
    def test_square_with_interior_point(self):
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
        hull = convex_hull_2d(pts)
        assert len(hull) == 4
        assert {tuple(p) for p in hull} == {(0, 0), (1, 0), (1, 1), (0, 1)}

    def test_degenerate_inputs(self):
        assert len(convex_hull_2d(np.array([[1.0, 2.0]]))) == 1
        assert len(convex_hull_2d(np.array([[1.0, 2.0], [3.0, 4.0]]))) == 2

    def test_hull_is_counterclockwise(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-5, 5, (30, 2))
        hull = convex_hull_2d(pts)
        x, y = hull[:, 0], hull[:, 1]
        area2 = float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
        assert area2 > 0
