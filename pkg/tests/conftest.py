from __future__ import annotations

import numpy as np
import pytest

from stereopipe.calib import (
    CameraIntrinsics,
    DistortionCoeffs,
    ViewPose,
    project_points,
    rodrigues,
)
from stereopipe.target import BoardSpec, CornerGrid

# Acceptance tests append one [PASS]/[FAIL] line per release criterion here;
# echoed after the run so the log doubles as the acceptance report.
ACCEPTANCE_REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance report")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)


def make_board_pose(rng, obj, *, tilt=0.6, z_range=(0.45, 0.9)):
    """Random board pose, recentred so the board stays near the optical axis."""
    rvec = np.concatenate([rng.uniform(-tilt, tilt, 2), rng.uniform(-0.5, 0.5, 1)])
    tvec = np.array([0.0, 0.0, rng.uniform(*z_range)])
    tvec -= (obj.mean(axis=0) @ rodrigues(rvec).T) * np.array([1.0, 1.0, 0.0])
    return ViewPose.from_rvec(rvec, tvec)


def synthetic_views(rng, board, K, dist, count, *, noise=0.0, poses=None):
    """Corner grids from exact projections of random board poses."""
    obj = board.object_points()
    out_views, out_poses = [], []
    while len(out_views) < count:
        pose = make_board_pose(rng, obj) if poses is None else poses[len(out_views)]
        uv = project_points(K, dist, pose, obj)
        if noise > 0:
            uv = uv + rng.normal(0.0, noise, uv.shape)
        out_views.append(CornerGrid(board=board, points=uv))
        out_poses.append(pose)
    return out_views, out_poses


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_board():
    return BoardSpec(cols=9, rows=6, square_size=0.025)
