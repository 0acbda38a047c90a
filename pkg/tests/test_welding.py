"""Welding of backward radial processes."""

import numpy as np
import pytest

import sle_lab as sl
from sle_lab.loewner import TWO_PI, WeldingMap, disk_step


@pytest.fixture(scope="module")
def backward_driving():
    kappa = 2.0
    p = sl.SleParams(kappa=kappa, rho=-kappa - 6.0, sigma=-1, seed=4)
    path = sl.sample_stationary(p, 8.0, 8000)
    return path.as_driving("radial")


@pytest.fixture(scope="module")
def table(backward_driving):
    return sl.compute_welding(backward_driving, 256)


def interior_images(driving, angles):
    """Flow boundary angles to the final time through the interior atoms."""
    w = np.exp(1j * np.asarray(angles)).astype(complex)
    for k in range(1, driving.lam.size):
        w = disk_step(w, driving.lam[k - 1], driving.dt, exterior=False,
                      inverse=True)
    return w


def angdist(a, b):
    return np.abs((a - b + np.pi) % TWO_PI - np.pi)


class TestWelding:
    def test_involution(self, backward_driving, table):
        wm = WeldingMap(backward_driving)
        good = np.where(table.welded)[0]
        back = wm(table.partner[good])
        assert np.nanmax(angdist(back, table.grid[good])) < 1e-3

    def test_equal_image_defect(self, backward_driving, table):
        # welded pairs flow to the same interior point; pairs absorbed close
        # to the final time have had no time to contract and are excluded
        good = np.where(table.welded)[0]
        horizon = backward_driving.duration
        early = good[table.absorb_time[good] < horizon - 2.0]
        d = np.abs(interior_images(backward_driving, table.grid[early])
                   - interior_images(backward_driving, table.partner[early]))
        assert np.median(d) < 1e-3
        assert np.percentile(d, 90) < 2e-2

    def test_fixed_point_at_start_angle(self, backward_driving, table):
        lam0 = table.fixed_points[0]
        wm = WeldingMap(backward_driving)
        near = wm(np.array([lam0 + 1e-6, lam0 - 1e-6]))
        assert np.max(angdist(near, lam0)) < 1e-5

    def test_joint_point_unwelded(self, backward_driving, table):
        joint = table.fixed_points[1]
        k = np.argmin(angdist(table.grid, joint))
        assert not table.welded[k]
        assert np.isinf(table.absorb_time[k])

    def test_joint_is_force_point(self, backward_driving, table):
        assert angdist(np.array([table.fixed_points[1]]),
                       backward_driving.q[0] % TWO_PI)[0] < 1e-12

    def test_profile_resolution_convergence(self, backward_driving, table):
        wm_fine = WeldingMap(backward_driving, n_fine=16384)
        good = np.where(table.welded)[0]
        d = angdist(wm_fine(table.grid[good]), table.partner[good])
        assert np.median(d) < 1e-3

    def test_partners_on_opposite_sides(self, backward_driving, table):
        lam0, joint = table.fixed_points
        vj = (joint - lam0) % TWO_PI
        good = np.where(table.welded)[0]
        v_self = (table.grid[good] - lam0) % TWO_PI
        v_partner = (table.partner[good] - lam0) % TWO_PI
        same = (v_self < vj) == (v_partner < vj)
        assert not same.any()

    def test_chordal_driving_rejected(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=0.01, lam=np.zeros(11))
        with pytest.raises(sl.ValidationError):
            sl.compute_welding(d, 16)
