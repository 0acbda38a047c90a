"""Driving extraction from curves: exact cases and round trips."""

import numpy as np
import pytest

import sle_lab as sl
from sle_lab.loewner import TWO_PI, unzip_batch, unzip_wholeplane
from sle_lab.processes import replica_rng


def multi_frequency_driving(n, t_start):
    t = np.linspace(t_start, 0.0, n + 1)
    lam = 0.8 * np.sin(1.3 * t) + 0.5 * np.sin(5.1 * t) + 0.3 * np.sin(11.7 * t)
    return sl.DrivingPath(kind="wholeplane", t0=t_start, dt=-t_start / n,
                          lam=lam)


def roundtrip_sup_error(driving, window_lo, cap_floor=None):
    trace = sl.compute_trace(driving)
    floor = driving.t0 - 4.0 if cap_floor is None else cap_floor
    ex = sl.extract_wholeplane_driving(trace.points, cap_floor=floor)
    sel = ex.times >= window_lo
    lam_in = np.interp(ex.times[sel], driving.times, driving.lam)
    diff = ex.lam[sel] - lam_in
    diff -= TWO_PI * np.round(np.median(diff) / TWO_PI)
    return float(np.max(np.abs(diff)))


class TestSegment:
    def test_straight_segment_gap_is_pi(self):
        z = np.linspace(0.0, 2.0, 201) * np.exp(0.7j)
        d = sl.extract_wholeplane_driving(z)
        gap = d.lam - d.q
        assert np.max(np.abs(gap - np.pi)) < 1e-10

    def test_straight_segment_capacity(self):
        # exterior conformal radius of a segment of length L is L/4, and the
        # segment attains the upper bound max|z| = 4 e^cap
        for ell in (0.5, 2.0, 7.0):
            z = np.linspace(0.0, ell, 301) * np.exp(-1.1j)
            d = sl.extract_wholeplane_driving(z)
            cap = d.times[-1]
            assert abs(cap - np.log(ell / 4.0)) < 1e-9
            assert abs(ell - 4.0 * np.exp(cap)) < 1e-8 * ell

    def test_rotated_segment_angles(self):
        th = 2.3
        z = np.linspace(0.0, 1.0, 101) * np.exp(1j * th)
        d = sl.extract_wholeplane_driving(z)
        assert np.max(np.abs((d.lam - th + np.pi) % TWO_PI - np.pi)) < 1e-9


class TestRoundTrip:
    def test_deterministic_driving_error_decreases(self):
        errs = [roundtrip_sup_error(multi_frequency_driving(n, -14.0), -4.0)
                for n in (250, 500, 1000)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 5e-2

    def test_sle_driving_round_trip(self):
        n, t_start, kappa = 1000, -14.0, 2.0
        dt = -t_start / n
        rng = replica_rng(3)
        lam = np.concatenate([[0.0], np.sqrt(kappa * dt)
                              * np.cumsum(rng.standard_normal(n))])
        d = sl.DrivingPath(kind="wholeplane", t0=t_start, dt=dt, lam=lam)
        assert roundtrip_sup_error(d, -4.0) < 5e-2

    def test_gap_track_round_trip(self):
        # the extracted force-point angle must match the simulated one
        p = sl.SleParams(kappa=2.0, rho=4.0, sigma=1, seed=9)
        d = sl.sample_wholeplane_driving(p, -10.0, 1500, dt_max=np.inf)
        trace = sl.compute_trace(d)
        ex = sl.extract_wholeplane_driving(trace.points, cap_floor=-14.0)
        sel = ex.times >= -4.0
        gap_in = np.interp(ex.times[sel], d.times, d.gap)
        gap_ex = (ex.lam - ex.q)[sel]
        assert np.max(np.abs(gap_ex - gap_in)) < 8e-2

    def test_uniform_grid_output(self):
        d = multi_frequency_driving(400, -9.0)
        ex = sl.extract_wholeplane_driving(sl.compute_trace(d).points)
        steps = np.diff(ex.times)
        assert np.allclose(steps, steps[0])
        gap = ex.lam - ex.q
        assert ((gap > 0.0) & (gap < TWO_PI)).all()


class TestErrors:
    def test_bad_anchor(self):
        z = np.linspace(1.0, 2.0, 50) + 0j
        with pytest.raises(sl.BadAnchorError):
            sl.extract_wholeplane_driving(z)

    def test_too_few_points(self):
        with pytest.raises(sl.ValidationError):
            sl.extract_wholeplane_driving(np.linspace(0, 1, 5) + 0j)

    def test_backtracking_curve_not_unzippable(self):
        # go out along a ray and then back: capacity cannot grow monotonically
        out = np.linspace(0.0, 1.0, 60)
        back = np.linspace(1.0, 0.55, 40)[1:]
        z = np.concatenate([out, back]) + 0j
        with pytest.raises(sl.NotUnzippableError):
            sl.extract_wholeplane_driving(z)

    def test_batch_failure_masked(self):
        good = np.linspace(0.0, 1.0, 80) * np.exp(0.3j)
        bad = np.concatenate([np.linspace(0.0, 1.0, 50),
                              np.linspace(1.0, 0.4, 31)[1:]]) + 0j
        caps, lams, qs, ok = unzip_batch(np.stack([good, bad]))
        assert ok[0]
        assert not ok[1]


class TestInvarianceProperties:
    def test_rotation_invariance_of_gap(self):
        d = multi_frequency_driving(500, -9.0)
        pts = sl.compute_trace(d).points
        a = unzip_wholeplane(pts)
        b = unzip_wholeplane(pts * np.exp(1j * 1.234))
        gap_a = a.lam - a.q
        gap_b = b.lam - b.q
        assert np.max(np.abs(gap_a - gap_b)) < 1e-9
