"""Normalized backward radial traces and the whole-plane correspondence."""

import numpy as np
import pytest

import sle_lab as sl


@pytest.fixture(scope="module")
def backward_driving():
    kappa = 2.0
    p = sl.SleParams(kappa=kappa, rho=-kappa - 6.0, sigma=-1, seed=12)
    path = sl.sample_stationary(p, 12.0, 2400)
    return path.as_driving("radial")


class TestNormalizedTrace:
    def test_constant_driving_symmetry(self):
        # constant driving: the normalized curve starts on the ray through
        # the driving point (rotation symmetry pins the tip direction)
        d = sl.DrivingPath(kind="radial", t0=0.0, dt=5e-3,
                           lam=np.zeros(2001))
        tr, est = sl.normalized_backward_trace(d)
        tip = tr.points[0]
        assert abs(tip.imag) < 1e-6 * abs(tip)

    def test_derivative_normalization(self, backward_driving):
        # the truncated composed map fixes 0 with derivative e^{t1}
        d = backward_driving
        t_max = d.duration
        t1_idx = 400
        t1 = t1_idx * d.dt
        h = 1e-7
        pts = np.array([h, -h, 1j * h, -1j * h], dtype=complex)
        w = pts.copy()
        for j in range(t1_idx + 1, int(round(t_max / d.dt)) + 1):
            w = sl.loewner.disk_step(w, d.lam[j], d.dt, exterior=False,
                                     inverse=True)
        w *= np.exp(t_max)
        deriv = (w[0] - w[1] + (w[2] - w[3]) / 1j) / (4.0 * h)
        assert abs(deriv / np.exp(t1) - 1.0) < 1e-3

    def test_truncation_estimate_reported(self, backward_driving):
        tr, est = sl.normalized_backward_trace(backward_driving)
        assert est >= 0.0
        assert np.isfinite(est)

    def test_not_converged_error(self, backward_driving):
        with pytest.raises(sl.NotConvergedError) as exc:
            sl.normalized_backward_trace(backward_driving, tol=0.0)
        assert exc.value.estimate is not None

    def test_reflection_matches_wholeplane_synthesis(self, backward_driving):
        # the reflected normalized trace is the whole-plane trace of the
        # time-reversed driving; both pipelines approximate the same curve
        d = backward_driving
        # a small boundary offset keeps the two pipelines' regularization
        # displacement below the comparison tolerance
        tr, est = sl.normalized_backward_trace(d, eps_scale=0.02)
        gamma = 1.0 / np.conj(tr.points)  # reflection about the circle
        t_max = d.duration
        rev = sl.DrivingPath(kind="wholeplane", t0=-t_max, dt=d.dt,
                             lam=d.lam[::-1].copy())
        wp = sl.compute_trace(rev, eps_scale=0.02)
        # gamma(s) with s = -t: index k of the normalized trace corresponds
        # to whole-plane time -k dt, i.e. whole-plane index n - k; both ends
        # carry their own truncation, so compare over the middle band
        n = d.nsteps
        ks = np.arange(n // 10, n // 2)
        a = gamma[ks]
        b = wp.points[n - ks]
        assert np.max(np.abs(a - b)) < 1e-2

    def test_requires_radial(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=0.01, lam=np.zeros(11))
        with pytest.raises(sl.ValidationError):
            sl.normalized_backward_trace(d)
