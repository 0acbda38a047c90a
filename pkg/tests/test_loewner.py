"""Loewner engine: closed-form oracles, flows, capacity bookkeeping."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sle_lab as sl
from sle_lab.loewner import (
    CLOSED_FORM,
    ODE_STEP,
    capacity_increment,
    chordal_step,
    disk_step,
    ode_step,
    trace_points_batch,
)


def brownian_driving(kind, kappa, T, steps, seed, **kw):
    return sl.sample_brownian_driving(kappa, T, steps, seed, kind=kind, **kw)


# ---------------------------------------------------------------------------
# elementary maps
# ---------------------------------------------------------------------------

class TestAtoms:
    def test_chordal_step_matches_slit_map(self):
        # g_t(z) = sqrt(z^2 + 4t) for a single zero-driving atom
        z = np.array([3j, 1 + 2j, -2 + 0.5j])
        out = chordal_step(z, 0.0, 0.25)
        expect = np.sqrt(z ** 2 + 1.0 + 0j)
        expect = np.where(expect.imag < 0, -expect, expect)
        assert np.allclose(out, expect, rtol=1e-14)

    def test_chordal_inverse_is_inverse(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal(40) + 1j * rng.uniform(0.3, 3.0, 40)
        w = chordal_step(z, 0.7, 0.01)
        back = chordal_step(w, 0.7, 0.01, inverse=True)
        assert np.max(np.abs(back - z)) < 1e-12

    @pytest.mark.parametrize("exterior", [False, True])
    def test_disk_step_against_rk4(self, exterior):
        rng = np.random.default_rng(1)
        r = rng.uniform(1.2, 4.0, 30) if exterior else rng.uniform(0.1, 0.85, 30)
        w = r * np.exp(1j * rng.uniform(0, 2 * np.pi, 30))
        lam, dt = 0.37, 0.004
        a = disk_step(w, lam, dt, exterior=exterior)
        b = ode_step(w, lam, dt, "wholeplane" if exterior else "radial",
                     exterior=exterior, substeps=64)
        assert np.max(np.abs(a - b)) < 1e-9

    def test_disk_step_roundtrip(self):
        rng = np.random.default_rng(2)
        w = rng.uniform(1.05, 6.0, 50) * np.exp(1j * rng.uniform(0, 2 * np.pi, 50))
        lam, dt = -1.1, 0.02
        fwd = disk_step(w, lam, dt, exterior=True)
        back = disk_step(fwd, lam, dt, exterior=True, inverse=True)
        assert np.max(np.abs(back - w)) < 1e-11

    def test_swallowed_points_marked(self):
        # points on the slit segment just outside the circle get eaten
        lam, dt = 0.0, 0.01
        w = np.array([1.0001 + 0j, 2.0 + 0j])
        out = disk_step(w, lam, dt, exterior=True)
        assert np.isnan(out[0])
        assert np.isfinite(out[1])

    @pytest.mark.parametrize("kind,tol", [("chordal", 1e-10), ("radial", 1e-10),
                                          ("wholeplane", 1e-10)])
    def test_capacity_increment_closed_form(self, kind, tol):
        for lam in (0.0, 0.8, -2.3):
            cap = capacity_increment(kind, lam, 0.004)
            assert abs(cap - 0.004) < tol * 0.004 + 1e-14

    @pytest.mark.parametrize("kind", ["chordal", "radial", "wholeplane"])
    def test_capacity_increment_ode_step(self, kind):
        cap = capacity_increment(kind, 0.8, 0.004, realization=ODE_STEP,
                                 substeps=8)
        assert abs(cap - 0.004) < 1e-6 * 0.004 + 1e-12


# ---------------------------------------------------------------------------
# forward evolution
# ---------------------------------------------------------------------------

class TestEvolveForward:
    def test_zero_driving_closed_form(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=0.01, lam=np.zeros(101))
        st_ = sl.evolve_forward(d)
        # oracle: g_t(z) = sqrt(z^2 + 4t); at z = 3i, t = 1 this is i sqrt(5)
        assert abs(st_.forward(3j) - 1j * np.sqrt(5.0)) < 1e-12
        assert abs(st_.forward(1 + 4j) - np.sqrt((1 + 4j) ** 2 + 4)) < 1e-12

    def test_zero_time_identity(self):
        st_ = sl.MapStack(kind="chordal", t0=0.0, dt=0.5, atom_lam=np.array([]))
        assert st_.forward(2 + 2j) == 2 + 2j
        assert st_.cap == 0.0

    def test_boundary_case_swallowed(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=0.01, lam=np.zeros(101))
        st_ = sl.evolve_forward(d)
        # 2i is the slit tip at t = 1: swallowed within tolerance
        with pytest.raises(sl.InsideHullError):
            st_.forward(1.999j)
        out = st_.forward(1.999j, on_swallowed="nan")
        assert np.isnan(out)

    def test_radial_dcap_normalization(self):
        d = sl.DrivingPath(kind="radial", t0=0.0, dt=1e-3, lam=np.zeros(501))
        st_ = sl.evolve_forward(d)
        assert st_.forward(0j) == 0j
        h = 1e-7
        deriv = st_.forward(h + 0j) / h
        assert abs(deriv / np.exp(0.5) - 1.0) < 1e-6

    def test_inverse_consistency_random_driving(self):
        rng = np.random.default_rng(3)
        for kind, pts in [
            ("chordal", rng.standard_normal(50) + 1j * rng.uniform(0.5, 3, 50)),
            ("radial", 0.5 * np.exp(1j * rng.uniform(0, 2 * np.pi, 50))),
            ("wholeplane", 3.0 * np.exp(1j * rng.uniform(0, 2 * np.pi, 50))),
        ]:
            t0 = -1.0 if kind == "wholeplane" else 0.0
            d = brownian_driving(kind, 2.0, 1.0, 200, 7, t0=t0)
            st_ = sl.evolve_forward(d)
            err = np.max(np.abs(st_.inverse(st_.forward(pts)) - pts))
            assert err < 1e-6, (kind, err)

    def test_ode_realization_agrees(self):
        d = brownian_driving("radial", 2.0, 0.5, 100, 11)
        a = sl.evolve_forward(d)
        b = sl.evolve_forward(d, realization=ODE_STEP, substeps=16)
        pts = 0.4 * np.exp(1j * np.linspace(0, 2 * np.pi, 17)[:-1])
        assert np.max(np.abs(a.forward(pts) - b.forward(pts))) < 1e-7

    @given(n1=st.integers(2, 20), n2=st.integers(2, 20))
    @settings(max_examples=20, deadline=None)
    def test_capacity_additivity(self, n1, n2):
        dt = 0.01
        lam1 = np.linspace(0, 1, n1 + 1)
        lam2 = np.linspace(1, 0.5, n2 + 1)
        d1 = sl.DrivingPath(kind="chordal", t0=0.0, dt=dt, lam=lam1)
        d2 = sl.DrivingPath(kind="chordal", t0=n1 * dt, dt=dt, lam=lam2)
        s1 = sl.evolve_forward(d1)
        s2 = sl.evolve_forward(d2)
        combined = s1.concat(s2)
        assert combined.cap == pytest.approx(s1.cap + n2 * dt, abs=1e-15)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

class TestComputeTrace:
    def test_zero_driving_trace(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=1e-3, lam=np.zeros(1001))
        tr = sl.compute_trace(d)
        for t in (0.25, 1.0):
            k = int(round(t / 1e-3))
            expect = 2j * np.sqrt(t)
            assert abs(tr.points[k] - expect) / abs(expect) < 1e-3

    def test_constant_translation(self):
        c = 1.7
        d0 = sl.DrivingPath(kind="chordal", t0=0.0, dt=1e-3, lam=np.zeros(501))
        dc = sl.DrivingPath(kind="chordal", t0=0.0, dt=1e-3,
                            lam=np.full(501, c))
        t0_ = sl.compute_trace(d0)
        tc = sl.compute_trace(dc)
        assert np.max(np.abs(tc.points - (t0_.points + c))) < 1e-12

    def test_seed_determinism(self):
        d = brownian_driving("chordal", 2.0, 1.0, 400, 123)
        a = sl.compute_trace(d).points
        b = sl.compute_trace(brownian_driving("chordal", 2.0, 1.0, 400, 123)).points
        assert np.array_equal(a, b)

    def test_radial_anchor(self):
        d = brownian_driving("radial", 2.0, 0.5, 200, 5, lam0=0.9)
        tr = sl.compute_trace(d)
        assert abs(tr.points[0] - np.exp(1j * d.lam[0])) < 1e-12

    def test_rotation_symmetry(self):
        c = 0.6
        d0 = brownian_driving("radial", 2.0, 0.5, 200, 5)
        dc = sl.DrivingPath(kind="radial", t0=0.0, dt=d0.dt, lam=d0.lam + c)
        a = sl.compute_trace(d0).points
        b = sl.compute_trace(dc).points
        assert np.max(np.abs(b - np.exp(1j * c) * a)) < 1e-10

    def test_batch_matches_single(self):
        d1 = brownian_driving("chordal", 2.0, 1.0, 300, 1)
        d2 = brownian_driving("chordal", 2.0, 1.0, 300, 2)
        batch = trace_points_batch("chordal", np.stack([d1.lam, d2.lam]),
                                   0.0, d1.dt)
        one = trace_points_batch("chordal", d1.lam[None], 0.0, d1.dt)[0]
        two = trace_points_batch("chordal", d2.lam[None], 0.0, d2.dt)[0]
        assert np.allclose(batch[0], one)
        assert np.allclose(batch[1], two)


# ---------------------------------------------------------------------------
# backward flows and traces
# ---------------------------------------------------------------------------

class TestBackwardFlow:
    def test_identity_at_equal_times(self):
        d = brownian_driving("chordal", 2.0, 1.0, 100, 3)
        z = 1 + 2j
        assert sl.backward_flow_eval(d, 0.5, 0.5, z) == z

    def test_inverse_property(self):
        rng = np.random.default_rng(4)
        for kind in ("chordal", "radial"):
            d = brownian_driving(kind, 2.0, 1.0, 200, 9)
            if kind == "chordal":
                z = rng.standard_normal(15) + 1j * rng.uniform(0.5, 2.5, 15)
            else:
                z = 0.5 * np.exp(1j * rng.uniform(0, 2 * np.pi, 15))
            w = sl.backward_flow_eval(d, 0.25, 0.9, z)
            back = sl.backward_flow_eval(d, 0.9, 0.25, w)
            assert np.max(np.abs(back - z)) < 1e-6

    def test_zero_driving_closed_form(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=0.01, lam=np.zeros(101))
        # f_{t,0}(z) = sqrt(z^2 - 4t); at z = 3i, t = 1 this is i sqrt(13)
        out = sl.backward_flow_eval(d, 0.0, 1.0, 3j)
        assert abs(out - 1j * np.sqrt(13.0)) < 1e-12

    def test_flow_terminated(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=0.01, lam=np.zeros(101))
        # pulling a point near the singularity back in time exits the domain
        with pytest.raises(sl.FlowTerminatedError) as exc:
            sl.backward_flow_eval(d, 1.0, 0.0, 0.05j)
        assert exc.value.exit_time is not None


class TestBackwardTrace:
    def test_zero_driving_reversed_slit(self):
        d = sl.DrivingPath(kind="chordal", t0=0.0, dt=0.01, lam=np.zeros(101))
        bt = sl.backward_trace(d, 1.0)
        ts = bt.times
        expect = 2j * np.sqrt(np.clip(1.0 - ts, 0.0, None))
        err = np.abs(bt.points[:-1] - expect[:-1])
        assert np.max(err) < 2e-3
        assert bt.points[-1] == 0.0  # root on the line

    def test_root_equals_driving_value(self):
        d = brownian_driving("chordal", 2.0, 1.0, 250, 17)
        bt = sl.backward_trace(d, 1.0)
        assert abs(bt.points[-1] - d.lam[-1]) < 1e-12
        dr = brownian_driving("radial", 2.0, 0.5, 200, 17)
        btr = sl.backward_trace(dr, 0.5)
        assert abs(btr.points[-1] - np.exp(1j * dr.lam[-1])) < 1e-12

    def test_flow_consistency(self):
        # f_{t2,t1}(beta_{t1}(t)) = beta_{t2}(t); the independent route
        # integrates the flow instead of re-rooting the trace.  The
        # discrepancy is the per-step driving variation and shrinks with dt.
        d = brownian_driving("chordal", 2.0, 1.0, 2500, 99)
        t1, t2 = 0.6, 1.0
        b1 = sl.backward_trace(d, t1)
        b2 = sl.backward_trace(d, t2)
        i1 = int(round(t1 / d.dt))
        k = np.arange(0, i1 - int(0.05 / d.dt), 60)
        pushed = sl.backward_flow_eval(d, t1, t2, b1.points[k])
        err = np.abs(pushed - b2.points[k])
        assert np.max(err) < 1e-3


# ---------------------------------------------------------------------------
# whole-plane synthesis bounds
# ---------------------------------------------------------------------------

class TestWholePlaneBounds:
    def test_capacity_sandwich_on_prefixes(self):
        p = sl.SleParams(kappa=2.0, rho=4.0, sigma=1, seed=3)
        d = sl.sample_wholeplane_driving(p, -6.0, 1200)
        tr = sl.compute_trace(d)
        prefmax = np.maximum.accumulate(np.abs(tr.points))
        ratio = prefmax / np.exp(tr.times)
        assert ratio.min() > 1.0 - 0.02
        assert ratio.max() < 4.0 * 1.02

    def test_far_point_distortion_bound(self):
        # |e^cap g(z) - z| <= 5 e^cap at exterior points
        p = sl.SleParams(kappa=2.0, rho=4.0, sigma=1, seed=8)
        d = sl.sample_wholeplane_driving(p, -4.0, 800)
        st_ = sl.evolve_forward(d)
        cap = st_.cap
        rng = np.random.default_rng(0)
        z = np.exp(cap) * rng.uniform(6.0, 40.0, 30) * np.exp(
            1j * rng.uniform(0, 2 * np.pi, 30))
        g = st_.forward(z)
        slack = 1.05  # discretization slack
        assert np.max(np.abs(np.exp(cap) * g - z)) <= 5.0 * np.exp(cap) * slack


# ---------------------------------------------------------------------------
# validation errors
# ---------------------------------------------------------------------------

class TestValidation:
    def test_short_driving_rejected(self):
        with pytest.raises(sl.ValidationError):
            sl.DrivingPath(kind="chordal", t0=0.0, dt=0.1, lam=np.array([0.0]))

    def test_bad_dt_rejected(self):
        with pytest.raises(sl.ValidationError):
            sl.DrivingPath(kind="chordal", t0=0.0, dt=-0.1, lam=np.zeros(3))

    def test_gap_constraint(self):
        lam = np.zeros(5)
        q = np.full(5, 0.1)  # lam - q < 0
        with pytest.raises(sl.ValidationError):
            sl.DrivingPath(kind="radial", t0=0.0, dt=0.1, lam=lam, q=q)

    def test_chordal_q_rejected(self):
        with pytest.raises(sl.ValidationError):
            sl.DrivingPath(kind="chordal", t0=0.0, dt=0.1, lam=np.zeros(5),
                           q=np.zeros(5) - 1.0)
