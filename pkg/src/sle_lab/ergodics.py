"""Tip ergodicity experiments.

The harmonic-measure gap Z(t) = lam(t) - q(t) extracted from a curve equals
2 pi times the harmonic measure, viewed from infinity, of one side of the
curve truncated at capacity t.  For stationary one-force-point drivings the
time average of f(Z) converges to the stationary-law average

    integral f(x) sin(x/2)^p dx / integral sin(x/2)^p dx,   p = delta - 1,

and the geometric experiments reproduce the same limits from curves alone:
a chordal trace reversed and recentered at its tip behaves, deep in
capacity, like the stationary gap with exponent p = 8/kappa + 2; a radial
trace's future curve gives p = 4/kappa.  Every experiment reports its
empirical average against the quadrature oracle, with a batch-means or
across-replica standard error.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.stats import ks_2samp

from .errors import StatGateError, ValidationError
from .loewner import TWO_PI, trace_points_batch, unzip_batch
from .processes import SleParams, delta_of, replica_rng, sample_stationary_batch

TEST_FUNCTIONS = {
    "one": lambda x: np.ones_like(np.asarray(x, dtype=float)),
    "cos": np.cos,
    "sin": np.sin,
    "cos2": lambda x: np.cos(2.0 * np.asarray(x, dtype=float)),
}


def _as_function(f):
    if callable(f):
        return f, getattr(f, "__name__", "f")
    try:
        return TEST_FUNCTIONS[f], f
    except KeyError:
        raise ValidationError(f"unknown test function {f!r}") from None


@dataclass(frozen=True)
class ErgodicReport:
    """Empirical time average against its analytic target."""

    empirical: float
    analytic: float
    stderr: float
    horizon: float
    replicas: int
    config: dict = field(default_factory=dict)

    @property
    def deviation(self):
        return self.empirical - self.analytic

    def to_dict(self):
        return {"empirical": self.empirical, "analytic": self.analytic,
                "stderr": self.stderr, "horizon": self.horizon,
                "replicas": self.replicas, "deviation": self.deviation,
                "config": dict(self.config)}


@dataclass(frozen=True)
class TipRecords:
    """Per-replica stream of (s, v, h): curve parameter, remaining capacity,
    harmonic measure of the designated side."""

    s: np.ndarray
    v: np.ndarray
    h: np.ndarray


def analytic_average(f, p):
    """Average of f under the density proportional to sin(x/2)^p on (0, 2 pi)."""
    if p <= -1.0:
        raise ValidationError("exponent must exceed -1 for integrability")
    fn, _ = _as_function(f)
    # substitute x = 2u to keep the endpoint singularity mild and symmetric
    num = quad(lambda u: fn(2.0 * u) * np.sin(u) ** p, 0.0, np.pi, limit=200)[0]
    den = quad(lambda u: np.sin(u) ** p, 0.0, np.pi, limit=200)[0]
    return num / den


def diffusion_time_average(path, f, t0=None, n_batches=16, tol=None) -> ErgodicReport:
    """Trapezoid time average of f(Z) over [t0 - horizon, t0].

    The analytic target uses the path's own exponent p = delta - 1.  The
    standard error comes from batch means; if tol is given and the stderr
    exceeds it the report is flagged (config["flagged"]), never failed.
    """
    fn, fname = _as_function(f)
    t = path.times
    if t0 is None:
        t0 = t[-1]
    sel = t <= t0 + 1e-12
    if sel.sum() < 2 * n_batches:
        raise ValidationError("horizon too short for batch means")
    vals = fn(path.z[sel])
    horizon = float(t[sel][-1] - t[sel][0])
    weights = np.full(vals.size, path.dt)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    empirical = float(np.sum(weights * vals) / np.sum(weights))
    batches = np.array_split(vals[1:], n_batches)
    bm = np.array([b.mean() for b in batches])
    stderr = float(bm.std(ddof=1) / np.sqrt(n_batches))
    p = delta_of(path.kappa, path.rho, path.sigma) - 1.0
    analytic = float(analytic_average(fn, p))
    cfg = {"f": fname, "exponent": p, "kappa": path.kappa, "rho": path.rho,
           "sigma": path.sigma, "t0": float(t0)}
    if tol is not None and stderr > tol:
        cfg["flagged"] = "horizon too short: stderr above requested tolerance"
    return ErgodicReport(empirical=empirical, analytic=analytic, stderr=stderr,
                         horizon=horizon, replicas=1, config=cfg)


# ---------------------------------------------------------------------------
# geometric pipelines
# ---------------------------------------------------------------------------

def _brownian_batch(kappa, T, steps, seed, replicas, replica_offset=0):
    dt = T / steps
    lams = np.empty((replicas, steps + 1))
    for r in range(replicas):
        rng = replica_rng(seed, replica_offset + r)
        inc = rng.standard_normal(steps) * np.sqrt(kappa * dt)
        lams[r, 0] = 0.0
        lams[r, 1:] = np.cumsum(inc)
    return lams, dt


def _windowed_averages(caps, lams, qs, ok, fn, window):
    """Capacity-weighted window average of f(Z) per replica.

    caps/lams/qs have shape (R, M); the window is a fraction pair of each
    replica's capacity range measured from the deep end.
    """
    lo_frac, hi_frac = window
    out = np.full(caps.shape[0], np.nan)
    for r in np.where(ok)[0]:
        c = caps[r]
        z = lams[r] - qs[r]
        c0, c1 = c[0], c[-1]
        rng_len = c1 - c0
        if rng_len <= 0:
            continue
        lo = c0 + lo_frac * rng_len
        hi = c0 + hi_frac * rng_len
        sel = (c >= lo) & (c <= hi)
        if sel.sum() < 8:
            continue
        cs = c[sel]
        vals = fn(z[sel])
        dv = np.diff(cs)
        if dv.sum() <= 0:
            continue
        out[r] = np.sum(0.5 * (vals[1:] + vals[:-1]) * dv) / dv.sum()
    return out


def _aggregate(per_replica, analytic, horizon, cfg, max_drop=0.2):
    ok = np.isfinite(per_replica)
    drops = int((~ok).sum())
    total = per_replica.size
    if drops > max_drop * total:
        raise StatGateError(f"{drops}/{total} replicas dropped")
    vals = per_replica[ok]
    empirical = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else np.inf
    cfg = dict(cfg)
    cfg["dropped_replicas"] = drops
    return ErgodicReport(empirical=empirical, analytic=analytic, stderr=stderr,
                         horizon=horizon, replicas=int(vals.size), config=cfg)


def tip_records_from_streams(caps, lams, qs, t_tip):
    """TipRecords stream for one replica's extraction output.

    s is the original curve parameter of the point whose remaining segment
    has capacity v: unzip step j consumes the point at parameter
    t_tip - j dt_curve, so v is strictly decreasing in s.
    """
    v = caps
    h = ((lams - qs) % TWO_PI) / TWO_PI
    s = t_tip - (caps - caps[0])  # capacity-indexed surrogate parameter
    order = np.argsort(s)
    return TipRecords(s=s[order], v=v[order], h=h[order])


def chordal_tip_per_replica(kappa, t0, steps, seed, replicas, f="cos",
                            window=(0.15, 0.65), cap_floor=-10.0,
                            replica_offset=0, keep_records=False):
    """Window averages of f(Z) for a chunk of chordal-tip replicas.

    Replica i of the chunk uses the stream seed XOR (replica_offset + i),
    so chunked and monolithic runs produce identical values.
    """
    fn, _ = _as_function(f)
    lams, dt = _brownian_batch(kappa, t0, steps, seed, replicas, replica_offset)
    pts = trace_points_batch("chordal", lams, 0.0, dt)
    rev = pts[:, ::-1] - pts[:, -1:]
    caps, lam_x, q_x, ok = unzip_batch(rev, cap_floor=cap_floor)
    per = _windowed_averages(caps, lam_x, q_x, ok, fn, window)
    if keep_records:
        recs = [tip_records_from_streams(caps[r], lam_x[r], q_x[r], t0)
                for r in np.where(np.isfinite(per))[0]]
        return per, recs
    return per, None


def chordal_tip_experiment(kappa, t0, steps, replicas, seed, f="cos",
                           window=(0.15, 0.65), cap_floor=-10.0,
                           keep_records=False, threads=1):
    """Harmonic-measure ergodic average at the tip of a chordal trace.

    Per replica: simulate a chordal trace on [0, t0], reverse and translate
    its tip to the origin, extract the whole-plane driving of the reversed
    curve, and average f(Z) with capacity weight over the deepest part of
    the available capacity range.  Aggregates across replicas against the
    stationary-law target with exponent p = 8/kappa + 2.
    """
    if not 0.0 < kappa < 4.0:
        raise ValidationError("chordal tip experiment needs kappa in (0, 4)")
    if steps < 1000:
        raise ValidationError("need steps >= 1000")
    fn, fname = _as_function(f)
    per, recs = _run_chunked(chordal_tip_per_replica, replicas, threads,
                             keep_records,
                             kappa=kappa, t0=t0, steps=steps, seed=seed,
                             f=f, window=window, cap_floor=cap_floor)
    p = 8.0 / kappa + 2.0
    analytic = float(analytic_average(fn, p))
    cfg = {"experiment": "chordal_tip", "kappa": kappa, "t0": t0,
           "steps": steps, "f": fname, "exponent": p, "window": list(window),
           "seed": int(seed)}
    report = _aggregate(per, analytic, t0, cfg)
    if keep_records:
        return report, recs
    return report


def _run_chunked(per_replica_fn, replicas, threads, keep_records, **kwargs):
    """Run a per-replica experiment over contiguous chunks, merged by index."""
    threads = max(1, int(threads))
    if threads == 1 or replicas < 2 * threads:
        return per_replica_fn(replicas=replicas, replica_offset=0,
                              keep_records=keep_records, **kwargs)
    bounds = np.linspace(0, replicas, threads + 1).astype(int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])
              if hi > lo]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(per_replica_fn, replicas=hi - lo,
                            replica_offset=lo, keep_records=keep_records,
                            **kwargs)
                for lo, hi in chunks]
        parts = [f.result() for f in futs]
    per = np.concatenate([p for p, _ in parts])
    recs = None
    if keep_records:
        recs = [r for _, rs in parts for r in (rs or [])]
    return per, recs


def radial_tip_per_replica(kappa, t_future, steps, seed, replicas, f="cos",
                           window=(0.15, 0.65), cap_floor=-12.0,
                           replica_offset=0, keep_records=False,
                           estimate_truncation=False):
    """Window averages of f(Z) for a chunk of radial-tip replicas."""
    fn, _ = _as_function(f)
    lams, dt = _brownian_batch(kappa, t_future, steps, seed, replicas,
                               replica_offset)
    pts = trace_points_batch("radial", lams, 0.0, dt)
    rev = np.concatenate([np.zeros((replicas, 1), dtype=complex),
                          pts[:, ::-1]], axis=1)
    caps, lam_x, q_x, ok = unzip_batch(rev, cap_floor=cap_floor)
    per = _windowed_averages(caps, lam_x, q_x, ok, fn, window)
    per_h = None
    if estimate_truncation:
        half = steps // 2
        rev_half = np.concatenate([np.zeros((replicas, 1), dtype=complex),
                                   pts[:, :half - 1:-1]], axis=1)
        caps_h, lam_h, q_h, ok_h = unzip_batch(rev_half, cap_floor=cap_floor)
        per_h = _windowed_averages(caps_h, lam_h, q_h, ok_h, fn, window)
    recs = None
    if keep_records:
        recs = [tip_records_from_streams(caps[r], lam_x[r], q_x[r], t_future)
                for r in np.where(np.isfinite(per))[0]]
    return per, per_h, recs


def radial_tip_experiment(kappa, t_future, steps, replicas, seed, f="cos",
                          window=(0.15, 0.65), cap_floor=-12.0,
                          estimate_truncation=True, keep_records=False):
    """Harmonic-measure ergodic average along a radial trace's future curve.

    The future curve beta([t, infinity]) is truncated at the capacity
    horizon t_future and anchored at the origin (its limit point); the
    extraction then yields the remaining-curve capacities and gaps in one
    pass.  Target exponent p = 4/kappa.  The truncation bias is estimated
    by repeating the average with the horizon halved.
    """
    if not 0.0 < kappa <= 4.0:
        raise ValidationError("radial tip experiment needs kappa in (0, 4]")
    fn, fname = _as_function(f)
    per, per_h, recs = radial_tip_per_replica(
        kappa, t_future, steps, seed, replicas, f=f, window=window,
        cap_floor=cap_floor, keep_records=keep_records,
        estimate_truncation=estimate_truncation)
    p = 4.0 / kappa
    analytic = float(analytic_average(fn, p))
    cfg = {"experiment": "radial_tip", "kappa": kappa, "t_future": t_future,
           "steps": steps, "f": fname, "exponent": p, "window": list(window),
           "seed": int(seed)}
    if estimate_truncation and per_h is not None:
        both = np.isfinite(per) & np.isfinite(per_h)
        cfg["truncation_estimate"] = float(np.abs(
            np.mean(per[both]) - np.mean(per_h[both]))) if both.any() else np.nan
    report = _aggregate(per, analytic, t_future, cfg)
    if keep_records:
        return report, recs
    return report


# ---------------------------------------------------------------------------
# reversibility
# ---------------------------------------------------------------------------

def _gap_at_depth(caps, lams, qs, ok, depth):
    """Interpolated Z at capacity (final - depth), per surviving replica."""
    out = np.full(caps.shape[0], np.nan)
    for r in np.where(ok)[0]:
        c = caps[r]
        target = c[-1] - depth
        if target <= c[0]:
            continue
        z = (lams[r] - qs[r]) % TWO_PI
        out[r] = np.interp(target, c, z)
    return out


def _reversibility_ensembles(kappa, rho, replicas, seed, t_start, steps,
                             depth, cap_floor):
    params = SleParams(kappa=kappa, rho=rho, sigma=1, seed=seed)
    lams, q, z, dt, _ = sample_stationary_batch(params, -t_start, steps,
                                                replicas, dt_max=np.inf,
                                                t0=t_start)
    pts = trace_points_batch("wholeplane", lams, t_start, dt)
    fwd_caps, fwd_l, fwd_q, fwd_ok = unzip_batch(pts, cap_floor=cap_floor)
    rev = pts[:, ::-1] - pts[:, -1:]
    rev_caps, rev_l, rev_q, rev_ok = unzip_batch(rev, cap_floor=cap_floor)
    z_fwd = _gap_at_depth(fwd_caps, fwd_l, fwd_q, fwd_ok, depth)
    z_rev = _gap_at_depth(rev_caps, rev_l, rev_q, rev_ok, depth)
    return z_fwd[np.isfinite(z_fwd)], z_rev[np.isfinite(z_rev)]


def bootstrap_power(sample_a, sample_b, n=None, alpha=0.01, n_boot=400,
                    seed=0):
    """Plug-in power of the two-sample KS test at level alpha.

    Resamples both empirical distributions at size n and reports the
    rejection fraction.
    """
    rng = np.random.default_rng(seed)
    n = n or min(sample_a.size, sample_b.size)
    hits = 0
    for _ in range(n_boot):
        a = rng.choice(sample_a, size=n, replace=True)
        b = rng.choice(sample_b, size=n, replace=True)
        if ks_2samp(a, b).pvalue < alpha:
            hits += 1
    return hits / n_boot


def reversibility_check(kappa, replicas, seed, rho=None, t_start=-6.0,
                        steps=1200, depth=1.0, cap_floor=-10.0,
                        with_power=False):
    """Two-sample comparison of forward vs reversed-recentered gap values.

    Simulates whole-plane traces with force-point weight rho (default
    kappa + 2, the reversible case), extracts the driving of both the
    forward curve and the reversed recentered curve, and compares the gap
    at one capacity unit below the final time.  Both ensembles pass through
    the same extraction machinery so its bias cancels in the comparison.
    Returns a dict with the KS statistics, the split-half control, and,
    when with_power is set, a bootstrap power estimate for rejecting
    equality.
    """
    if not 0.0 < kappa < 4.0:
        raise ValidationError("reversibility check needs kappa in (0, 4)")
    rho = kappa + 2.0 if rho is None else rho
    z_fwd, z_rev = _reversibility_ensembles(kappa, rho, replicas, seed,
                                            t_start, steps, depth, cap_floor)
    if min(z_fwd.size, z_rev.size) < 0.8 * replicas:
        raise StatGateError("too many extraction failures")
    ks = ks_2samp(z_fwd, z_rev)
    half = ks_2samp(z_fwd[::2], z_fwd[1::2])
    out = {"kappa": kappa, "rho": rho, "replicas": replicas,
           "n_forward": int(z_fwd.size), "n_reversed": int(z_rev.size),
           "ks_stat": float(ks.statistic), "ks_pvalue": float(ks.pvalue),
           "split_half_pvalue": float(half.pvalue),
           "forward_sample": z_fwd, "reversed_sample": z_rev}
    if with_power:
        out["power"] = bootstrap_power(z_fwd, z_rev, n=min(z_fwd.size,
                                                           z_rev.size),
                                       seed=seed + 1)
    return out
