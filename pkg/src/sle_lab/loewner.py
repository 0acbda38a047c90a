"""Deterministic Loewner engine.

Discretizes the chordal equation dg/dt = 2/(g - lam(t)) on the upper half
plane, the radial equation dg/dt = g (e^{i lam} + g)/(e^{i lam} - g) on the
unit disk, and its whole-plane variant on the exterior disk, as compositions
of elementary one-step maps with the driving value frozen per step.

For a frozen driving value both equations integrate in closed form.  The
chordal step is the vertical slit map g(z) = lam + sqrt((z - lam)^2 + 4 dt).
The radial and whole-plane steps reduce, after rotating the driving point to
1 and substituting m(u) = u / (1 + u)^2, to m(u_t) = e^t m(u_0): a quadratic
whose two roots are reciprocal, one inside and one outside the unit circle.
Selecting the root on the correct side of the circle gives the exact slit
map with no branch tracking.  A fourth-order Runge-Kutta realization of the
same steps is kept as an independent cross-check.

Capacity bookkeeping is uniform: one step of size dt adds dt to the stack
capacity (half-plane capacity grows by 2 dt, disk and whole-plane capacity
by dt).

The module also provides the backward flows, backward traces, the welding of
a backward radial process, driving extraction from a curve by greedy
unzipping, and the normalized backward trace obtained by finite-time
truncation of the scaled backward flow.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BadAnchorError,
    FlowTerminatedError,
    InsideHullError,
    NotConvergedError,
    NotUnzippableError,
    NumericalBlowupError,
    ValidationError,
)

TWO_PI = 2.0 * np.pi

KINDS = ("chordal", "radial", "wholeplane")

CLOSED_FORM = "closed_form_slit"
ODE_STEP = "ode_step"


# ---------------------------------------------------------------------------
# elementary maps
# ---------------------------------------------------------------------------

def sqrt_upper(v):
    """Square root branch with nonnegative imaginary part (maps C \\ [0,oo) into H)."""
    s = np.sqrt(np.asarray(v, dtype=complex))
    return np.where(s.imag < 0.0, -s, s)


def chordal_step(z, lam, dt, inverse=False):
    """One chordal slit atom.

    Forward: g(z) = lam + sqrt((z - lam)^2 + 4 dt), the map H \\ K -> H for
    the vertical slit K = [lam, lam + 2 i sqrt(dt)].  Inverse: same formula
    with - 4 dt.  Both use the upper-half-plane square root branch.
    """
    z = np.asarray(z, dtype=complex)
    s = -4.0 * dt if inverse else 4.0 * dt
    return lam + sqrt_upper((z - lam) ** 2 + s)


def _reciprocal_roots(c):
    # roots of c r^2 + (2c - 1) r + c = 0; the product is exactly 1, so one
    # root is returned stably and the other as its reciprocal
    b = 2.0 * c - 1.0
    disc = np.sqrt(1.0 - 4.0 * c)
    n_plus = -b + disc
    n_minus = -b - disc
    num = np.where(np.abs(n_plus) >= np.abs(n_minus), n_plus, n_minus)
    with np.errstate(divide="ignore", invalid="ignore"):
        big = num / (2.0 * c)
        small = 2.0 * c / num
    return big, small


def disk_step(w, lam, dt, exterior, inverse=False):
    """One radial (interior) or whole-plane (exterior) slit atom.

    With zeta = e^{i lam} and u = w / zeta, the frozen-driving radial flow
    satisfies m(u_t) = e^t m(u_0) where m(u) = u / (1 + u)^2.  The image is
    the quadratic root inside the unit circle for the interior evolution and
    outside for the exterior one.  Points whose root pair lands on the circle
    were swallowed by the slit; they are returned as NaN.
    """
    w = np.asarray(w, dtype=complex)
    zeta = np.exp(1j * lam)
    u = w / zeta
    m = u / (1.0 + u) ** 2
    c = np.exp(-dt if inverse else dt) * m
    r1, r2 = _reciprocal_roots(c)
    a1 = np.abs(r1)
    inner = np.where(a1 <= 1.0, r1, r2)
    outer = np.where(a1 <= 1.0, r2, r1)
    r = outer if exterior else inner
    if not inverse:
        # forward maps absorb the slit: both roots on the circle
        swallowed = np.abs(np.abs(r) - 1.0) < 1e-12
        r = np.where(swallowed, np.nan + 1j * np.nan, r)
    return zeta * r


def _ode_rhs(kind, w, zeta):
    if kind == "chordal":
        return 2.0 / (w - zeta)
    return w * (zeta + w) / (zeta - w)


def ode_step(w, lam, dt, kind, exterior=False, inverse=False, substeps=4):
    """RK4 realization of one atom; independent of the closed forms."""
    w = np.asarray(w, dtype=complex)
    zeta = lam if kind == "chordal" else np.exp(1j * lam)
    sgn = -1.0 if inverse else 1.0
    h = sgn * dt / substeps
    for _ in range(substeps):
        k1 = _ode_rhs(kind, w, zeta)
        k2 = _ode_rhs(kind, w + 0.5 * h * k1, zeta)
        k3 = _ode_rhs(kind, w + 0.5 * h * k2, zeta)
        k4 = _ode_rhs(kind, w + h * k3, zeta)
        w = w + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return w


def advance_gap(gap, dt):
    """Exact one-atom update of the boundary gap Z = lam - q under hull growth.

    Within a frozen-driving step the gap obeys Z' = cot(Z/2), equivalently
    cos(Z/2)^2 shrinks by the factor e^{-dt}; the sign of cos(Z/2) (the side
    of the antipode) is preserved.
    """
    c = np.cos(0.5 * np.asarray(gap, dtype=float)) * np.exp(-0.5 * dt)
    return 2.0 * np.arccos(np.clip(c, -1.0, 1.0))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DrivingPath:
    """A sampled driving function on a uniform capacity-time grid.

    lam[k] is the driving value at time t0 + k dt.  For radial and
    whole-plane paths an optional force-point angle track q may be attached,
    in which case lam - q must stay in (0, 2 pi).
    """

    kind: str
    t0: float
    dt: float
    lam: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}")
        lam = np.asarray(self.lam, dtype=float)
        object.__setattr__(self, "lam", lam)
        if lam.ndim != 1 or lam.size < 2:
            raise ValidationError("driving needs at least 2 samples")
        if not np.isfinite(lam).all():
            raise ValidationError("driving samples must be finite")
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValidationError("dt must be strictly positive and finite")
        if self.q is not None:
            if self.kind == "chordal":
                raise ValidationError("force-point track is radial/whole-plane only")
            q = np.asarray(self.q, dtype=float)
            object.__setattr__(self, "q", q)
            if q.shape != lam.shape:
                raise ValidationError("lambda and q must have equal length")
            gap = lam - q
            if not ((gap > 0.0).all() and (gap < TWO_PI).all()):
                raise ValidationError("lambda - q must lie in (0, 2 pi)")

    @property
    def nsteps(self):
        return self.lam.size - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.lam.size)

    @property
    def duration(self):
        return self.dt * self.nsteps

    @property
    def gap(self):
        if self.q is None:
            raise ValidationError("no force-point track attached")
        return self.lam - self.q

    def reversed(self):
        """Driving read backwards in time, re-anchored at t0."""
        q = None if self.q is None else self.q[::-1].copy()
        return replace(self, lam=self.lam[::-1].copy(), q=q)


@dataclass(frozen=True)
class Trace:
    """A capacity-parameterized polyline of complex points."""

    kind: str
    t0: float
    dt: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        object.__setattr__(self, "points", pts)
        if not np.isfinite(pts).all():
            raise ValidationError("trace points must be finite")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.points.size)


@dataclass(frozen=True)
class MapStack:
    """Composition of elementary maps realizing the forward Loewner map g_t.

    Atom k covers [t0 + (k-1) dt, t0 + k dt] and freezes the driving at the
    right endpoint value.  For the whole-plane kind the stack is seeded at
    capacity t0 by the scaling map z -> e^{-t0} z (initial hull = disk of
    radius e^{t0}).
    """

    kind: str
    t0: float
    dt: float
    atom_lam: np.ndarray
    realization: str = CLOSED_FORM
    substeps: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}")
        if self.realization not in (CLOSED_FORM, ODE_STEP):
            raise ValidationError(f"unknown realization {self.realization!r}")
        object.__setattr__(self, "atom_lam", np.asarray(self.atom_lam, dtype=float))

    @property
    def natoms(self):
        return self.atom_lam.size

    @property
    def cap(self):
        """Accumulated capacity (hcap/2 for chordal, dcap/cap otherwise)."""
        return self.t0 + self.natoms * self.dt

    def _one(self, w, lam, inverse):
        if self.realization == ODE_STEP:
            return ode_step(w, lam, self.dt, self.kind,
                            exterior=(self.kind == "wholeplane"),
                            inverse=inverse, substeps=self.substeps)
        if self.kind == "chordal":
            return chordal_step(w, lam, self.dt, inverse=inverse)
        return disk_step(w, lam, self.dt,
                         exterior=(self.kind == "wholeplane"), inverse=inverse)

    def forward(self, z, on_swallowed="raise"):
        """Evaluate g_t at points outside the hull.

        Swallowed points raise InsideHullError (or become NaN when
        on_swallowed="nan").
        """
        w = np.asarray(z, dtype=complex)
        scalar = w.ndim == 0
        w = np.atleast_1d(w).copy()
        if self.kind == "wholeplane":
            w = w * np.exp(-self.t0)
            if np.any(np.abs(w) <= 1.0):
                return self._swallowed(w, np.abs(w) <= 1.0, on_swallowed, 0, scalar)
        for k, lam in enumerate(self.atom_lam):
            w = self._one(w, lam, inverse=False)
            if self.kind == "chordal":
                bad = ~(w.imag > 0.0)
            else:
                bad = ~np.isfinite(w)
            if bad.any():
                return self._swallowed(w, bad, on_swallowed, k + 1, scalar)
        return w[0] if scalar else w

    @staticmethod
    def _swallowed(w, bad, on_swallowed, step, scalar):
        if on_swallowed == "raise":
            raise InsideHullError(step_index=step)
        w = np.where(bad, np.nan + 1j * np.nan, w)
        return w[0] if scalar else w

    def inverse(self, w):
        """Evaluate f_t = g_t^{-1} (defined on the whole target domain)."""
        z = np.asarray(w, dtype=complex)
        scalar = z.ndim == 0
        z = np.atleast_1d(z).copy()
        for k in range(self.natoms - 1, -1, -1):
            z = self._one(z, self.atom_lam[k], inverse=True)
        if self.kind == "wholeplane":
            z = z * np.exp(self.t0)
        return z[0] if scalar else z

    def concat(self, other):
        """Append a stack that continues this one; capacities add."""
        if other.kind != self.kind or abs(other.dt - self.dt) > 1e-12 * self.dt:
            raise ValidationError("incompatible stacks")
        return replace(self, atom_lam=np.concatenate([self.atom_lam, other.atom_lam]))


def capacity_increment(stack_kind, lam, dt, realization=CLOSED_FORM, substeps=4):
    """Numerically estimate the capacity added by a single atom.

    Chordal: from the expansion g(z) - z ~ 2 dt / z at a far point.  Radial:
    from g'(0).  Whole-plane: from z / g(z) at a far point.  Used to verify
    the per-atom capacity contract.
    """
    if realization == ODE_STEP:
        def step(w):
            return ode_step(w, lam, dt, stack_kind,
                            exterior=(stack_kind == "wholeplane"), substeps=substeps)
    elif stack_kind == "chordal":
        def step(w):
            return chordal_step(w, lam, dt)
    else:
        def step(w):
            return disk_step(w, lam, dt, exterior=(stack_kind == "wholeplane"))

    if stack_kind == "chordal":
        # pure-imaginary offset kills the O(lam/z) term in the real part;
        # the closed form is rationalized (g - z = 4 dt / ((g-lam)+(z-lam)))
        # so it can use a far point, while the RK4 route must stay near to
        # avoid cancellation and accepts the O(dt/|z|^2) bias
        z = lam + (1e6j if realization == CLOSED_FORM else 200.0j)
        g = step(np.array([z]))[0]
        if realization == CLOSED_FORM:
            diff = 4.0 * dt / ((g - lam) + (z - lam))
        else:
            diff = g - z
        return (diff * z / 2.0).real
    if stack_kind == "radial":
        # centered difference for g'(0) kills the even-order bias
        h = 1e-6
        g = step(np.array([h + 0.0j, -h + 0.0j]))
        return float(np.log(np.abs((g[0] - g[1]) / (2.0 * h))))
    # exterior: averaging antipodal far points kills the O(1/z) term
    z = 1e6 * np.exp(1j * np.array([lam + 1.0, lam + 1.0 + np.pi]))
    g = step(z)
    return float(0.5 * (np.log(np.abs(z[0] / g[0]))
                        + np.log(np.abs(z[1] / g[1]))))


# ---------------------------------------------------------------------------
# forward evolution and traces
# ---------------------------------------------------------------------------

def evolve_forward(driving: DrivingPath, realization=CLOSED_FORM, substeps=4) -> MapStack:
    """Build the map stack realizing g_t at the driving's final time."""
    return MapStack(kind=driving.kind, t0=driving.t0, dt=driving.dt,
                    atom_lam=driving.lam[1:].copy(),
                    realization=realization, substeps=substeps)


def _trace_targets(kind, lam, eps):
    if kind == "chordal":
        return lam + 1j * eps
    if kind == "radial":
        return np.exp(1j * lam) * (1.0 - eps)
    return np.exp(1j * lam) * (1.0 + eps)


def trace_points_batch(kind, lam, t0, dt, eps_scale=0.1, check_every=64):
    """Trace points for a batch of drivings, shape (R, N+1) -> (R, N+1).

    beta(t_k) is the inverse stack of the first k atoms applied to the
    driving point offset eps = eps_scale sqrt(dt) into the domain.  The
    march applies atom k to all targets with index >= k, so the total cost
    is O(N^2) atom applications per replica, vectorized across replicas.
    """
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    nsteps = lam.shape[1] - 1
    eps = eps_scale * np.sqrt(dt)
    W = _trace_targets(kind, lam, eps).astype(complex)
    exterior = kind == "wholeplane"
    for k in range(nsteps, 0, -1):
        lam_k = lam[:, k:k + 1]
        if kind == "chordal":
            W[:, k:] = chordal_step(W[:, k:], lam_k, dt, inverse=True)
        else:
            W[:, k:] = disk_step(W[:, k:], lam_k, dt, exterior=exterior, inverse=True)
        if (k % check_every == 0) and not np.isfinite(W[:, k:]).all():
            raise NumericalBlowupError(step_index=k)
    if not np.isfinite(W).all():
        raise NumericalBlowupError(step_index=0)
    if exterior:
        W = W * np.exp(t0)
    return W


def compute_trace(driving: DrivingPath, eps_scale=0.1) -> Trace:
    """Synthesize the trace beta(t) = g_t^{-1}(driving point) from a driving."""
    pts = trace_points_batch(driving.kind, driving.lam[None, :], driving.t0,
                             driving.dt, eps_scale=eps_scale)[0]
    if driving.kind == "chordal":
        # anchor the root exactly on the line
        pts = pts.copy()
        pts[0] = driving.lam[0]
    elif driving.kind == "radial":
        pts = pts.copy()
        pts[0] = np.exp(1j * driving.lam[0])
    return Trace(kind=driving.kind, t0=driving.t0, dt=driving.dt, points=pts)


# ---------------------------------------------------------------------------
# backward flows and traces
# ---------------------------------------------------------------------------

def _grid_index(driving, t, name):
    x = (t - driving.t0) / driving.dt
    k = int(round(x))
    if abs(x - k) > 1e-9 * max(1.0, abs(x)) + 1e-12:
        raise ValidationError(f"{name}={t} is not on the driving grid")
    if k < 0 or k > driving.nsteps:
        raise ValidationError(f"{name}={t} outside the driving's time range")
    return k


def backward_flow_eval(driving: DrivingPath, t1, t2, z):
    """Evaluate the backward flow f_{t2,t1}(z).

    For t2 >= t1 the flow is defined on the whole half plane or disk; for
    t2 < t1 the trajectory may exit the domain, in which case
    FlowTerminatedError carries the exit time.
    """
    if driving.kind == "wholeplane":
        raise ValidationError("backward flow is chordal/radial only")
    i1 = _grid_index(driving, t1, "t1")
    i2 = _grid_index(driving, t2, "t2")
    w = np.asarray(z, dtype=complex)
    scalar = w.ndim == 0
    w = np.atleast_1d(w).copy()
    dt = driving.dt
    if i2 >= i1:
        # backward atoms applied in increasing time
        for k in range(i1 + 1, i2 + 1):
            if driving.kind == "chordal":
                w = chordal_step(w, driving.lam[k], dt, inverse=True)
            else:
                w = disk_step(w, driving.lam[k], dt, exterior=False, inverse=True)
    else:
        # inverse of the backward flow: forward atoms in decreasing time
        for k in range(i1, i2, -1):
            if driving.kind == "chordal":
                w = chordal_step(w, driving.lam[k], dt, inverse=False)
                bad = ~(w.imag > 0.0)
            else:
                w = disk_step(w, driving.lam[k], dt, exterior=False, inverse=False)
                bad = ~np.isfinite(w)
            if bad.any():
                raise FlowTerminatedError(exit_time=driving.t0 + k * dt)
    if not np.isfinite(w).all():
        raise NumericalBlowupError()
    return w[0] if scalar else w


def backward_trace(driving: DrivingPath, t0) -> Trace:
    """Backward trace beta_{t0} on [0, t0].

    Computed as the forward trace of the time-reversed driving lam(t0 - t),
    re-indexed so that beta_{t0}(t0) is the root on the boundary and
    beta_{t0}(0) the tip.
    """
    if driving.kind == "wholeplane":
        raise ValidationError("backward traces are chordal/radial only")
    i0 = _grid_index(driving, t0, "t0")
    if i0 < 1:
        raise ValidationError("t0 must be positive")
    rev = DrivingPath(kind=driving.kind, t0=0.0, dt=driving.dt,
                      lam=driving.lam[i0::-1].copy())
    fwd = compute_trace(rev)
    return Trace(kind=driving.kind, t0=0.0, dt=driving.dt,
                 points=fwd.points[::-1].copy())


def normalized_backward_trace(driving: DrivingPath, t_max=None, eps_scale=0.1,
                              tol=None):
    """Normalized trace of a backward radial process by finite-time truncation.

    Approximates beta(t) = lim_T e^T f_{T,t}(driving point) with T = t_max,
    marching the backward flow once and scaling.  A truncation estimate is
    reported as the sup distance against the T = t_max/2 proxy over the
    first half of the samples; if tol is given and exceeded,
    NotConvergedError is raised with the estimate attached.

    Returns (trace, truncation_estimate).
    """
    if driving.kind != "radial":
        raise ValidationError("normalized backward trace needs a backward-radial driving")
    if t_max is None:
        t_max = driving.t0 + driving.duration
    i_max = _grid_index(driving, t_max, "t_max")
    if i_max < 2:
        raise ValidationError("t_max too small")
    dt = driving.dt
    eps = eps_scale * np.sqrt(dt)
    lam = driving.lam
    W = np.exp(1j * lam[:i_max + 1]) * (1.0 - eps)
    i_half = i_max // 2
    half = None
    for j in range(1, i_max + 1):
        W[:j] = disk_step(W[:j], lam[j], dt, exterior=False, inverse=True)
        if j == i_half:
            half = np.exp(j * dt + driving.t0) * W[:j].copy()
    pts = np.exp(t_max) * W
    if not np.isfinite(pts).all():
        raise NumericalBlowupError()
    # truncation estimate on the quarter of samples the half-length flow
    # approximates well; deeper samples only measure the escape scale
    i_q = max(1, i_max // 4)
    estimate = float(np.max(np.abs(pts[:i_q] - half[:i_q]))) if i_half else np.inf
    if tol is not None and estimate > tol:
        raise NotConvergedError(estimate=estimate)
    trace = Trace(kind="radial", t0=driving.t0, dt=dt, points=pts)
    return trace, estimate


# ---------------------------------------------------------------------------
# driving extraction by greedy unzipping
# ---------------------------------------------------------------------------

def _segment_seed_forward(z, ell, th):
    """Exterior map of the straight segment [0, ell e^{i th}], capacity log(ell/4).

    Normalized so that z / g(z) -> ell / 4 > 0 at infinity after removing the
    rotation; the base 0 pulls back to the boundary angle th + pi and the
    segment tip to th.
    """
    v = (np.exp(-1j * th) * z - 0.5 * ell) / (0.25 * ell)
    disc = np.sqrt(v * v - 4.0)
    n1 = v + disc
    n2 = v - disc
    big = np.where(np.abs(n1) >= np.abs(n2), n1, n2) / 2.0
    w = np.where(np.abs(big) >= 1.0, big, 1.0 / big)
    return np.exp(1j * th) * w


def _atom_from_radius(s):
    # capacity of the exterior radial slit [zeta, zeta (1+s)]
    return np.log((2.0 + s) ** 2 / (4.0 * (1.0 + s)))


# image points this close to the unit circle are treated as touching the
# hull; a genuine offset point maps to s ~ sqrt(distance), so the shell only
# catches retraces and exact duplicates
_SHELL_TOL = 1e-7


@dataclass
class UnzipResult:
    """Raw per-point unzipping streams before resampling."""

    caps: np.ndarray
    lam: np.ndarray
    q: np.ndarray
    seed_index: int
    skipped: int


def unzip_wholeplane(points, cap_floor=-8.0, anchor_tol=1e-2):
    """Greedy per-point unzipping of a simple curve ordered from 0 outward.

    Peels one curve point per elementary exterior slit map: the image w of
    the next point under the current stack determines the step's driving
    angle arg(w) and its capacity from |w| - 1.  The initial stub below the
    capacity floor is absorbed into a straight-segment seed; the force-point
    angle q (preimage of the base point 0) is advanced per atom in closed
    form, which keeps lam - q in (0, 2 pi) by construction.
    """
    z = np.asarray(points, dtype=complex)
    if z.size < 8:
        raise ValidationError("curve needs at least 8 points")
    if not np.isfinite(z).all():
        raise ValidationError("curve points must be finite")
    scale = float(np.max(np.abs(z)))
    if scale <= 0.0:
        raise ValidationError("degenerate curve")
    if np.abs(z[0]) > anchor_tol * scale:
        raise BadAnchorError("bad anchor: curve must start at 0")
    z = z - z[0]
    r_floor = 4.0 * np.exp(cap_floor)
    inside = np.abs(z[1:]) >= r_floor
    if not inside.any():
        raise ValidationError("capacity floor above the whole curve")
    j0 = 1 + int(np.argmax(inside))
    ell = float(np.abs(z[j0]))
    th = float(np.angle(z[j0]))
    W = _segment_seed_forward(z[j0 + 1:], ell, th)

    n = W.size
    caps = np.empty(n + 1)
    lams = np.empty(n + 1)
    qs = np.empty(n + 1)
    caps[0] = np.log(ell / 4.0)
    lams[0] = th
    qs[0] = th - np.pi
    skipped = 0
    zc = z[j0:]
    for j in range(n):
        w = W[j]
        s = np.abs(w) - 1.0
        moved = np.abs(zc[j + 1] - zc[j]) > 1e-9 * scale
        if not moved or s <= _SHELL_TOL:
            if moved:
                # a genuinely new point mapping (numerically) onto the circle
                # touches the already-unzipped hull: retrace/self-intersection
                raise NotUnzippableError(point_index=j0 + 1 + j)
            skipped += 1
            caps[j + 1] = caps[j]
            lams[j + 1] = lams[j]
            qs[j + 1] = qs[j]
            continue
        dt = _atom_from_radius(s)
        gap = (np.angle(w) - qs[j]) % TWO_PI
        lam_j = qs[j] + gap
        qs[j + 1] = lam_j - advance_gap(gap, dt)
        lams[j + 1] = lam_j
        caps[j + 1] = caps[j] + dt
        if j + 1 < n:
            W[j + 1:] = disk_step(W[j + 1:], lam_j, dt, exterior=True, inverse=False)
            bad = ~np.isfinite(W[j + 1:])
            if bad.any():
                # a later curve point was swallowed by the growing hull:
                # the input self-intersects or its capacity is non-monotone
                raise NotUnzippableError(
                    point_index=j0 + 2 + j + int(np.argmax(bad)))
    return UnzipResult(caps=caps, lam=lams, q=qs, seed_index=j0, skipped=skipped)


def extract_wholeplane_driving(points, cap_floor=-8.0, anchor_tol=1e-2,
                               resample_to=None) -> DrivingPath:
    """Whole-plane driving (lam, q) of a curve, on a uniform capacity grid.

    Runs the greedy unzipping and resamples the (capacity, lam, q) streams
    linearly onto a uniform grid with as many samples as points consumed
    (or resample_to if given).
    """
    res = unzip_wholeplane(points, cap_floor=cap_floor, anchor_tol=anchor_tol)
    n_out = res.caps.size if resample_to is None else int(resample_to)
    if n_out < 2:
        raise ValidationError("resample_to must be >= 2")
    total = res.caps[-1] - res.caps[0]
    if total <= 0.0:
        raise NotUnzippableError("curve has no capacity growth")
    grid = np.linspace(res.caps[0], res.caps[-1], n_out)
    lam_u = np.interp(grid, res.caps, res.lam)
    q_u = np.interp(grid, res.caps, res.q)
    gap = np.clip(lam_u - q_u, 1e-12, TWO_PI - 1e-12)
    return DrivingPath(kind="wholeplane", t0=float(grid[0]),
                       dt=float(grid[1] - grid[0]), lam=lam_u, q=lam_u - gap)


def unzip_batch(points, cap_floor=-8.0, anchor_tol=1e-2):
    """Unzip a batch of curves of equal length in lockstep.

    points has shape (R, M+1).  Failed replicas (swallowed image point or
    bad anchor) are masked out and reported; the survivors' streams are
    returned as dense arrays.  Returns (caps, lam, q, ok) with caps/lam/q of
    shape (R, M - j0 + 1) and ok a boolean mask over replicas.
    """
    z = np.asarray(points, dtype=complex)
    nrep, npts = z.shape
    scale = np.max(np.abs(z), axis=1)
    ok = np.isfinite(z).all(axis=1) & (scale > 0.0)
    ok &= np.abs(z[:, 0]) <= anchor_tol * np.maximum(scale, 1e-300)
    z = z - z[:, :1]
    r_floor = 4.0 * np.exp(cap_floor)
    inside = np.abs(z[:, 1:]) >= r_floor
    ok &= inside.any(axis=1)
    # common seed index across the batch: the latest first-crossing of the
    # floor among surviving replicas (others absorb slightly more stub)
    first = np.where(inside.any(axis=1), 1 + np.argmax(inside, axis=1), 1)
    j0 = int(np.max(first[ok])) if ok.any() else 1
    n = npts - 1 - j0
    if n < 4:
        raise ValidationError("curves too short after the stub")
    base = z[:, j0]
    ell = np.maximum(np.abs(base), 1e-300)
    th = np.angle(base)
    caps = np.zeros((nrep, n + 1))
    lams = np.zeros((nrep, n + 1))
    qs = np.zeros((nrep, n + 1))
    caps[:, 0] = np.log(ell / 4.0)
    lams[:, 0] = th
    qs[:, 0] = th - np.pi
    W = _segment_seed_forward(z[:, j0 + 1:], ell[:, None], th[:, None])
    scale_col = np.maximum(scale, 1e-300)
    for j in range(n):
        w = W[:, j]
        s = np.abs(w) - 1.0
        moved = np.abs(z[:, j0 + 1 + j] - z[:, j0 + j]) > 1e-9 * scale_col
        ok &= np.isfinite(s) & ((s > _SHELL_TOL) | ~moved)
        live = ok & moved & (s > _SHELL_TOL)
        dt = np.where(live, _atom_from_radius(np.maximum(s, 1e-300)), 0.0)
        gap = np.where(live, (np.angle(w) - qs[:, j]) % TWO_PI, np.pi)
        lam_j = np.where(live, qs[:, j] + gap, lams[:, j])
        q_new = np.where(live, lam_j - advance_gap(gap, dt), qs[:, j])
        caps[:, j + 1] = caps[:, j] + dt
        lams[:, j + 1] = lam_j
        qs[:, j + 1] = q_new
        if j + 1 < n:
            stepped = disk_step(W[:, j + 1:], lam_j[:, None], dt[:, None],
                                exterior=True, inverse=False)
            W[:, j + 1:] = np.where(live[:, None], stepped, W[:, j + 1:])
            ok &= np.isfinite(W[:, j + 1:]).all(axis=1)
    return caps, lams, qs, ok


# ---------------------------------------------------------------------------
# welding
# ---------------------------------------------------------------------------

@dataclass
class WeldingTable:
    """Boundary welding of a backward radial process on an angle grid.

    partner[i] is the angle identified with grid[i]; unwelded grid points
    (never absorbed before the final time, e.g. near the joint point) carry
    NaN partners and welded[i] = False.  fixed_points holds the driving
    start angle and the joint point angle.
    """

    grid: np.ndarray
    partner: np.ndarray
    welded: np.ndarray
    absorb_time: np.ndarray
    fixed_points: tuple


def _welding_absorb_times(driving, angles):
    """Absorption times of boundary angles under the backward radial flow.

    Within each frozen-driving atom the squared half-gap cosine grows by the
    factor e^{dt}; a point is absorbed when it reaches 1, at an in-step time
    known in closed form.  The driving is frozen at the left endpoint of
    each step so that points arbitrarily close to the start angle are
    absorbed immediately, keeping the absorption time monotone along each
    seam side.
    """
    lam = driving.lam
    dt = driving.dt
    v = (np.asarray(angles, dtype=float) - lam[0]) % TWO_PI
    t_abs = np.full(v.shape, np.inf)
    alive = np.ones(v.shape, dtype=bool)
    t = 0.0
    growth = np.exp(0.5 * dt)
    for k in range(1, lam.size):
        c = np.cos(0.5 * v)
        c_new = c * growth
        hits = alive & (np.abs(c_new) >= 1.0)
        if hits.any():
            # e^{tau/2} |c| = 1  =>  tau = -2 log |c|
            tau = -2.0 * np.log(np.clip(np.abs(c[hits]), 1e-300, 1.0))
            t_abs[hits] = t + np.minimum(tau, dt)
            alive[hits] = False
        v = np.where(alive, 2.0 * np.arccos(np.clip(c_new, -1.0, 1.0)), v)
        # re-center the gap on the next step's driving value
        v = (v - (lam[k] - lam[k - 1])) % TWO_PI
        t += dt
    return t_abs


def _welding_frame(driving):
    """Start angle and joint-point angle of a backward radial driving."""
    lam0 = driving.lam[0] % TWO_PI
    if driving.q is not None:
        joint = driving.q[0] % TWO_PI
    else:
        # infer the joint point as the center of the unabsorbed region
        probe = (lam0 + np.linspace(1e-4, TWO_PI - 1e-4, 720)) % TWO_PI
        t_probe = _welding_absorb_times(driving, probe)
        if np.isinf(t_probe).any():
            sel = np.where(np.isinf(t_probe))[0]
            joint = probe[sel[len(sel) // 2]]
        else:
            joint = probe[int(np.argmax(t_probe))]
    return lam0, joint


class WeldingMap:
    """Monotone realization of the welding from absorption profiles.

    Two boundary points are welded exactly when they are absorbed at the
    same time, one from each side of the seam.  The map stores each side's
    (distance from the start angle, absorption time) profile on a fine
    grid and pairs the sides by time through piecewise-linear inverses, so
    the resulting homeomorphism is an involution by construction; the
    numerical content lives in the profiles themselves (checked separately
    through the equal-flow-image defect and profile convergence).
    """

    def __init__(self, driving, n_fine=8192):
        if driving.kind != "radial":
            raise ValidationError("welding needs a backward-radial driving")
        self.lam0, self.joint = _welding_frame(driving)
        self.v_joint = (self.joint - self.lam0) % TWO_PI
        tiny = 1e-9
        frac = self.v_joint / TWO_PI
        n_a = max(16, int(n_fine * frac))
        n_b = max(16, n_fine - n_a)
        # distance coordinates measured from the start angle into each arc
        d_a = np.linspace(tiny, self.v_joint - tiny, n_a)
        d_b = np.linspace(tiny, TWO_PI - self.v_joint - tiny, n_b)
        t_a = _welding_absorb_times(driving, self.lam0 + d_a)
        t_b = _welding_absorb_times(driving, self.lam0 - d_b)
        self.d_a, self.t_a = self._monotone(d_a, t_a)
        self.d_b, self.t_b = self._monotone(d_b, t_b)
        self.t_max = min(self.t_a[-1], self.t_b[-1])

    @staticmethod
    def _monotone(d, t):
        fin = np.isfinite(t)
        d, t = d[fin], t[fin]
        t = np.maximum.accumulate(t)
        # strictify plateaus so the piecewise-linear inverse is well defined
        t = t + 1e-12 * np.arange(t.size)
        return d, t

    def _side_a(self, angles):
        v = (np.asarray(angles, dtype=float) - self.lam0) % TWO_PI
        return v < self.v_joint, v

    def absorb_time(self, angles):
        """Absorption time interpolated from the per-side profiles."""
        side_a, v = self._side_a(angles)
        d = np.where(side_a, v, TWO_PI - v)
        t = np.where(side_a,
                     np.interp(d, self.d_a, self.t_a, left=0.0, right=np.inf),
                     np.interp(d, self.d_b, self.t_b, left=0.0, right=np.inf))
        return np.where(t <= self.t_max, t, np.inf)

    def __call__(self, angles):
        """Partner angles; NaN where unwelded by the final time."""
        angles = np.asarray(angles, dtype=float)
        side_a, v = self._side_a(angles)
        d = np.where(side_a, v, TWO_PI - v)
        t = np.where(side_a,
                     np.interp(d, self.d_a, self.t_a, left=0.0, right=np.inf),
                     np.interp(d, self.d_b, self.t_b, left=0.0, right=np.inf))
        d_other = np.where(side_a,
                           np.interp(t, self.t_b, self.d_b),
                           np.interp(t, self.t_a, self.d_a))
        partner = np.where(side_a,
                           (self.lam0 - d_other) % TWO_PI,
                           (self.lam0 + d_other) % TWO_PI)
        return np.where(t <= self.t_max, partner, np.nan)


def compute_welding(driving: DrivingPath, grid_size, n_fine=8192) -> WeldingTable:
    """Welding induced by a backward radial driving, on a uniform angle grid.

    Grid points not absorbed by the final time are reported unwelded; the
    fixed points are the start angle e^{i lam(0)} and the joint point.
    """
    wm = WeldingMap(driving, n_fine=n_fine)
    grid = np.linspace(0.0, TWO_PI, int(grid_size), endpoint=False)
    partner = wm(grid)
    t_grid = wm.absorb_time(grid)
    welded = np.isfinite(t_grid) & np.isfinite(partner)
    return WeldingTable(grid=grid, partner=partner, welded=welded,
                        absorb_time=t_grid, fixed_points=(wm.lam0, wm.joint))
