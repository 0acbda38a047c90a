"""Random driving-function generators.

The driving/force-point pair (lam, q) of a one-force-point process solves

    d lam = sqrt(kappa) dB + sigma (rho/2) cot(( lam - q)/2) dt,
    d q   = sigma cot((q - lam)/2) dt,

with sigma = +1 for the forward and -1 for the backward radial evolution.
The gap Z = lam - q is then an autonomous diffusion

    dZ = sqrt(kappa) dB + sigma (rho/2 + 1) cot(Z/2) dt

on (0, 2 pi), a time-changed radial Bessel process of dimension

    delta = (4/kappa) sigma (rho/2 + 1) + 1

(the Bessel clock runs at kappa/4 times the capacity clock and the Bessel
coordinate is Z/2).  For delta >= 2 the gap never hits the boundary and has
the stationary law mu_delta with density proportional to sin(x/2)^(delta-1);
for delta < 2 the lifetime is finite.

Integration is Euler-Maruyama with two safeguards for the stiff cot drift:
the drift argument is clipped away from the boundary at the noise scale
(taming), and a proposed step that exits (0, 2 pi) in the delta >= 2 regime
is retried as two half steps with a pre-split noise pair, which keeps runs
deterministic per seed.  Replica seeds derive from the base seed XOR the
replica index.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NoStationaryLawError, ValidationError
from .loewner import TWO_PI, DrivingPath

DEFAULT_DT = 1e-3


def delta_of(kappa, rho, sigma):
    """Bessel dimension of the gap diffusion."""
    if kappa <= 0:
        raise ValidationError("kappa must be positive")
    if sigma not in (1, -1, 1.0, -1.0):
        raise ValidationError("sigma must be +1 or -1")
    return (4.0 / kappa) * sigma * (rho / 2.0 + 1.0) + 1.0


@dataclass(frozen=True)
class SleParams:
    """Parameters of a one-force-point driving generator."""

    kappa: float
    rho: float
    sigma: int = 1
    seed: int = 0
    extended: bool = False  # allow delta in (1, 2) stationary constructions

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValidationError("kappa must be positive")
        if self.sigma not in (1, -1):
            raise ValidationError("sigma must be +1 or -1")

    @property
    def delta(self):
        return delta_of(self.kappa, self.rho, self.sigma)

    def require_stationary(self):
        d = self.delta
        if d >= 2.0:
            return d
        if self.extended and d > 1.0:
            return d
        raise NoStationaryLawError(
            f"no stationary law in this regime (delta={d:g})")


@dataclass(frozen=True)
class DiffusionPath:
    """Sampled (lam, q, Z) triple on a uniform grid; lam - q == z exactly."""

    dt: float
    t0: float
    lam: np.ndarray
    q: np.ndarray
    z: np.ndarray
    kappa: float
    rho: float
    sigma: int
    lifetime: float | None = None
    boundary_events: int = 0

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.z.size)

    def as_driving(self, kind="radial"):
        return DrivingPath(kind=kind, t0=self.t0, dt=self.dt,
                           lam=self.lam.copy(), q=self.q.copy())


def replica_rng(seed, index=0):
    """Generator for one replica under the documented splitting rule."""
    return np.random.default_rng(np.uint64(seed) ^ np.uint64(index))


# ---------------------------------------------------------------------------
# stationary gap law
# ---------------------------------------------------------------------------

def stationary_gap_density(delta, x):
    """Density of mu_delta on (0, 2 pi), proportional to sin(x/2)^(delta-1)."""
    x = np.asarray(x, dtype=float)
    grid = np.linspace(0.0, TWO_PI, 4097)
    w = np.sin(0.5 * grid) ** (delta - 1.0)
    norm = np.trapezoid(w, grid)
    out = np.where((x > 0.0) & (x < TWO_PI),
                   np.sin(0.5 * np.clip(x, 0.0, TWO_PI)) ** (delta - 1.0) / norm,
                   0.0)
    return out


def stationary_gap_cdf_table(delta, n=4096):
    """(x, cdf) table of mu_delta for inverse-CDF sampling."""
    x = np.linspace(0.0, TWO_PI, n + 1)
    w = np.sin(0.5 * x) ** (delta - 1.0)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    return x, cdf


def sample_gap_stationary(delta, size, rng):
    """Draw Z ~ mu_delta by inverse CDF on the quadrature table."""
    x, cdf = stationary_gap_cdf_table(delta)
    u = rng.uniform(0.0, 1.0, size=size)
    return np.interp(u, cdf, x)


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------

def _cot2_tamed(z, floor):
    zc = np.clip(z, floor, TWO_PI - floor)
    return 1.0 / np.tan(0.5 * zc)


def _advance_gap_em(z, eta1, eta2, dt, kappa, drift_coef, floor):
    """One EM step of the gap SDE with local halving on boundary exit.

    eta1, eta2 are independent standard normals; the full step uses their
    sum (scaled), the halved retry uses them separately, so the Brownian
    increment is consistent and the scheme is deterministic.
    """
    sq = np.sqrt(0.5 * kappa * dt)
    noise_full = sq * (eta1 + eta2)
    prop = z + drift_coef * _cot2_tamed(z, floor) * dt + noise_full
    out_mask = (prop <= 0.0) | (prop >= TWO_PI)
    if np.any(out_mask):
        half = 0.5 * dt
        sqh = np.sqrt(kappa * half)
        mid = z + drift_coef * _cot2_tamed(z, floor) * half + sqh * eta1
        mid = np.clip(mid, 1e-12, TWO_PI - 1e-12)
        prop2 = mid + drift_coef * _cot2_tamed(mid, floor) * half + sqh * eta2
        prop = np.where(out_mask, prop2, prop)
    return prop


def _simulate_gap(z0, nsteps, dt, kappa, drift_coef, rng, keep_path=True,
                  absorb=False, noise=None):
    """Vectorized gap integration.

    Returns (z_path or z_final, cot_integral_path, lifetime, events) where
    cot_integral_path accumulates cot(Z/2) dt with the tamed argument, the
    same values used by the drift, so that lam and q reconstructed from it
    satisfy their discrete equations exactly.  Noise is drawn from rng in
    lockstep unless a pre-generated (npaths, 2, nsteps) array is supplied.
    """
    z = np.atleast_1d(np.asarray(z0, dtype=float)).copy()
    npaths = z.size
    if npaths == 1:
        return _simulate_gap_scalar(float(z[0]), nsteps, dt, kappa,
                                    drift_coef, rng, keep_path, absorb, noise)
    floor = np.sqrt(kappa * dt)
    events = 0
    alive = np.ones(npaths, dtype=bool)
    lifetime = np.full(npaths, np.inf)
    if keep_path:
        zs = np.empty((npaths, nsteps + 1))
        zs[:, 0] = z
        cots = np.zeros((npaths, nsteps + 1))
    for k in range(nsteps):
        if noise is None:
            eta = rng.standard_normal((2, npaths))
        else:
            eta = noise[:, :, k].T
        cot_here = _cot2_tamed(z, floor)
        z_new = _advance_gap_em(z, eta[0], eta[1], dt, kappa, drift_coef, floor)
        if absorb:
            hit = alive & ((z_new <= 0.0) | (z_new >= TWO_PI))
            lifetime[hit] = (k + 1) * dt
            alive &= ~hit
            z_new = np.where(alive, z_new, np.clip(z_new, 0.0, TWO_PI))
        else:
            bad = (z_new <= 0.0) | (z_new >= TWO_PI)
            if np.any(bad):
                events += int(bad.sum())
                z_new = np.where(z_new <= 0.0, -z_new, z_new)
                z_new = np.where(z_new >= TWO_PI, 2.0 * TWO_PI - z_new, z_new)
                z_new = np.clip(z_new, 1e-9, TWO_PI - 1e-9)
        z = z_new
        if keep_path:
            zs[:, k + 1] = z
            cots[:, k + 1] = cots[:, k] + cot_here * dt
    if keep_path:
        return zs, cots, lifetime, events
    return z, None, lifetime, events


def _simulate_gap_scalar(z0, nsteps, dt, kappa, drift_coef, rng, keep_path,
                         absorb, noise=None):
    """Scalar fast path of _simulate_gap; same noise order, python floats."""
    from array import array
    from math import sqrt, tan

    if noise is None:
        eta = rng.standard_normal((nsteps, 2))
    else:
        eta = noise.reshape(2, nsteps).T if noise.ndim == 3 else noise
    eta1 = array("d")
    eta1.frombytes(np.ascontiguousarray(eta[:, 0]).tobytes())
    eta2 = array("d")
    eta2.frombytes(np.ascontiguousarray(eta[:, 1]).tobytes())
    floor = sqrt(kappa * dt)
    hi = TWO_PI - floor
    sq = sqrt(0.5 * kappa * dt)
    drift_dt = drift_coef * dt
    drift_half = 0.5 * drift_coef * dt
    z = z0
    events = 0
    step_count = 0
    lifetime = np.array([np.inf])
    zpath = array("d", [z]) if keep_path else None
    cpath = array("d", [0.0]) if keep_path else None
    if keep_path:
        zput = zpath.append
        cput = cpath.append
    acc = 0.0
    for e1, e2 in zip(eta1, eta2):
        zc = z if floor < z < hi else min(max(z, floor), hi)
        cot_here = 1.0 / tan(0.5 * zc)
        prop = z + drift_dt * cot_here + sq * (e1 + e2)
        if not 0.0 < prop < TWO_PI:
            mid = z + drift_half * cot_here + sq * e1
            mid = min(max(mid, 1e-12), TWO_PI - 1e-12)
            mc = mid if floor < mid < hi else min(max(mid, floor), hi)
            prop = mid + drift_half / tan(0.5 * mc) + sq * e2
            if not 0.0 < prop < TWO_PI:
                if absorb:
                    lifetime[0] = (step_count + 1) * dt
                    z = min(max(prop, 0.0), TWO_PI)
                    if keep_path:
                        # freeze the remainder; caller truncates later
                        acc += cot_here * dt
                        tail = nsteps - step_count
                        zpath.extend(array("d", [z]) * tail)
                        cpath.extend(array("d", [acc]) * tail)
                    break
                events += 1
                prop = -prop if prop <= 0.0 else 2.0 * TWO_PI - prop
                prop = min(max(prop, 1e-9), TWO_PI - 1e-9)
        z = prop
        step_count += 1
        if keep_path:
            acc += cot_here * dt
            zput(z)
            cput(acc)
    if keep_path:
        return (np.frombuffer(zpath, dtype=float).copy()[None, :],
                np.frombuffer(cpath, dtype=float).copy()[None, :],
                lifetime, events)
    return np.array([z]), None, lifetime, events


def sample_brownian_driving(kappa, T, steps, seed, kind="chordal",
                            lam0=0.0, t0=0.0) -> DrivingPath:
    """Driving lam(t) = lam0 + sqrt(kappa) B(t) on a uniform grid."""
    if T <= 0 or steps < 2:
        raise ValidationError("need T > 0 and steps >= 2")
    rng = replica_rng(seed)
    dt = T / steps
    inc = rng.standard_normal(steps) * np.sqrt(kappa * dt)
    lam = lam0 + np.concatenate([[0.0], np.cumsum(inc)])
    return DrivingPath(kind=kind, t0=t0, dt=dt, lam=lam)


def sample_kappa_rho(params: SleParams, x, y, T, steps, dt_max=DEFAULT_DT) -> DiffusionPath:
    """Integrate the (lam, q) system started from angles (x, y).

    For delta >= 2 the gap stays in (0, 2 pi) (boundary approach is handled
    by the tamed drift plus local step halving).  For delta < 2 the path is
    truncated at the boundary hit and the lifetime reported.
    """
    if not (0.0 < x - y < TWO_PI):
        raise ValidationError("need 0 < x - y < 2 pi")
    if T <= 0 or steps < 2:
        raise ValidationError("need T > 0 and steps >= 2")
    dt = T / steps
    if dt > dt_max:
        steps = int(np.ceil(T / dt_max))
        dt = T / steps
    delta = params.delta
    rng = replica_rng(params.seed)
    drift_coef = params.sigma * (params.rho / 2.0 + 1.0)
    zs, cots, lifetime, events = _simulate_gap(
        np.array([x - y]), steps, dt, params.kappa, drift_coef, rng,
        keep_path=True, absorb=(delta < 2.0))
    z = zs[0]
    q = y - params.sigma * cots[0]
    lam = q + z
    lt = None
    if delta < 2.0 and np.isfinite(lifetime[0]):
        lt = float(lifetime[0])
        n_keep = int(round(lt / dt))
        z, lam, q = z[:n_keep + 1], lam[:n_keep + 1], q[:n_keep + 1]
    return DiffusionPath(dt=dt, t0=0.0, lam=lam, q=q, z=z,
                         kappa=params.kappa, rho=params.rho, sigma=params.sigma,
                         lifetime=lt, boundary_events=events)


def sample_stationary(params: SleParams, T, steps, dt_max=DEFAULT_DT,
                      t0=0.0) -> DiffusionPath:
    """Stationary path: Z(0) ~ mu_delta, lam(0) uniform on [0, 2 pi)."""
    delta = params.require_stationary()
    if T <= 0 or steps < 2:
        raise ValidationError("need T > 0 and steps >= 2")
    dt = T / steps
    if dt > dt_max:
        steps = int(np.ceil(T / dt_max))
        dt = T / steps
    rng = replica_rng(params.seed)
    z0 = sample_gap_stationary(delta, 1, rng)
    x0 = rng.uniform(0.0, TWO_PI)
    drift_coef = params.sigma * (params.rho / 2.0 + 1.0)
    zs, cots, _, events = _simulate_gap(z0, steps, dt, params.kappa,
                                        drift_coef, rng, keep_path=True)
    z = zs[0]
    q0 = x0 - z0[0]
    q = q0 - params.sigma * cots[0]
    lam = q + z
    return DiffusionPath(dt=dt, t0=t0, lam=lam, q=q, z=z,
                         kappa=params.kappa, rho=params.rho, sigma=params.sigma,
                         boundary_events=events)


def sample_wholeplane_driving(params: SleParams, t_start, steps,
                              dt_max=DEFAULT_DT) -> DrivingPath:
    """Stationary forward pair (lam, q) on [t_start, 0] for whole-plane use."""
    if params.sigma != 1:
        raise ValidationError("whole-plane drivings use the forward sign")
    if t_start >= 0:
        raise ValidationError("t_start must be negative")
    path = sample_stationary(params, -t_start, steps, dt_max=dt_max, t0=t_start)
    return DrivingPath(kind="wholeplane", t0=t_start, dt=path.dt,
                       lam=path.lam.copy(), q=path.q.copy())


def sample_stationary_batch(params: SleParams, T, steps, n_paths,
                            dt_max=DEFAULT_DT, t0=0.0, replica_offset=0):
    """n_paths stationary gap paths at once; returns (lam, q, z, dt, events).

    Shapes are (n_paths, steps+1).  Path i draws its initial condition and
    its whole noise sequence from the replica stream seed XOR
    (replica_offset + i), so any contiguous chunking of the replica range
    reproduces the same paths.
    """
    delta = params.require_stationary()
    dt = T / steps
    if dt > dt_max:
        steps = int(np.ceil(T / dt_max))
        dt = T / steps
    z0 = np.empty(n_paths)
    x0 = np.empty(n_paths)
    noise = np.empty((n_paths, 2, steps))
    for i in range(n_paths):
        rng = replica_rng(params.seed, replica_offset + i)
        z0[i] = sample_gap_stationary(delta, 1, rng)[0]
        x0[i] = rng.uniform(0.0, TWO_PI)
        noise[i] = rng.standard_normal((2, steps))
    drift_coef = params.sigma * (params.rho / 2.0 + 1.0)
    zs, cots, _, events = _simulate_gap(z0, steps, dt, params.kappa,
                                        drift_coef, None, keep_path=True,
                                        noise=noise)
    q = (x0 - z0)[:, None] - params.sigma * cots
    lam = q + zs
    return lam, q, zs, dt, events


def gap_endpoint_sample(params: SleParams, T, n_paths, dt=DEFAULT_DT,
                        z0=None):
    """Z(T) over n_paths independent paths, without storing the paths."""
    steps = int(np.ceil(T / dt))
    dt = T / steps
    rng = replica_rng(params.seed)
    delta = params.delta
    if z0 is None:
        delta_check = params.require_stationary()
        start = sample_gap_stationary(delta_check, n_paths, rng)
    else:
        start = np.full(n_paths, float(z0))
    drift_coef = params.sigma * (params.rho / 2.0 + 1.0)
    z, _, lifetime, _ = _simulate_gap(start, steps, dt, params.kappa,
                                      drift_coef, rng, keep_path=False,
                                      absorb=(delta < 2.0))
    return z, lifetime


def reverse_driving(path: DiffusionPath, t0) -> DiffusionPath:
    """Driving read backwards from t0, with the q track re-indexed.

    For a stationary backward pair the reversed lam is a forward driving of
    the partner process with rho replaced by -4 - rho; reversing both tracks
    keeps lam - q == z exact, and the reversed q satisfies the forward-sign
    discrete q equation (with the drift evaluated at the step's right
    endpoint).
    """
    i0 = int(round(t0 / path.dt))
    if abs(i0 * path.dt - t0) > 1e-9 + 1e-9 * abs(t0) or not (1 <= i0 < path.z.size):
        raise ValidationError("t0 must lie on the path's grid")
    sl = slice(i0, None, -1)
    return DiffusionPath(dt=path.dt, t0=0.0,
                         lam=path.lam[sl].copy(), q=path.q[sl].copy(),
                         z=path.z[sl].copy(),
                         kappa=path.kappa, rho=-4.0 - path.rho,
                         sigma=-path.sigma,
                         boundary_events=path.boundary_events)
