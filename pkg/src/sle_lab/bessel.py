"""Radial Bessel processes: spectral densities and an independent sampler.

The process X on (0, pi) solves dX = dB + ((delta-1)/2) cot(X) dt and its
cosine Y = cos(X) solves dY = -sqrt(1-Y^2) dB - (delta/2) Y dt.  The
generator of Y diagonalizes in the Gegenbauer basis:

  * delta >= 2 (no boundary hit): eigenfunctions C_n with index
    alpha = delta/2 - 1/2, eigenvalues -(n/2)(n + delta - 1); the transition
    density carries the weight (1-y^2)^(delta/2-1) on the arrival point and
    the n = 0 term is the stationary density.

  * delta < 2 (killed at the boundary): eigenfunctions
    (1-x^2)^(1-delta/2) C_n with index alpha = 3/2 - delta/2 and eigenvalues
    -(1/2)(n+1)(n+2-delta); the weight sits on the starting point, the mass
    integrates to the survival probability, and the n = 0 term times two is
    the classical leading-order survival proxy.

The Monte Carlo sampler integrates the Y equation by Euler-Maruyama with
the diffusion coefficient clamped to sqrt((1-y^2) v 0), shares no code with
the series evaluators, and serves as their independent oracle.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import lgamma, pi

import numpy as np
from scipy.integrate import quad

from .errors import TruncationOrderError, ValidationError

N_MAX_CAP = 400


# ---------------------------------------------------------------------------
# Gegenbauer basis
# ---------------------------------------------------------------------------

def gegenbauer(n, alpha, x):
    """C_n^(alpha)(x) by the standard three-term recurrence."""
    if n < 0:
        raise ValidationError("n must be >= 0")
    if alpha <= -0.5:
        raise ValidationError("alpha must exceed -1/2")
    x = np.asarray(x, dtype=float)
    c_prev = np.ones_like(x)
    if n == 0:
        return c_prev
    c = 2.0 * alpha * x
    for k in range(2, n + 1):
        c_prev, c = c, (2.0 * x * (k + alpha - 1.0) * c
                        - (k + 2.0 * alpha - 2.0) * c_prev) / k
    return c


def gegenbauer_table(n_max, alpha, x):
    """Stack C_0..C_{n_max} at the points x, shape (n_max+1, len(x))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((n_max + 1, x.size))
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 2.0 * alpha * x
    for k in range(2, n_max + 1):
        out[k] = (2.0 * x * (k + alpha - 1.0) * out[k - 1]
                  - (k + 2.0 * alpha - 2.0) * out[k - 2]) / k
    return out


def gegenbauer_norm(n, alpha):
    """Squared norm of C_n under the weight (1-x^2)^(alpha-1/2) on [-1,1]."""
    if alpha <= 0.0:
        raise ValidationError("norm formula unsupported for alpha <= 0")
    return float(np.exp(np.log(pi) + lgamma(2.0 * alpha + n)
                        - (2.0 * alpha - 1.0) * np.log(2.0)
                        - np.log(alpha + n) - lgamma(n + 1.0)
                        - 2.0 * lgamma(alpha)))


def gegenbauer_supnorm(n, alpha):
    """Max of |C_n| on [-1,1] (attained at the endpoints for alpha > 0)."""
    if alpha <= 0.0:
        raise ValidationError("sup-norm formula unsupported for alpha <= 0")
    return float(np.exp(lgamma(n + 2.0 * alpha) - lgamma(n + 1.0)
                        - lgamma(2.0 * alpha)))


@lru_cache(maxsize=8)
def gauss_legendre(n=512):
    """Cached Gauss-Legendre nodes and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(n)


# ---------------------------------------------------------------------------
# truncation control
# ---------------------------------------------------------------------------

def _rate_live(n, delta):
    return 0.5 * n * (n + delta - 1.0)


def _rate_killed(n, delta):
    return 0.5 * (n + 1.0) * (n + 2.0 - delta)


def _auto_n_max(alpha, delta, t, rate, tol=1e-12):
    """Smallest order whose tail bound falls below tol at time t.

    Term n is bounded by sup|C_n|^2 / norm_n times its exponential factor;
    the bound is evaluated in logs to avoid overflow.
    """
    if t <= 0:
        raise ValidationError("t must be positive")
    logtol = np.log(tol)
    for n in range(1, N_MAX_CAP + 1):
        logterm = (2.0 * (lgamma(n + 2.0 * alpha) - lgamma(n + 1.0)
                          - lgamma(2.0 * alpha))
                   - (np.log(pi) + lgamma(2.0 * alpha + n)
                      - (2.0 * alpha - 1.0) * np.log(2.0)
                      - np.log(alpha + n) - lgamma(n + 1.0)
                      - 2.0 * lgamma(alpha))
                   - rate(n, delta) * t)
        if logterm < logtol:
            return n
    raise TruncationOrderError(required_order=N_MAX_CAP + 1)


@dataclass(frozen=True)
class BesselLaw:
    """Dimension plus truncation order for the spectral densities."""

    delta: float
    n_max: int | None = None

    @property
    def regime(self):
        return "live" if self.delta >= 2.0 else "killed"

    def order_for(self, t):
        if self.n_max is not None:
            return self.n_max
        if self.regime == "live":
            return _auto_n_max(0.5 * self.delta - 0.5, self.delta, t, _rate_live)
        return _auto_n_max(1.5 - 0.5 * self.delta, self.delta, t, _rate_killed)


# ---------------------------------------------------------------------------
# densities, delta >= 2
# ---------------------------------------------------------------------------

def _series(alpha, delta, t, x, y, rate, n_max):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast_shapes(x.shape, y.shape)
    xb = np.broadcast_to(x, shape).ravel()
    yb = np.broadcast_to(y, shape).ravel()
    cx = gegenbauer_table(n_max, alpha, xb)
    cy = gegenbauer_table(n_max, alpha, yb)
    ns = np.arange(n_max + 1)
    log_norm = (np.log(pi) + np.array([lgamma(2.0 * alpha + n) for n in ns])
                - (2.0 * alpha - 1.0) * np.log(2.0) - np.log(alpha + ns)
                - np.array([lgamma(n + 1.0) for n in ns]) - 2.0 * lgamma(alpha))
    coef = np.exp(-rate(ns, delta) * t - log_norm)
    out = np.einsum("n,nk,nk->k", coef, cx, cy)
    return out.reshape(shape), xb.reshape(shape), yb.reshape(shape)


def transition_density_y(delta, t, x, y, n_max=None):
    """Transition density of Y = cos(X) in the no-boundary-hit regime."""
    if delta < 2.0:
        raise ValidationError("live density needs delta >= 2")
    law = BesselLaw(delta, n_max)
    order = law.order_for(t)
    alpha = 0.5 * delta - 0.5
    s, _, yb = _series(alpha, delta, t, x, y, _rate_live, order)
    return np.maximum(1.0 - yb ** 2, 0.0) ** (0.5 * delta - 1.0) * s


def transition_density_x(delta, t, x, y, n_max=None):
    """Transition density of X on (0, pi): the Y density through cos."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return transition_density_y(delta, t, np.cos(x), np.cos(y),
                                n_max=n_max) * np.sin(y)


def stationary_density(delta, v, coord="y", extended=False):
    """Stationary density in y or x coordinates.

    delta >= 2 by default; with extended=True any delta > 0 is accepted (the
    clamped-diffusion construction keeps the same invariant density).
    """
    if delta < 2.0 and not extended:
        raise ValidationError("stationary density needs delta >= 2 "
                              "(pass extended=True for 0 < delta < 2)")
    if delta <= 0.0:
        raise ValidationError("delta must be positive")
    v = np.asarray(v, dtype=float)
    # integral of (1-y^2)^(delta/2-1) over [-1,1] = B(1/2, delta/2)
    log_norm = lgamma(0.5) + lgamma(0.5 * delta) - lgamma(0.5 * delta + 0.5)
    norm = np.exp(log_norm)
    if coord == "y":
        return np.where(np.abs(v) < 1.0,
                        np.maximum(1.0 - v ** 2, 0.0) ** (0.5 * delta - 1.0) / norm,
                        0.0)
    if coord == "x":
        y = np.cos(v)
        return np.where((v > 0.0) & (v < pi),
                        np.maximum(1.0 - y ** 2, 0.0) ** (0.5 * delta - 1.0)
                        / norm * np.sin(v),
                        0.0)
    raise ValidationError("coord must be 'y' or 'x'")


# ---------------------------------------------------------------------------
# densities, delta < 2 (killed at the boundary)
# ---------------------------------------------------------------------------

def killed_density(delta, t, x, y, n_max=None):
    """Defective transition density of Y killed at {-1, 1} (delta < 2)."""
    if delta >= 2.0:
        raise ValidationError("killed density needs delta < 2")
    law = BesselLaw(delta, n_max)
    order = law.order_for(t)
    alpha = 1.5 - 0.5 * delta
    s, xb, _ = _series(alpha, delta, t, x, y, _rate_killed, order)
    return np.maximum(1.0 - xb ** 2, 0.0) ** (1.0 - 0.5 * delta) * s


def killed_leading_term(delta, t, x):
    """n = 0 part of the killed density; twice this approximates survival."""
    x = np.asarray(x, dtype=float)
    xs, ws = gauss_legendre()
    norm = float(np.sum(ws * (1.0 - xs ** 2) ** (1.0 - 0.5 * delta)))
    return ((np.maximum(1.0 - x ** 2, 0.0) ** (1.0 - 0.5 * delta) / norm)
            * np.exp(-0.5 * (2.0 - delta) * t))


def survival_probability(delta, t, x, n_max=None):
    """P_x[T > t] by Gauss-Legendre quadrature of the killed density."""
    xs, ws = gauss_legendre()
    x = np.asarray(x, dtype=float)
    vals = killed_density(delta, t, x.reshape(x.shape + (1,)), xs, n_max=n_max)
    return np.sum(ws * vals, axis=-1)


# ---------------------------------------------------------------------------
# scale function and sampler
# ---------------------------------------------------------------------------

def scale_function(delta, x):
    """h(x) = integral from pi/2 to x of sin(t)^(1-delta) dt, on (0, pi)."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any((xs <= 0.0) | (xs >= pi)):
        raise ValidationError("x must lie in (0, pi)")
    out = np.array([quad(lambda s: np.sin(s) ** (1.0 - delta), 0.5 * pi, xi,
                         limit=200)[0] for xi in xs])
    return out if np.ndim(x) else float(out[0])


@dataclass(frozen=True)
class SamplePathY:
    """Euler-Maruyama sample of the Y diffusion (possibly a batch)."""

    dt: float
    y: np.ndarray
    lifetime: np.ndarray | None = None

    @property
    def times(self):
        return self.dt * np.arange(self.y.shape[-1])


def sample_x_lifetimes(delta, x0, T, dt, seed, n_paths, bridge_kill=True):
    """Boundary-hit times of the X diffusion on (0, pi), additive-noise EM.

    For delta = 1 the drift vanishes and the increments are exact Brownian
    ones; with bridge_kill the intra-step boundary crossing is resolved by
    the exact Brownian bridge probability, so the killing law carries no
    discretization bias.  For delta != 1 the cot drift makes both the step
    and the bridge approximate.  Paths alive at T keep an infinite
    lifetime; dead paths are compacted away as the sweep proceeds.
    """
    if not 0.0 < x0 < pi:
        raise ValidationError("x0 must lie in (0, pi)")
    rng = np.random.default_rng(np.uint64(seed))
    nsteps = int(np.ceil(T / dt))
    sq = np.sqrt(dt)
    half_drift = 0.5 * (delta - 1.0)
    x = np.full(n_paths, float(x0))
    idx = np.arange(n_paths)
    lifetime = np.full(n_paths, np.inf)
    for k in range(nsteps):
        if x.size == 0:
            break
        xi = rng.standard_normal(x.size)
        if half_drift != 0.0:
            drift = half_drift / np.tan(np.clip(x, 1e-12, pi - 1e-12)) * dt
        else:
            drift = 0.0
        x_new = x + drift + sq * xi
        dead = (x_new <= 0.0) | (x_new >= pi)
        if bridge_kill:
            with np.errstate(over="ignore"):
                p_lo = np.exp(-2.0 * x * np.maximum(x_new, 0.0) / dt)
                p_hi = np.exp(-2.0 * (pi - x) * np.maximum(pi - x_new, 0.0) / dt)
            u = rng.uniform(size=x.size)
            dead |= u < np.clip(p_lo + p_hi, 0.0, 1.0)
        if dead.any():
            lifetime[idx[dead]] = (k + 1) * dt
            keep = ~dead
            x = x_new[keep]
            idx = idx[keep]
        else:
            x = x_new
    return lifetime


def sample_y_path(delta, y0, T, steps, seed, killed=False, n_paths=1,
                  keep_path=True) -> SamplePathY:
    """Clamped Euler-Maruyama sampler for Y, independent of the series.

    The diffusion coefficient is sqrt((1-y^2) v 0), so the scheme is defined
    on the whole line and paths continue for all time; when killed is set
    and delta < 2 the first exit from (-1, 1) is recorded as the lifetime.
    For delta >= 2 no lifetime is ever reported.
    """
    if not -1.0 < y0 < 1.0:
        raise ValidationError("y0 must lie in (-1, 1)")
    if T <= 0 or steps < 1:
        raise ValidationError("need T > 0 and steps >= 1")
    rng = np.random.default_rng(np.uint64(seed))
    dt = T / steps
    sq = np.sqrt(dt)
    y = np.full(n_paths, float(y0))
    record = killed and delta < 2.0
    lifetime = np.full(n_paths, np.inf) if record else None
    alive = np.ones(n_paths, dtype=bool)
    path = None
    if keep_path:
        path = np.empty((n_paths, steps + 1))
        path[:, 0] = y
    for k in range(steps):
        xi = rng.standard_normal(n_paths)
        q = np.sqrt(np.maximum(1.0 - y * y, 0.0))
        y_new = y - q * xi * sq - 0.5 * delta * y * dt
        if record:
            hit = alive & (np.abs(y_new) >= 1.0)
            lifetime[hit] = (k + 1) * dt
            alive &= ~hit
            y_new = np.where(alive, y_new, np.clip(y_new, -1.0, 1.0))
        y = y_new
        if keep_path:
            path[:, k + 1] = y
    return SamplePathY(dt=dt, y=path if keep_path else y[:, None],
                       lifetime=lifetime)
