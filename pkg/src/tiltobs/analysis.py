"""Error-space analysis of the tilt observer.

Everything here lives in *world-frame error coordinates*: the velocity error
``verr`` (any vector in R^3) and the tilt error ``terr``, constrained to the
sphere of unit vectors around ``e_z`` (``|e_z - terr| = 1``).  In these
coordinates the closed-loop error dynamics are autonomous:

    verr' = -alpha * verr + g0 * terr
    terr' =  beta * S(w) S(w) verr,      w = e_z - terr

with ``S(w)`` the cross-product matrix, so the observer's convergence can be
studied independently of any particular robot motion.  The module provides
the vector field, its Lyapunov function with a closed-form decay rate, the
two equilibria with their linearizations, an exponential convergence bound,
and a direct integrator of the error dynamics for cross-checks against the
full simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .observer import ObserverGains
from .so3 import rotate_by_exp

EZ = np.array([0.0, 0.0, 1.0])

# how far |e_z - terr| may deviate from 1 before a point is rejected
MANIFOLD_TOL = 1e-9


@dataclass
class ErrorPoint:
    """A point of the error dynamics; validates the tilt-error constraint."""

    verr: np.ndarray
    terr: np.ndarray

    def __post_init__(self) -> None:
        self.verr = np.asarray(self.verr, dtype=float)
        self.terr = np.asarray(self.terr, dtype=float)
        if self.verr.shape != (3,) or self.terr.shape != (3,):
            raise ValueError("verr and terr must be 3-vectors")
        n = np.linalg.norm(EZ - self.terr)
        if abs(n - 1.0) > MANIFOLD_TOL:
            raise ValueError(f"tilt error off manifold: |e_z - terr| = {n!r}, expected 1")


def error_field(verr: np.ndarray, terr: np.ndarray, gains: ObserverGains):
    """Right-hand side of the error dynamics.  Broadcasts over leading axes."""
    w = EZ - terr
    dverr = -gains.alpha * verr + gains.g0 * terr
    dterr = gains.beta * np.cross(w, np.cross(w, verr))
    return dverr, dterr


def lyapunov(verr: np.ndarray, terr: np.ndarray, gains: ObserverGains):
    """Energy-like function of the error state; zero only at zero error.

    Quadratic: 0.5*|alpha*verr - g0*terr|^2 + 0.5*g0^2*|terr|^2.
    """
    u = gains.alpha * verr - gains.g0 * terr
    return 0.5 * np.sum(u * u, axis=-1) + 0.5 * gains.g0**2 * np.sum(terr * terr, axis=-1)


def lyapunov_rate(verr: np.ndarray, terr: np.ndarray, gains: ObserverGains):
    """Time derivative of :func:`lyapunov` along the error dynamics.

    Closed form, valid on the tilt-error manifold.  All three terms are
    non-positive whenever the gain ratio is below one, which is what the gain
    condition guarantees.
    """
    a, g = gains.alpha, gains.g0
    r = gains.gain_ratio
    u = a * verr - g * terr
    w = EZ - terr
    uu = np.sum(u * u, axis=-1)
    wu = np.sum(w * u, axis=-1)
    c = w[..., 2]
    return -a * (1.0 - r) * uu - a * r * wu**2 + a * r * g**2 * (c * c - 1.0)


def equilibria(gains: ObserverGains):
    """The two rest points of the error dynamics: zero error, and the
    antipodal point where the tilt estimate is upside down."""
    zero = (np.zeros(3), np.zeros(3))
    flipped = ((2.0 * gains.g0 / gains.alpha) * EZ, 2.0 * EZ)
    return zero, flipped


def linearization(verr: np.ndarray, terr: np.ndarray, gains: ObserverGains) -> np.ndarray:
    """6x6 Jacobian of the error dynamics at (verr, terr), verr block first."""
    a, b, g = gains.alpha, gains.beta, gains.g0
    w = EZ - np.asarray(terr, dtype=float)
    z1 = np.asarray(verr, dtype=float)
    eye = np.eye(3)
    J = np.zeros((6, 6))
    J[:3, :3] = -a * eye
    J[:3, 3:] = g * eye
    J[3:, :3] = b * (np.outer(w, w) - np.dot(w, w) * eye)
    J[3:, 3:] = -b * (np.dot(w, z1) * eye + np.outer(w, z1) - 2.0 * np.outer(z1, w))
    return J


def char_poly_flipped(lam, gains: ObserverGains):
    """Characteristic polynomial of the linearization at the flipped
    equilibrium, evaluated at ``lam`` (scalar or array, may be complex).

    Factored form: lam (lam + alpha) (lam^2 + alpha(1 - 2 r) lam - g0 beta)^2
    with r the gain ratio.
    """
    a, b, g = gains.alpha, gains.beta, gains.g0
    r = gains.gain_ratio
    quad = lam**2 + a * (1.0 - 2.0 * r) * lam - g * b
    return lam * (lam + a) * quad**2


def unstable_root(gains: ObserverGains) -> float:
    """The positive eigenvalue of the flipped-equilibrium linearization.

    Always positive for valid gains, which is why the flipped point repels
    almost every nearby trajectory.
    """
    r = gains.gain_ratio
    return float(0.5 * gains.alpha * (np.sqrt(1.0 + 4.0 * r * r) - (1.0 - 2.0 * r)))


def exponential_bound(v0: float, t, eps: float, gains: ObserverGains):
    """Upper envelope V(t) <= v0 * exp(-rate * t) that holds while the tilt
    error stays in the region |terr|^2 <= 4 (1 - eps).

    ``eps`` must lie in (0, 1]; the decay rate is
    2 * min(1 - r, r * eps) * alpha with r the gain ratio.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must be in (0, 1], got {eps}")
    rate = decay_rate(eps, gains)
    return v0 * np.exp(-rate * np.asarray(t, dtype=float))


def decay_rate(eps: float, gains: ObserverGains) -> float:
    """Exponential decay rate of the Lyapunov function for margin ``eps``."""
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must be in (0, 1], got {eps}")
    r = gains.gain_ratio
    return 2.0 * min(1.0 - r, r * eps) * gains.alpha


def estimate_epsilon(terr) -> float:
    """Margin 1 - |terr|^2/4, minimized over a tilt-error trajectory.

    Raises if the trajectory touches |terr| = 2 (the flipped point), where no
    positive margin exists.
    """
    terr = np.asarray(terr, dtype=float)
    n2 = np.sum(terr * terr, axis=-1)
    eps = 1.0 - float(n2.max()) / 4.0
    if eps <= 0.0:
        raise ValueError("tilt error reaches the flipped equilibrium; no positive margin")
    return eps


def convergence_time(t: np.ndarray, err_norms: np.ndarray, threshold: float):
    """First time after which ``err_norms`` stays below ``threshold``.

    Returns ``t[0]`` if it never reaches the threshold, ``None`` if it is
    still at or above it at the final sample.
    """
    t = np.asarray(t, dtype=float)
    err_norms = np.asarray(err_norms, dtype=float)
    above = np.nonzero(err_norms >= threshold)[0]
    if above.size == 0:
        return float(t[0])
    if above[-1] == len(err_norms) - 1:
        return None
    return float(t[above[-1] + 1])


@dataclass
class ErrorTrajectory:
    """Recorded error-dynamics run: times (M,), states (M, 3) or (B, M, 3)."""

    t: np.ndarray
    verr: np.ndarray
    terr: np.ndarray


def integrate_error_ode(
    verr0,
    terr0,
    gains: ObserverGains,
    dt: float = 1e-3,
    duration: float = 10.0,
    record_every: int = 1,
    stop_when_below: float | None = None,
) -> ErrorTrajectory:
    """Integrate the error dynamics directly, batched over leading axes.

    Matches the stepping of the full observer exactly: per step the tilt
    error moves along the exact rotation flow of its (frozen) effective rate,
    so ``|e_z - terr|`` stays 1 to machine precision, and the velocity error
    takes a 4-stage Runge-Kutta step with the tilt sampled on that flow.

    ``stop_when_below`` ends the run early once every batch member has both
    error norms under the given value (checked every 50 steps).
    """
    v = np.atleast_2d(np.asarray(verr0, dtype=float)).copy()
    terr0 = np.asarray(terr0, dtype=float)
    single = terr0.ndim == 1
    u = EZ - np.atleast_2d(terr0)
    if v.shape != u.shape:
        raise ValueError("verr0 and terr0 shapes disagree")
    norms = np.linalg.norm(u, axis=-1)
    if np.any(np.abs(norms - 1.0) > MANIFOLD_TOL):
        raise ValueError("tilt error off manifold: |e_z - terr| must be 1")

    a, b, g = gains.alpha, gains.beta, gains.g0
    n_steps = int(round(duration / dt))
    rec_t = [0.0]
    rec_v = [v.copy()]
    rec_u = [u.copy()]
    for k in range(n_steps):
        k1 = -a * v + g * (EZ - u)
        vh = v + 0.5 * dt * k1
        # rate frozen over the step, steering taken at the velocity midpoint
        # (matches the observer discretization step for step)
        w = (0.5 * dt * b) * np.cross(u, vh)
        u_h = rotate_by_exp(w, u)
        u_1 = rotate_by_exp(w, u_h)
        k2 = -a * vh + g * (EZ - u_h)
        vh = v + 0.5 * dt * k2
        k3 = -a * vh + g * (EZ - u_h)
        vh = v + dt * k3
        k4 = -a * vh + g * (EZ - u_1)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u = u_1
        last = k == n_steps - 1
        if (k + 1) % record_every == 0 or last:
            rec_t.append((k + 1) * dt)
            rec_v.append(v.copy())
            rec_u.append(u.copy())
        if stop_when_below is not None and not last and (k + 1) % 50 == 0:
            vmax = np.sqrt(np.sum(v * v, axis=-1).max())
            z2 = EZ - u
            tmax = np.sqrt(np.sum(z2 * z2, axis=-1).max())
            if vmax < stop_when_below and tmax < stop_when_below:
                if (k + 1) % record_every != 0:
                    rec_t.append((k + 1) * dt)
                    rec_v.append(v.copy())
                    rec_u.append(u.copy())
                break

    t = np.array(rec_t)
    verr = np.stack(rec_v, axis=-2)  # (B, M, 3)
    terr = EZ - np.stack(rec_u, axis=-2)
    if single:
        verr = verr[0]
        terr = terr[0]
    return ErrorTrajectory(t=t, verr=verr, terr=terr)


def sample_basin(
    n: int,
    gains: ObserverGains,
    rng: np.random.Generator,
    v_fraction: float = 0.99,
):
    """Draw ``n`` error states with Lyapunov value below ``v_fraction`` times
    the value at the flipped equilibrium (the guaranteed basin of attraction).

    Rejection sampling: tilt error uniform on its sphere, velocity error
    standard Gaussian, pair rejected if the Lyapunov value is over budget.
    The basin is a Lyapunov sub-level set, not a box, so rejection is the
    shape-faithful way in; the Gaussian keeps the near-boundary shell (tilt
    error close to the repelling point, where escape is arbitrarily slow)
    at the low weight it deserves.
    """
    thr = v_fraction * 2.0 * gains.g0**2
    verr = np.empty((n, 3))
    terr = np.empty((n, 3))
    got = 0
    while got < n:
        m = max(2 * (n - got), 64)
        dirs = rng.standard_normal((m, 3))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        z2 = EZ - dirs
        z1 = rng.standard_normal((m, 3))
        keep = lyapunov(z1, z2, gains) < thr
        z1, z2 = z1[keep], z2[keep]
        take = min(len(z1), n - got)
        verr[got : got + take] = z1[:take]
        terr[got : got + take] = z2[:take]
        got += take
    return verr, terr


@dataclass
class StabilityReport:
    """Summary of one error-dynamics run plus the gain-level facts."""

    gain_ratio: float
    unstable_root: float
    equilibrium_flipped_verr: np.ndarray
    v_initial: float
    v_final: float
    in_basin: bool
    epsilon: float
    exp_rate: float
    v_monotone: bool
    bound_satisfied: bool | None
    convergence_time: float | None
    duration: float
    dt: float
    threshold: float


def stability_report(
    verr0,
    terr0,
    gains: ObserverGains,
    dt: float = 1e-3,
    duration: float = 10.0,
    threshold: float = 1e-3,
    record_every: int = 10,
) -> StabilityReport:
    """Integrate the error dynamics from one start and grade the run."""
    point = ErrorPoint(verr0, terr0)
    traj = integrate_error_ode(point.verr, point.terr, gains, dt=dt, duration=duration,
                               record_every=record_every)
    v_series = lyapunov(traj.verr, traj.terr, gains)
    v0 = float(v_series[0])
    v_sep = 2.0 * gains.g0**2
    in_basin = v0 < v_sep
    eps = estimate_epsilon(traj.terr)
    rate = decay_rate(eps, gains)
    slack = 1e-9 * max(1.0, v0)
    v_monotone = bool(np.all(np.diff(v_series) <= slack))
    bound = None
    if in_basin:
        envelope = exponential_bound(v0, traj.t, eps, gains)
        bound = bool(np.all(v_series <= envelope + slack))
    err_norms = np.maximum(
        np.linalg.norm(traj.verr, axis=-1), np.linalg.norm(traj.terr, axis=-1)
    )
    t_conv = convergence_time(traj.t, err_norms, threshold)
    return StabilityReport(
        gain_ratio=gains.gain_ratio,
        unstable_root=unstable_root(gains),
        equilibrium_flipped_verr=equilibria(gains)[1][0],
        v_initial=v0,
        v_final=float(v_series[-1]),
        in_basin=in_basin,
        epsilon=eps,
        exp_rate=rate,
        v_monotone=v_monotone,
        bound_satisfied=bound,
        convergence_time=t_conv,
        duration=duration,
        dt=dt,
        threshold=threshold,
    )
