"""Closed-form references and the linear-response Monte Carlo.

Linear response of the atom around the stationary state ``I/2`` (``Omega >> 1``,
``eta << 1``)::

    d dx = -dx/2 dt                + dn 2R cos(phi) / (1 + 2R^2)
    d dy = (-dy/2 - 2 Omega dz) dt + dn (-2R sin(phi)) / (1 + 2R^2)
    d dz = (-dz + 2 Omega dy) dt   + dn (-1) / (1 + 2R^2)

with ``dn = dN - eta dt (R^2 + 1/2)``.  The purity gain is
``(dx^2 + dy^2 + dz^2)/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.linalg import expm, solve_continuous_lyapunov

from .errors import DomainError, NumericError, ParameterError, StepSizeError
from .rng import NoiseBlocks, derive_seed

MAX_LR_ETA = 0.2
MAX_CLICK_PROB = 0.1


@dataclass(frozen=True)
class LinearResponseState:
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dz)):
            raise NumericError("linear-response state must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz])

    @property
    def purity_gain(self) -> float:
        return 0.5 * (self.dx**2 + self.dy**2 + self.dz**2)


def drift_matrix(omega: float) -> np.ndarray:
    return np.array([[-0.5, 0.0, 0.0], [0.0, -0.5, -2 * omega], [0.0, 2 * omega, -1.0]])


def jump_vector(R: float, phi: float) -> np.ndarray:
    return np.array([2 * R * math.cos(phi), -2 * R * math.sin(phi), -1.0]) / (1 + 2 * R * R)


def click_rate(R: float, eta: float) -> float:
    """Mean photocount per unit time around the stationary state, ``eta (R^2 + 1/2)``."""
    return eta * (R * R + 0.5)


def _check_lr(eta, dt, R, counts):
    if not 0 <= eta <= 1:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    if not dt > 0:
        raise ParameterError(f"time step must be positive, got {dt}")
    if eta > MAX_LR_ETA:
        import warnings

        warnings.warn(f"linear response assumes eta << 1; eta={eta} > {MAX_LR_ETA}", stacklevel=3)
    if counts not in ("poisson", "bernoulli"):
        raise ParameterError(f"unknown count model {counts!r}")
    lam = click_rate(R, eta) * dt
    if counts == "bernoulli" and lam > MAX_CLICK_PROB * (1 + 1e-9):
        raise StepSizeError(f"Bernoulli clicks need eta (R^2 + 1/2) dt <= {MAX_CLICK_PROB}; dt <= {MAX_CLICK_PROB / click_rate(R, eta):.3g}")
    return lam


def _propagator(omega, dt, drift):
    m = drift_matrix(omega)
    if drift == "exact":
        return expm(m * dt)
    if drift == "euler":
        return np.eye(3) + m * dt
    raise ParameterError(f"unknown drift scheme {drift!r}")


def linear_response_step(
    s: LinearResponseState,
    omega: float,
    R: float,
    phi: float,
    eta: float,
    dt: float,
    rng: np.random.Generator,
    *,
    counts: str = "poisson",
    drift: str = "exact",
) -> LinearResponseState:
    """One step of the linear-response SDEs.

    The drift is applied through its exact propagator ``expm(M dt)`` (``drift="exact"``,
    stable for ``Omega dt`` of order one) or a plain Euler factor.  The click
    count is Poisson with mean ``eta (R^2 + 1/2) dt`` (exact for this constant-rate
    process) or Bernoulli, which needs that mean to stay below 0.1.
    """
    lam = _check_lr(eta, dt, R, counts)
    n = rng.poisson(lam) if counts == "poisson" else float(rng.random() < lam)
    new = _propagator(omega, dt, drift) @ s.as_array() + jump_vector(R, phi) * (n - lam)
    return LinearResponseState(*map(float, new))


@dataclass(frozen=True)
class PurityGainMC:
    """``samples[i, j, k]``: purity gain for phase ``phis[i]``, time ``times[j]``, trajectory ``k``."""

    phis: np.ndarray
    times: np.ndarray
    samples: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=-1)

    @property
    def stderr(self) -> np.ndarray:
        return self.samples.std(axis=-1, ddof=1) / math.sqrt(self.samples.shape[-1])


def purity_gain_mc(
    omega: float,
    R: float,
    phis,
    eta: float,
    dt: float,
    sample_times,
    n_traj: int,
    master_seed: int,
    *,
    counts: str = "poisson",
    drift: str = "exact",
) -> PurityGainMC:
    """Ensemble of linear-response trajectories started at ``delta = 0``.

    The equations are linear and ``dn`` does not depend on ``phi``, so every
    trajectory evolves the 3x3 response matrix ``D`` (``delta = D v(phi)``) and
    all phases share the same click record.  Trajectory ``k`` draws its
    counts from ``default_rng(derive_seed(master_seed, k))``.
    """
    lam = _check_lr(eta, dt, R, counts)
    if n_traj < 2:
        raise ParameterError("need at least two trajectories")
    times = np.asarray(sample_times, float)
    steps = np.rint(times / dt).astype(int)
    if np.any(np.abs(steps * dt - times) > 1e-9 * np.maximum(1, times)):
        raise ParameterError("sample times must lie on the dt grid")
    phis = np.asarray(phis, float)
    vs = np.stack([jump_vector(R, p) for p in phis], axis=1)  # (3, n_phi)
    prop = _propagator(omega, dt, drift)
    rngs = [np.random.default_rng(derive_seed(master_seed, k)) for k in range(n_traj)]
    noise = NoiseBlocks(rngs, "poisson" if counts == "poisson" else "uniform", lam=lam)
    d = np.zeros((n_traj, 3, 3))
    eye = np.eye(3)
    out = np.empty((len(phis), len(times), n_traj))
    where = {}
    for j, k in enumerate(steps):
        where.setdefault(int(k), []).append(j)

    def record(j):
        delta = d @ vs  # (n, 3, n_phi)
        out[:, j, :] = 0.5 * np.sum(delta**2, axis=1).T

    for j in where.get(0, ()):
        record(j)
    for step in range(1, int(steps.max(initial=0)) + 1):
        row = noise.next()
        dn = (row if counts == "poisson" else (row < lam)) - lam
        d = np.einsum("ij,njk->nik", prop, d)
        d += dn[:, None, None] * eye
        for j in where.get(step, ()):
            record(j)
    if not np.all(np.isfinite(out)):
        raise NumericError("linear-response ensemble diverged")
    return PurityGainMC(phis=phis, times=times, samples=out)


def purity_gain_lyapunov(omega: float, R: float, phi: float, eta: float, t: float) -> float:
    """Exact mean purity gain of the linear SDEs at finite ``Omega`` (covariance ODE).

    ``Sigma' = M Sigma + Sigma M^T + eta (R^2 + 1/2) v v^T`` from ``Sigma(0) = 0``;
    returns ``tr(Sigma(t))/2``.
    """
    m = drift_matrix(omega)
    v = jump_vector(R, phi)
    q = click_rate(R, eta) * np.outer(v, v)
    sigma_inf = solve_continuous_lyapunov(m, -q)
    e = expm(m * t)
    sigma = sigma_inf - e @ sigma_inf @ e.T
    return 0.5 * float(np.trace(sigma))


def purity_curve(t, eta, R, phi):
    """Noise-averaged purity of the linear response (includes the 1/2 baseline)."""
    t = np.asarray(t, float)
    den = 1 + 2 * R * R
    val = (
        0.5
        + eta * R * R * np.cos(phi) ** 2 / den * (1 - np.exp(-t))
        + eta * (1 + 4 * R * R * np.sin(phi) ** 2) / (6 * den) * (1 - np.exp(-1.5 * t))
    )
    return float(val) if val.ndim == 0 else val


def stationary_purity(eta, phi):
    """Large-``R`` saturation value ``1/2 + (eta/6)(3 cos^2 phi + 2 sin^2 phi)``."""
    val = 0.5 + eta / 6 * (3 * np.cos(phi) ** 2 + 2 * np.sin(phi) ** 2)
    return float(val) if np.ndim(val) == 0 else val


def _check_tau(tau):
    if not (np.all(np.asarray(tau) > 0) and np.all(np.isfinite(tau))):
        raise DomainError(f"tau must be positive and finite, got {tau}")


def a_density(tau, A):
    """Density of ``A = tanh(B)`` at time ``tau`` for ``B(0) = 0``.

    ``(2 pi tau)^{-1/2} (1 - A^2)^{-3/2} exp(-tau/2 - ln^2((1+A)/(1-A)) / (8 tau))``.
    """
    _check_tau(tau)
    a = np.asarray(A, float)
    if np.any(np.abs(a) >= 1) or not np.all(np.isfinite(a)):
        raise DomainError("a_density is defined for |A| < 1")
    log_ratio = np.log1p(a) - np.log1p(-a)
    val = (2 * np.pi * tau) ** -0.5 * (1 - a * a) ** -1.5 * np.exp(-tau / 2 - log_ratio**2 / (8 * tau))
    return float(val) if val.ndim == 0 else val


def _a_density_in_b(tau, b):
    """``a_density(tau, tanh b) * sech^2 b`` written without cancellation."""
    return (2 * np.pi * tau) ** -0.5 * np.cosh(b) * np.exp(-tau / 2 - b * b / (2 * tau))


def _b_limits(tau):
    # |B| beyond tau + 40 sqrt(tau) + 40 carries no weight in double precision
    return tau + 40 * math.sqrt(tau) + 40


def a_mass(tau: float, lo: float, hi: float) -> float:
    """``int_lo^hi a_density(tau, A) dA`` by quadrature in ``B = atanh(A)``."""
    _check_tau(tau)
    if not -1 <= lo <= hi <= 1:
        raise DomainError("integration limits must satisfy -1 <= lo <= hi <= 1")
    cap = _b_limits(tau)
    b_lo = -cap if lo <= -1 else max(-cap, math.atanh(lo))
    b_hi = cap if hi >= 1 else min(cap, math.atanh(hi))
    if b_hi <= b_lo:
        return 0.0
    # split at the two modes so quad sees both peaks
    pts = [p for p in (-tau, 0.0, tau) if b_lo < p < b_hi]
    val, err = integrate.quad(lambda b: _a_density_in_b(tau, b), b_lo, b_hi, points=pts or None, limit=200, epsabs=1e-13, epsrel=1e-11)
    if not math.isfinite(val) or err > 1e-8:
        raise NumericError(f"a_density quadrature failed (error estimate {err:.3g})")
    return val


def a_cdf_closed(tau: float, A):
    """Closed-form CDF of ``A``: ``B`` is an equal mixture of ``N(+tau, tau)`` and ``N(-tau, tau)``."""
    _check_tau(tau)
    a = np.clip(np.asarray(A, float), -1.0, 1.0)
    with np.errstate(divide="ignore"):
        b = np.arctanh(a)
    s = math.sqrt(tau)
    return 0.5 * (stats.norm.cdf((b - tau) / s) + stats.norm.cdf((b + tau) / s))


def a_bin_probabilities(tau: float, edges) -> np.ndarray:
    """Probability of each ``A`` bin, by quadrature of :func:`a_density`."""
    edges = np.asarray(edges, float)
    return np.array([a_mass(tau, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])])


def histogram_l1(a_samples, tau: float, bins: int = 50) -> float:
    """``sum_k |p_hat_k - p_k|`` over ``bins`` equal bins on ``[-1, 1]``."""
    edges = np.linspace(-1, 1, bins + 1)
    counts, _ = np.histogram(np.clip(a_samples, -1, 1), bins=edges)
    return float(np.abs(counts / len(a_samples) - a_bin_probabilities(tau, edges)).sum())


def jump_rate_law(tau):
    """Unnormalised flip-frequency law ``exp(-tau/2) / sqrt(tau)``."""
    _check_tau(tau)
    val = np.exp(-np.asarray(tau, float) / 2) / np.sqrt(tau)
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class FlipFit:
    """Regression of log flip frequency on the log of the jump-rate law."""

    slope: float
    intercept: float
    centers: np.ndarray
    frequency: np.ndarray
    law: np.ndarray


def flip_frequency(flips, dtau: float, n_traj: int, lo: float, hi: float, n_windows: int):
    """Sign changes per trajectory per unit ``tau`` in equal windows of ``[lo, hi]``.

    ``flips[k]`` counts sign changes during the step ending at ``(k+1) dtau``.
    Returns ``(edges, frequency)``.
    """
    flips = np.asarray(flips)
    edges = np.linspace(lo, hi, n_windows + 1)
    step_end = (np.arange(len(flips)) + 1) * dtau
    idx = np.searchsorted(edges, step_end, side="left") - 1
    ok = (idx >= 0) & (idx < n_windows) & (step_end > lo)
    counts = np.bincount(idx[ok], weights=flips[ok], minlength=n_windows)
    return edges, counts / (n_traj * np.diff(edges))


def flip_slope_fit(flips, dtau: float, n_traj: int, lo: float = 1.0, hi: float = 6.0, n_windows: int = 20) -> FlipFit:
    """Fit ``log f = slope * log L + c`` where ``L`` is the window mean of :func:`jump_rate_law`."""
    edges, freq = flip_frequency(flips, dtau, n_traj, lo, hi, n_windows)
    if np.any(freq <= 0):
        raise NumericError("empty flip window; increase the ensemble size or window width")
    law = np.array([integrate.quad(jump_rate_law, a, b)[0] / (b - a) for a, b in zip(edges[:-1], edges[1:])])
    slope, intercept = np.polyfit(np.log(law), np.log(freq), 1)
    return FlipFit(float(slope), float(intercept), 0.5 * (edges[1:] + edges[:-1]), freq, law)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    return float(stats.ks_2samp(a, b).statistic)
