"""Predictability-sieve functionals and candidate scans.

For a pure initial state the noise-averaged purity change over one step is
``2 Tr(rho0 d rho) + Tr(d rho d rho)``; the second (Ito) term is linear in the
efficiency and cancels the first at ``eta = 1``, leaving

    dP/dt = (1 - eta) * 2 Tr(rho0 L[rho0]).

The fidelity rate ``Tr(rho0 L[rho0])`` does not depend on the measurement at
all.  Rates are per unit time (decay rate = 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DimensionError, InvalidStateError, NumericError, ParameterError
from .qmatrix import (
    BlochVector,
    DensityMatrix,
    FockBasis,
    bloch_to_density,
    coherent_state,
    number_state,
    purity,
)
from .rng import NoiseBlocks, derive_seed
from .unravel import MeasurementScheme, Model, Stepper, _expect, _finish

PURE_TOL = 1e-9
RANK_DECIMALS = 12


def _require_pure(rho0: DensityMatrix):
    p = purity(rho0)
    if p < 1 - PURE_TOL:
        raise InvalidStateError(f"purity functional needs a pure state, got Tr(rho^2) = {p:.12g}")


def _dissipator(c, rho):
    cd = c.conj().T
    return c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c)


def _trace_prod(a, b) -> float:
    return float(np.sum(a.T * b).real)


def fidelity_loss_rate(rho0: DensityMatrix, m: Model) -> float:
    """``Tr(rho0 D[c] rho0)``; the Hamiltonian part drops out identically.

    Accepts mixed states.  Takes no measurement argument: the rate is the
    same for every unraveling and efficiency.
    """
    if rho0.dim != m.dim:
        raise DimensionError(f"state dimension {rho0.dim} != model dimension {m.dim}")
    return _trace_prod(rho0.mat, _dissipator(m.collapse, rho0.mat))


def purity_loss_rate_closed(rho0: DensityMatrix, m: Model, eta: float) -> float:
    """``(1 - eta) * 2 Tr(rho0 L[rho0])`` for a pure ``rho0``."""
    if not 0 <= eta <= 1:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    _require_pure(rho0)
    st = Stepper(m, MeasurementScheme(), 1.0)
    return (1 - eta) * 2 * _trace_prod(rho0.mat, st.lindblad(rho0.mat[None])[0])


def _ito_samples(st: Stepper, rho0, noise_row):
    """Per-trajectory ``[2 Tr(rho0 d rho) + Tr(d rho d rho)] / dt`` with Ito rules.

    ``d rho`` is the exact CME increment at ``rho0``.  Jump: ``dN^2 = dN``,
    ``dN dt = 0``; diffusive: the realised ``dW^2`` is kept, ``dt dW`` dropped.
    """
    dt, eta = st.dt, st.eta
    rho = rho0[None]
    drift = 2 * _trace_prod(rho0, st.lindblad(rho)[0])
    n = len(noise_row)
    if eta == 0 or st.scheme.kind == "unconditional":
        return np.full(n, drift)
    if st.scheme.kind == "jump":
        mean = eta * dt * _expect(st.jump_ldl, rho).real[0]
        lrl = st.jump_op @ rho0 @ st.jump_op.conj().T
        jump = lrl / np.trace(lrl).real - rho0 if mean > 0 else np.zeros_like(rho0)
        dn = (noise_row < mean).astype(float)
        return drift + (2 * (dn - mean) * _trace_prod(rho0, jump) + dn * _trace_prod(jump, jump)) / dt
    x = st.x
    h = x @ rho0 + rho0 @ x.conj().T - _expect(st.x_quad, rho).real[0] * rho0
    dw = math.sqrt(dt) * noise_row
    return drift + (2 * math.sqrt(eta) * dw * _trace_prod(rho0, h) + eta * dw**2 * _trace_prod(h, h)) / dt


def purity_loss_rate_mc(
    rho0: DensityMatrix,
    m: Model,
    s: MeasurementScheme,
    dt: float,
    n_traj: int,
    seed: int,
    *,
    method: str = "ito",
):
    """Monte Carlo estimate of the initial purity-loss rate; returns ``(rate, stderr)``.

    ``method="ito"`` averages the one-step Ito purity increment of the CME
    (unbiased for any ``dt``).  ``method="step"`` averages
    ``(Tr(rho'^2) - 1)/dt`` over single steps of the finite-``dt`` integrator,
    whose bias is O(dt).  Trajectory ``i`` uses ``derive_seed(seed, i)``.
    """
    if n_traj < 2:
        raise ParameterError("need at least two trajectories")
    _require_pure(rho0)
    st = Stepper(m, s, dt)
    kind = s.kind
    if kind == "jump":
        st.check_jump_dt(rho0.mat[None])
    if kind in ("jump", "diffusive"):
        rngs = [np.random.default_rng(derive_seed(seed, i)) for i in range(n_traj)]
        noise = NoiseBlocks(rngs, "uniform" if kind == "jump" else "normal", block=1).next()
    else:
        noise = np.zeros(n_traj)
    if method == "ito":
        samples = _ito_samples(st, rho0.mat, noise)
    elif method == "step":
        rhos = np.repeat(rho0.mat[None], n_traj, axis=0)
        new, _ = st.step_batch(rhos, noise if kind != "unconditional" else None)
        samples = (np.sum(np.abs(new) ** 2, axis=(1, 2)) - 1) / dt
    else:
        raise ParameterError(f"unknown method {method!r}")
    if not np.all(np.isfinite(samples)):
        raise NumericError("non-finite purity increment")
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(n_traj))


@dataclass(frozen=True)
class EtaLineFit:
    """Least-squares fit ``rate = slope * (1 - eta)`` (a line through ``(1, 0)``)."""

    slope: float
    residuals: np.ndarray
    stderrs: np.ndarray

    def within(self, n_sigma: float = 3.0, floor: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.residuals) <= n_sigma * self.stderrs + floor))


def fit_through_eta_one(etas, rates, stderrs) -> EtaLineFit:
    """Weighted fit of rates to ``k (1 - eta)``; zero-variance points get unit weight."""
    etas = np.asarray(etas, float)
    rates = np.asarray(rates, float)
    se = np.asarray(stderrs, float)
    u = 1 - etas
    pos = se > 0
    if not np.any(pos):
        w = np.ones_like(u)
    else:
        w = np.full_like(u, 1 / se[pos].min() ** 2)
        w[pos] = 1 / se[pos] ** 2
    k = float(np.sum(w * u * rates) / np.sum(w * u * u))
    return EtaLineFit(slope=k, residuals=rates - k * u, stderrs=se)


def _fidelity_integrand_bloch(b: BlochVector, omega: float, t: float) -> float:
    th = 2 * omega * t
    y = b.y * math.cos(th) - b.z * math.sin(th)
    z = b.z * math.cos(th) + b.y * math.sin(th)
    return (b.x**2 + y**2) / 4 - (1 + z) / 2


def window_avg_fidelity_loss(rho0: DensityMatrix, m: Model, window: float) -> float:
    """``(1/T) int_0^T Tr[rho0 c_int^dag rho0 c_int - rho0 c_int^dag c_int] dt`` by adaptive quadrature.

    ``c_int = e^{iHt} c e^{-iHt}``.  Works for any model dimension.
    """
    if not window > 0:
        raise ParameterError("averaging window must be positive")
    h = m.hamiltonian
    w, v = np.linalg.eigh(h)
    c_eig = v.conj().T @ m.collapse @ v
    r_eig = v.conj().T @ rho0.mat @ v

    def f(t):
        ph = np.exp(1j * w * t)
        ci = ph[:, None] * c_eig * ph.conj()[None, :]
        cd = ci.conj().T
        return (np.trace(r_eig @ cd @ r_eig @ ci) - np.trace(r_eig @ cd @ ci)).real

    freqs = np.abs(w[:, None] - w[None, :]).max()
    limit = max(50, int(freqs * window / math.pi) * 4 + 50)
    val, err = integrate.quad(f, 0.0, window, limit=limit, epsabs=1e-12, epsrel=1e-12)
    if not math.isfinite(val) or err > 1e-8 * max(1.0, window):
        raise NumericError(f"fidelity quadrature did not converge (error estimate {err:.3g})")
    return val / window


def period_avg_fidelity_loss(b0: BlochVector, omega: float) -> float:
    """Fidelity rate of the atom averaged over one Rabi period ``2 pi / omega``.

    Evaluated by adaptive quadrature of ``Tr[rho0 c_int^dag rho0 c_int - rho0 c_int^dag c_int]``
    for ``H = omega sigma_x``.  For pure states this equals ``(x0^2 - 3)/8``.
    """
    from .models import AtomParams, atom_model

    if not (omega > 0 and math.isfinite(omega)):
        raise ParameterError(f"period average needs omega > 0, got {omega}")
    return window_avg_fidelity_loss(bloch_to_density(b0), atom_model(AtomParams(omega)), 2 * math.pi / omega)


def _window_means(theta):
    """Means of cos, sin, cos^2, sin^2, sin*cos over ``[0, theta]``."""
    theta = float(theta)
    if theta < 1e-8:
        return 1.0, theta / 2, 1.0, 0.0, theta / 2
    s, c = math.sin(theta), math.cos(theta)
    s2 = math.sin(2 * theta)
    return s / theta, (1 - c) / theta, 0.5 + s2 / (4 * theta), 0.5 - s2 / (4 * theta), s * s / (2 * theta)


def window_avg_fidelity_loss_bloch(xyz, omega: float, window: float) -> np.ndarray:
    """Closed-form window average of the atom's fidelity rate for Bloch vectors ``xyz`` (shape ``(n, 3)``).

    Uses ``b(t)`` rotated about x by ``2 omega t``:
    ``f = (x^2 + y_t^2)/4 - (1 + z_t)/2``.
    """
    xyz = np.atleast_2d(np.asarray(xyz, float))
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    mc, ms, mcc, mss, msc = _window_means(2 * omega * window)
    y2 = y * y * mcc - 2 * y * z * msc + z * z * mss
    zt = z * mc + y * ms
    return (x * x + y2) / 4 - (1 + zt) / 2


def sieve_window(omega: float) -> float:
    """Averaging window: one Rabi period, capped at one decay time."""
    return 1.0 if omega <= 2 * math.pi else 2 * math.pi / omega


def fibonacci_sphere(grid: int) -> np.ndarray:
    """Antipodally symmetric near-uniform sphere points with spacing about ``2 pi / grid``.

    Half the points come from the upper half of a Fibonacci lattice with
    ``N ~ grid^2 / pi`` points; the other half are their antipodes.
    """
    if grid < 8:
        raise ParameterError("grid must be at least 8 points per great circle")
    half = max(4, int(math.ceil(grid * grid / (2 * math.pi))))
    n = 2 * half
    i = np.arange(half)
    z = 1 - (2 * i + 1) / n
    rho = np.sqrt(1 - z * z)
    ang = i * math.pi * (3 - math.sqrt(5))
    up = np.stack([rho * np.cos(ang), rho * np.sin(ang), z], axis=1)
    return np.concatenate([up, -up])


@dataclass(frozen=True)
class Candidate:
    descriptor: str
    purity_loss_rate: float
    fidelity_loss_rate: float
    purity_stderr: float = 0.0
    fidelity_stderr: float = 0.0


@dataclass(frozen=True)
class SieveReport:
    """Candidates with their rates and a ranking (best first).

    Rates closer to zero rank higher.  Rates that agree to ``1e-12`` tie and
    are ordered by descriptor.
    """

    candidates: tuple
    ranking: tuple
    functional: str = "purity"
    meta: dict = field(default_factory=dict)

    def top(self, k: int = 1) -> list:
        return [self.candidates[i] for i in self.ranking[:k]]


def rank_candidates(candidates, functional: str = "purity") -> tuple:
    if functional not in ("purity", "fidelity"):
        raise ParameterError(f"unknown ranking functional {functional!r}")
    rates = np.array([c.purity_loss_rate if functional == "purity" else c.fidelity_loss_rate for c in candidates])
    if not np.all(np.isfinite(rates)):
        raise NumericError("non-finite rate in sieve candidates")
    key = np.round(-rates, RANK_DECIMALS) + 0.0
    desc = [c.descriptor for c in candidates]
    order = sorted(range(len(candidates)), key=lambda i: (key[i], desc[i]))
    return tuple(order)


def _bloch_descriptor(v):
    return f"bloch({v[0]:+.6f},{v[1]:+.6f},{v[2]:+.6f})"


def sieve_scan_bloch(omega: float, eta: float, grid: int, *, functional: str = "purity") -> SieveReport:
    """Rank pure atom states on a sphere grid by their averaged loss rates.

    The fidelity rate is averaged over ``sieve_window(omega)`` (one Rabi period
    when ``omega > 2 pi``); the purity rate is ``(1 - eta) * 2`` times it.
    """
    if not 0 <= eta <= 1:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    if not omega >= 0:
        raise ParameterError("omega must be >= 0")
    pts = fibonacci_sphere(grid)
    window = sieve_window(omega)
    fid = window_avg_fidelity_loss_bloch(pts, omega, window)
    pur = (1 - eta) * 2 * fid
    cands = tuple(Candidate(_bloch_descriptor(p), float(a), float(b)) for p, a, b in zip(pts, pur, fid))
    return SieveReport(
        candidates=cands,
        ranking=rank_candidates(cands, functional),
        functional=functional,
        meta={"omega": omega, "eta": eta, "grid": grid, "window": window, "points": pts},
    )


def coherent_candidate(z: complex, basis: FockBasis):
    return (f"coherent(z={complex(z).real:+.6f}{complex(z).imag:+.6f}j)", coherent_state(z, basis))


def number_candidate(n: int, basis: FockBasis):
    return (f"number(n={n})", number_state(n, basis))


def sieve_scan_coherent(p, candidates, *, eta: float = 0.0, functional: str = "purity") -> SieveReport:
    """Rates for oscillator candidates under the QBM model of ``p``.

    ``candidates`` holds ``(descriptor, DensityMatrix)`` pairs, e.g. from
    :func:`coherent_candidate` / :func:`number_candidate`.
    """
    from .models import qbm_model

    m = qbm_model(p)
    out = []
    for desc, rho in candidates:
        if rho.dim != p.fock_dim:
            raise DimensionError(f"candidate {desc} has dimension {rho.dim}, expected {p.fock_dim}")
        out.append(Candidate(desc, purity_loss_rate_closed(rho, m, eta), fidelity_loss_rate(rho, m)))
    out = tuple(out)
    return SieveReport(candidates=out, ranking=rank_candidates(out, functional), functional=functional, meta={"eta": eta})
