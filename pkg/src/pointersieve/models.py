"""Model builders and the reduced dynamics on the two-coherent-state subspace.

The atom has ``H = Omega sigma_x`` and collapse operator ``c``; the quantum
Brownian particle (rotating frame, zero temperature) has ``H = 0`` and
collapse operator ``a``.  For large ``r = |z|`` the oscillator state started
in ``span{|+z>, |-z>}`` stays there on the time scale ``1/r^2`` and is
described by

    rho = (1+A)/2 |+z><+z| + (1-A)/2 |-z><-z| + C |+z><-z| + C* |-z><+z|.

Under diffusive monitoring with ``phi = theta``, ``B = atanh(A)`` obeys
``dB = tanh(B) dtau + dzeta`` with ``tau = 4 t eta r^2 cos^2(phi - theta)``.
The noise is additive, so Ito and Stratonovich readings coincide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidStateError, ParameterError, ReductionError, StepSizeError
from .qmatrix import (
    COHERENT_TAIL_TOL,
    SIGMA_MINUS,
    SIGMA_X,
    DensityMatrix,
    FockBasis,
    annihilator,
    coherent_ket,
    coherent_tail,
    required_fock_dim,
)
from .errors import TruncationError
from .rng import NoiseBlocks, derive_seed
from .unravel import Model

A_CLIP = 1 - 1e-12
MAX_LEAKAGE = 0.05
MIN_SUBSPACE_R = 2.0
MAX_DTAU = 1e-3
MAX_PHONO_DECAY_STEP = 0.1


@dataclass(frozen=True)
class AtomParams:
    omega: float = 0.0

    def __post_init__(self):
        if not (self.omega >= 0 and math.isfinite(self.omega)):
            raise ParameterError(f"Rabi frequency must be finite and >= 0, got {self.omega}")


@dataclass(frozen=True)
class QbmParams:
    """Oscillator truncation ``fock_dim`` and coherent amplitude ``z = r e^{i theta}``."""

    fock_dim: int
    z: complex = 0j

    def __post_init__(self):
        FockBasis(self.fock_dim)
        object.__setattr__(self, "z", complex(self.z))
        if not all(math.isfinite(v) for v in (self.z.real, self.z.imag)):
            raise ParameterError("coherent amplitude must be finite")

    @property
    def r(self) -> float:
        return abs(self.z)

    @property
    def theta(self) -> float:
        return math.atan2(self.z.imag, self.z.real)

    @property
    def basis(self) -> FockBasis:
        return FockBasis(self.fock_dim)


@dataclass(frozen=True)
class SubspaceState:
    """Coordinates ``(A, C)`` of a state on ``span{|+z>, |-z>}``.

    ``leakage`` is the weight outside the subspace when the state came from
    :func:`subspace_reduce`.
    """

    A: float
    C: complex = 0j
    leakage: float = 0.0

    def __post_init__(self):
        a = float(self.A)
        c = complex(self.C)
        if not (math.isfinite(a) and math.isfinite(c.real) and math.isfinite(c.imag)):
            raise InvalidStateError("subspace coordinates must be finite")
        if abs(a) > 1 + 1e-9:
            raise InvalidStateError(f"population difference A={a} outside [-1, 1]")
        a = max(-1.0, min(1.0, a))
        if abs(c) > math.sqrt(1 - a * a) / 2 + 1e-9:
            raise InvalidStateError(f"|C|={abs(c):.6g} violates positivity for A={a:.6g}")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "C", c)

    @property
    def B(self) -> float:
        """``atanh(A)`` with ``|A|`` capped at ``1 - 1e-12``."""
        return math.atanh(max(-A_CLIP, min(A_CLIP, self.A)))

    @classmethod
    def from_b(cls, b: float, C: complex = 0j) -> "SubspaceState":
        return cls(A=math.tanh(b), C=C)


def atom_model(p: AtomParams) -> Model:
    return Model(hamiltonian=p.omega * SIGMA_X, collapse=SIGMA_MINUS, name="atom")


def qbm_model(p: QbmParams) -> Model:
    """Zero-temperature damped oscillator in the rotating frame (``H = 0``, collapse ``a``).

    The truncation must hold ``|z>`` with tail weight at most 1e-8.
    """
    tail = coherent_tail(p.r**2, p.fock_dim)
    if tail > COHERENT_TAIL_TOL:
        need = required_fock_dim(p.r)
        raise TruncationError(
            f"Fock truncation D={p.fock_dim} too small for r={p.r:.4g} (tail {tail:.3g}); need D >= {need}",
            required_dim=need,
        )
    basis = p.basis
    return Model(hamiltonian=np.zeros((basis.dim, basis.dim)), collapse=annihilator(basis), name="qbm")


def cat_ket(p: QbmParams, sign: int = 1) -> np.ndarray:
    """Normalised ``|+z> + sign |-z>``."""
    psi = coherent_ket(p.z, p.basis) + sign * coherent_ket(-p.z, p.basis)
    return psi / np.linalg.norm(psi)


def subspace_state_matrix(s: SubspaceState, p: QbmParams) -> DensityMatrix:
    """Embed ``(A, C)`` into the Fock space using the orthonormalised pair."""
    e = _lowdin_pair(p.z, p.fock_dim)
    sub = np.array([[(1 + s.A) / 2, s.C], [np.conj(s.C), (1 - s.A) / 2]])
    return DensityMatrix(e @ sub @ e.conj().T)


def most_mixed_subspace_state(p: QbmParams) -> DensityMatrix:
    """``(|+z><+z| + |-z><-z|)/2``, the state with ``A = C = 0``."""
    kp = coherent_ket(p.z, p.basis)
    km = coherent_ket(-p.z, p.basis)
    return DensityMatrix(0.5 * (np.outer(kp, kp.conj()) + np.outer(km, km.conj())))


def _lowdin_pair(z: complex, dim: int) -> np.ndarray:
    """Columns: symmetric orthonormalisation of ``|+z>, |-z>`` (shape ``(dim, 2)``)."""
    basis = FockBasis(dim)
    v = np.stack([coherent_ket(z, basis), coherent_ket(-z, basis)], axis=1)
    s = v.conj().T @ v
    w, u = np.linalg.eigh(s)
    return v @ (u @ np.diag(w**-0.5) @ u.conj().T)


def subspace_reduce_arrays(rhos, z: complex, dim: int):
    """Vectorised reduction of a stack of states; returns ``(A, C, leakage)`` arrays."""
    if abs(z) < MIN_SUBSPACE_R:
        raise DomainError(f"subspace reduction needs r = |z| >= {MIN_SUBSPACE_R}, got {abs(z):.4g}")
    e = _lowdin_pair(z, dim)
    sub = e.conj().T @ np.asarray(rhos) @ e
    a = (sub[..., 0, 0] - sub[..., 1, 1]).real
    c = sub[..., 0, 1]
    leak = 1 - (sub[..., 0, 0] + sub[..., 1, 1]).real
    return a, c, leak


def subspace_reduce(rho: DensityMatrix, p: QbmParams, *, z: complex | None = None) -> SubspaceState:
    """Project onto ``span{|+z>, |-z>}`` and return ``(A, C)`` plus leakage.

    ``z`` overrides the amplitude of ``p`` (e.g. the decayed ``z e^{-t/2}``).
    Raises :class:`ReductionError` when more than 5% of the weight leaks out.
    """
    zz = p.z if z is None else complex(z)
    if rho.dim != p.fock_dim:
        raise ParameterError(f"state dimension {rho.dim} != fock_dim {p.fock_dim}")
    a, c, leak = subspace_reduce_arrays(rho.mat, zz, p.fock_dim)
    leak = float(leak)
    if leak > MAX_LEAKAGE:
        raise ReductionError(f"{leak:.3g} of the weight lies outside span{{|+z>, |-z>}} (limit {MAX_LEAKAGE})")
    a = float(np.clip(a, -1.0, 1.0))
    cap = math.sqrt(max(0.0, 1 - a * a)) / 2
    c = complex(c)
    if abs(c) > cap:
        c *= cap / abs(c)
    return SubspaceState(A=a, C=c, leakage=leak)


def tau_of_t(t: float, eta: float, r: float, phi: float, theta: float) -> float:
    return 4.0 * t * eta * r * r * math.cos(phi - theta) ** 2


def _check_phono(r, eta, dt):
    if not (0 <= eta <= 1):
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    if not dt > 0:
        raise ParameterError(f"time step must be positive, got {dt}")
    if 2 * r * r * dt > MAX_PHONO_DECAY_STEP * (1 + 1e-9):
        raise StepSizeError(f"phonodetection step too large: need dt <= 0.1/(2 r^2) = {MAX_PHONO_DECAY_STEP / (2 * r * r):.3g}")


def subspace_phono_step(s: SubspaceState, r: float, eta: float, dt: float, rng: np.random.Generator) -> SubspaceState:
    """Photodetection (``R = 0``) step: ``dA = 0``, ``dC = -C [2 r^2 dt + (dN - dNbar)]``.

    ``dN`` is Bernoulli with mean ``dNbar = eta dt r^2``.
    """
    _check_phono(r, eta, dt)
    mean = eta * dt * r * r
    dn = 1.0 if rng.random() < mean else 0.0
    c = s.C * (1 - 2 * r * r * dt - (dn - mean))
    return SubspaceState(A=s.A, C=c)


def phono_ensemble(s0: SubspaceState, r: float, eta: float, dt: float, n_steps: int, n_traj: int, master_seed: int, sample_steps):
    """Batched :func:`subspace_phono_step`; returns ``(A, C)`` of shape ``(len(sample_steps), n_traj)``."""
    _check_phono(r, eta, dt)
    mean = eta * dt * r * r
    noise = NoiseBlocks([np.random.default_rng(derive_seed(master_seed, i)) for i in range(n_traj)], "uniform")
    a = np.full(n_traj, s0.A)
    c = np.full(n_traj, complex(s0.C))
    idx = {int(k): j for j, k in enumerate(sample_steps)}
    a_out = np.empty((len(idx), n_traj))
    c_out = np.empty((len(idx), n_traj), dtype=complex)
    for step in range(n_steps + 1):
        if step:
            dn = (noise.next() < mean).astype(float)
            c = c * (1 - 2 * r * r * dt - (dn - mean))
        if step in idx:
            a_out[idx[step]] = a
            c_out[idx[step]] = c
    return a_out, c_out


def subspace_b_step(B: float, dtau: float, rng: np.random.Generator) -> float:
    """Euler step of ``dB = tanh(B) dtau + dzeta`` with ``dzeta ~ Normal(0, dtau)``."""
    if not 0 < dtau <= MAX_DTAU:
        raise StepSizeError(f"dtau must lie in (0, {MAX_DTAU}], got {dtau}")
    return B + math.tanh(B) * dtau + rng.standard_normal() * math.sqrt(dtau)


@dataclass(frozen=True)
class BEnsemble:
    """B-SDE ensemble output.

    ``samples`` has shape ``(len(taus), n_traj)``; ``flips[k]`` counts the
    trajectories whose ``B`` changed sign during step ``k`` (ending at
    ``(k+1) dtau``).
    """

    taus: np.ndarray
    samples: np.ndarray
    dtau: float
    flips: np.ndarray | None = None

    @property
    def a_samples(self) -> np.ndarray:
        return np.tanh(self.samples)


def b_ensemble(n_traj: int, tau_final: float, dtau: float, master_seed: int, sample_taus, *, b0: float = 0.0, count_flips: bool = False) -> BEnsemble:
    """Integrate ``n_traj`` independent B trajectories from ``b0``.

    Trajectory ``i`` uses ``default_rng(derive_seed(master_seed, i))``.
    """
    if not 0 < dtau <= MAX_DTAU:
        raise StepSizeError(f"dtau must lie in (0, {MAX_DTAU}], got {dtau}")
    n_steps = int(round(tau_final / dtau))
    taus = np.asarray(sample_taus, dtype=float)
    steps = np.rint(taus / dtau).astype(int)
    if np.any(steps > n_steps) or np.any(steps < 0):
        raise ParameterError("sample taus must lie in [0, tau_final]")
    noise = NoiseBlocks([np.random.default_rng(derive_seed(master_seed, i)) for i in range(n_traj)], "normal")
    b = np.full(n_traj, float(b0))
    out = np.empty((len(taus), n_traj))
    where = {}
    for j, k in enumerate(steps):
        where.setdefault(int(k), []).append(j)
    flips = np.zeros(n_steps, dtype=np.int64) if count_flips else None
    sq = math.sqrt(dtau)
    for j in where.get(0, ()):
        out[j] = b
    for step in range(1, n_steps + 1):
        nb = b + np.tanh(b) * dtau + noise.next() * sq
        if flips is not None:
            flips[step - 1] = np.count_nonzero(np.signbit(nb) != np.signbit(b))
        b = nb
        for j in where.get(step, ()):
            out[j] = b
    return BEnsemble(taus=taus, samples=out, dtau=dtau, flips=flips)
