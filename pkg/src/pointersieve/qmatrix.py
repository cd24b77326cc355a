"""Small dense quantum-state algebra.

Basis convention for the two-level atom, used everywhere in the package:
the excited state ``|e>`` is index 0 and the ground state ``|g>`` is index 1,
so that ``sigma_z = diag(1, -1)`` and ``c = (sigma_x - i sigma_y)/2`` maps
``|e> -> |g>``.  Fock spaces use ``|n>`` at index ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionError, InvalidStateError, ParameterError, TruncationError

HERMITIAN_TOL = 1e-9
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-6
BLOCH_TOL = 1e-9
MAX_FOCK_DIM = 256
COHERENT_TAIL_TOL = 1e-8

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)
# c|e> = |g>, c|g> = 0
SIGMA_MINUS = (SIGMA_X - 1j * SIGMA_Y) / 2

for _m in (SIGMA_X, SIGMA_Y, SIGMA_Z, IDENTITY2, SIGMA_MINUS):
    _m.setflags(write=False)


def as_complex_matrix(a, name="matrix"):
    """Return ``a`` as a read-only square complex128 array with finite entries."""
    m = np.array(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionError(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidStateError(f"{name} has non-finite entries")
    m.setflags(write=False)
    return m


def min_eigenvalue(mat):
    """Smallest eigenvalue of a Hermitian matrix (exact closed form for 2x2)."""
    if mat.shape == (2, 2):
        a = mat[0, 0].real
        d = mat[1, 1].real
        b = mat[0, 1]
        half_gap = math.sqrt(((a - d) / 2) ** 2 + abs(b) ** 2)
        return (a + d) / 2 - half_gap
    return float(np.linalg.eigvalsh(mat)[0])


def check_density_arrays(rhos, *, positivity=True):
    """Vectorised invariant check for a stack of density matrices.

    ``rhos`` has shape ``(..., d, d)``.  Returns a message describing the first
    violation, or ``None`` when all matrices are valid.
    """
    rhos = np.asarray(rhos)
    if not np.all(np.isfinite(rhos)):
        return "non-finite entries"
    herm = np.max(np.abs(rhos - np.conj(np.swapaxes(rhos, -1, -2))), initial=0.0)
    if herm > HERMITIAN_TOL:
        return f"not Hermitian (max |rho - rho^dag| = {herm:.3g})"
    tr = np.trace(rhos, axis1=-2, axis2=-1)
    tr_err = np.max(np.abs(tr - 1), initial=0.0)
    if tr_err > TRACE_TOL:
        return f"trace differs from 1 by {tr_err:.3g}"
    if positivity:
        herm_part = (rhos + np.conj(np.swapaxes(rhos, -1, -2))) / 2
        if rhos.shape[-1] == 2:
            a = herm_part[..., 0, 0].real
            d = herm_part[..., 1, 1].real
            b = np.abs(herm_part[..., 0, 1])
            lam = (a + d) / 2 - np.sqrt(((a - d) / 2) ** 2 + b**2)
        else:
            lam = np.linalg.eigvalsh(herm_part)[..., 0]
        lam_min = np.min(lam, initial=np.inf)
        if lam_min < -POSITIVITY_TOL:
            return f"not positive (smallest eigenvalue {lam_min:.3g})"
    return None


class DensityMatrix:
    """Immutable Hermitian, unit-trace, positive matrix.

    Construction validates all three invariants.  Pass ``check=False`` only for
    matrices already validated elsewhere (for example a batch checked with
    :func:`check_density_arrays`).
    """

    __slots__ = ("_mat",)

    def __init__(self, mat, *, check=True):
        m = as_complex_matrix(mat, "density matrix")
        if check:
            problem = check_density_arrays(m)
            if problem is not None:
                raise InvalidStateError(f"invalid density matrix: {problem}")
        self._mat = m

    @property
    def mat(self) -> np.ndarray:
        return self._mat

    @property
    def dim(self) -> int:
        return self._mat.shape[0]

    @classmethod
    def from_ket(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        norm = np.linalg.norm(psi)
        if norm == 0 or not np.isfinite(norm):
            raise InvalidStateError("cannot build a state from a zero or non-finite vector")
        psi = psi / norm
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def mixture(cls, weights, states) -> "DensityMatrix":
        mat = sum(w * s.mat for w, s in zip(weights, states))
        return cls(mat)

    def expect(self, op) -> complex:
        return complex(np.trace(self._mat @ op))

    def __array__(self, dtype=None, copy=None):
        return np.array(self._mat, dtype=dtype)

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim}, purity={purity(self):.6f})"


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise InvalidStateError("Bloch components must be finite")
        if self.norm_sq > 1 + BLOCH_TOL:
            raise InvalidStateError(f"Bloch vector outside the unit ball (|b|^2 = {self.norm_sq:.12g})")

    @property
    def norm_sq(self) -> float:
        return self.x**2 + self.y**2 + self.z**2

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class FockBasis:
    """Truncated oscillator space spanned by ``|0>, ..., |dim-1>``."""

    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ParameterError(f"Fock truncation must be an integer >= 2, got {self.dim}")
        if self.dim > MAX_FOCK_DIM:
            raise ParameterError(f"Fock truncation above {MAX_FOCK_DIM} is not supported")


def bloch_to_density(b: BlochVector) -> DensityMatrix:
    mat = (IDENTITY2 + b.x * SIGMA_X + b.y * SIGMA_Y + b.z * SIGMA_Z) / 2
    return DensityMatrix(mat)


def density_to_bloch(rho: DensityMatrix) -> BlochVector:
    if rho.dim != 2:
        raise DimensionError(f"Bloch coordinates need a 2x2 state, got dim={rho.dim}")
    m = rho.mat
    # Tr(rho sigma) written out entrywise
    x = 2 * m[0, 1].real
    y = -2 * m[0, 1].imag
    z = (m[0, 0] - m[1, 1]).real
    return BlochVector(float(x), float(y), float(z))


def bloch_components(rhos) -> np.ndarray:
    """Bloch vectors of a stack of 2x2 matrices, shape ``(..., 3)``."""
    rhos = np.asarray(rhos)
    off = rhos[..., 0, 1]
    return np.stack([2 * off.real, -2 * off.imag, (rhos[..., 0, 0] - rhos[..., 1, 1]).real], axis=-1)


def purity(rho: DensityMatrix) -> float:
    m = rho.mat
    # Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
    return float(np.sum(np.abs(m) ** 2))


def purities(rhos) -> np.ndarray:
    rhos = np.asarray(rhos)
    return np.sum(np.abs(rhos) ** 2, axis=(-2, -1))


def fidelity_to(rho0: DensityMatrix, rho: DensityMatrix) -> float:
    """Overlap ``Tr(rho0 rho)``; real for Hermitian arguments."""
    if rho0.dim != rho.dim:
        raise DimensionError(f"dimension mismatch: {rho0.dim} vs {rho.dim}")
    val = np.sum(rho0.mat.T * rho.mat)
    if abs(val.imag) > 1e-10:
        raise InvalidStateError(f"overlap has imaginary part {val.imag:.3g}")
    return float(val.real)


def annihilator(basis: FockBasis) -> np.ndarray:
    """Truncated bosonic lowering operator, ``a|n> = sqrt(n)|n-1>``.

    The truncation drops ``a^dag|D-1>``, so ``[a, a^dag]`` equals the identity
    except for the last diagonal entry, which is ``1 - D``.  ``a^dag a`` is
    exactly ``diag(0, 1, ..., D-1)``.
    """
    a = np.diag(np.sqrt(np.arange(1, basis.dim, dtype=float)), k=1).astype(complex)
    a.setflags(write=False)
    return a


def coherent_tail(r_sq: float, dim: int) -> float:
    """Poisson weight ``exp(-|z|^2) sum_{n>=dim} |z|^{2n}/n!`` lost to truncation."""
    return float(stats.poisson.sf(dim - 1, r_sq))


def required_fock_dim(r: float, tol: float = COHERENT_TAIL_TOL) -> int:
    """Smallest truncation whose coherent-state tail weight is at most ``tol``."""
    d = 2
    while coherent_tail(r * r, d) > tol:
        d += 1
    return d


def coherent_ket(z: complex, basis: FockBasis) -> np.ndarray:
    r_sq = abs(z) ** 2
    tail = coherent_tail(r_sq, basis.dim)
    if tail > COHERENT_TAIL_TOL:
        need = required_fock_dim(abs(z))
        raise TruncationError(
            f"Fock truncation D={basis.dim} loses weight {tail:.3g} of |z={z}>; need D >= {need}",
            required_dim=need,
        )
    amps = np.empty(basis.dim, dtype=complex)
    amps[0] = math.exp(-r_sq / 2)
    for n in range(1, basis.dim):
        amps[n] = amps[n - 1] * z / math.sqrt(n)
    return amps / np.linalg.norm(amps)


def coherent_state(z: complex, basis: FockBasis) -> DensityMatrix:
    psi = coherent_ket(complex(z), basis)
    return DensityMatrix(np.outer(psi, psi.conj()))


def number_state(n: int, basis: FockBasis) -> DensityMatrix:
    if not 0 <= n < basis.dim:
        raise ParameterError(f"|{n}> is outside the truncated space of dimension {basis.dim}")
    psi = np.zeros(basis.dim, dtype=complex)
    psi[n] = 1
    return DensityMatrix.from_ket(psi)
