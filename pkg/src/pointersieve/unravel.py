"""Unconditional master equation and its jump / diffusive unravelings.

All dynamics share the form

    d rho = -i dt [H, rho] + dt D[c] rho + (stochastic increment),

with ``D[c] rho = c rho c^dag - {c^dag c, rho}/2`` and the decay rate set to 1.
The stochastic steps are written as normalised Kraus-type maps that agree
with the Ito increments to first order in ``dt`` but never leave the set of
positive matrices:

* jump (homodyne photodetection with local oscillator ``gamma = R e^{i phi}``):
  a click maps ``rho -> L rho L^dag / Tr`` with ``L = c + gamma``; no click maps
  ``rho -> M0 rho M0^dag + (1 - eta) dt c rho c^dag`` (renormalised), where
  ``M0 = exp(-i dt (H + eta H_gamma)) sqrt(1 - dt (eta L^dag L + (1 - eta) c^dag c))``
  and ``H_gamma = -(i/2)(gamma* c - gamma c^dag)``.  The three Kraus operators
  are exactly complete, so the ensemble mean never drifts off the averaged
  map even when ``eta R^2 dt`` is not small.
* diffusive (the ``R -> oo`` homodyne limit, quadrature ``X = e^{-i phi} c``):
  ``rho -> M rho M^dag + (1 - eta) dt X rho X^dag`` with
  ``M = 1 - dt (iH + c^dag c / 2) + sqrt(eta) X dY + eta/2 X^2 (dY^2 - dt)`` and
  ``dY = dW + sqrt(eta) <X + X^dag> dt`` (Rouchon-Ralph form).

Its Ito limit is ``dt L rho + sqrt(eta) dW (X rho + rho X^dag - <X + X^dag> rho)``.
The measured quadrature ``<X + X^dag> = <sigma_x> cos(phi) - <sigma_y> sin(phi)``
for the atom, the same sign pattern as the photocount mean.

Batched versions of every step act on arrays of shape ``(n, d, d)``; the
public single-step functions are thin wrappers around them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import DimensionError, ModelError, NumericError, ParameterError, StepSizeError
from .qmatrix import (
    HERMITIAN_TOL,
    DensityMatrix,
    as_complex_matrix,
    bloch_components,
    check_density_arrays,
    purities,
)
from .rng import NoiseBlocks, derive_seed

KINDS = ("unconditional", "jump", "diffusive")
DEFAULT_MAX_DT = 0.01
MAX_CLICK_PROB = 0.1
CLICK_PROB_HARD_LIMIT = 0.5


@dataclass(frozen=True)
class Model:
    hamiltonian: np.ndarray
    collapse: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        h = as_complex_matrix(self.hamiltonian, "hamiltonian")
        c = as_complex_matrix(self.collapse, "collapse operator")
        if h.shape != c.shape:
            raise DimensionError(f"hamiltonian {h.shape} and collapse {c.shape} differ in shape")
        if np.max(np.abs(h - h.conj().T)) > HERMITIAN_TOL:
            raise ParameterError("hamiltonian is not Hermitian")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "collapse", c)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]


@dataclass(frozen=True)
class MeasurementScheme:
    """How the environment is monitored.

    ``kind="unconditional"`` ignores the record and behaves exactly as ``eta=0``.
    """

    kind: str = "unconditional"
    R: float = 0.0
    phi: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown measurement kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 <= self.eta <= 1.0):
            raise ParameterError(f"efficiency eta must lie in [0, 1], got {self.eta}")
        if not (self.R >= 0 and math.isfinite(self.R)):
            raise ParameterError(f"local-oscillator amplitude R must be finite and >= 0, got {self.R}")
        if not math.isfinite(self.phi):
            raise ParameterError("phase phi must be finite")

    @property
    def effective_eta(self) -> float:
        return 0.0 if self.kind == "unconditional" else self.eta

    @property
    def gamma(self) -> complex:
        return self.R * complex(math.cos(self.phi), math.sin(self.phi))


@dataclass(frozen=True)
class DetectionRecord:
    """Measurement record of one trajectory.

    Jump records hold click times (end of the step in which ``dN = 1``);
    diffusive records hold the Wiener increment of every step.
    """

    kind: str
    seed: int
    click_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    dW: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        ct = np.asarray(self.click_times, dtype=float)
        if ct.size > 1 and np.any(np.diff(ct) <= 0):
            raise ParameterError("click times must be strictly increasing")
        dw = np.asarray(self.dW, dtype=float)
        if not np.all(np.isfinite(dw)):
            raise NumericError("non-finite Wiener increment in record")
        object.__setattr__(self, "click_times", ct)
        object.__setattr__(self, "dW", dw)

    @property
    def n_clicks(self) -> int:
        return int(self.click_times.size)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: tuple
    record: DetectionRecord

    def bloch(self) -> np.ndarray:
        return bloch_components(np.array([s.mat for s in self.states]))

    def purity(self) -> np.ndarray:
        return purities(np.array([s.mat for s in self.states]))

    def fidelity(self, rho0: DensityMatrix, model: Model) -> np.ndarray:
        """Interaction-picture fidelity ``Tr(rho0 rho_int(t))`` at each stored time."""
        return np.array(
            [_interaction_overlap(rho0.mat, s.mat[None], model.hamiltonian, t)[0] for t, s in zip(self.times, self.states)]
        )


def _dag(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _sandwich(op, rhos):
    """``op rho op^dag`` for a fixed operator and a stack of states."""
    return op @ rhos @ op.conj().T


def _finish(rhos):
    """Trace renormalisation plus Hermitian symmetrisation."""
    tr = np.trace(rhos, axis1=-2, axis2=-1).real
    rhos = rhos / tr[:, None, None]
    return 0.5 * (rhos + _dag(rhos))


def _expect(op, rhos):
    return np.einsum("ij,nji->n", op, rhos)


def _interaction_overlap(rho0, rhos, hamiltonian, t):
    """``Tr(rho0 e^{iHt} rho e^{-iHt})`` for a stack of states."""
    if np.any(hamiltonian):
        u = expm(-1j * hamiltonian * t)
        rho0 = u @ rho0 @ u.conj().T
    return np.einsum("ij,nji->n", rho0, rhos).real


class Stepper:
    """Precomputed operators for one (model, scheme, dt) triple.

    The ``*_batch`` methods are the integrators used by every higher-level
    routine; they never mutate their input.
    """

    def __init__(self, model: Model, scheme: MeasurementScheme, dt: float, order: int = 1):
        if not (dt > 0 and math.isfinite(dt)):
            raise ParameterError(f"time step must be positive, got {dt}")
        if order not in (1, 2):
            raise ParameterError("UME order must be 1 or 2")
        self.model = model
        self.scheme = scheme
        self.dt = dt
        self.order = order
        self.eta = scheme.effective_eta
        d = model.dim
        eye = np.eye(d, dtype=complex)
        h = model.hamiltonian
        c = model.collapse
        cd = c.conj().T
        self.h = h
        self.c = c
        self.cdc = cd @ c
        self.m0 = eye - dt * (1j * h + 0.5 * self.cdc)

        g = scheme.gamma
        self.R = scheme.R
        self.jump_op = c + g * eye
        self.jump_ldl = self.jump_op.conj().T @ self.jump_op
        # D[c] = D[c + g] - i[H_g, .].  The no-click operator completes the
        # Kraus set {M0, sqrt(eta dt) L, sqrt((1 - eta) dt) c} exactly, so the
        # branch weights are 1 - p and p and the step is a martingale.
        h_g = -0.5j * (np.conj(g) * c - g * cd)
        eta = self.eta
        self.m0_jump = None
        if scheme.kind == "jump" and eta > 0:
            self.check_jump_dt()
            gen = eta * self.jump_ldl + (1 - eta) * self.cdc
            w, v = np.linalg.eigh(0.5 * (gen + gen.conj().T))
            if dt * w.max() >= 1:
                raise StepSizeError(
                    f"jump step too large: dt * max eig(eta L^dag L + (1-eta) c^dag c) = {dt * w.max():.3g} >= 1; "
                    f"need dt <= {0.1 / w.max():.3g}"
                )
            shrink = (v * np.sqrt(1 - dt * w)) @ v.conj().T
            self.m0_jump = expm(-1j * dt * (h + eta * h_g)) @ shrink

        x = complex(math.cos(scheme.phi), -math.sin(scheme.phi)) * c
        self.x = x
        self.x2 = x @ x
        self.x_quad = x + x.conj().T

    # -- deterministic part -------------------------------------------------
    def lindblad(self, rhos):
        c = self.c
        return (
            -1j * (self.h @ rhos - rhos @ self.h)
            + c @ rhos @ c.conj().T
            - 0.5 * (self.cdc @ rhos + rhos @ self.cdc)
        )

    def ume_batch(self, rhos):
        if self.order == 2:
            mid = rhos + 0.5 * self.dt * self.lindblad(rhos)
            out = rhos + self.dt * self.lindblad(mid)
        else:
            out = _sandwich(self.m0, rhos) + self.dt * _sandwich(self.c, rhos)
        return _finish(out)

    # -- jump unraveling ----------------------------------------------------
    def check_jump_dt(self, rhos=None):
        eta, dt = self.eta, self.dt
        occ = 0.0
        if rhos is not None:
            occ = float(np.max(_expect(self.cdc, rhos).real))
        nominal = eta * dt * max(self.R**2, occ)
        if nominal > MAX_CLICK_PROB * (1 + 1e-9):
            bound = MAX_CLICK_PROB / (eta * max(self.R**2, occ))
            raise StepSizeError(
                f"jump step too large: expected clicks per step {nominal:.3g} > {MAX_CLICK_PROB}; "
                f"need dt <= 0.1/(eta*max(R^2, <c^dag c>)) = {bound:.3g}"
            )

    def click_probability(self, rhos):
        p = self.eta * self.dt * _expect(self.jump_ldl, rhos).real
        if np.any(p < -1e-12):
            raise ModelError(f"negative photocount mean {p.min():.3g}: state is broken")
        if np.any(p > CLICK_PROB_HARD_LIMIT):
            raise StepSizeError(f"click probability {p.max():.3g} per step exceeds {CLICK_PROB_HARD_LIMIT}; reduce dt")
        return np.clip(p, 0.0, 1.0)

    def jump_batch(self, rhos, u):
        """One jump step; ``u`` are uniform variates, one per state."""
        if self.eta == 0:
            return self.ume_batch(rhos), np.zeros(len(rhos), dtype=int)
        p = self.click_probability(rhos)
        click = u < p
        no_click = _sandwich(self.m0_jump, rhos) + (1 - self.eta) * self.dt * _sandwich(self.c, rhos)
        if np.any(click):
            jumped = _sandwich(self.jump_op, rhos[click])
            no_click[click] = jumped
        return _finish(no_click), click.astype(int)

    # -- diffusive unraveling -----------------------------------------------
    def diffusive_batch(self, rhos, xi):
        """One diffusive step; ``xi`` are standard normals, ``dW = sqrt(dt) xi``."""
        dt = self.dt
        dw = math.sqrt(dt) * np.asarray(xi, dtype=float)
        if self.eta == 0:
            return self.ume_batch(rhos), dw
        se = math.sqrt(self.eta)
        mean_x = _expect(self.x_quad, rhos).real
        dy = dw + se * mean_x * dt
        m = (
            self.m0[None]
            + (se * dy)[:, None, None] * self.x[None]
            + (0.5 * self.eta * (dy**2 - dt))[:, None, None] * self.x2[None]
        )
        out = m @ rhos @ _dag(m) + (1 - self.eta) * dt * _sandwich(self.x, rhos)
        return _finish(out), dw

    def step_batch(self, rhos, noise):
        kind = self.scheme.kind
        if kind == "jump":
            return self.jump_batch(rhos, noise)
        if kind == "diffusive":
            return self.diffusive_batch(rhos, noise)
        return self.ume_batch(rhos), None


def _as_state(rho, model):
    if rho.dim != model.dim:
        raise DimensionError(f"state dimension {rho.dim} does not match model dimension {model.dim}")
    return rho.mat[None]


def _checked_dt(dt, max_dt=None):
    if not (dt > 0 and math.isfinite(dt)):
        raise ParameterError(f"time step must be positive, got {dt}")
    if max_dt is not None and dt > max_dt:
        raise StepSizeError(f"time step {dt} exceeds the cap {max_dt}")
    return dt


def ume_step(rho: DensityMatrix, m: Model, dt: float, *, order: int = 1, max_dt: float = DEFAULT_MAX_DT) -> DensityMatrix:
    """Advance the unconditional master equation by one step (first order by default)."""
    _checked_dt(dt, max_dt)
    st = Stepper(m, MeasurementScheme(), dt, order=order)
    return DensityMatrix(st.ume_batch(_as_state(rho, m))[0])


def expected_click(rho: DensityMatrix, m: Model, s: MeasurementScheme, dt: float) -> float:
    """Mean photocount ``eta dt Tr[rho (c^dag + gamma*)(c + gamma)]`` in one step (clamped to [0, 1])."""
    _checked_dt(dt)
    if s.kind == "diffusive":
        raise ParameterError("expected_click applies to the jump unraveling")
    st = Stepper(m, s, dt)
    return float(st.click_probability(_as_state(rho, m))[0])


def jump_step(rho: DensityMatrix, m: Model, s: MeasurementScheme, dt: float, rng: np.random.Generator):
    """One step of the photodetection-conditioned master equation.

    Returns ``(new_state, dN)`` with ``dN`` in ``{0, 1}``.
    """
    _checked_dt(dt)
    st = Stepper(m, s, dt)
    rhos = _as_state(rho, m)
    st.check_jump_dt(rhos)
    u = np.array([rng.random()])
    out, dn = st.jump_batch(rhos, u)
    return DensityMatrix(out[0]), int(dn[0])


def diffusive_step(rho: DensityMatrix, m: Model, s: MeasurementScheme, dt: float, rng: np.random.Generator):
    """One step of the homodyne (white-noise) conditioned master equation.

    Returns ``(new_state, dW)``.
    """
    _checked_dt(dt)
    st = Stepper(m, s, dt)
    out, dw = st.diffusive_batch(_as_state(rho, m), np.array([rng.standard_normal()]))
    return DensityMatrix(out[0]), float(dw[0])


def time_grid(t_final, dt, sample_times):
    """Map sample times to step indices on the ``dt`` grid."""
    if not (t_final >= 0 and math.isfinite(t_final)):
        raise ParameterError(f"t_final must be finite and >= 0, got {t_final}")
    _checked_dt(dt)
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ParameterError(f"t_final={t_final} is not a multiple of dt={dt}")
    times = np.asarray(sorted(sample_times), dtype=float)
    if times.size and (times[0] < -1e-12 or times[-1] > t_final + 1e-9 * max(1.0, t_final)):
        raise ParameterError("sample times must lie in [0, t_final]")
    steps = np.rint(times / dt).astype(int)
    off = np.abs(steps * dt - times)
    if np.any(off > 1e-9 * np.maximum(1.0, times)):
        raise ParameterError("sample times must lie on the dt grid")
    return n_steps, times, steps


_NOISE_KIND = {"jump": "uniform", "diffusive": "normal"}


def _check_batch(rhos, step, dt, check_positivity):
    problem = check_density_arrays(rhos, positivity=check_positivity)
    if problem is not None:
        raise NumericError(f"state became invalid at step {step} (t={step * dt:.6g}): {problem}")


def simulate(
    model: Model,
    scheme: MeasurementScheme,
    rho0: DensityMatrix,
    dt: float,
    n_steps: int,
    sample_steps,
    seeds,
    *,
    order: int = 1,
    record: bool = False,
    track_min_purity: bool = False,
    check_every_step: bool = False,
    observer=None,
):
    """Run a batch of trajectories that share ``rho0``; one seed per trajectory.

    Returns ``(states, clicks, dws, min_purity)`` where ``states`` has shape
    ``(len(sample_steps), n, d, d)``.  Invariants (including positivity) are
    checked at every sample step; ``check_every_step`` extends this to all
    steps.  ``observer(step, rhos)``, if given, is called after each step.
    """
    seeds = list(seeds)
    n = len(seeds)
    st = Stepper(model, scheme, dt, order=order)
    kind = scheme.kind
    rhos = np.repeat(_as_state(rho0, model), n, axis=0)
    if kind == "jump":
        st.check_jump_dt(rhos)
    noise = None
    if kind in _NOISE_KIND:
        noise = NoiseBlocks([np.random.default_rng(s) for s in seeds], _NOISE_KIND[kind], block=min(1024, max(n_steps, 1)))
    sample_steps = np.asarray(sample_steps, dtype=int)
    out = np.empty((len(sample_steps), n, model.dim, model.dim), dtype=complex)
    sample_at = {}
    for j, k in enumerate(sample_steps):
        sample_at.setdefault(int(k), []).append(j)
    clicks = [[] for _ in range(n)] if record and kind == "jump" else None
    dws = np.empty((n_steps, n)) if record and kind == "diffusive" else None
    min_pur = purities(rhos) if track_min_purity else None

    def store(step):
        for j in sample_at.get(step, ()):
            out[j] = rhos

    _check_batch(rhos, 0, dt, True)
    store(0)
    for step in range(1, n_steps + 1):
        xi = noise.next() if noise is not None else None
        rhos, inc = st.step_batch(rhos, xi)
        if clicks is not None and np.any(inc):
            for i in np.flatnonzero(inc):
                clicks[i].append(step * dt)
        if dws is not None:
            dws[step - 1] = inc
        if track_min_purity:
            np.minimum(min_pur, purities(rhos), out=min_pur)
        if observer is not None:
            observer(step, rhos)
        if check_every_step or step in sample_at:
            _check_batch(rhos, step, dt, True)
        elif step % 256 == 0 and not np.all(np.isfinite(rhos)):
            raise NumericError(f"NaN encountered at step {step} (t={step * dt:.6g})")
        store(step)
    return out, clicks, dws, min_pur


def run_trajectory(
    m: Model,
    s: MeasurementScheme,
    rho0: DensityMatrix,
    t_final: float,
    dt: float,
    sample_times,
    seed: int,
    *,
    order: int = 1,
) -> Trajectory:
    """Integrate one conditioned trajectory; deterministic in ``(inputs, seed)``."""
    n_steps, times, steps = time_grid(t_final, dt, sample_times)
    states, clicks, dws, _ = simulate(m, s, rho0, dt, n_steps, steps, [seed], order=order, record=True)
    rec = DetectionRecord(
        kind=s.kind,
        seed=int(seed),
        click_times=np.array(clicks[0]) if clicks is not None else np.empty(0),
        dW=dws[:, 0].copy() if dws is not None else np.empty(0),
    )
    snaps = tuple(DensityMatrix(states[j, 0], check=False) for j in range(len(times)))
    return Trajectory(times=times, states=snaps, record=rec)


@dataclass(frozen=True)
class EnsembleResult:
    """Noise averages over ``n_traj`` trajectories at the sample times.

    Standard errors are sample standard deviations divided by ``sqrt(n_traj)``.
    ``purity_samples`` and ``fidelity_samples`` keep the per-trajectory values
    (shape ``(len(times), n_traj)``); ``states`` is filled only on request.
    """

    times: np.ndarray
    n_traj: int
    mean_rho: np.ndarray
    purity_mean: np.ndarray
    purity_stderr: np.ndarray
    fidelity_mean: np.ndarray
    fidelity_stderr: np.ndarray
    purity_samples: np.ndarray
    fidelity_samples: np.ndarray
    bloch_mean: np.ndarray | None = None
    bloch_stderr: np.ndarray | None = None
    states: np.ndarray | None = None
    min_purity: np.ndarray | None = None


def _stderr(samples, axis):
    n = samples.shape[axis]
    return np.std(samples, axis=axis, ddof=1) / math.sqrt(n)


def ensemble_mean(
    m: Model,
    s: MeasurementScheme,
    rho0: DensityMatrix,
    t_final: float,
    dt: float,
    sample_times,
    n_traj: int,
    master_seed: int,
    *,
    order: int = 1,
    batch_size: int = 4096,
    keep_states: bool = False,
    track_min_purity: bool = False,
) -> EnsembleResult:
    """Average observables over independently seeded trajectories.

    Trajectory ``i`` uses the seed ``derive_seed(master_seed, i)`` and so equals
    ``run_trajectory(..., seed=derive_seed(master_seed, i))``.
    """
    if n_traj < 2:
        raise ParameterError("an ensemble needs at least two trajectories")
    n_steps, times, steps = time_grid(t_final, dt, sample_times)
    d = m.dim
    pur = np.empty((len(times), n_traj))
    fid = np.empty((len(times), n_traj))
    rho_sum = np.zeros((len(times), d, d), dtype=complex)
    bloch = np.empty((len(times), n_traj, 3)) if d == 2 else None
    kept = np.empty((len(times), n_traj, d, d), dtype=complex) if keep_states else None
    min_pur = np.empty(n_traj) if track_min_purity else None
    for start in range(0, n_traj, batch_size):
        stop = min(n_traj, start + batch_size)
        seeds = [derive_seed(master_seed, i) for i in range(start, stop)]
        states, _, _, mp = simulate(m, s, rho0, dt, n_steps, steps, seeds, order=order, track_min_purity=track_min_purity)
        for j, t in enumerate(times):
            pur[j, start:stop] = purities(states[j])
            fid[j, start:stop] = _interaction_overlap(rho0.mat, states[j], m.hamiltonian, t)
            rho_sum[j] += states[j].sum(axis=0)
            if bloch is not None:
                bloch[j, start:stop] = bloch_components(states[j])
        if kept is not None:
            kept[:, start:stop] = states
        if min_pur is not None:
            min_pur[start:stop] = mp
    return EnsembleResult(
        times=times,
        n_traj=n_traj,
        mean_rho=rho_sum / n_traj,
        purity_mean=pur.mean(axis=1),
        purity_stderr=_stderr(pur, 1),
        fidelity_mean=fid.mean(axis=1),
        fidelity_stderr=_stderr(fid, 1),
        purity_samples=pur,
        fidelity_samples=fid,
        bloch_mean=bloch.mean(axis=1) if bloch is not None else None,
        bloch_stderr=_stderr(bloch, 1) if bloch is not None else None,
        states=kept,
        min_purity=min_pur,
    )


def solve_ume(m: Model, rho0: DensityMatrix, t_final: float, dt: float, sample_times, *, order: int = 2):
    """Deterministic UME solution at ``sample_times`` (list of DensityMatrix)."""
    n_steps, times, steps = time_grid(t_final, dt, sample_times)
    states, _, _, _ = simulate(m, MeasurementScheme(), rho0, dt, n_steps, steps, [0], order=order)
    return times, [DensityMatrix(states[j, 0], check=False) for j in range(len(times))]


def liouvillian(m: Model) -> np.ndarray:
    """UME generator acting on row-major ``rho.reshape(-1)``."""
    d = m.dim
    eye = np.eye(d)
    h, c = m.hamiltonian, m.collapse
    cdc = c.conj().T @ c
    return (
        -1j * (np.kron(h, eye) - np.kron(eye, h.T))
        + np.kron(c, c.conj())
        - 0.5 * np.kron(cdc, eye)
        - 0.5 * np.kron(eye, cdc.T)
    )


def ume_exact(m: Model, rho0: DensityMatrix, times) -> list:
    """Exact UME evolution by exponentiating the Liouvillian (reference solution)."""
    gen = liouvillian(m)
    v0 = rho0.mat.reshape(-1)
    d = m.dim
    return [DensityMatrix(0.5 * ((r := (expm(gen * t) @ v0).reshape(d, d)) + r.conj().T)) for t in times]
