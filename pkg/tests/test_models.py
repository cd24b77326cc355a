from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pointersieve.errors import DomainError, InvalidStateError, ReductionError, StepSizeError, TruncationError
from pointersieve.models import (
    AtomParams,
    QbmParams,
    SubspaceState,
    atom_model,
    b_ensemble,
    cat_ket,
    most_mixed_subspace_state,
    phono_ensemble,
    qbm_model,
    subspace_b_step,
    subspace_phono_step,
    subspace_reduce,
    subspace_state_matrix,
    tau_of_t,
)
from pointersieve.qmatrix import SIGMA_X, SIGMA_Z, DensityMatrix, coherent_state
from pointersieve.unravel import MeasurementScheme, Stepper


class TestAtom:
    def test_zero_rabi(self):
        assert not np.any(atom_model(AtomParams(0.0)).hamiltonian)

    def test_number_operator_projects_on_excited(self):
        c = atom_model(AtomParams(1.0)).collapse
        np.testing.assert_allclose(c.conj().T @ c, (np.eye(2) + SIGMA_Z) / 2)

    def test_hamiltonian_commutes_with_sigma_x(self):
        h = atom_model(AtomParams(3.0)).hamiltonian
        np.testing.assert_allclose(h @ SIGMA_X - SIGMA_X @ h, 0)

    def test_negative_rabi_rejected(self):
        with pytest.raises(ValueError):
            AtomParams(-1.0)


class TestQbm:
    def test_truncation_error(self):
        with pytest.raises(TruncationError) as exc:
            qbm_model(QbmParams(20, 4.0))
        assert exc.value.required_dim > 20

    def test_dimensions(self):
        m = qbm_model(QbmParams(32, 3.0))
        assert m.dim == 32 and not np.any(m.hamiltonian)

    def test_click_leaves_coherent_state_unchanged(self):
        p = QbmParams(32, 3 * np.exp(0.5j))
        rho = coherent_state(p.z, p.basis)
        st_ = Stepper(qbm_model(p), MeasurementScheme("jump", R=0, eta=1), 1e-3)
        out, dn = st_.jump_batch(rho.mat[None], np.array([0.0]))
        assert dn[0] == 1
        # exact up to the weight of the top Fock level (~6e-9 at D=32, r=3)
        assert np.trace(out[0] @ rho.mat).real >= 1 - 1e-8


class TestSubspace:
    p = QbmParams(32, 3.0)

    # |+z> and |-z> overlap by exp(-2 r^2); after orthonormalisation C picks
    # up corrections of that order (~7e-9 at r=3)
    def test_pure_plus(self):
        s = subspace_reduce(coherent_state(3.0, self.p.basis), self.p)
        assert s.A == pytest.approx(1, abs=1e-12) and abs(s.C) <= math.exp(-18)

    def test_most_mixed(self):
        s = subspace_reduce(most_mixed_subspace_state(self.p), self.p)
        assert s.A == pytest.approx(0, abs=1e-12) and abs(s.C) <= math.exp(-18)

    def test_cat(self):
        s = subspace_reduce(DensityMatrix.from_ket(cat_ket(self.p)), self.p)
        assert s.A == pytest.approx(0, abs=1e-12)
        assert s.C == pytest.approx(0.5, abs=1e-12)

    @given(st.floats(0, 1))
    def test_mixtures(self, w):
        b = self.p.basis
        rho = DensityMatrix.mixture([w, 1 - w], [coherent_state(3.0, b), coherent_state(-3.0, b)])
        s = subspace_reduce(rho, self.p)
        assert s.A == pytest.approx(2 * w - 1, abs=1e-6)
        assert abs(s.C) <= 1e-6

    @given(st.floats(-0.99, 0.99), st.floats(0, 1), st.floats(0, 2 * math.pi))
    def test_embed_reduce_round_trip(self, a, frac, ang):
        c = frac * math.sqrt(1 - a * a) / 2 * complex(math.cos(ang), math.sin(ang))
        s = subspace_reduce(subspace_state_matrix(SubspaceState(a, c), self.p), self.p)
        assert s.A == pytest.approx(a, abs=1e-10)
        assert abs(s.C - c) <= 1e-10

    def test_leakage_error(self):
        with pytest.raises(ReductionError):
            subspace_reduce(coherent_state(0, self.p.basis), self.p)

    def test_small_r_rejected(self):
        p = QbmParams(20, 1.0)
        with pytest.raises(DomainError):
            subspace_reduce(coherent_state(1.0, p.basis), p)

    def test_positivity_invariant(self):
        with pytest.raises(InvalidStateError):
            SubspaceState(0.6, 0.5)
        SubspaceState(0.6, 0.4)

    @given(st.floats(-1 + 1e-8, 1 - 1e-8))
    def test_tanh_atanh_round_trip(self, a):
        assert abs(math.tanh(SubspaceState(a).B) - a) <= 1e-12


class TestTau:
    def test_orthogonal_quadrature(self):
        assert tau_of_t(3.0, 0.5, 4.0, math.pi / 2, 0.0) == pytest.approx(0, abs=1e-30)

    def test_arithmetic(self):
        assert tau_of_t(1.0, 0.1, 5.0, 0.3, 0.3) == pytest.approx(10.0)

    def test_linear(self):
        base = tau_of_t(1.0, 0.1, 3.0, 0.2, 0.0)
        assert tau_of_t(2.5, 0.1, 3.0, 0.2, 0.0) == pytest.approx(2.5 * base)
        assert tau_of_t(1.0, 0.3, 3.0, 0.2, 0.0) == pytest.approx(3 * base)


class TestPhono:
    def test_population_untouched(self):
        rng = np.random.default_rng(0)
        s = SubspaceState(0.3, 0.2j)
        for _ in range(500):
            s2 = subspace_phono_step(s, 3.0, 1.0, 1e-3, rng)
            assert s2.A == s.A
            s = s2

    def test_deterministic_decay(self):
        a, c = phono_ensemble(SubspaceState(0.0, 0.4), 3.0, 0.0, 1e-4, 2000, 2, 0, [0, 1000, 2000])
        t = np.array([0.0, 0.1, 0.2])
        np.testing.assert_allclose(np.abs(c[:, 0]), 0.4 * np.exp(-18 * t), rtol=5e-3)

    def test_zero_coherence_stays_zero(self):
        _, c = phono_ensemble(SubspaceState(0.5, 0.0), 3.0, 1.0, 1e-3, 500, 20, 1, [500])
        assert np.all(c == 0)

    def test_step_size_guard(self):
        with pytest.raises(StepSizeError):
            subspace_phono_step(SubspaceState(0.0), 3.0, 1.0, 0.01, np.random.default_rng(0))


class TestBSde:
    def test_unstable_fixed_point(self):
        class Silent:
            def standard_normal(self):
                return 0.0

        b = 0.0
        for _ in range(100):
            b = subspace_b_step(b, 1e-3, Silent())
        assert b == 0.0

    def test_saturated_drift(self):
        class Silent:
            def standard_normal(self):
                return 0.0

        b = 5.0
        for _ in range(1000):
            b = subspace_b_step(b, 1e-3, Silent())
        assert (b - 5.0) / 1.0 == pytest.approx(1.0, abs=1e-3)

    def test_step_guard(self):
        with pytest.raises(StepSizeError):
            subspace_b_step(0.0, 2e-3, np.random.default_rng(0))

    def test_ensemble_matches_single_steps(self):
        ens = b_ensemble(3, 0.01, 1e-3, 5, [0.01])
        # trajectory 0 through the scalar step with the same derived stream
        from pointersieve.rng import derive_seed

        rng = np.random.default_rng(derive_seed(5, 0))
        b = 0.0
        for _ in range(10):
            b = subspace_b_step(b, 1e-3, rng)
        assert ens.samples[0, 0] == pytest.approx(b, abs=1e-14)

    def test_starts_at_zero_and_counts_flips(self):
        ens = b_ensemble(50, 1.0, 1e-3, 2, [0.0, 1.0], count_flips=True)
        assert np.all(ens.samples[0] == 0)
        assert ens.flips.shape == (1000,) and ens.flips.sum() > 0
