from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointersieve.errors import DimensionError, InvalidStateError, TruncationError
from pointersieve.qmatrix import (
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Y,
    BlochVector,
    DensityMatrix,
    FockBasis,
    annihilator,
    bloch_to_density,
    coherent_ket,
    coherent_state,
    coherent_tail,
    density_to_bloch,
    fidelity_to,
    number_state,
    purity,
    required_fock_dim,
)
from pointersieve.sieve import fibonacci_sphere

I2 = np.eye(2)


def ball_points():
    return st.tuples(
        st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)
    ).filter(lambda v: v[0] ** 2 + v[1] ** 2 + v[2] ** 2 <= 1)


class TestBloch:
    def test_center_is_maximally_mixed(self):
        np.testing.assert_allclose(bloch_to_density(BlochVector(0, 0, 0)).mat, I2 / 2)

    def test_south_pole_is_ground(self):
        np.testing.assert_allclose(bloch_to_density(BlochVector(0, 0, -1)).mat, np.diag([0, 1]))

    def test_x_eigenstate(self):
        rho = bloch_to_density(BlochVector(1, 0, 0))
        np.testing.assert_allclose(rho.mat, (I2 + SIGMA_X) / 2)
        assert purity(rho) == pytest.approx(1.0, abs=1e-15)

    def test_density_to_bloch_examples(self):
        assert density_to_bloch(DensityMatrix(I2 / 2)).as_array() == pytest.approx([0, 0, 0])
        assert density_to_bloch(DensityMatrix((I2 + SIGMA_Y) / 2)).as_array() == pytest.approx([0, 1, 0])
        assert density_to_bloch(DensityMatrix(np.diag([0.75, 0.25]))).as_array() == pytest.approx([0, 0, 0.5])

    def test_outside_ball_rejected(self):
        with pytest.raises(InvalidStateError):
            BlochVector(1, 1, 0)

    def test_wrong_dimension_rejected(self):
        with pytest.raises(DimensionError):
            density_to_bloch(DensityMatrix(np.eye(3) / 3))

    def test_round_trip_on_grid(self):
        pts = fibonacci_sphere(100)
        for scale in (1.0, 0.5):
            for p in pts * scale:
                b = BlochVector(*p)
                back = density_to_bloch(bloch_to_density(b)).as_array()
                assert np.max(np.abs(back - p)) <= 1e-12

    @given(ball_points())
    def test_purity_identity(self, v):
        rho = bloch_to_density(BlochVector(*v))
        assert purity(rho) == pytest.approx((1 + sum(c * c for c in v)) / 2, abs=1e-12)

    @given(ball_points())
    def test_fidelity_to_self_is_purity(self, v):
        rho = bloch_to_density(BlochVector(*v))
        assert fidelity_to(rho, rho) == pytest.approx(purity(rho), abs=1e-12)


class TestDensityMatrix:
    def test_purity_examples(self):
        assert purity(DensityMatrix(I2 / 2)) == 0.5
        assert purity(DensityMatrix.from_ket([1, 1j])) == pytest.approx(1.0)
        assert purity(DensityMatrix(np.diag([0.75, 0.25]))) == pytest.approx(0.625)

    def test_fidelity_examples(self):
        e = DensityMatrix(np.diag([1, 0]))
        g = DensityMatrix(np.diag([0, 1]))
        assert fidelity_to(e, e) == 1.0
        assert fidelity_to(e, g) == 0.0
        assert fidelity_to(DensityMatrix(I2 / 2), DensityMatrix(I2 / 2)) == 0.5

    def test_fidelity_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            fidelity_to(DensityMatrix(I2 / 2), DensityMatrix(np.eye(3) / 3))

    @pytest.mark.parametrize(
        "mat",
        [
            [[1, 1], [0, 0]],  # not Hermitian
            [[0.6, 0], [0, 0.6]],  # trace
            [[1.5, 0], [0, -0.5]],  # negative eigenvalue
            [[np.nan, 0], [0, 1]],
        ],
    )
    def test_invalid_rejected(self, mat):
        with pytest.raises(InvalidStateError):
            DensityMatrix(np.array(mat, dtype=complex))

    def test_immutable(self):
        rho = DensityMatrix(I2 / 2)
        with pytest.raises(ValueError):
            rho.mat[0, 0] = 1


class TestFock:
    def test_two_level_annihilator_is_sigma_minus(self):
        a = annihilator(FockBasis(2))
        np.testing.assert_array_equal(a @ np.array([0, 1]), [1, 0])
        # |0> <-> |g>, |1> <-> |e>: same matrix after swapping the basis order
        perm = np.array([[0, 1], [1, 0]])
        np.testing.assert_array_equal(perm @ a @ perm, SIGMA_MINUS)

    def test_commutator_except_last_level(self):
        a = annihilator(FockBasis(12))
        comm = a @ a.conj().T - a.conj().T @ a
        np.testing.assert_allclose(comm[:-1, :-1], np.eye(11), atol=1e-12)
        assert comm[-1, -1] == pytest.approx(-11)

    def test_number_operator(self):
        a = annihilator(FockBasis(10))
        assert np.diag(a.conj().T @ a).real == pytest.approx(np.arange(10))

    def test_coherent_zero_is_vacuum(self):
        np.testing.assert_allclose(coherent_state(0, FockBasis(5)).mat, number_state(0, FockBasis(5)).mat)

    def test_coherent_mean_amplitude(self):
        b = FockBasis(20)
        rho = coherent_state(1.0, b)
        assert rho.expect(annihilator(b)) == pytest.approx(1.0, abs=1e-6)

    def test_coherent_eigen_residual(self):
        b = FockBasis(20)
        z = np.exp(0.4j)
        psi = coherent_ket(z, b)
        assert np.linalg.norm(annihilator(b) @ psi - z * psi) <= 1e-4

    def test_coherent_eigen_below_top_level(self):
        # truncation only breaks a|z> = z|z> in the top Fock component
        b = FockBasis(32)
        z = 3 * np.exp(0.4j)
        psi = coherent_ket(z, b)
        res = annihilator(b) @ psi - z * psi
        assert np.max(np.abs(res[:-1])) <= 1e-12
        assert abs(res[-1]) == pytest.approx(3 * abs(psi[-1]))

    @pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
    def test_cat_overlap(self, r):
        b = FockBasis(30)
        ov = np.vdot(coherent_ket(r, b), coherent_ket(-r, b))
        assert ov.real == pytest.approx(math.exp(-2 * r * r), rel=1e-8, abs=1e-14)

    def test_truncation_error_names_dimension(self):
        with pytest.raises(TruncationError) as exc:
            coherent_state(4.0, FockBasis(20))
        assert exc.value.required_dim == required_fock_dim(4.0)
        assert coherent_tail(16.0, exc.value.required_dim) <= 1e-8
        assert coherent_tail(16.0, exc.value.required_dim - 1) > 1e-8

    def test_tail_for_default_truncation(self):
        # frozen from scipy.stats.poisson.sf(31, 9)
        assert coherent_tail(9.0, 32) == pytest.approx(2.2056e-9, rel=1e-3)
        assert required_fock_dim(3.0) == 31
