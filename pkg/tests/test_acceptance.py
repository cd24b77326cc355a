"""The eleven acceptance criteria at their stated sizes and tolerances.

Each test prints one ``[PASS]``/``[FAIL]`` line (collected again in the
terminal summary).  Criterion 7 cannot be met with the prescribed Fock
truncation D=32 at |z|=3; it runs unchanged and is marked as an expected
failure.
"""

from __future__ import annotations

import pytest

from pointersieve import validate

from conftest import ACCEPTANCE_LINES


def _run(number):
    res = validate.CRITERIA[number](validate.DEFAULT_SEED)
    line = res.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    return res


def test_criterion_1_purity_loss_linear_in_efficiency():
    res = _run(1)
    assert res.passed, res.details
    assert res.seconds < 120


def test_criterion_2_purity_gain_vs_phase():
    res = _run(2)
    assert res.passed, res.details
    assert res.seconds < 300


def test_criterion_3_x_over_y_gain_ratio():
    assert _run(3).passed


def test_criterion_4_a_distribution():
    res = _run(4)
    assert res.passed, res.details
    assert res.seconds < 180


def test_criterion_5_flip_law():
    assert _run(5).passed


def test_criterion_6_atom_pointer_states():
    assert _run(6).passed


@pytest.mark.xfail(
    strict=True,
    reason="D=32 truncates |z|=3 with top-level weight q=5.7e-9, so F=-r^2 q(1-q)=5.2e-8 and P=1.0e-7 exceed 1e-8",
)
def test_criterion_7_coherent_state_pointers():
    res = _run(7)
    assert res.passed, res.details


def test_criterion_8_unraveling_consistency():
    assert _run(8).passed


def test_criterion_9_unit_efficiency_purity():
    assert _run(9).passed


def test_criterion_10_phonodetection_nil_result():
    assert _run(10).passed


def test_criterion_11_full_model_vs_reduced_sde():
    res = _run(11)
    assert res.passed, res.details
    assert res.seconds < 900
