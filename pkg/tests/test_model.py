"""Schedules, non-Hermitian models, shifts, and spectral scans."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhqmc.model import (
    NonHermitianModel,
    Schedule,
    constant,
    from_complex_sum,
    minimal_shift,
    spectral_summary,
    tabulated,
)
from nhqmc.pauli import PauliInputError, PauliString, PauliSum, to_matrix


def model_from(terms):
    return from_complex_sum(PauliSum.from_label_terms(terms))


class TestSchedule:
    def test_constant(self):
        s = constant(2.5)
        assert s.value(0.0) == 2.5
        assert s.value(7.0) == 2.5
        assert s.is_constant

    def test_piecewise_linear(self):
        s = tabulated([0.0, 1.0, 2.0], [0.0, 2.0, 0.0])
        assert s.value(0.5) == pytest.approx(1.0)
        assert s.value(1.5) == pytest.approx(1.0)
        np.testing.assert_allclose(s.value(np.array([0.0, 1.0])), [0.0, 2.0])

    def test_harmonic(self):
        s = Schedule("harmonic", (2.0, 3.0, 0.5))
        assert s.value(0.7) == pytest.approx(2.0 * np.sin(3.0 * 0.7 + 0.5))

    def test_validation(self):
        with pytest.raises(PauliInputError):
            Schedule("nope", (1.0,))
        with pytest.raises(PauliInputError):
            Schedule("constant", (1.0, 2.0))
        with pytest.raises(PauliInputError):
            Schedule("piecewise-linear", (0.0, 1.0, 0.0, 2.0))  # equal knots

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=-4, max_value=4, allow_nan=False),
           st.floats(min_value=0, max_value=3, allow_nan=False))
    def test_scaled(self, factor, t):
        for s in (constant(1.3), Schedule("harmonic", (1.0, 2.0, 0.1)),
                  tabulated([0.0, 3.0], [1.0, -1.0])):
            assert s.scaled(factor).value(t) == pytest.approx(
                factor * s.value(t), abs=1e-12
            )


class TestFromComplexSum:
    def test_pure_decay_split(self):
        # -i Z: empty Hermitian part, H_i = Z, minimal shift -1
        m = model_from([(-1.0j, "Z")])
        assert not m.hr_terms
        assert len(m.hi_terms) == 1
        assert m.shift.value(0.0) == pytest.approx(-1.0)

    def test_hermitian_input(self):
        m = model_from([(1.0, "X")])
        assert not m.hi_terms
        assert m.shift.value(0.0) == pytest.approx(0.0)

    def test_is_time_independent(self):
        m = model_from([(1.0 - 0.5j, "Z")])
        assert m.is_time_independent
        m.hr_terms = [(PauliString.from_label("Z"), Schedule("harmonic", (1, 1, 0)))]
        assert not m.is_time_independent


class TestKGenerator:
    def test_k_zero_is_hermitian_part(self):
        m = model_from([(1.0 - 0.3j, "Z"), (0.5, "X")])
        k0 = m.k_generator(0.0)
        assert np.allclose(to_matrix(k0), to_matrix(m.hr_sum(0.0)))

    def test_linear_combination(self):
        m = model_from([(1.0 - 0.3j, "Z")])
        expected = to_matrix(m.hr_sum(0.0)) + 2.0 * (
            to_matrix(m.hi_sum(0.0)) - m.shift.value(0.0) * np.eye(2)
        )
        assert np.allclose(to_matrix(m.k_generator(2.0)), expected)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(min_value=-50, max_value=50, allow_nan=False),
           st.integers(min_value=0, max_value=2**32 - 1))
    def test_always_hermitian(self, k, seed):
        rng = np.random.default_rng(seed)
        terms = [
            (complex(rng.normal(), rng.normal()), lbl)
            for lbl in ("XI", "ZZ", "IY", "YX")
        ]
        m = model_from(terms)
        km = to_matrix(m.k_generator(k))
        assert np.abs(km - km.conj().T).max() < 1e-10

    def test_terms_layout_consistent(self):
        m = model_from([(1.0 - 0.3j, "Z"), (0.5 - 0.2j, "X")])
        strings, r, i = m.k_generator_terms(0.0)
        for k in (-1.7, 0.0, 2.3):
            rebuilt = sum(
                (c * s.to_matrix() for s, c in zip(strings, r + k * i)),
                np.zeros((2, 2), dtype=complex),
            )
            assert np.allclose(rebuilt, to_matrix(m.k_generator(k)), atol=1e-12)

    def test_shift_enters_only_identity(self):
        # changing the shift by ds changes K(k) by -k*ds*I and nothing else
        m = model_from([(1.0 - 0.5j, "Z")])
        base = to_matrix(m.k_generator(1.5))
        m.shift = constant(m.shift.value(0.0) - 2.0)
        shifted = to_matrix(m.k_generator(1.5))
        assert np.allclose(shifted - base, 1.5 * 2.0 * np.eye(2), atol=1e-12)


class TestShiftAndPositivity:
    def test_minimal_shift_values(self):
        assert minimal_shift(model_from([(-1.0j, "Z")])).value(0.0) == pytest.approx(-1.0)
        m = model_from([(-0.3j, "Z"), (-0.5j, "I")])
        assert m.shift.value(0.0) == pytest.approx(0.2)

    def test_minimal_shift_time_dependent(self):
        m = model_from([(1.0, "X")])
        m.hi_terms = [(PauliString.from_label("Z"), Schedule("harmonic", (1.0, 1.0, 0.0)))]
        sched = minimal_shift(m, T=2.0)
        for t in (0.0, 0.7, 1.9):
            lam = np.linalg.eigvalsh(to_matrix(m.hi_sum(t))).min()
            assert sched.value(t) == pytest.approx(lam, abs=1e-2)

    def test_check_positivity(self):
        m = model_from([(-1.0j, "Z")])
        m.check_positivity(1.0)  # minimal shift is admissible
        m.shift = constant(0.0)  # H_i - 0 = Z is not PSD
        with pytest.raises(PauliInputError):
            m.check_positivity(1.0)

    def test_shifted_part_psd_at_minimal_shift(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            terms = [
                (complex(rng.normal(), rng.normal()), lbl)
                for lbl in ("XI", "ZZ", "IY")
            ]
            m = model_from(terms)
            lam = np.linalg.eigvalsh(to_matrix(m.hi_sum(0.0, shifted=True))).min()
            assert lam >= -1e-9


class TestSpectralSummary:
    def test_z_decay(self):
        m = model_from([(-1.0j, "Z")])
        s = spectral_summary(m, 1.0)
        assert s.delta_ei == pytest.approx(2.0)
        assert s.e_avg == pytest.approx(2.0)
        np.testing.assert_allclose(s.e_i_min, -1.0)
        np.testing.assert_allclose(s.e_i_max, 1.0)

    def test_hermitian_model_has_zero_bandwidth(self):
        s = spectral_summary(model_from([(1.0, "X")]), 1.0)
        assert s.delta_ei == 0.0
        assert s.max_norm == pytest.approx(1.0)

    def test_delta_ei_shift_invariant(self):
        m = model_from([(1.0 - 0.7j, "Z"), (0.3 - 0.2j, "X")])
        a = spectral_summary(m, 1.0).delta_ei
        m.shift = constant(m.shift.value(0.0) - 5.0)
        b = spectral_summary(m, 1.0).delta_ei
        assert a == pytest.approx(b, abs=1e-12)

    def test_h_tilde_matrix(self):
        m = model_from([(1.0 - 0.5j, "Z")])
        expected = to_matrix(m.hr_sum(0.0)) - 1j * (
            to_matrix(m.hi_sum(0.0)) - m.shift.value(0.0) * np.eye(2)
        )
        assert np.allclose(m.h_tilde_matrix(0.0), expected)
