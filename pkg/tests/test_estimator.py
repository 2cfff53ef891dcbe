"""Ratio estimator: sampling plan, readout, Monte Carlo loops, bounds."""
import math
import warnings

import numpy as np
import pytest

from nhqmc.estimator import (
    DenominatorVanishedError,
    EstimatorError,
    ObservableSpec,
    QuadratureOverlapCache,
    ReadoutConsistencyError,
    SamplingPlan,
    block_rng,
    bound_denominator,
    estimate,
    estimate_continuous,
    estimate_quadrature,
    exact_nonunitary_state,
    exact_ratio,
    lchs_vector,
    overlap,
    plan_samples,
    readout,
)
from nhqmc.kernel import KernelSpec
from nhqmc.model import constant, from_complex_sum, spectral_summary
from nhqmc.pauli import PauliSum, to_matrix
from nhqmc.propagate import PropagatorSpec, basis_state


def qite_model():
    """Pure decay H = -i Z: <X>(T) on |+> equals 1 / cosh(2T)."""
    return from_complex_sum(PauliSum.from_label_terms([(-1.0j, "Z")]))


def rabi_model():
    """Hermitian H = X: <Z>(T) on |0> equals cos(2T)."""
    return from_complex_sum(PauliSum.from_label_terms([(1.0, "X")]))


PLUS = np.array([1.0, 1.0]) / math.sqrt(2.0)
OBS_X = PauliSum.from_label_terms([(1.0, "X")])
OBS_Z = PauliSum.from_label_terms([(1.0, "Z")])


def default_rule(model, T, eps=1e-3, **kw):
    kern = KernelSpec("cauchy", eps)
    return kern, kern.quadrature_rule(T, spectral_summary(model, T).max_norm, **kw)


class TestPlanner:
    def test_worked_example(self):
        p = plan_samples(delta=0.05, eta=0.1, O_l1=1.0, g_l1=1.0)
        assert p.K == pytest.approx(2.0 * math.log(8.0 / 0.05), abs=1e-12)
        assert p.K == pytest.approx(10.1503476, abs=1e-6)
        assert p.n_N == p.n_D == 9136

    def test_eta_scaling(self):
        a = plan_samples(0.05, 0.1, 1.0, 1.0).n_N
        b = plan_samples(0.05, 0.05, 1.0, 1.0).n_N
        assert b == pytest.approx(4 * a, rel=1e-3)

    def test_duration_factor(self):
        a = plan_samples(0.05, 0.1, 1.0, 1.0).n_N
        b = plan_samples(0.05, 0.1, 1.0, 1.0, T=1.0, delta_ei=0.5).n_N
        assert b / a == pytest.approx(math.exp(2.0), rel=1e-3)

    def test_pg_variant(self):
        a = plan_samples(0.05, 0.1, 1.0, 1.0).n_N
        b = plan_samples(0.05, 0.1, 1.0, 1.0, p_g=0.5).n_N
        assert b == pytest.approx(4 * a, rel=1e-3)

    def test_ceiling_warns(self):
        with pytest.warns(UserWarning, match="exceeds"):
            plan_samples(0.05, 0.01, 10.0, 1.0, T=10.0, delta_ei=2.0)

    def test_validation(self):
        with pytest.raises(EstimatorError):
            plan_samples(0.0, 0.1, 1.0, 1.0)
        with pytest.raises(EstimatorError):
            plan_samples(0.05, 0.1, 0.0, 1.0)
        with pytest.raises(EstimatorError):
            plan_samples(0.05, 0.1, 1.0, 1.0, p_g=1.5)


class TestDenominatorBounds:
    def test_hermitian_model(self):
        lo, hi = bound_denominator(rabi_model(), 1.0)
        assert lo == pytest.approx(1.0, abs=1e-12)
        assert hi == pytest.approx(1.0, abs=1e-12)

    def test_pure_decay(self):
        # H_i = Z with E_i0 = -1: D in [e^{-4}, 1] at T = 1
        lo, hi = bound_denominator(qite_model(), 1.0)
        assert lo == pytest.approx(math.exp(-4.0), rel=1e-10)
        assert hi == pytest.approx(1.0, abs=1e-12)

    def test_bounds_bracket_true_denominator(self):
        model = qite_model()
        T = 0.8
        lo, hi = bound_denominator(model, T)
        # shifted-picture state: e^{-i H~ T} = e^{shift T} u(T)
        phi = exact_nonunitary_state(model, PLUS, T) * math.exp(
            model.shift.value(0.0) * T
        )
        d = float(np.vdot(phi, phi).real)
        assert lo - 1e-10 <= d <= hi + 1e-10


class TestReadout:
    def test_exact_passthrough(self):
        assert readout(0.3 - 0.4j) == 0.3 - 0.4j

    def test_unit_bound_enforced(self):
        with pytest.raises(ReadoutConsistencyError):
            readout(1.2 + 0.0j)

    def test_shot_statistics(self):
        rng = np.random.default_rng(0)
        target = 0.42 - 0.17j
        vals = np.array(
            [readout(target, "shots", 400, rng) for _ in range(3000)]
        )
        # unbiased reconstruction X_hat - i Y_hat with E = Re + i Im
        se_re = vals.real.std(ddof=1) / math.sqrt(len(vals))
        se_im = vals.imag.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.real.mean() - target.real) < 4 * se_re
        assert abs(vals.imag.mean() - target.imag) < 4 * se_im
        # per-shot variance follows the binomial law for the X register
        px = (1 + target.real) / 2
        assert vals.real.std(ddof=1) == pytest.approx(
            math.sqrt(4 * px * (1 - px) / 400), rel=0.1
        )

    def test_bad_mode(self):
        with pytest.raises(EstimatorError):
            readout(0.1, "fuzzy")
        with pytest.raises(EstimatorError):
            readout(0.1, "shots", 0)


class TestObservableSpec:
    def test_distribution(self):
        obs = ObservableSpec.from_sum(
            PauliSum.from_label_terms([(3.0, "X"), (-4.0j, "Z")])
        )
        assert obs.l1 == pytest.approx(7.0)
        np.testing.assert_allclose(sorted(obs.probs), [3 / 7, 4 / 7])
        np.testing.assert_allclose(np.abs(obs.phases), 1.0)

    def test_zero_observable_rejected(self):
        with pytest.raises(EstimatorError):
            ObservableSpec.from_sum(PauliSum(1, []))


class TestOverlap:
    def test_identity_term_equal_k(self):
        model = qite_model()
        val = overlap(model, 0.7, 0.7, None, 0.5, PropagatorSpec("exact"), PLUS)
        assert val == pytest.approx(1.0, abs=1e-10)

    def test_hermitian_model_k_independent(self):
        model = rabi_model()
        spec = PropagatorSpec("exact")
        a = overlap(model, 0.0, 0.0, None, 1.0, spec, basis_state(1, "0"))
        b = overlap(model, -2.3, 5.1, None, 1.0, spec, basis_state(1, "0"))
        assert a == pytest.approx(b, abs=1e-12)


class TestQuadratureEstimate:
    def test_imaginary_time_value(self):
        model = qite_model()
        kern, rule = default_rule(model, 0.5)
        res = estimate_quadrature(model, OBS_X, PLUS, 0.5, rule)
        assert res.ratio.real == pytest.approx(1.0 / math.cosh(1.0), abs=2e-3)
        assert abs(res.ratio.imag) < 1e-6

    def test_rabi_value(self):
        model = rabi_model()
        _, rule = default_rule(model, 1.0)
        res = estimate_quadrature(model, OBS_Z, basis_state(1, "0"), 1.0, rule)
        assert res.ratio.real == pytest.approx(math.cos(2.0), abs=2e-3)

    def test_t_zero_limit(self):
        model = qite_model()
        kern = KernelSpec("cauchy", 1e-3)
        rule = kern.quadrature_rule(1e-9, 1.0)
        res = estimate_quadrature(model, OBS_X, PLUS, 0.0, rule)
        assert res.ratio.real == pytest.approx(1.0, abs=2e-3)

    def test_denominator_in_bounds(self):
        model = qite_model()
        _, rule = default_rule(model, 1.0)
        res = estimate_quadrature(model, OBS_X, PLUS, 1.0, rule)
        lo, hi = bound_denominator(model, 1.0)
        d = res.denominator.real
        assert abs(res.denominator.imag) < 1e-9
        assert lo - 5e-3 <= d <= hi + 5e-3

    def test_shift_invariance(self):
        # the physical ratio must not depend on the admissible shift choice
        model_a = qite_model()
        model_b = qite_model()
        model_b.shift = constant(model_b.shift.value(0.0) - 0.5)
        eps = 1e-3
        _, rule_a = default_rule(model_a, 0.5, eps)
        kern = KernelSpec("cauchy", eps)
        rule_b = kern.quadrature_rule(
            0.5, spectral_summary(model_b, 0.5).max_norm
        )
        a = estimate_quadrature(model_a, OBS_X, PLUS, 0.5, rule_a).ratio.real
        b = estimate_quadrature(model_b, OBS_X, PLUS, 0.5, rule_b).ratio.real
        assert abs(a - b) <= 5 * eps

    def test_lchs_vector_reconstruction(self):
        model = qite_model()
        _, rule = default_rule(model, 1.0)
        shift = model.shift.value(0.0)
        phi = lchs_vector(model, PLUS, 1.0, rule) * math.exp(-shift * 1.0)
        target = exact_nonunitary_state(model, PLUS, 1.0)
        assert np.linalg.norm(phi - target) <= 2e-3


class TestMonteCarlo:
    def test_matches_quadrature_across_sample_sizes(self):
        model = qite_model()
        kern, rule = default_rule(model, 0.5, eps=0.01)
        kern = KernelSpec("cauchy", 0.01)
        truth = estimate_quadrature(
            model, OBS_X, PLUS, 0.5, kern.quadrature_rule(0.5, 2.2)
        ).ratio.real
        for n, seed in ((1000, 1), (10_000, 2), (100_000, 3)):
            plan = SamplingPlan(0.05, 0.1, 0.0, n, n)
            res = estimate(
                model, OBS_X, PLUS, 0.5, kern, PropagatorSpec("exact"), plan,
                master_seed=seed,
            )
            assert abs(res.ratio.real - truth) < 3 * res.ratio_se + 1e-3

    def test_hermitian_model_zero_variance(self):
        # for a Hermitian model every draw gives the same ratio sample
        model = rabi_model()
        kern = KernelSpec("cauchy", 0.01)
        plan = SamplingPlan(0.05, 0.1, 0.0, 500, 500)
        res = estimate(
            model, OBS_Z, basis_state(1, "0"), 1.0, kern,
            PropagatorSpec("exact"), plan, master_seed=0,
        )
        assert res.ratio.real == pytest.approx(math.cos(2.0), abs=1e-9)
        assert res.ratio_se < 1e-12

    def test_identity_observable_is_one(self):
        model = qite_model()
        kern = KernelSpec("cauchy", 0.01)
        plan = SamplingPlan(0.05, 0.1, 0.0, 20_000, 20_000)
        res = estimate(
            model, PauliSum.from_label_terms([(1.0, "I")]), PLUS, 0.7, kern,
            PropagatorSpec("exact"), plan, master_seed=5,
        )
        assert abs(res.ratio.real - 1.0) < 3 * res.ratio_se + 1e-3

    def test_determinism_and_worker_independence(self):
        model = qite_model()
        kern = KernelSpec("cauchy", 0.01)
        plan = SamplingPlan(0.05, 0.1, 0.0, 3000, 3000)
        runs = [
            estimate(
                model, OBS_X, PLUS, 0.5, kern, PropagatorSpec("exact"), plan,
                master_seed=99,
            )
            for _ in range(2)
        ]
        assert runs[0].ratio == runs[1].ratio
        assert runs[0].numerator == runs[1].numerator

    def test_block_rng_streams_disjoint(self):
        a = block_rng(7, 0, 0).random(4)
        b = block_rng(7, 1, 0).random(4)
        c = block_rng(7, 0, 1).random(4)
        assert not np.allclose(a, b)
        assert not np.allclose(a, c)
        assert np.allclose(a, block_rng(7, 0, 0).random(4))

    def test_shots_mode_agrees(self):
        model = qite_model()
        kern = KernelSpec("cauchy", 0.01)
        plan = SamplingPlan(0.05, 0.1, 0.0, 20_000, 20_000)
        res = estimate(
            model, OBS_X, PLUS, 0.5, kern, PropagatorSpec("exact"), plan,
            readout_mode="shots", shots=100, master_seed=4,
        )
        assert abs(res.ratio.real - 1.0 / math.cosh(1.0)) < 3 * res.ratio_se + 5e-3

    def test_paired_mode_runs(self):
        model = qite_model()
        kern = KernelSpec("cauchy", 0.01)
        plan = SamplingPlan(0.05, 0.1, 0.0, 4000, 4000)
        res = estimate(
            model, OBS_X, PLUS, 0.5, kern, PropagatorSpec("exact"), plan,
            master_seed=6, paired=True,
        )
        assert abs(res.ratio.real - 1.0 / math.cosh(1.0)) < 3 * res.ratio_se + 5e-3

    def test_continuous_ratio(self):
        model = qite_model()
        kern = KernelSpec("cauchy", 0.05)
        plan = SamplingPlan(0.05, 0.1, 0.0, 20_000, 20_000)
        res = estimate_continuous(model, OBS_X, PLUS, 0.5, kern, 0.05, plan, master_seed=7)
        # attenuation weights cancel in the ratio; truncation adds a small bias
        assert abs(res.ratio.real - 1.0 / math.cosh(1.0)) < 3 * res.ratio_se + 0.03

    def test_denominator_guard(self):
        # |0> sits on the fast-decaying mode of Z + 1: D ~ e^{-16} at T = 4
        model = qite_model()
        kern = KernelSpec("cauchy", 0.01)
        plan = SamplingPlan(0.05, 0.1, 0.0, 200, 200)
        with pytest.raises(DenominatorVanishedError):
            estimate(
                model, OBS_X, basis_state(1, "0"), 4.0, kern,
                PropagatorSpec("exact"), plan, master_seed=0,
            )


class TestExactReferences:
    def test_exact_ratio_values(self):
        assert exact_ratio(qite_model(), OBS_X, PLUS, 0.5) == pytest.approx(
            1.0 / math.cosh(1.0), abs=1e-10
        )
        assert exact_ratio(rabi_model(), OBS_Z, basis_state(1, "0"), 1.0) == pytest.approx(
            math.cos(2.0), abs=1e-10
        )

    def test_exact_state_time_dependent_path(self):
        # H(t) = -i sin(t) Z commutes with itself: u(T) = exp(-(1 - cos T) Z)
        from nhqmc.model import Schedule
        from nhqmc.pauli import PauliString

        model = from_complex_sum(
            [(-1.0j, PauliString.from_label("Z"), Schedule("harmonic", (1.0, 1.0, 0.0)))],
            n_qubits=1,
            T=1.2,
        )
        phi = exact_nonunitary_state(model, PLUS, 1.2)
        theta = 1.0 - math.cos(1.2)
        want = np.array([math.exp(-theta), math.exp(theta)]) / math.sqrt(2.0)
        assert np.allclose(phi, want, atol=1e-8)

    def test_cache_matches_direct_overlap(self):
        model = qite_model()
        _, rule = default_rule(model, 1.0, eps=0.01)
        cache = QuadratureOverlapCache(model, rule, PLUS, PLUS)
        for t in (0.3, 1.0):
            phi = lchs_vector(model, PLUS, t, rule)
            assert cache.numerator(t) == pytest.approx(
                complex(np.vdot(PLUS, phi)), abs=1e-12
            )
