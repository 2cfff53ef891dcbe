"""Kernel families: truncation, norms, sampling, quadrature rules."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nhqmc.kernel import KernelError, KernelSpec, c_beta, l1_norm, make_kernel


class TestValues:
    def test_cauchy_closed_form(self):
        k = KernelSpec("cauchy", 0.01)
        assert k.g_value(0.0) == pytest.approx(1.0 / math.pi)
        assert k.g_value(1.0) == pytest.approx(1.0 / (2.0 * math.pi))
        assert k.phase(3.7) == pytest.approx(1.0)  # real positive everywhere

    def test_beta_at_origin(self):
        b = KernelSpec("beta", 0.01, beta=0.5)
        # f(0) = 1 / (C_beta e^{1})
        assert b.g_value(0.0) == pytest.approx(1.0 / (c_beta(0.5) * math.e))

    def test_beta_phase_is_unit(self):
        b = KernelSpec("beta", 0.01, beta=0.5)
        ph = np.asarray(b.phase(np.linspace(-b.k_c, b.k_c, 64)))
        np.testing.assert_allclose(np.abs(ph), 1.0, atol=1e-12)

    def test_c_beta(self):
        assert c_beta(1.0) == pytest.approx(2.0 * math.pi * math.exp(-2.0))


class TestTruncation:
    def test_cauchy_kc_values(self):
        assert KernelSpec("cauchy", 0.01).k_c == pytest.approx(63.65674116, abs=1e-6)
        assert KernelSpec("cauchy", 0.1).k_c == pytest.approx(6.313751515, abs=1e-7)

    def test_cauchy_mass(self):
        k = KernelSpec("cauchy", 0.1)
        assert k.mass == pytest.approx(0.9, abs=1e-12)
        assert k.l1_full == 1.0

    def test_beta_kc_solves_mass_condition(self):
        b = KernelSpec("beta", 0.05, beta=0.5)
        tail, _ = quad(lambda k: abs(b.g_value(k)), -b.k_c, b.k_c, limit=400)
        assert tail == pytest.approx((1.0 - 0.05) * b.l1_full, rel=1e-8)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(min_value=1e-4, max_value=0.4), st.floats(min_value=1.01, max_value=4.0))
    def test_kc_monotone_in_eps(self, eps, factor):
        k = KernelSpec("cauchy", eps)
        assert k.truncation_kc(eps * factor) < k.truncation_kc(eps)

    def test_bad_parameters(self):
        with pytest.raises(KernelError):
            KernelSpec("lorentz", 0.01)
        with pytest.raises(KernelError):
            KernelSpec("cauchy", 0.0)
        with pytest.raises(KernelError):
            KernelSpec("beta", 0.01)  # missing beta
        with pytest.raises(KernelError):
            KernelSpec("beta", 0.01, beta=1.5)

    def test_l1_norm_helper(self):
        assert l1_norm(make_kernel("cauchy", 0.01)) == 1.0
        b = make_kernel("beta", 0.01, beta=0.5)
        assert l1_norm(b) == b.l1_full > 0


class TestSampling:
    def test_cauchy_inverse_cdf(self):
        k = KernelSpec("cauchy", 0.1)
        rng = np.random.default_rng(0)
        ks = k.sample_array(rng, 200_000)
        assert np.abs(ks).max() <= k.k_c + 1e-9
        # truncated-CDF quantile check at several thresholds
        a = math.atan(k.k_c)
        for x in (-3.0, -0.5, 0.5, 3.0):
            cdf = (math.atan(x) + a) / (2 * a)
            emp = float(np.mean(ks <= x))
            assert emp == pytest.approx(cdf, abs=0.005)

    def test_cauchy_symmetry(self):
        k = KernelSpec("cauchy", 0.05)
        rng = np.random.default_rng(1)
        ks = k.sample_array(rng, 100_000)
        se = ks.std() / math.sqrt(len(ks))
        assert abs(ks.mean()) < 4 * se

    def test_sampler_unbiased_on_polynomials(self):
        # E[X(k)] under the truncated density must match the quadrature
        # integral of |g| X / mass for smooth X
        k = KernelSpec("cauchy", 0.1)
        rng = np.random.default_rng(2)
        ks = k.sample_array(rng, 400_000)
        for X in (lambda x: x * x, lambda x: np.cos(x / 4.0)):
            target, _ = quad(
                lambda x: abs(k.g_value(x)) * X(x) / k.mass, -k.k_c, k.k_c, limit=400
            )
            vals = X(ks)
            se = vals.std() / math.sqrt(len(vals))
            assert abs(vals.mean() - target) < 4 * se

    def test_beta_table_matches_density(self):
        b = KernelSpec("beta", 0.05, beta=0.5)
        rng = np.random.default_rng(3)
        ks = b.sample_array(rng, 300_000)
        edges = np.linspace(-b.k_c, b.k_c, 21)
        hist, _ = np.histogram(ks, bins=edges)
        for j in range(20):
            p, _ = quad(lambda x: float(b.density(x)), edges[j], edges[j + 1], limit=200)
            se = math.sqrt(max(p * (1 - p), 1e-12) / len(ks))
            assert hist[j] / len(ks) == pytest.approx(p, abs=5 * se + 1e-4)

    def test_sample_struct(self):
        k = KernelSpec("cauchy", 0.1)
        s = k.sample(np.random.default_rng(4))
        assert abs(s.phase) == pytest.approx(1.0)
        assert s.pd == pytest.approx(float(k.density(s.k)))


class TestQuadrature:
    def test_default_parameters(self):
        k = KernelSpec("cauchy", 0.01)
        rule = k.quadrature_rule(T=1.0, max_norm=2.0)
        assert rule.h == pytest.approx(1.0 / (math.e * 1.0 * 2.0))
        cb = c_beta(1.0)
        q_expect = math.ceil(math.log(8.0 * k.k_c / (3.0 * cb * 0.01)) / math.log(4.0))
        assert rule.Q == max(q_expect, 2)
        panels = math.ceil(2.0 * k.k_c / rule.h)
        assert rule.M == panels * rule.Q
        assert len(rule.nodes) == rule.M

    def test_weights_sum_to_mass(self):
        # at t = 0 every unitary is the identity, so sum c_m ~ truncated mass
        k = KernelSpec("cauchy", 0.01)
        rule = k.quadrature_rule(T=1.0, max_norm=1.0)
        assert complex(np.sum(rule.weights)).real == pytest.approx(k.mass, abs=1e-8)
        assert abs(complex(np.sum(rule.weights)).imag) < 1e-12

    def test_overrides(self):
        k = KernelSpec("cauchy", 0.01)
        rule = k.quadrature_rule(T=2.0, max_norm=10.0, h=2.0, Q=12)
        assert rule.h == 2.0
        assert rule.Q == 12
        assert rule.M == math.ceil(2.0 * k.k_c / 2.0) * 12

    def test_halving_h_converges(self):
        # self-convergence of the composite rule on a smooth oscillatory target
        k = KernelSpec("cauchy", 0.01)
        vals = []
        for h in (2.0, 1.0, 0.5):
            rule = k.quadrature_rule(T=1.0, max_norm=1.0, h=h, Q=12)
            vals.append(complex(rule.weights @ np.exp(-1j * rule.nodes * 1.3)))
        assert abs(vals[1] - vals[2]) < 1e-9
        # and the converged value matches e^{-1.3} up to the truncation tail
        assert abs(vals[2].real - math.exp(-1.3)) < 2 * 0.01

    def test_beta_rule_reconstructs_decay(self):
        b = KernelSpec("beta", 1e-3, beta=0.5)
        rule = b.quadrature_rule(T=1.0, max_norm=1.0, h=0.5, Q=12)
        val = complex(np.asarray(rule.weights) @ np.exp(-1j * rule.nodes * 0.8))
        assert abs(val - math.exp(-0.8)) < 5e-3

    def test_rejects_bad_inputs(self):
        k = KernelSpec("cauchy", 0.01)
        with pytest.raises(KernelError):
            k.quadrature_rule(T=0.0, max_norm=1.0)
        with pytest.raises(KernelError):
            k.quadrature_rule(T=1.0, max_norm=0.0)
