import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from brex.bregman import (
    NONNEG, REALS, BregmanGenerator, BrexPenalty, bregman_scalar, brex_prox_scalar,
    brex_scalar, brex_subdiff, g1kl, generator_calculus, h_subdiff, lambert_w0, solve_alpha,
)
from brex.errors import DomainError

# Frozen from an mpmath root solve at 30 digits.
W_OF_ONE = 0.56714329040978387
KL_UNIT_ALPHA = 5.3053952792716912
KL_ALPHA_G2_C3_XI05_L07 = 0.55827600015169921


def quad(gamma=1.0, cset=REALS):
    return BregmanGenerator.quadratic(gamma, cset)


def kl(gamma=1.0, c=1.0, xi=1.0):
    return BregmanGenerator.smoothed_kl(gamma, c, xi)


class TestLambertW:
    def test_known_values(self):
        assert lambert_w0(0.0) == 0.0
        assert lambert_w0(-math.exp(-1)) == pytest.approx(-1.0, abs=1e-7)
        assert lambert_w0(1.0) == pytest.approx(W_OF_ONE, abs=1e-14)
        assert lambert_w0(-math.exp(-2)) == pytest.approx(-0.158594339563039362, abs=1e-14)

    def test_residual_and_log_bound_on_range(self):
        x = np.linspace(-math.exp(-1), 1e3, 10_000)
        w = lambert_w0(x)
        assert np.max(np.abs(w * np.exp(w) - x)) <= 1e-12
        assert np.all(w >= -1.0)
        inner = x > -math.exp(-1)
        assert np.all(w[inner] <= np.log1p(x[inner]))

    def test_near_branch_point(self):
        x = -math.exp(-1) + np.logspace(-16, -2, 200)
        w = lambert_w0(x)
        assert np.max(np.abs(w * np.exp(w) - x)) <= 1e-12

    def test_domain(self):
        with pytest.raises(DomainError):
            lambert_w0(-0.4)
        with pytest.raises(DomainError):
            lambert_w0(float("nan"))


class TestGenerators:
    def test_quadratic_calculus(self):
        assert generator_calculus(quad(2.0), 3.0) == (9.0, 6.0, 2.0)

    def test_kl_calculus(self):
        assert generator_calculus(kl(), 0.0) == (0.0, 0.0, 1.0)
        v, d1, d2 = generator_calculus(kl(), 1.0)
        assert v == pytest.approx(1 - math.log(2), abs=1e-15)
        assert d1 == pytest.approx(0.5, abs=1e-15)
        assert d2 == pytest.approx(0.25, abs=1e-15)

    def test_parameter_validation(self):
        with pytest.raises(DomainError):
            BregmanGenerator.quadratic(0.0)
        with pytest.raises(DomainError):
            BregmanGenerator.smoothed_kl(1.0, -1.0, 1.0)
        with pytest.raises(DomainError):
            BregmanGenerator("smoothed_kl", 1.0, 1.0, 1.0, REALS)

    def test_domain_checks(self):
        with pytest.raises(DomainError):
            kl().value(-0.1)
        with pytest.raises(DomainError):
            quad(1.0, NONNEG).derivative(-1.0)

    def test_derivatives_against_central_differences(self):
        rng = np.random.default_rng(7)
        for gen, xs in ((quad(rng.uniform(0.1, 5)), rng.uniform(-5, 5, 1000)),
                        (kl(2.0, 0.7, 0.4), rng.uniform(0.01, 20, 1000))):
            h = 1e-5 * (1 + np.abs(xs))
            fd1 = (gen.value(xs + h) - gen.value(xs - h)) / (2 * h)
            fd2 = (gen.derivative(xs + h) - gen.derivative(xs - h)) / (2 * h)
            d1, d2 = gen.derivative(xs), gen.curvature(xs)
            assert np.max(np.abs(fd1 - d1) / np.maximum(np.abs(d1), 1e-3)) <= 1e-6
            assert np.max(np.abs(fd2 - d2) / np.maximum(np.abs(d2), 1e-3)) <= 1e-6

    def test_vector_parameters(self):
        gen = BregmanGenerator.quadratic(np.array([1.0, 2.0, 4.0]))
        assert np.allclose(gen.derivative(np.ones(3)), [1, 2, 4])
        assert gen.coordinate(2).gamma == 4.0


class TestDivergence:
    def test_examples(self):
        assert bregman_scalar(quad(), 3.0, 1.0) == 2.0
        assert bregman_scalar(kl(), 2.5, 2.5) == 0.0
        assert bregman_scalar(kl(), 0.0, KL_UNIT_ALPHA) == pytest.approx(1.0, abs=1e-6)

    def test_kl_matches_definition(self):
        gen = kl(1.5, 2.0, 0.3)
        x, xp = 1.7, 0.4
        direct = gen.value(x) - gen.value(xp) - gen.derivative(xp) * (x - xp)
        assert bregman_scalar(gen, x, xp) == pytest.approx(direct, rel=1e-12)

    @given(st.floats(0, 50), st.floats(0, 50), st.floats(0.1, 10), st.floats(0.1, 10),
           st.floats(0.1, 10))
    def test_nonnegative_and_zero_only_on_diagonal(self, x, xp, g, c, xi):
        d = bregman_scalar(kl(g, c, xi), x, xp)
        assert d >= 0
        if abs(x - xp) > 1e-6 * (1 + xp):
            assert d > 0

    def test_g1kl(self):
        assert g1kl(1.0) == 0.0
        assert g1kl(math.e) == pytest.approx(math.e - 2, abs=1e-15)


class TestThreshold:
    def test_examples(self):
        assert solve_alpha(quad(2.0), 4.0).alpha == pytest.approx(2.0, abs=1e-15)
        assert solve_alpha(quad(1.0), 0.5).alpha == pytest.approx(1.0, abs=1e-15)
        assert solve_alpha(kl(), 1.0).alpha == pytest.approx(KL_UNIT_ALPHA, abs=1e-12)
        assert solve_alpha(kl(2.0, 3.0, 0.5), 0.7).alpha == pytest.approx(
            KL_ALPHA_G2_C3_XI05_L07, abs=1e-12)

    def test_closed_form_agrees_with_lambert_formula(self):
        kappa = 2.0
        alpha = -(1 / lambert_w0(-math.exp(-kappa)) + 1)
        assert solve_alpha(kl(), 1.0).alpha == pytest.approx(alpha, rel=1e-12)

    def test_random_parameterizations(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            lam = 10 ** rng.uniform(-4, 2)
            gen = kl(*(10 ** rng.uniform(-1, 1, 3))) if rng.random() < 0.5 else quad(
                10 ** rng.uniform(-1, 1))
            if gen.kind == "smoothed_kl" and lam / (gen.gamma * gen.xi) > 700:
                with pytest.raises(DomainError):
                    solve_alpha(gen, lam)
                continue
            alpha = solve_alpha(gen, lam).alpha
            assert abs(gen.divergence(0.0, alpha) - lam) <= 1e-10 * max(1.0, lam)

    def test_extreme_kappa(self):
        for lam in (1e-12, 1e-6, 40.0, 300.0, 700.0):
            alpha = solve_alpha(kl(), lam).alpha
            assert kl().divergence(0.0, alpha) == pytest.approx(lam, rel=1e-12)

    def test_vectorized(self):
        gen = kl(np.array([1.0, 2.0]), np.array([1.0, 0.5]), 1.0)
        alpha = solve_alpha(gen, 1.0).alpha
        assert alpha[0] == pytest.approx(KL_UNIT_ALPHA, abs=1e-12)
        assert np.allclose(gen.divergence(0.0, alpha), 1.0, atol=1e-12)

    def test_rejects_nonpositive_lambda(self):
        with pytest.raises(DomainError):
            solve_alpha(quad(), 0.0)


def variational_beta(gen, lam, x, grid):
    # sup over x' of min(d(0, x'), lam) - d(x, x')
    return np.max(np.minimum(gen.divergence(0.0, grid), lam) - gen.divergence(x, grid))


class TestPenalty:
    def test_examples(self):
        assert brex_scalar(quad(), 0.5, 0.0) == 0.0
        assert brex_scalar(quad(), 0.5, 2.0) == 0.5
        assert brex_scalar(quad(), 0.5, 0.5) == pytest.approx(0.375, abs=1e-15)

    def test_matches_variational_definition(self):
        grid = np.arange(-5.0, 5.0 + 1e-9, 1e-4)
        for x in (-1.3, -0.4, 0.0, 0.5, 0.9, 2.0):
            assert brex_scalar(quad(), 0.5, x) == pytest.approx(
                variational_beta(quad(), 0.5, x, grid), abs=1e-6)
        grid = np.arange(0.0, 20.0, 1e-4)
        for x in (0.0, 0.3, 2.0, 5.0, 7.0):
            assert brex_scalar(kl(), 1.0, x) == pytest.approx(
                variational_beta(kl(), 1.0, x, grid), abs=1e-6)

    @given(st.floats(-30, 30), st.floats(0.05, 10), st.floats(1e-3, 10))
    def test_bounds_and_symmetry(self, x, g, lam):
        pen = BrexPenalty(quad(g), lam)
        b = pen.value(x)
        assert -1e-12 <= b <= lam * (1 + 1e-12)
        assert b == pytest.approx(pen.value(-x), abs=1e-15)
        if abs(x) >= pen.alpha:
            assert b == pytest.approx(lam, abs=1e-12 * lam)

    def test_continuity_at_alpha(self):
        for gen, lam in ((quad(3.0), 0.7), (kl(2.0, 0.5, 0.3), 2.0)):
            pen = BrexPenalty(gen, lam)
            a = pen.alpha
            assert pen.value(a * (1 - 1e-12)) == pytest.approx(lam, abs=1e-9)

    def test_kl_penalty_range(self):
        pen = BrexPenalty(kl(1.0, 2.0, 0.5), 0.8)
        x = np.linspace(0, 3 * pen.alpha, 1001)
        b = pen.value(x)
        assert np.all(b >= -1e-12) and np.all(b <= 0.8 + 1e-12)


class TestSubdifferentials:
    def test_beta_examples(self):
        sd = brex_subdiff(quad(), 0.5, 0.0)
        assert (sd.lo, sd.hi) == (-1.0, 1.0)
        sd = brex_subdiff(quad(), 0.5, 2.0)
        assert (sd.lo, sd.hi) == (0.0, 0.0)
        sd = brex_subdiff(quad(), 0.5, 0.5)
        assert sd.lo == sd.hi == pytest.approx(0.5)

    def test_h_examples(self):
        sd = h_subdiff(quad(), 0.5, 0.0)
        assert (sd.lo, sd.hi) == (-1.0, 1.0)
        assert h_subdiff(quad(), 0.5, 0.5).hi == pytest.approx(1.0)
        assert h_subdiff(quad(), 0.5, 2.0).lo == 2.0
        assert h_subdiff(quad(), 0.5, -0.5).lo == pytest.approx(-1.0)

    def test_nonnegative_zero_includes_normal_cone(self):
        sd = h_subdiff(kl(), 1.0, 0.0)
        assert sd.lo == -np.inf
        assert sd.hi == pytest.approx(BrexPenalty(kl(), 1.0).slope)

    def test_h_is_beta_plus_derivative(self):
        gen = kl(1.3, 0.8, 0.6)
        pen = BrexPenalty(gen, 0.9)
        x = np.linspace(0.01, 3 * pen.alpha, 200)
        assert np.allclose(pen.h_subdiff(x).lo, pen.subdiff(x).lo + gen.derivative(x), atol=1e-12)

    def test_h_derivative_matches_finite_differences(self):
        for gen, lam in ((quad(2.0), 0.4), (kl(1.0, 1.0, 1.0), 1.0)):
            pen = BrexPenalty(gen, lam)
            x = np.linspace(0.05, 3 * pen.alpha, 300)
            x = x[np.abs(x - pen.alpha) > 1e-3]
            h = 1e-6
            fd = ((pen.value(x + h) + gen.value(x + h)) - (pen.value(x - h) + gen.value(x - h))) / (2 * h)
            assert np.allclose(pen.h_subdiff(x).lo, fd, atol=1e-6)

    def test_envelope_monotone(self):
        rng = np.random.default_rng(3)
        for gen, lo in ((quad(1.7), -4.0), (quad(0.8, NONNEG), 0.0), (kl(1.2, 0.9, 0.5), 0.0)):
            pen = BrexPenalty(gen, 0.6)
            x = rng.uniform(lo, 4.0, 20_000)
            x[::7] = 0.0
            sd = pen.h_subdiff(x)
            u = rng.random(x.size)
            lo_f = np.where(np.isfinite(sd.lo), sd.lo, sd.hi - 10.0)
            s = lo_f + u * (sd.hi - lo_f)
            perm = rng.permutation(x.size)
            assert np.all((s - s[perm]) * (x - x[perm]) >= -1e-12)


def grid_prox(pen, step, v, lo, hi):
    grid = np.arange(lo, hi + 5e-6, 1e-5)
    if pen.generator.constraint_set == NONNEG:
        grid = grid[grid >= 0]
    obj = pen.value(grid) + (grid - v) ** 2 / (2 * step)
    return grid[np.argmin(obj)], obj.min()


class TestProx:
    def test_examples(self):
        assert brex_prox_scalar(quad(), 0.5, 1.0, 0.3) == 0.0
        assert brex_prox_scalar(quad(), 0.5, 1.0, 2.0) == 2.0
        assert brex_prox_scalar(kl(), 0.7, 0.5, 0.0) == 0.0
        assert brex_prox_scalar(quad(), 0.5, 1.0, -2.0) == -2.0
        assert brex_prox_scalar(quad(1.0, NONNEG), 0.5, 1.0, -2.0) == 0.0

    def test_grid_oracle_examples(self):
        for v in (0.3, 2.0):
            x, _ = grid_prox(BrexPenalty(quad(), 0.5), 1.0, v, -3, 3)
            assert brex_prox_scalar(quad(), 0.5, 1.0, v) == pytest.approx(x, abs=1e-4)

    def test_against_grid_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            if rng.random() < 0.5:
                gen = quad(10 ** rng.uniform(-1, 1), REALS if rng.random() < 0.5 else NONNEG)
            else:
                gen = kl(*(10 ** rng.uniform(-0.7, 0.7, 3)))
            pen = BrexPenalty(gen, 10 ** rng.uniform(-1.5, 0.5))
            step = 10 ** rng.uniform(-1, 1)
            v = rng.uniform(-1, 3) * min(pen.alpha * (1 + step), 5.0)
            x = pen.prox(v, step)
            # beta is nondecreasing in |x|, so the minimizer lies between 0 and v
            xg, og = grid_prox(pen, step, v, min(v, 0) - 0.1, max(v, 0) + 0.1)
            ox = pen.value(x) + (x - v) ** 2 / (2 * step)
            assert ox <= og + 1e-9
            assert abs(x - xg) <= 1e-4 or abs(ox - og) <= 1e-9

    def test_vectorized_matches_scalar(self):
        gen = kl(np.array([1.0, 2.0, 0.5]), np.array([1.0, 0.3, 2.0]), 0.7)
        pen = BrexPenalty(gen, 0.9)
        v = np.array([0.4, 5.0, 1.1])
        out = pen.prox(v, 0.8)
        for i in range(3):
            assert out[i] == pytest.approx(brex_prox_scalar(gen.coordinate(i), 0.9, 0.8, v[i]), abs=1e-14)

    def test_rejects_bad_step(self):
        with pytest.raises(DomainError):
            brex_prox_scalar(quad(), 0.5, 0.0, 1.0)
