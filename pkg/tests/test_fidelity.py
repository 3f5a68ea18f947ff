import math

import numpy as np
import pytest

from brex.errors import DomainError
from brex.fidelity import (
    Fidelity, cc_calibrate_kl, cc_calibrate_quadratic, fid_eval, lipschitz_info,
)


def ls(y):
    return Fidelity.least_squares(y)


def kl(y, b):
    return Fidelity.kullback_leibler(y, b)


class TestEvaluation:
    def test_ls_perfect_fit(self):
        value, grad = fid_eval(ls([1.0, 2.0]), np.array([1.0, 2.0]))
        assert value == 0.0
        assert np.array_equal(grad, [0.0, 0.0])

    def test_kl_exact_fit(self):
        value, grad = fid_eval(kl([2.0], [1.0]), np.array([1.0]))
        assert value == 0.0
        assert np.array_equal(grad, [0.0])

    def test_kl_zero_count(self):
        value, grad = fid_eval(kl([0.0], [1.0]), np.array([3.0]))
        assert value == 4.0 - 0.0  # w + b with no log term
        assert np.array_equal(grad, [1.0])

    def test_kl_matches_definition(self):
        y, b, w = np.array([3.0, 0.0, 7.0]), np.array([0.5, 1.0, 2.0]), np.array([1.0, 2.0, 0.3])
        z = w + b
        direct = np.sum(z - y) + sum(yj * math.log(yj / zj) for yj, zj in zip(y, z) if yj > 0)
        assert kl(y, b).value(w) == pytest.approx(direct, rel=1e-13)

    def test_kl_domain(self):
        with pytest.raises(DomainError):
            kl([1.0], [1.0]).value(np.array([-1.0]))
        with pytest.raises(DomainError):
            kl([1.0], [0.0])
        with pytest.raises(DomainError):
            kl([-1.0], [1.0])

    def test_batched_rows(self):
        f = kl([1.0, 4.0], [1.0, 2.0])
        W = np.array([[0.0, 1.0], [2.0, 3.0]])
        assert np.allclose(f.value(W), [f.value(W[0]), f.value(W[1])])

    def test_gradients_against_central_differences(self):
        rng = np.random.default_rng(1)
        M = 5
        cases = [(ls(rng.normal(size=M)), lambda: rng.normal(size=M) * 3),
                 (kl(rng.poisson(5, M).astype(float), rng.uniform(0.2, 2, M)),
                  lambda: rng.uniform(0, 10, M))]
        for f, draw in cases:
            worst = 0.0
            for _ in range(1000):
                w = draw()
                g = f.gradient(w)
                h = 1e-6 * (1 + np.abs(w))
                fd = np.array([(f.value(w + h[j] * e) - f.value(w - h[j] * e)) / (2 * h[j])
                               for j, e in enumerate(np.eye(M))])
                worst = max(worst, np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-2))
            assert worst <= 1e-6

    def test_nonnegative_and_zero_at_fit(self):
        rng = np.random.default_rng(2)
        y = rng.poisson(4, 6).astype(float) + 1
        b = rng.uniform(0.1, 1, 6)
        f = kl(y, b)
        W = rng.uniform(0, 20, (5000, 6))
        assert np.all(f.value(W) >= 0)
        assert f.value(y - b) == pytest.approx(0.0, abs=1e-12)

    def test_gradient_lipschitz_on_orthant(self):
        rng = np.random.default_rng(3)
        y, b = rng.poisson(6, 4).astype(float), rng.uniform(0.3, 2, 4)
        f = kl(y, b)
        L = lipschitz_info(f, np.ones((4, 2))).L
        W, V = rng.uniform(0, 5, (5000, 4)), rng.uniform(0, 5, (5000, 4))
        lhs = np.linalg.norm(f.gradient(W) - f.gradient(V), axis=1)
        assert np.all(lhs <= L * np.linalg.norm(W - V, axis=1) * (1 + 1e-12))


class TestLipschitz:
    def test_ls(self):
        info = lipschitz_info(ls([1.0, 2.0]), np.eye(2))
        assert info.L == info.L_tilde == 1.0

    def test_kl_L(self):
        assert lipschitz_info(kl([4.0, 1.0], [2.0, 1.0]), np.eye(2)).L == 1.0

    def test_printed_constant_equals_L_when_margin_is_wide(self):
        # delta/theta >= 1/L makes eta = 1/L the maximizer of 2 eta - L eta^2
        info = lipschitz_info(kl([5.0], [1.0]), np.eye(1))
        assert 0.99 * info.margin_delta / info.grad_sup_theta >= 1 / info.L
        assert info.L_tilde_printed == pytest.approx(info.L)
        assert info.L_tilde >= info.L

    def test_printed_constant_can_fail_the_bound(self):
        # y < b: the shifted point leaves w >= 0, where the curvature exceeds L
        f = kl([1.0], [2.84788206])
        info = lipschitz_info(f, np.ones((1, 1)))
        w = np.array([0.00840661])
        g = np.linalg.norm(f.gradient(w))
        assert g > math.sqrt(2 * info.L_tilde_printed * f.value(w))
        assert g <= math.sqrt(2 * info.L_tilde * f.value(w))

    def test_descent_bound_holds_on_image(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            M, N = rng.integers(1, 7), rng.integers(1, 7)
            A = np.abs(rng.normal(size=(M, N)))
            f = kl(rng.poisson(rng.uniform(0, 20, M)).astype(float), rng.uniform(0.05, 3, M))
            info = lipschitz_info(f, A)
            assert info.L_tilde >= info.L
            n = 334  # about 1e4 points over the 30 instances
            X = np.abs(rng.normal(size=(n, N))) * 10 ** rng.uniform(-3, 2, (n, 1))
            W = X @ A.T
            g2 = np.sum(f.gradient(W) ** 2, axis=1)
            assert np.all(g2 <= 2 * info.L_tilde * f.value(W) * (1 + 1e-9) + 1e-300)

    def test_kl_needs_nonnegative_matrix(self):
        with pytest.raises(DomainError):
            lipschitz_info(kl([1.0], [1.0]), -np.ones((1, 1)))


class TestCalibration:
    def test_quadratic_small_columns(self):
        A = np.array([[0.5, 0.1], [0.2, 0.7]])
        assert cc_calibrate_quadratic(ls([0.0, 0.0]), A) == 1.0

    def test_quadratic_scaled_identity(self):
        assert cc_calibrate_quadratic(ls([0.0, 0.0]), 2 * np.eye(2), 1.01) == pytest.approx(4.04)

    def test_quadratic_identity(self):
        assert cc_calibrate_quadratic(ls([0.0, 0.0]), np.eye(2)) == pytest.approx(1.0, rel=1e-5)

    def test_quadratic_zero_column(self):
        with pytest.raises(DomainError):
            cc_calibrate_quadratic(ls([0.0, 0.0]), np.array([[1.0, 0.0], [1.0, 0.0]]))

    def test_kl_example(self):
        xi, c, gamma = cc_calibrate_kl(kl([1.0, 1.0], [1.0, 2.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), 1.0)
        assert xi == 1.0
        assert np.array_equal(c, [1.0, 2.0])
        assert np.allclose(gamma, [10.0, 5.0])

    def test_kl_zero_counts_hit_floor(self):
        _, _, gamma = cc_calibrate_kl(kl([0.0, 0.0], [1.0, 2.0]), np.eye(2))
        assert np.all(gamma == 1e-8)

    def test_kl_xi_below_background(self):
        rng = np.random.default_rng(0)
        b = rng.uniform(0.1, 3, 5)
        xi, _, _ = cc_calibrate_kl(kl(np.ones(5), b), np.abs(rng.normal(size=(5, 3))))
        assert xi <= b.min()

    def test_kl_sparse_column_uses_positive_minimum(self):
        _, c, _ = cc_calibrate_kl(kl([1.0, 1.0], [1.0, 1.0]), np.array([[0.0, 2.0], [3.0, 0.5]]))
        assert np.array_equal(c, [3.0, 0.5])

    def test_kl_zero_column(self):
        with pytest.raises(DomainError):
            cc_calibrate_kl(kl([1.0, 1.0], [1.0, 1.0]), np.array([[0.0, 1.0], [0.0, 1.0]]))
