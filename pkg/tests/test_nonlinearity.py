import math

import numpy as np
import pytest

from ntk_lab import nonlinearity as nl_mod
from ntk_lab.nonlinearity import (
    DualActivation,
    PdVerdict,
    apply,
    apply_dot,
    custom,
    dual,
    dual_dot,
    dual_from_expansion,
    erf,
    from_name,
    hermite_expand,
    normalized_hermite,
    pd_certificate,
    polynomial,
    relu,
    tanh,
)


def standardized_cov(rho, vx=1.0, vy=1.0):
    c = rho * math.sqrt(vx * vy)
    return [[vx, c], [c, vy]]


def relu_dual_exact(rho, vx=1.0, vy=1.0):
    r = np.clip(rho, -1, 1)
    return math.sqrt(vx * vy) * (math.sqrt(1 - r * r) + (math.pi - math.acos(r)) * r) / (2 * math.pi)


class TestApply:
    def test_relu_values(self):
        assert apply(relu(), -1.0) == 0.0
        assert apply(relu(), 2.0) == 2.0

    def test_relu_derivative(self):
        assert apply_dot(relu(), -1.0) == 0.0
        assert apply_dot(relu(), 2.0) == 1.0
        assert apply_dot(relu(), 0.0) == 0.0  # convention at the kink

    def test_erf_at_zero(self):
        assert apply(erf(), 0.0) == 0.0
        assert abs(apply_dot(erf(), 0.0) - 2.0 / math.sqrt(math.pi)) < 1e-15

    def test_custom_derivative_checked(self):
        with pytest.raises(ValueError, match="finite differences"):
            custom(fn=np.sin, dfn=np.sin, lipschitz_bound=1.0)

    def test_from_name(self):
        assert from_name("relu") is relu()
        assert from_name("erf") is erf()
        assert from_name("tanh") is tanh()
        p = from_name("poly:0,0,1")
        assert p.kind == "polynomial"
        assert np.allclose(apply(p, 3.0), 9.0)
        with pytest.raises(ValueError):
            from_name("selu")
        with pytest.raises(ValueError):
            from_name("poly:a,b")


class TestDual:
    def test_relu_fully_correlated(self):
        # X = Y: E[relu(X)^2] = E[X^2]/2 = 1/2
        assert abs(dual(relu(), [[1, 1], [1, 1]]) - 0.5) < 1e-14

    def test_relu_independent(self):
        # E[relu(X)]^2 = 1/(2 pi)
        assert abs(dual(relu(), np.eye(2)) - 1.0 / (2 * math.pi)) < 1e-14

    def test_relu_closed_matches_quadrature_at_half(self):
        closed = dual(relu(), standardized_cov(0.5))
        quad = dual(relu(), standardized_cov(0.5), force_quadrature=True)
        assert abs(closed - quad) < 1e-10

    @pytest.mark.parametrize("rho", np.linspace(-1.0, 1.0, 41))
    def test_relu_closed_matches_quadrature_grid(self, rho):
        closed = dual(relu(), standardized_cov(rho))
        quad = dual(relu(), standardized_cov(rho), force_quadrature=True)
        assert abs(closed - quad) < 1e-9

    @pytest.mark.parametrize("rho", [0.999, -0.999, 0.9999])
    def test_relu_quadrature_near_unit_correlation(self, rho):
        closed = dual(relu(), standardized_cov(rho))
        quad = dual(relu(), standardized_cov(rho), force_quadrature=True)
        assert abs(closed - quad) < 1e-9

    def test_relu_general_variances(self):
        cov = standardized_cov(-0.4, vx=1.69, vy=0.49)
        closed = dual(relu(), cov)
        quad = dual(relu(), cov, force_quadrature=True)
        assert abs(closed - relu_dual_exact(-0.4, 1.69, 0.49)) < 1e-14
        assert abs(closed - quad) < 1e-10

    def test_swap_symmetry(self):
        cov = np.array([[1.3, 0.2], [0.2, 0.6]])
        swapped = cov[::-1, ::-1]
        assert abs(dual(relu(), cov) - dual(relu(), swapped)) < 1e-12
        assert abs(dual(erf(), cov) - dual(erf(), swapped)) < 1e-12

    def test_zero_variance_limit(self):
        assert dual(relu(), [[0.0, 0.0], [0.0, 1.0]]) == 0.0
        one = custom(lambda x: np.ones_like(x), lambda x: np.zeros_like(x),
                     lipschitz_bound=1.0, name="one")
        with pytest.raises(ValueError, match="zero variance"):
            dual(one, [[0.0, 0.0], [0.0, 1.0]])

    def test_rejects_non_psd(self):
        with pytest.raises(ValueError, match="not PSD"):
            dual(relu(), [[1.0, 1.1], [1.1, 1.0]])

    def test_tolerates_roundoff_correlation(self):
        v = 1.0 + 5e-13
        assert abs(dual(relu(), [[1.0, v], [v, 1.0]]) - 0.5) < 1e-12

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            dual(relu(), np.eye(3))


class TestDualDot:
    def test_fully_correlated(self):
        assert abs(dual_dot(relu(), [[1, 1], [1, 1]]) - 0.5) < 1e-14

    def test_independent(self):
        assert abs(dual_dot(relu(), np.eye(2)) - 0.25) < 1e-14

    def test_anticorrelated(self):
        assert abs(dual_dot(relu(), [[1, -1], [-1, 1]])) < 1e-14

    @pytest.mark.parametrize("rho", [-0.95, -0.3, 0.0, 0.4, 0.9, 1.0])
    def test_closed_matches_quadrature(self, rho):
        closed = dual_dot(relu(), standardized_cov(rho))
        quad = dual_dot(relu(), standardized_cov(rho), force_quadrature=True)
        assert abs(closed - quad) < 1e-9


class TestMonteCarlo:
    @pytest.mark.parametrize("nl_name", ["relu", "erf"])
    @pytest.mark.parametrize("rho", [-0.9, -0.5, 0.0, 0.5, 0.9])
    def test_dual_within_stderr(self, nl_name, rho):
        nl = from_name(nl_name)
        n = 400_000
        rng = np.random.default_rng(1234 + int(rho * 10))
        x = rng.standard_normal(n)
        y = rho * x + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
        for fn, target in ((nl.fn, dual(nl, standardized_cov(rho))),
                           (nl.dfn, dual_dot(nl, standardized_cov(rho)))):
            prod = fn(x) * fn(y)
            se = prod.std() / math.sqrt(n)
            assert abs(prod.mean() - target) < 4 * se + 1e-12


class TestHermite:
    def test_identity_map(self):
        ident = custom(lambda x: np.asarray(x, dtype=float), lambda x: np.ones_like(x),
                       lipschitz_bound=1.0, name="identity")
        he = hermite_expand(ident, scale=1.0, order=8)
        expected = np.zeros(9)
        expected[1] = 1.0
        assert np.max(np.abs(he.coefficients - expected)) < 1e-10

    def test_relu_constant_coefficient(self):
        he = hermite_expand(relu(), scale=1.0, order=8)
        assert abs(he.coefficients[0] - 1.0 / math.sqrt(2 * math.pi)) < 1e-10
        assert abs(he.coefficients[1] - 0.5) < 1e-10

    def test_square_map(self):
        he = hermite_expand(polynomial([0.0, 0.0, 1.0]), scale=1.0, order=6)
        expected = np.zeros(7)
        expected[0] = 1.0
        expected[2] = math.sqrt(2.0)
        assert np.max(np.abs(he.coefficients - expected)) < 1e-10

    def test_bessel_inequality(self):
        for nl in (relu(), erf(), tanh()):
            he = hermite_expand(nl, scale=1.3, order=40)
            a2 = float(he.coefficients @ he.coefficients)
            second_moment = dual(nl, [[1.69, 1.69], [1.69, 1.69]])
            assert a2 <= second_moment + 1e-8

    def test_recurrence_orthonormality(self):
        # quadrature-weighted Gram of h_0..h_12 is the identity
        from ntk_lab.nonlinearity import _split_rule_1d

        x, w = _split_rule_1d(np.zeros(0), 200)
        h = normalized_hermite(x, 12)
        gram = h @ (w[None, :] * h).T
        assert np.max(np.abs(gram - np.eye(13))) < 1e-12

    def test_scale_out_of_range(self):
        with pytest.raises(ValueError):
            hermite_expand(relu(), scale=0.0, order=4)

    def test_order_too_large(self):
        with pytest.raises(ValueError):
            hermite_expand(relu(), scale=1.0, order=400)


class TestDualFromExpansion:
    def test_rho_zero(self):
        he = hermite_expand(relu(), scale=1.0, order=20)
        assert abs(dual_from_expansion(he, 0.0) - he.coefficients[0] ** 2) < 1e-15

    def test_rho_one_recovers_second_moment(self):
        for scale in (1.0, 0.7):
            he = hermite_expand(relu(), scale=scale, order=40)
            target = dual(relu(), [[scale**2, scale**2], [scale**2, scale**2]])
            got = dual_from_expansion(he, 1.0)
            assert abs(got - target) <= he.l2_residual**2 + 1e-12

    def test_matches_dual_at_half(self):
        he = hermite_expand(relu(), scale=1.0, order=60)
        assert abs(dual_from_expansion(he, 0.5) - dual(relu(), standardized_cov(0.5))) < 1e-6

    def test_clamps_tiny_overshoot(self):
        he = hermite_expand(relu(), scale=1.0, order=10)
        assert dual_from_expansion(he, 1.0 + 5e-13) == dual_from_expansion(he, 1.0)

    def test_rejects_out_of_range(self):
        he = hermite_expand(relu(), scale=1.0, order=10)
        with pytest.raises(ValueError):
            dual_from_expansion(he, 1.1)


class TestCauchySchwarz:
    @pytest.mark.parametrize("rho", [-0.9, -0.25, 0.0, 0.6, 0.95])
    def test_dual_matrix_psd(self, rho):
        for nl in (relu(), erf()):
            d = DualActivation(nl, 1.0, 1.0,
                               method="closed_form" if nl.kind == "relu" else "quadrature")
            m = np.array([[d(1.0), d(rho)], [d(rho), d(1.0)]])
            assert np.linalg.eigvalsh(m).min() > -1e-12
            assert abs(d(rho)) <= d(1.0) + 1e-12

    def test_dual_activation_validates(self):
        with pytest.raises(ValueError):
            DualActivation(relu(), 0.0, 1.0)
        with pytest.raises(ValueError):
            DualActivation(erf(), 1.0, 1.0, method="closed_form")
        with pytest.raises(ValueError):
            DualActivation(relu(), 1.0, 1.0, method="magic")

    def test_continuity_on_grid(self):
        d = DualActivation(relu(), 2.0, 0.5)
        rhos = np.linspace(-1, 1, 81)
        vals = np.array([d(r) for r in rhos])
        assert np.all(np.isfinite(vals))
        assert np.max(np.abs(np.diff(vals))) < 0.1  # no jumps on a fine grid


class TestPdCertificate:
    def test_relu_certified(self):
        cert = pd_certificate(relu(), n0=2, beta=0.1, order=40, threshold=1e-12)
        assert cert.verdict is PdVerdict.CERTIFIED_PD_TRUNCATED
        assert cert.even_nonzero_count >= 3
        assert cert.odd_nonzero_count >= 3

    def test_erf_certified(self):
        cert = pd_certificate(erf(), n0=2, beta=0.1, order=40, threshold=1e-12)
        assert cert.verdict is PdVerdict.CERTIFIED_PD_TRUNCATED

    def test_square_polynomial(self):
        cert = pd_certificate(polynomial([0.0, 0.0, 1.0]), n0=3, beta=0.1, order=40)
        assert cert.verdict is PdVerdict.NOT_PD_POLYNOMIAL

    def test_polynomial_iff_invariant(self):
        for nl in (relu(), erf(), tanh(), polynomial([0.0, 1.0, 2.0])):
            cert = pd_certificate(nl, n0=2, beta=0.1, order=24)
            assert (cert.verdict is PdVerdict.NOT_PD_POLYNOMIAL) == (nl.kind == "polynomial")

    def test_constant_inconclusive(self):
        one = custom(lambda x: np.ones_like(x), lambda x: np.zeros_like(x),
                     lipschitz_bound=1.0, name="one")
        cert = pd_certificate(one, n0=2, beta=0.1, order=20)
        assert cert.verdict is PdVerdict.INCONCLUSIVE

    def test_power_coefficients_nonnegative(self):
        cert = pd_certificate(relu(), n0=4, beta=0.3, order=30)
        assert np.all(cert.power_coefficients >= 0)

    def test_order_floor(self):
        with pytest.raises(ValueError):
            pd_certificate(relu(), n0=2, beta=0.1, order=4)


class TestGridEvaluation:
    def test_grid_matches_scalar(self):
        rhos = np.array([-0.8, -0.1, 0.0, 0.3, 0.99])
        grid = nl_mod.dual_grid(relu(), np.ones(5), np.ones(5), rhos)
        scal = [dual(relu(), standardized_cov(r)) for r in rhos]
        assert np.allclose(grid, scal, atol=1e-14)

    def test_smooth_grid_matches_scalar(self):
        rhos = np.array([-0.8, 0.0, 0.6, 1.0])
        grid = nl_mod.dual_grid(erf(), np.full(4, 1.2), np.full(4, 0.8), rhos * math.sqrt(1.2 * 0.8))
        scal = [dual(erf(), standardized_cov(r, 1.2, 0.8)) for r in rhos]
        assert np.allclose(grid, scal, atol=1e-12)

    def test_clamps_diagonal_roundoff(self):
        v = nl_mod.dual_grid(relu(), 1.0, 1.0, 1.0 + 1e-16)
        assert abs(float(v) - 0.5) < 1e-14
