"""This module tests MadNorm: its statistics, its real form and its integer form."""
import numpy as np
import pytest

from intrnn.errors import QuantizationError, ShapeError
from intrnn.madnorm import (MadNormQParams, layernorm_real, madnorm_fakequant, madnorm_int,
                            madnorm_real, mean_absolute_deviation, quantize_affine)
from intrnn.quant_core import QuantTensor, compute_qparams, dequantize, quantize

DISTRIBUTIONS = {
    "normal": (lambda rng, n: rng.normal(size=n), np.sqrt(2.0 / np.pi)),
    "uniform": (lambda rng, n: rng.uniform(size=n), 0.25),
    "exponential": (lambda rng, n: rng.exponential(size=n), 2.0 / np.e),
}


def random_grid(rng, rows, H, qp):
    return rng.integers(0, qp.qmax + 1, (rows, H))


class TestDeviationStatistics:
    """The mean absolute deviation as a scale estimate."""

    def test_gaussian_ratio(self, rng):
        """MAD is about 0.8 standard deviations for normal data."""
        x = rng.normal(size=10 ** 6)
        ratio = mean_absolute_deviation(x) / x.std()
        assert 0.788 <= ratio <= 0.808

    @pytest.mark.parametrize("name", sorted(DISTRIBUTIONS))
    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_concentration(self, rng, name, k):
        """Pr(|X - mu| / MAD < k) is at least 1 - 1/k."""
        sample, _ = DISTRIBUTIONS[name]
        x = sample(rng, 10 ** 5)
        inside = np.mean(np.abs(x - x.mean()) / mean_absolute_deviation(x) < k)
        assert inside >= 1.0 - 1.0 / k - 0.01

    @pytest.mark.parametrize("name", sorted(DISTRIBUTIONS))
    @pytest.mark.parametrize("k", [2, 4, 8])
    def test_layernorm_concentration(self, rng, name, k):
        """The standard deviation gives the tighter 1 - 1/k**2."""
        sample, _ = DISTRIBUTIONS[name]
        inside = np.mean(np.abs(layernorm_real(sample(rng, 10 ** 5))) < k)
        assert inside >= 1.0 - 1.0 / k ** 2 - 0.01

    @pytest.mark.slow
    @pytest.mark.parametrize("name", sorted(DISTRIBUTIONS))
    def test_convergence(self, rng, name):
        """The sample deviation approaches its expectation as n grows."""
        sample, expected = DISTRIBUTIONS[name]

        def median_error(n):
            return np.median([abs(mean_absolute_deviation(sample(rng, n)) - expected)
                              for _ in range(5)])

        assert median_error(10 ** 6) < median_error(10 ** 3)


class TestRealForms:
    def test_layernorm(self):
        y = layernorm_real([1.0, 2.0, 3.0])
        assert y == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)
        assert np.all(layernorm_real(np.full(4, 3.0)) == 0.0)

    def test_layernorm_shift_invariance(self, rng):
        x = rng.normal(size=16)
        assert np.allclose(layernorm_real(x + 5.0), layernorm_real(x))

    def test_madnorm(self):
        assert list(madnorm_real([1.0, 2.0, 3.0])) == pytest.approx([-1.5, 0.0, 1.5])
        assert np.all(madnorm_real(np.full(5, -2.0)) == 0.0)

    def test_scale_equivariance(self, rng):
        x = rng.normal(size=32)
        assert np.allclose(madnorm_real(-3.0 * x), -madnorm_real(x))
        assert np.allclose(madnorm_real(0.5 * x), madnorm_real(x))

    def test_zero_mean(self, rng):
        y = madnorm_real(rng.normal(size=(10, 64)))
        assert np.all(np.abs(y.mean(axis=-1)) < 1e-9)

    def test_affine(self):
        y = madnorm_real([1.0, 2.0, 3.0], gamma=np.array([2.0, 2.0, 2.0]), beta=np.ones(3))
        assert list(y) == pytest.approx([-2.0, 1.0, 4.0])


class TestQParams:
    def test_stage_bitwidths(self):
        qp_x = compute_qparams(-1.0, 1.0)
        with pytest.raises(QuantizationError):
            MadNormQParams(qp_x, compute_qparams(-1.0, 1.0, 16), qp_x, compute_qparams(0, 1),
                           qp_x, 4)

    def test_positive_dimension(self):
        qp = compute_qparams(-1.0, 1.0)
        with pytest.raises(ShapeError):
            MadNormQParams(qp, qp, qp, compute_qparams(0, 1), qp, 0)

    def test_affine_needs_output(self):
        qp = compute_qparams(-1.0, 1.0)
        gamma, _ = quantize_affine(np.ones(4), None)
        with pytest.raises(QuantizationError):
            MadNormQParams(qp, qp, qp, compute_qparams(0, 1), qp, 4, gamma=gamma)

    def test_stages(self):
        qp_x = compute_qparams(-1.0, 1.0)
        p = MadNormQParams.from_ranges(qp_x, 8, (-0.2, 0.2), (-1.0, 1.0), 0.8, (-3.0, 3.0))
        assert sorted(p.stages()) == ["d", "mu", "x", "xhat", "y"]
        assert p.stages()["d"].min == 0.0
        assert p.output_qparams is p.qp_y


class TestInteger:
    """madnorm_int against its oracle and the real form."""

    @pytest.mark.parametrize("H, rows", [(2, 500), (64, 200), (1366, 10)])
    def test_matches_oracle(self, rng, H, rows):
        qp_x = compute_qparams(-2.0, 2.0)
        q = random_grid(rng, rows, H, qp_x)
        p = MadNormQParams.from_samples(dequantize(q, qp_x), qp_x)
        assert np.array_equal(madnorm_int(q, p), madnorm_fakequant(q, p))

    @pytest.mark.slow
    def test_matches_oracle_on_many_configurations(self):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            qp_x = compute_qparams(-rng.uniform(0.1, 4.0), rng.uniform(0.1, 4.0),
                                   int(rng.choice([8, 16])))
            q = random_grid(rng, int(rng.integers(1, 20)), int(rng.integers(2, 200)), qp_x)
            p = MadNormQParams.from_samples(dequantize(q, qp_x), qp_x)
            assert np.array_equal(madnorm_int(q, p), madnorm_fakequant(q, p)), seed

    def test_single_feature(self, rng):
        """One feature equals its own mean and normalizes to zero."""
        qp_x = compute_qparams(-1.0, 1.0)
        p = MadNormQParams.from_ranges(qp_x, 1, (-1.0, 1.0), (-0.5, 0.5), 0.5, (-1.0, 1.0))
        q = random_grid(rng, 50, 1, qp_x)
        out = madnorm_int(q, p)
        assert np.all(out == p.qp_y.zero_point)
        assert np.array_equal(out, madnorm_fakequant(q, p))

    def test_wide_input(self, rng):
        """A 16-bit input feeds 8-bit intermediates."""
        qp_x = compute_qparams(-3.0, 3.0, 16)
        q = random_grid(rng, 50, 24, qp_x)
        p = MadNormQParams.from_samples(dequantize(q, qp_x), qp_x)
        assert p.qp_y.bitwidth == 8
        out = madnorm_int(q, p)
        assert np.array_equal(out, madnorm_fakequant(q, p))
        assert np.max(np.abs(dequantize(out, p.qp_y) - madnorm_real(dequantize(q, qp_x)))) \
            <= 3 * p.qp_y.scale

    def test_zero_input(self):
        qp_x = compute_qparams(-1.0, 1.0)
        p = MadNormQParams.from_ranges(qp_x, 16, (-0.5, 0.5), (-1.0, 1.0), 1.0, (-3.0, 3.0))
        q = np.full((3, 16), qp_x.zero_point)
        assert np.all(madnorm_int(q, p) == p.qp_y.zero_point)

    def test_close_to_real(self, rng):
        qp_x = compute_qparams(-1.0, 1.0)
        q = random_grid(rng, 200, 64, qp_x)
        x = dequantize(q, qp_x)
        p = MadNormQParams.from_samples(x, qp_x)
        error = np.abs(dequantize(madnorm_int(q, p), p.qp_y) - madnorm_real(x))
        assert np.max(error) <= 3 * p.qp_y.scale

    def test_quant_tensor_in_and_out(self, rng):
        qp_x = compute_qparams(-1.0, 1.0)
        q = random_grid(rng, 4, 8, qp_x)
        p = MadNormQParams.from_samples(dequantize(q, qp_x), qp_x)
        out = madnorm_int(QuantTensor(q.shape, q, qp_x), p)
        assert isinstance(out, QuantTensor)
        assert out.qparams == p.qp_y

    def test_wrong_width(self):
        qp_x = compute_qparams(-1.0, 1.0)
        p = MadNormQParams.from_ranges(qp_x, 8, (-0.2, 0.2), (-1.0, 1.0), 0.8, (-3.0, 3.0))
        with pytest.raises(ShapeError):
            madnorm_int(np.zeros((2, 5), dtype=np.int64), p)

    def test_affine_matches_oracle(self, rng):
        qp_x = compute_qparams(-1.0, 1.0)
        H = 32
        q = random_grid(rng, 100, H, qp_x)
        x = dequantize(q, qp_x)
        gamma, beta = rng.uniform(0.5, 1.5, H), rng.uniform(-0.3, 0.3, H)
        y = madnorm_real(x) * gamma + beta
        base = MadNormQParams.from_samples(x, qp_x)
        q_gamma, q_beta = quantize_affine(gamma, beta)
        p = MadNormQParams(qp_x, base.qp_mu, base.qp_xhat, base.qp_d, base.qp_y, H,
                           q_gamma, q_beta, compute_qparams(y.min(), y.max()))
        out = madnorm_int(q, p)
        assert np.array_equal(out, madnorm_fakequant(q, p))
        assert np.max(np.abs(dequantize(out, p.qp_out) - y)) < 0.2

    def test_quantize_affine_zero_beta(self):
        _, q_beta = quantize_affine(np.ones(3), np.zeros(3))
        assert np.all(q_beta.to_real() == 0.0)
        assert quantize(0.0, q_beta.qparams) == q_beta.qparams.zero_point
