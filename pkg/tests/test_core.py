"""Containers and the correction step."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csiclean.core import (
    CsiBatch,
    GainEstimate,
    GroundTruth,
    PhaseEstimate,
    SystemParams,
    apply_correction,
    gain_correct,
    wrap_phase,
)
from csiclean.errors import DataError
from conftest import crandn


class TestSystemParams:
    def test_defaults(self):
        p = SystemParams()
        assert (p.K, p.P, p.T_rep, p.T_s, p.kappa) == (256, 300, 0.1, 3.2e-6, 20.0)
        assert p.tau_bound == pytest.approx(250e-9)

    def test_freqs_start_at_zero_and_increase(self):
        f = SystemParams(K=8).freqs
        assert f[0] == 0
        assert np.all(np.diff(f) > 0)
        assert f[3] == pytest.approx(3 / 3.2e-6)

    @pytest.mark.parametrize("kw", [{"K": 1}, {"P": 1}, {"T_rep": 0}, {"T_s": -1.0}, {"kappa": 0}, {"K": 2.5}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(DataError):
            SystemParams(**kw)


class TestContainers:
    def test_batch_shape_checked(self, small_params):
        with pytest.raises(DataError, match="shape"):
            CsiBatch(small_params, np.zeros((3, 3)))

    def test_batch_rejects_nonfinite(self, small_params):
        data = np.ones((small_params.P, small_params.K), complex)
        data[1, 2] = np.nan
        with pytest.raises(DataError, match="non-finite"):
            CsiBatch(small_params, data)

    def test_batch_is_read_only(self, small_params):
        b = CsiBatch(small_params, np.ones((small_params.P, small_params.K)))
        with pytest.raises(ValueError):
            b.data[0, 0] = 2

    def test_gain_must_be_positive(self):
        with pytest.raises(DataError):
            GainEstimate(np.array([1.0, 0.0]))
        with pytest.raises(DataError):
            GainEstimate(np.array([1.0, -2.0]))

    def test_psi_wrapped_on_construction(self):
        pe = PhaseEstimate(np.zeros(3), np.array([np.pi, -np.pi, 3 * np.pi / 2]))
        assert np.all(pe.psi_hat >= -np.pi) and np.all(pe.psi_hat < np.pi)
        np.testing.assert_allclose(pe.psi_hat, [-np.pi, -np.pi, -np.pi / 2])

    def test_truth_impairments_all_or_none(self):
        b = np.ones(4)
        d = np.zeros((3, 4))
        with pytest.raises(DataError, match="all together"):
            GroundTruth(b, d, 1.0, gain_large_db=np.zeros(3))
        t = GroundTruth(b, d, 1.0)
        assert not t.has_impairments
        with pytest.raises(DataError):
            t.ideal_gains()

    def test_from_db_combines_parts(self):
        g = GainEstimate.from_db([0.0, 10.0], [20.0, -10.0])
        np.testing.assert_allclose(g.g_lin, [10.0, 1.0])
        np.testing.assert_allclose(g.g_db, [20.0, 0.0])


def _random_estimates(rng, params):
    gains = GainEstimate(rng.uniform(0.5, 2.0, params.P))
    phases = PhaseEstimate(rng.uniform(0, 1e-7, params.P), rng.uniform(-np.pi, np.pi, params.P))
    return gains, phases


class TestApplyCorrection:
    def test_identity(self, rng, small_params):
        b = CsiBatch(small_params, crandn(rng, small_params.P, small_params.K))
        out = apply_correction(b)
        np.testing.assert_array_equal(out.data, b.data)
        assert out.kind == "cleaned"

    def test_exact_estimates_invert_impairment(self, rng, small_params):
        h = crandn(rng, small_params.P, small_params.K)
        gains, phases = _random_estimates(rng, small_params)
        f = small_params.freqs
        obs = gains.g_lin[:, None] * h * np.exp(-2j * np.pi * np.outer(phases.tau_hat, f)) * np.exp(-1j * phases.psi_hat)[:, None]
        out = apply_correction(CsiBatch(small_params, obs), gains, phases)
        assert np.linalg.norm(out.data - h) / np.linalg.norm(h) < 1e-12

    def test_frame_power_scales_by_gain(self, rng, small_params):
        b = CsiBatch(small_params, crandn(rng, small_params.P, small_params.K))
        gains, phases = _random_estimates(rng, small_params)
        out = apply_correction(b, gains, phases)
        np.testing.assert_allclose(
            np.mean(np.abs(out.data) ** 2, 1), np.mean(np.abs(b.data) ** 2, 1) / gains.g_lin**2, rtol=1e-12
        )

    def test_length_mismatch(self, small_params):
        b = CsiBatch(small_params, np.ones((small_params.P, small_params.K)))
        with pytest.raises(DataError, match="frames"):
            apply_correction(b, GainEstimate(np.ones(small_params.P + 1)))

    def test_true_batch_rejected(self, small_params):
        b = CsiBatch(small_params, np.ones((small_params.P, small_params.K)), "true")
        with pytest.raises(DataError):
            apply_correction(b)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_invertible(self, seed):
        rng = np.random.default_rng(seed)
        params = SystemParams(K=16, P=6)
        x = CsiBatch(params, crandn(rng, params.P, params.K))
        gains, phases = _random_estimates(rng, params)
        fwd = apply_correction(x, gains, phases)
        back = apply_correction(fwd, GainEstimate(1 / gains.g_lin), PhaseEstimate(-phases.tau_hat, -phases.psi_hat))
        assert back.data.shape == x.data.shape
        assert np.all(np.isfinite(back.data))
        assert np.linalg.norm(back.data - x.data) / np.linalg.norm(x.data) < 1e-12


class TestGainCorrect:
    def test_unit_gain_is_identity(self, rng, small_params):
        b = CsiBatch(small_params, crandn(rng, small_params.P, small_params.K))
        np.testing.assert_array_equal(gain_correct(b, GainEstimate.identity(b.P)).data, b.data)

    def test_gain_two_halves(self, rng, small_params):
        b = CsiBatch(small_params, crandn(rng, small_params.P, small_params.K))
        out = gain_correct(b, GainEstimate(np.full(b.P, 2.0)))
        np.testing.assert_allclose(out.data, b.data / 2)
        assert out.kind == "gain-corrected"


def test_wrap_phase_range():
    x = np.linspace(-20, 20, 1001)
    w = wrap_phase(x)
    assert np.all(w >= -np.pi) and np.all(w < np.pi)
    np.testing.assert_allclose(np.exp(1j * w), np.exp(1j * x), atol=1e-12)
