"""Objective tests: closed-form values for the orthogonality and
prosody-anchoring losses, the weighted total, and abort behavior."""

import numpy as np
import pytest

from voxstyle.objectives import (
    LossReport,
    LossWeights,
    MlpHead,
    TrainingAbort,
    reconstruction_l1,
    sd_loss,
    sp_loss,
    total_loss,
)
from voxstyle.tensor import Tape, Tensor, backward

rng = np.random.default_rng(21)


def constant_head(in_dim, out_row):
    """An MlpHead that outputs the same row regardless of input."""
    out_row = np.asarray(out_row, dtype=np.float32)
    head = MlpHead(in_dim, out_row.size, rng)
    head.w1.data[:] = 0.0
    head.b1.data[:] = 0.0
    head.w2.data[:] = 0.0
    head.b2.data[:] = out_row
    return head


class TestSdLoss:
    def test_orthogonal_rows_score_zero(self):
        content = Tensor(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]], dtype=np.float32))
        style = Tensor(np.array([[0, 0, 1.0, 0], [0, 0, 0, 1.0]], dtype=np.float32))
        assert sd_loss(content, style).item() == 0.0

    def test_identity_case_values(self):
        # gram = I2, squared Frobenius norm 2; T^2 normalization gives 0.5
        eye = Tensor(np.eye(2, dtype=np.float32))
        np.testing.assert_allclose(sd_loss(eye, eye, normalize=True).item(), 0.5, atol=1e-7)
        np.testing.assert_allclose(sd_loss(eye, eye, normalize=False).item(), 2.0, atol=1e-7)

    def test_matches_dense_oracle(self):
        c = rng.normal(size=(5, 7)).astype(np.float32)
        s = rng.normal(size=(5, 7)).astype(np.float32)
        want = np.sum((c.astype(np.float64) @ s.T.astype(np.float64)) ** 2) / 25.0
        got = sd_loss(Tensor(c), Tensor(s)).item()
        np.testing.assert_allclose(got, want, rtol=1e-5)

    def test_gradient_reaches_style_only(self):
        content = Tensor(rng.normal(size=(4, 6)).astype(np.float32), requires_grad=True)
        style = Tensor(rng.normal(size=(4, 6)).astype(np.float32), requires_grad=True)
        with Tape():
            backward(sd_loss(content, style))
        assert content.grad is None
        assert style.grad is not None and np.any(style.grad != 0)

    def test_scale_quadratic_in_style(self):
        c = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
        s = rng.normal(size=(3, 4)).astype(np.float32)
        one = sd_loss(c, Tensor(s)).item()
        three = sd_loss(c, Tensor(3.0 * s)).item()
        np.testing.assert_allclose(three, 9.0 * one, rtol=1e-4)


class TestSpLoss:
    def test_identical_projections_score_minus_t(self):
        shared = MlpHead(20, 8, rng)
        x = Tensor(rng.normal(size=(6, 20)).astype(np.float32))
        out = sp_loss(x, x, shared, shared).item()
        np.testing.assert_allclose(out, -6.0, atol=1e-5)

    def test_orthogonal_projections_score_zero(self):
        style_head = constant_head(16, [1.0, 0.0, 0.0])
        prosody_head = constant_head(20, [0.0, 1.0, 0.0])
        style = Tensor(rng.normal(size=(5, 16)).astype(np.float32))
        lowband = Tensor(rng.normal(size=(5, 20)).astype(np.float32))
        assert sp_loss(style, lowband, style_head, prosody_head).item() == 0.0

    def test_zero_rows_contribute_zero(self):
        style_head = constant_head(16, [0.0, 0.0])
        prosody_head = constant_head(20, [0.0, 0.0])
        style = Tensor(rng.normal(size=(4, 16)).astype(np.float32))
        lowband = Tensor(rng.normal(size=(4, 20)).astype(np.float32))
        assert sp_loss(style, lowband, style_head, prosody_head).item() == 0.0

    def test_opposed_projections_score_plus_t(self):
        style_head = constant_head(16, [1.0, 0.0])
        prosody_head = constant_head(20, [-2.0, 0.0])
        style = Tensor(rng.normal(size=(3, 16)).astype(np.float32))
        lowband = Tensor(rng.normal(size=(3, 20)).astype(np.float32))
        np.testing.assert_allclose(
            sp_loss(style, lowband, style_head, prosody_head).item(), 3.0, atol=1e-6
        )

    def test_gradient_reaches_style_rows_and_heads(self):
        style_head = MlpHead(16, 8, rng)
        prosody_head = MlpHead(20, 8, rng)
        style = Tensor(rng.normal(size=(5, 16)).astype(np.float32), requires_grad=True)
        lowband = Tensor(rng.normal(size=(5, 20)).astype(np.float32))
        with Tape():
            backward(sp_loss(style, lowband, style_head, prosody_head))
        assert style.grad is not None and np.any(style.grad != 0)
        assert style_head.w1.grad is not None
        assert prosody_head.w1.grad is not None


class TestReconstruction:
    def test_mean_absolute_error(self):
        pred = Tensor(np.array([[1.0, -1.0], [3.0, -3.0]], dtype=np.float32))
        target = Tensor(np.zeros((2, 2), dtype=np.float32))
        np.testing.assert_allclose(reconstruction_l1(pred, target).item(), 2.0, atol=1e-7)

    def test_zero_for_exact_match(self):
        x = Tensor(rng.normal(size=(3, 5)).astype(np.float32))
        assert reconstruction_l1(x, Tensor(x.data.copy())).item() == 0.0


class TestTotalLoss:
    def unit_terms(self):
        one = lambda: Tensor(np.asarray(1.0, dtype=np.float64))
        return one(), one(), one(), one()

    def test_weighted_sum_on_unit_terms(self):
        # 1 + 1.0 * 1 + 0.05 * 0 + 0.02 * 1 + 0.02 * 1
        recon, rvq, sd, sp = self.unit_terms()
        total, report = total_loss(recon, rvq, sd, sp)
        np.testing.assert_allclose(total.item(), 2.04, atol=1e-9)
        np.testing.assert_allclose(report.total, 2.04, atol=1e-9)
        assert report.adv == 0.0

    def test_report_mirrors_term_values(self):
        total, report = total_loss(
            Tensor(np.asarray(0.5)),
            Tensor(np.asarray(0.25)),
            Tensor(np.asarray(4.0)),
            Tensor(np.asarray(-2.0)),
            LossWeights(lambda_rvq=2.0, lambda_sd=0.1, lambda_sp=0.5),
        )
        assert (report.recon, report.rvq, report.sd, report.sp) == (0.5, 0.25, 4.0, -2.0)
        np.testing.assert_allclose(total.item(), 0.5 + 0.5 + 0.4 - 1.0, atol=1e-7)
        keys = list(report.as_dict())
        assert keys == ["recon", "rvq", "adv", "sd", "sp", "total"]

    def test_non_finite_term_aborts_with_name(self):
        recon, rvq, sd, sp = self.unit_terms()
        sp.data = np.asarray(np.nan)
        with pytest.raises(TrainingAbort, match="sp"):
            total_loss(recon, rvq, sd, sp)
        rvq.data = np.asarray(np.inf)
        with pytest.raises(TrainingAbort, match="rvq"):
            total_loss(recon, rvq, sd, Tensor(np.asarray(0.0)))

    def test_total_is_differentiable(self):
        recon = Tensor(np.asarray(1.0), requires_grad=True)
        rvq, sd, sp = (Tensor(np.asarray(1.0), requires_grad=True) for _ in range(3))
        with Tape():
            total, _ = total_loss(recon, rvq, sd, sp)
            backward(total)
        np.testing.assert_allclose(recon.grad, 1.0)
        np.testing.assert_allclose(rvq.grad, 1.0)
        np.testing.assert_allclose(sd.grad, 0.02)
        np.testing.assert_allclose(sp.grad, 0.02)


class TestMlpHead:
    def test_projection_shape_and_params(self):
        head = MlpHead(16, 32, rng)
        out = head.forward(Tensor(rng.normal(size=(7, 16)).astype(np.float32)))
        assert out.shape == (7, 32)
        names = sorted(head.parameters("h"))
        assert names == ["h.b1", "h.b2", "h.w1", "h.w2"]

    def test_hidden_width_default(self):
        head = MlpHead(8, 4, rng)
        assert head.w1.shape == (8, 64) and head.w2.shape == (64, 4)
