"""Prompt-branch architecture audit, forward oracle, and guidance loss."""

import math

import numpy as np
import pytest
import torch

from restorkit.errors import ShapeError
from restorkit.prompts import PromptProcessor, expected_param_counts


def count(module):
    return sum(p.numel() for p in module.parameters())


class TestArchitectureAudit:
    def test_param_counts_match_closed_form(self):
        pp = PromptProcessor(embed_dim=32, style_dim=48, deg_dim=24, num_kinds=5)
        want = expected_param_counts(32, 48, 24, 5)
        assert count(pp.b_s) == want["b_s"]
        assert count(pp.b_d) == want["b_d"]
        assert count(pp.classifier) == want["classifier"]

    def test_reference_widths_audit(self):
        pp = PromptProcessor(embed_dim=128, style_dim=768, deg_dim=256, num_kinds=8)
        want = expected_param_counts(128, 768, 256, 8)
        # 3 FC layers in the semantic branch, 2 in the degradation branch.
        assert sum(1 for m in pp.b_s.net if isinstance(m, torch.nn.Linear)) == 3
        assert sum(1 for m in pp.b_d.net if isinstance(m, torch.nn.Linear)) == 2
        assert count(pp.b_s) == want["b_s"]
        assert count(pp.b_d) == want["b_d"]

    def test_output_shapes(self):
        pp = PromptProcessor(embed_dim=16, style_dim=20, deg_dim=12, num_kinds=4)
        e = torch.randn(3, 16)
        assert pp.semantic_branch(e).shape == (3, 20)
        assert pp.degradation_branch(e).shape == (3, 12)
        assert pp.classify(pp.degradation_branch(e)).shape == (3, 4)

    def test_equal_dims_rejected(self):
        with pytest.raises(ShapeError):
            PromptProcessor(embed_dim=16, style_dim=64, deg_dim=64)

    def test_wrong_input_dim_rejected(self):
        pp = PromptProcessor(embed_dim=16, style_dim=20, deg_dim=12)
        with pytest.raises(ShapeError):
            pp.semantic_branch(torch.randn(2, 17))
        with pytest.raises(ShapeError):
            pp.classify(torch.randn(2, 13))


class TestForwardOracle:
    def test_degradation_branch_hand_rolled(self):
        # Recompute the 2-layer branch by hand: linear, layernorm,
        # leaky-relu, linear, and compare against the module.
        torch.manual_seed(0)
        pp = PromptProcessor(embed_dim=4, style_dim=6, deg_dim=3, num_kinds=2,
                             leaky_slope=0.2)
        x = torch.randn(5, 4, dtype=torch.float64)
        pp = pp.double()
        lin1, ln, act, lin2 = pp.b_d.net

        h = x @ lin1.weight.T + lin1.bias
        mu = h.mean(-1, keepdim=True)
        var = h.var(-1, keepdim=True, unbiased=False)
        h = (h - mu) / torch.sqrt(var + ln.eps) * ln.weight + ln.bias
        h = torch.where(h >= 0, h, 0.2 * h)
        h = h @ lin2.weight.T + lin2.bias

        got = pp.degradation_branch(x)
        assert torch.allclose(got, h, atol=1e-12)


class TestGuidanceLoss:
    def test_uninformative_classifier_gives_log_k(self):
        # With zeroed classifier weights every kind gets equal probability,
        # so the cross-entropy is exactly ln(num_kinds).
        pp = PromptProcessor(embed_dim=8, style_dim=10, deg_dim=6, num_kinds=8)
        with torch.no_grad():
            pp.classifier.weight.zero_()
            pp.classifier.bias.zero_()
        p_d = torch.randn(16, 6)
        labels = torch.arange(16) % 8
        loss = pp.deg_guidance_loss(p_d, labels).detach()
        assert float(loss) == pytest.approx(math.log(8), abs=1e-6)

    def test_confident_correct_classifier_near_zero(self):
        pp = PromptProcessor(embed_dim=8, style_dim=10, deg_dim=2, num_kinds=2)
        with torch.no_grad():
            pp.classifier.weight.copy_(torch.tensor([[100.0, 0.0], [0.0, 100.0]]))
            pp.classifier.bias.zero_()
        p_d = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        loss = pp.deg_guidance_loss(p_d, torch.tensor([0, 1])).detach()
        assert float(loss) < 1e-6

    def test_label_out_of_range_rejected(self):
        pp = PromptProcessor(embed_dim=8, style_dim=10, deg_dim=6, num_kinds=3)
        with pytest.raises(ShapeError):
            pp.deg_guidance_loss(torch.randn(2, 6), torch.tensor([0, 3]))
        with pytest.raises(ShapeError):
            pp.deg_guidance_loss(torch.randn(2, 6), torch.tensor([-1, 0]))

    def test_scalar_label_and_single_vector(self):
        pp = PromptProcessor(embed_dim=8, style_dim=10, deg_dim=6, num_kinds=3)
        loss = pp.deg_guidance_loss(torch.randn(6), torch.tensor(1))
        assert loss.ndim == 0 and torch.isfinite(loss)


class TestDeterminism:
    def test_same_seed_same_params(self):
        torch.manual_seed(7)
        a = PromptProcessor(8, 10, 6, 3)
        torch.manual_seed(7)
        b = PromptProcessor(8, 10, 6, 3)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
