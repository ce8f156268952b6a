"""Control branch contracts: gated encoder, zero-conv residuals, decoder."""

import pytest
import torch

from restorkit.backbone.schedule import NoiseSchedule
from restorkit.backbone.sampler import sample_latent
from restorkit.backbone.unet import ConditionalUNet
from restorkit.config import ControlConfig, UNetConfig
from restorkit.control import DMB, ControlDecoder, ControlEncoder, ControlModule, recon_loss
from restorkit.errors import ShapeError

UNET_CFG = UNetConfig(base_channels=8, channel_mults=(1, 2), num_res_blocks=1, time_dim=16)
CTRL_CFG = ControlConfig(widths=(4, 6, 8))
Z_CH, CTX, DEG = 4, 12, 10


def make_module(ctrl_cfg=CTRL_CFG, seed=0):
    torch.manual_seed(seed)
    return ControlModule(ctrl_cfg, UNET_CFG, z_channels=Z_CH, ctx_dim=CTX, deg_dim=DEG)


def warmed_unet(seed=1):
    """U-Net whose output head is not the zero-initialized one.

    The head starts at zero, which would make any output comparison
    vacuously equal; a random head makes transparency checks meaningful.
    """
    torch.manual_seed(seed)
    unet = ConditionalUNet(UNET_CFG, z_channels=Z_CH, ctx_dim=CTX)
    with torch.no_grad():
        unet.out_conv.weight.copy_(torch.randn_like(unet.out_conv.weight) * 0.1)
        unet.out_conv.bias.copy_(torch.randn_like(unet.out_conv.bias) * 0.1)
    return unet


class TestDMB:
    def test_modulation_strictly_inside_unit_interval(self):
        torch.manual_seed(0)
        dmb = DMB(3, 6, DEG)
        m = dmb.modulation(torch.randn(5, DEG))
        assert m.shape == (5, 6)
        assert (m > 0).all() and (m < 1).all()

    def test_neutral_gate_halves_the_feature(self):
        # Zero weight and bias put every sigmoid at exactly 0.5, so the
        # forward pass must agree bit for bit with a plain 0.5 scaling.
        torch.manual_seed(1)
        dmb = DMB(3, 6, DEG)
        with torch.no_grad():
            dmb.gate.weight.zero_()
            dmb.gate.bias.zero_()
        f = torch.randn(2, 3, 8, 8)
        p_d = torch.randn(2, DEG)
        with torch.no_grad():
            got = dmb(f, p_d)
            want = dmb.block2(dmb.block1(f) * 0.5)
        assert torch.equal(got, want)

    def test_saturated_gate(self):
        torch.manual_seed(2)
        dmb = DMB(3, 6, DEG)
        with torch.no_grad():
            dmb.gate.weight.zero_()
            dmb.gate.bias.fill_(30.0)
        # Comparison runs in float32, where 1 - 1e-9 would round to 1.0.
        assert (dmb.modulation(torch.randn(1, DEG)) > 1 - 1e-6).all()
        with torch.no_grad():
            dmb.gate.bias.fill_(-30.0)
        assert (dmb.modulation(torch.randn(1, DEG)) < 1e-9).all()

    def test_ungated_block_ignores_prompt(self):
        torch.manual_seed(3)
        dmb = DMB(3, 6, DEG, gated=False)
        f = torch.randn(2, 3, 8, 8)
        with torch.no_grad():
            a = dmb(f, torch.randn(2, DEG))
            b = dmb(f, torch.randn(2, DEG))
        assert torch.equal(a, b)

    def test_wrong_prompt_dim_rejected(self):
        dmb = DMB(3, 6, DEG)
        with pytest.raises(ShapeError):
            dmb.modulation(torch.randn(2, DEG + 1))

    def test_wrong_feature_channels_rejected(self):
        dmb = DMB(3, 6, DEG)
        with pytest.raises(ShapeError):
            dmb(torch.randn(2, 5, 8, 8), torch.randn(2, DEG))


class TestControlEncoder:
    def test_output_at_latent_resolution(self):
        torch.manual_seed(0)
        enc = ControlEncoder((4, 6, 8), c_match=8, deg_dim=DEG)
        out = enc(torch.rand(2, 3, 32, 24), torch.randn(2, DEG))
        assert out.shape == (2, 8, 8, 6)

    def test_indivisible_sides_rejected(self):
        enc = ControlEncoder((4, 6, 8), c_match=8, deg_dim=DEG)
        with pytest.raises(ShapeError):
            enc(torch.rand(1, 3, 30, 32), torch.randn(1, DEG))
        with pytest.raises(ShapeError):
            enc(torch.rand(1, 3, 32, 18), torch.randn(1, DEG))

    def test_non_rgb_input_rejected(self):
        enc = ControlEncoder((4, 6, 8), c_match=8, deg_dim=DEG)
        with pytest.raises(ShapeError):
            enc(torch.rand(1, 1, 32, 32), torch.randn(1, DEG))
        with pytest.raises(ShapeError):
            enc(torch.rand(3, 32, 32), torch.randn(1, DEG))

    def test_gated_encoder_responds_to_prompt(self):
        torch.manual_seed(4)
        enc = ControlEncoder((4, 6, 8), c_match=8, deg_dim=DEG, gated=True)
        img = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            a = enc(img, torch.full((1, DEG), 2.0))
            b = enc(img, torch.full((1, DEG), -2.0))
        assert not torch.equal(a, b)


class TestControlDecoder:
    def test_reconstructs_full_resolution_in_unit_range(self):
        torch.manual_seed(0)
        dec = ControlDecoder(8, (4, 6, 8))
        with torch.no_grad():
            out = dec(torch.randn(2, 8, 8, 6))
        assert out.shape == (2, 3, 32, 24)
        assert (out > 0).all() and (out < 1).all()


class TestZeroConvTransparency:
    def test_residuals_are_exactly_zero_at_init(self):
        ctrl = make_module()
        z = torch.randn(2, Z_CH, 8, 8)
        cond = ctrl.encode(torch.rand(2, 3, 32, 32), torch.randn(2, DEG))
        with torch.no_grad():
            res = ctrl.residuals(z, 5, torch.randn(2, CTX), cond)
        assert len(res) == len(UNET_CFG.channel_mults)
        for r in res:
            assert torch.equal(r, torch.zeros_like(r))

    def test_fresh_branch_leaves_denoiser_output_bit_identical(self):
        ctrl = make_module()
        unet = warmed_unet()
        torch.manual_seed(7)
        z = torch.randn(2, Z_CH, 8, 8)
        ctx = torch.randn(2, CTX)
        cond = ctrl.encode(torch.rand(2, 3, 32, 32), torch.randn(2, DEG))
        with torch.no_grad():
            res = ctrl.residuals(z, 5, ctx, cond)
            with_ctrl = unet(z, 5, ctx, control=res)
            without = unet(z, 5, ctx, control=None)
        assert not torch.equal(without, torch.zeros_like(without))
        assert torch.equal(with_ctrl, without)

    def test_transparency_holds_through_the_sampler(self):
        ctrl = make_module()
        unet = warmed_unet()
        schedule = NoiseSchedule.linear(100)
        torch.manual_seed(8)
        p_s = torch.randn(1, CTX)
        cond = ctrl.encode(torch.rand(1, 3, 32, 32), torch.randn(1, DEG))
        shape = (1, Z_CH, 8, 8)
        guided = sample_latent(unet, schedule, shape, p_s, steps=5, seed=3,
                               control=ctrl, cond=cond)
        plain = sample_latent(unet, schedule, shape, p_s, steps=5, seed=3)
        assert torch.equal(guided, plain)

    def test_perturbed_zero_conv_changes_the_output(self):
        ctrl = make_module()
        unet = warmed_unet()
        with torch.no_grad():
            ctrl.net.zero_convs[0].weight.fill_(0.05)
        torch.manual_seed(9)
        z = torch.randn(2, Z_CH, 8, 8)
        ctx = torch.randn(2, CTX)
        cond = ctrl.encode(torch.rand(2, 3, 32, 32), torch.randn(2, DEG))
        with torch.no_grad():
            res = ctrl.residuals(z, 5, ctx, cond)
            with_ctrl = unet(z, 5, ctx, control=res)
            without = unet(z, 5, ctx, control=None)
        assert any(not torch.equal(r, torch.zeros_like(r)) for r in res)
        assert not torch.equal(with_ctrl, without)


class TestInitFromUnet:
    def test_encoder_weights_are_adopted(self):
        ctrl = make_module(seed=10)
        torch.manual_seed(11)
        unet = ConditionalUNet(UNET_CFG, z_channels=Z_CH, ctx_dim=CTX)
        pairs = [(ctrl.net.stem, unet.stem), (ctrl.net.time, unet.time)]
        for s in range(len(UNET_CFG.channel_mults)):
            pairs.append((ctrl.net.enc_res[s], unet.enc_res[s]))
            pairs.append((ctrl.net.enc_attn[s], unet.enc_attn[s]))
        for s in range(len(UNET_CFG.channel_mults) - 1):
            pairs.append((ctrl.net.downs[s], unet.downs[s]))

        # Independent inits should not agree; after adoption they must.
        def states_equal(a, b):
            sa, sb = a.state_dict(), b.state_dict()
            return all(torch.equal(sa[k], sb[k]) for k in sa)

        assert not all(states_equal(a, b) for a, b in pairs)
        ctrl.init_from_unet(unet)
        for a, b in pairs:
            assert states_equal(a, b)

    def test_zero_convs_stay_zero_after_adoption(self):
        ctrl = make_module(seed=12)
        torch.manual_seed(13)
        unet = ConditionalUNet(UNET_CFG, z_channels=Z_CH, ctx_dim=CTX)
        ctrl.init_from_unet(unet)
        for conv in ctrl.net.zero_convs:
            assert torch.equal(conv.weight, torch.zeros_like(conv.weight))
            assert torch.equal(conv.bias, torch.zeros_like(conv.bias))


class TestBranchValidation:
    def test_mismatched_control_feature_rejected(self):
        ctrl = make_module()
        z = torch.randn(1, Z_CH, 8, 8)
        with pytest.raises(ShapeError):
            ctrl.residuals(z, 5, torch.randn(1, CTX), torch.randn(1, 8, 4, 4))

    def test_wrong_context_dim_rejected(self):
        ctrl = make_module()
        z = torch.randn(1, Z_CH, 8, 8)
        cond = torch.randn(1, 8, 8, 8)
        with pytest.raises(ShapeError):
            ctrl.residuals(z, 5, torch.randn(1, CTX + 2), cond)


class TestAblationFlags:
    def _nonzero_branch(self, cfg):
        ctrl = make_module(cfg, seed=20)
        with torch.no_grad():
            for conv in ctrl.net.zero_convs:
                conv.weight.normal_(0.0, 0.05, generator=torch.Generator().manual_seed(21))
        return ctrl

    def test_timestep_ablation_makes_residuals_time_invariant(self):
        ctrl = self._nonzero_branch(ControlConfig(widths=(4, 6, 8), use_timestep=False))
        torch.manual_seed(22)
        z = torch.randn(1, Z_CH, 8, 8)
        ctx = torch.randn(1, CTX)
        cond = ctrl.encode(torch.rand(1, 3, 32, 32), torch.randn(1, DEG))
        with torch.no_grad():
            early = ctrl.residuals(z, 1, ctx, cond)
            late = ctrl.residuals(z, 90, ctx, cond)
        for a, b in zip(early, late):
            assert torch.equal(a, b)

    def test_context_ablation_makes_residuals_prompt_invariant(self):
        ctrl = self._nonzero_branch(ControlConfig(widths=(4, 6, 8), use_context=False))
        torch.manual_seed(23)
        z = torch.randn(1, Z_CH, 8, 8)
        cond = ctrl.encode(torch.rand(1, 3, 32, 32), torch.randn(1, DEG))
        with torch.no_grad():
            a = ctrl.residuals(z, 5, torch.randn(1, CTX), cond)
            b = ctrl.residuals(z, 5, torch.randn(1, CTX), cond)
        for x, y in zip(a, b):
            assert torch.equal(x, y)

    def test_dmb_ablation_makes_encoder_prompt_invariant(self):
        ctrl = make_module(ControlConfig(widths=(4, 6, 8), dmb_enabled=False), seed=24)
        img = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            a = ctrl.encode(img, torch.randn(1, DEG))
            b = ctrl.encode(img, torch.randn(1, DEG))
        assert torch.equal(a, b)


class TestModuleWiring:
    def test_encode_then_residuals_then_decode(self):
        ctrl = make_module()
        img = torch.rand(2, 3, 32, 32)
        cond = ctrl.encode(img, torch.randn(2, DEG))
        assert cond.shape == (2, 8, 8, 8)
        res = ctrl.residuals(torch.randn(2, Z_CH, 8, 8), 3, torch.randn(2, CTX), cond)
        assert [tuple(r.shape) for r in res] == [(2, 8, 8, 8), (2, 16, 4, 4)]
        with torch.no_grad():
            out = ctrl.decode(cond)
        assert out.shape == img.shape


class TestReconLoss:
    def test_quarter_oracle(self):
        a = torch.zeros(2, 3, 8, 8)
        assert recon_loss(a + 0.5, a).item() == pytest.approx(0.25)
        assert recon_loss(a, a).item() == 0.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            recon_loss(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 4))
